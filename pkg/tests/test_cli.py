import csv
import os
import re
import shutil

import numpy as np
import pytest

from u2k.cli import main
from u2k.data import read_cube

TINY = """\
run.out = out
data.height = 16
data.width = 16
data.hsi_bands = 8
data.n_train = 2
data.n_test = 2
data.endmembers = 4
data.library_size = 4
data.patch = 16
data.stride = 8
pretrain.epochs = 2
pretrain.hidden = 8
u2k.k_dw = 7
u2k.epochs_a = 2
u2k.epochs_b = 2
u2k.crop = 8
ablate.seeds = 2
"""

ERROR_LINE = re.compile(r'^error code=(\d) kind=(\w+) message="[^"\n]*"$')


def _config(folder, extra=""):
    path = os.path.join(folder, "exp.cfg")
    with open(path, "w") as fh:
        fh.write(TINY + extra)
    return path


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = str(tmp_path_factory.mktemp("cli"))
    cfg = _config(root)
    assert main(["gen-data", "--config", cfg]) == 0
    assert main(["pretrain", "--config", cfg]) == 0
    return root


@pytest.fixture
def workspace(trained, tmp_path):
    dst = str(tmp_path / "ws")
    shutil.copytree(trained, dst)
    return dst


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _error(capsys):
    lines = [l for l in capsys.readouterr().err.splitlines() if l.startswith("error")]
    assert len(lines) == 1
    m = ERROR_LINE.match(lines[0])
    assert m, lines[0]
    return int(m.group(1)), m.group(2)


def test_gen_data_layout(trained):
    data = os.path.join(trained, "out", "data")
    assert sorted(os.listdir(data)) == ["manifest.txt", "test_00.hsc", "test_01.hsc", "train_00.hsc", "train_01.hsc"]
    cube = read_cube(os.path.join(data, "train_00.hsc"))
    assert cube.shape == (8, 16, 16)
    assert 0.0 <= cube.data.min() and cube.data.max() <= 1.0
    assert os.path.exists(os.path.join(trained, "out", "pretrain_loss.csv"))


def test_eval_no_adapt_one_row_per_cube(workspace):
    cfg = os.path.join(workspace, "exp.cfg")
    assert main(["eval", "--config", cfg, "--no-adapt"]) == 0
    rows = _rows(os.path.join(workspace, "out", "report.csv"))
    assert [r["image"] for r in rows] == ["test_00", "test_01"]
    assert {r["method"] for r in rows} == {"baseline"}
    assert all(np.isfinite(float(r["psnr"])) for r in rows)


def test_adapt_fuse_eval(workspace):
    cfg = os.path.join(workspace, "exp.cfg")
    out = os.path.join(workspace, "out")
    assert main(["adapt", "--config", cfg]) == 0
    for name in ("dw.u2kw", "dt.u2kw", "adapt_loss.csv", "phi_k.txt", "phi_r.txt"):
        assert os.path.exists(os.path.join(out, name)), name
    assert main(["fuse", "--config", cfg]) == 0
    fused = read_cube(os.path.join(out, "fused", "test_01.hsc"))
    assert fused.shape == (8, 16, 16)
    with open(os.path.join(out, "fused", "test_01.ppm"), "rb") as fh:
        assert fh.read(2) == b"P6"
    assert main(["eval", "--config", cfg]) == 0
    assert {r["method"] for r in _rows(os.path.join(out, "report.csv"))} == {"u2k"}
    assert not [f for f in os.listdir(out) if f.endswith(".partial")]


def test_fuse_without_adapt_state_is_io_error(workspace, capsys):
    assert main(["fuse", "--config", os.path.join(workspace, "exp.cfg")]) == 4
    assert _error(capsys) == (4, "io")


def test_sweep_tables(workspace):
    cfg = os.path.join(workspace, "exp.cfg")
    assert main(["sweep", "--config", cfg]) == 0
    rows = _rows(os.path.join(workspace, "out", "sweep.csv"))
    assert [(r["method"], r["degradation"]) for r in rows] == [
        (m, c) for c in ("matched", "sigma", "kind", "srf") for m in ("baseline", "u2k")
    ]
    mmn = _rows(os.path.join(workspace, "out", "sweep_mmn.csv"))
    assert len(mmn) == 8
    for key in ("input_psnr_norm", "output_psnr_norm"):
        vals = [float(r[key]) for r in mmn]
        assert min(vals) >= 0.0 and max(vals) <= 1.0


def test_repeated_sweep_is_byte_identical(workspace):
    cfg = os.path.join(workspace, "exp.cfg")
    outs = []
    for tag in ("a", "b"):
        out = os.path.join(workspace, tag)
        shutil.copytree(os.path.join(workspace, "out"), out)
        assert main(["sweep", "--config", cfg, "--out", out]) == 0
        with open(os.path.join(out, "sweep.csv"), "rb") as fh:
            outs.append(fh.read())
    assert outs[0] == outs[1]


def test_ablate_tables(workspace):
    cfg = os.path.join(workspace, "exp.cfg")
    out = os.path.join(workspace, "out")
    assert main(["ablate", "--config", cfg, "--drop", "con"]) == 0
    rows = _rows(os.path.join(out, "ablate_losses.csv"))
    assert [(r["variant"], r["seed"]) for r in rows] == [
        ("full", "0"), ("full", "1"), ("full", "mean"), ("no_con", "0"), ("no_con", "1"), ("no_con", "mean")
    ]
    assert not os.path.exists(os.path.join(out, "ablate_optim.csv"))
    assert main(["ablate", "--config", cfg, "--opt", "naive"]) == 0
    rows = _rows(os.path.join(out, "ablate_optim.csv"))
    assert [r["variant"] for r in rows] == ["naive"] * 3 + ["gao"] * 3


def test_config_error_exit_code(tmp_path, capsys):
    cfg = _config(str(tmp_path), "known.scale = 3\n")
    assert main(["gen-data", "--config", cfg]) == 2
    assert _error(capsys) == (2, "config")


def test_missing_dataset_is_io_error(tmp_path, capsys):
    cfg = _config(str(tmp_path))
    assert main(["pretrain", "--config", cfg]) == 4
    assert _error(capsys) == (4, "io")


def test_corrupt_cube_is_io_error(workspace, capsys):
    path = os.path.join(workspace, "out", "data", "test_00.hsc")
    with open(path, "r+b") as fh:
        fh.write(b"JUNK")
    assert main(["eval", "--config", os.path.join(workspace, "exp.cfg"), "--no-adapt"]) == 4
    assert _error(capsys) == (4, "io")


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_pretrain_divergence(workspace, capsys):
    cfg = _config(workspace, "pretrain.lr = 1e38\n")
    out = os.path.join(workspace, "out")
    with open(os.path.join(out, "fusion.u2kw"), "rb") as fh:
        before = fh.read()
    assert main(["pretrain", "--config", cfg]) == 3
    assert _error(capsys) == (3, "divergence")
    assert os.path.exists(os.path.join(out, "fusion.u2kw.partial"))
    with open(os.path.join(out, "fusion.u2kw"), "rb") as fh:
        assert fh.read() == before


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_adapt_divergence_keeps_last_good(workspace, capsys):
    cfg = _config(workspace, "u2k.lr_dt = 1e38\nu2k.epochs_b = 3\n")
    out = os.path.join(workspace, "out")
    assert main(["adapt", "--config", cfg]) == 3
    assert _error(capsys) == (3, "divergence")
    assert os.path.exists(os.path.join(out, "dw.u2kw.partial"))
    assert os.path.exists(os.path.join(out, "dt.u2kw.partial"))
    assert not os.path.exists(os.path.join(out, "dt.u2kw"))


def test_precision_flag_f64(workspace):
    cfg = os.path.join(workspace, "exp.cfg")
    assert main(["eval", "--config", cfg, "--no-adapt", "--precision", "f64"]) == 0
