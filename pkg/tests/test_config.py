import os

import numpy as np
import pytest

from u2k.config import ConfigError, defaults, load_config, parse_config
from u2k.degradation import write_psf, make_gaussian_psf


def test_defaults_validate():
    cfg = defaults().validate()
    assert cfg.known.scale == 4
    assert cfg.known_spec().srf.matrix.shape == (3, 16)
    assert [c for c, _ in cfg.sweep_specs()] == ["matched", "sigma", "kind", "srf"]


def test_values_and_comments():
    cfg = parse_config("""
        # comment line
        data.hsi_bands = 8     # trailing comment
        u2k.drop = con, rec
        known.snr_db = 30
        ablate.adapt = no
    """).validate()
    assert cfg.data.hsi_bands == 8
    assert cfg.u2k.drop == ("con", "rec")
    assert cfg.known.snr_db == 30.0
    assert cfg.ablate.adapt is False
    assert cfg.known_spec().srf.matrix.shape == (3, 8)


@pytest.mark.parametrize("text", [
    "data.heigth = 64",
    "nosection = 1",
    "bogus.key = 1",
    "data.height 64",
    "data.height = sixty",
    "ablate.adapt = maybe",
])
def test_parse_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


@pytest.mark.parametrize("text", [
    "known.scale = 3",                       # 64 not divisible
    "data.patch = 30",                       # patch not divisible by scale
    "data.patch = 128",
    "data.msi_bands = 20",
    "data.endmembers = 9",
    "run.precision = f16",
    "sweep.cells = matched, wobble",
    "known.psf = gaussian",
    "known.psf = star:5",
    "known.srf = synthetic:wide",
    "unknown.srf = rainbow:1",
    "known.psf = file:does_not_exist.txt",
    "data.manifest = nowhere/manifest.txt",
])
def test_validation_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text).validate()


def test_psf_forms():
    cfg = defaults()
    assert cfg.parse_psf("box:5").weights.shape == (5, 5)
    assert cfg.parse_psf("disk:7:2").weights.shape == (7, 7)
    assert cfg.parse_psf("motion:9:7:30").weights.shape == (9, 9)
    np.testing.assert_allclose(cfg.parse_psf("gaussian:7:3.0").weights, make_gaussian_psf(7, 3.0).weights)


def test_file_paths_resolve_against_config_dir(tmp_path):
    write_psf(make_gaussian_psf(5, 1.0), str(tmp_path / "k.txt"))
    (tmp_path / "exp.cfg").write_text("unknown.psf = file:k.txt\n")
    cfg = load_config(str(tmp_path / "exp.cfg"))
    np.testing.assert_allclose(cfg.unknown_spec().psf.weights, make_gaussian_psf(5, 1.0).weights, atol=1e-9)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "absent.cfg"))


def test_zoo_sweep_cells():
    cfg = parse_config("sweep.cells = matched, zoo").validate()
    names = [c for c, _ in cfg.sweep_specs()]
    assert names[0] == "matched" and "gaussian_13_3" in names and "motion_9_7_30" in names
    assert names[-3:] == ["srf_1", "srf_2", "srf_4"]
    assert len(names) == 1 + 19 + 3
    assert all(spec.scale == 4 for _, spec in cfg.sweep_specs())


@pytest.mark.parametrize("name", ["desk.cfg", "tiny.cfg"])
def test_shipped_configs_load(name):
    path = os.path.join(os.path.dirname(__file__), os.pardir, "configs", name)
    cfg = load_config(path)
    assert cfg.run.out.startswith("../runs/")
