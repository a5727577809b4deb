"""Experiment plumbing shared by the command line and the acceptance suite."""
import contextlib
import csv
import logging
import os

import numpy as np

from . import metrics, serialize
from . import tensor as T
from .data import DatasetManifest, read_cube, read_manifest, spectral_library, synth_hsi, write_cube, write_manifest
from .degradation import apply_observation
from .fusion import FusionNet, PretrainConfig, fuse, pretrain
from .u2k import U2kConfig, gao_train, u2k_infer

log = logging.getLogger("u2k")

LOSS_VARIANTS = {"full": (), "no_dt": ("dt",), "no_rec": ("rec",), "no_con": ("con",)}
OPT_VARIANTS = ("naive", "ao", "gao")


@contextlib.contextmanager
def staged(path):
    """Yield ``path + '.partial'``; rename it to ``path`` only if the block succeeds."""
    partial = path + ".partial"
    yield partial
    os.replace(partial, path)


# ------------------------------------------------------------------- seeds

def cube_seed(base, role, i):
    return base * 1000 + (500 if role == "test" else 0) + i


def noise_seed(base):
    return base * 1000 + 999


# ------------------------------------------------------------------- data

def generate_data(cfg, data_dir, seed):
    d = cfg.data
    os.makedirs(data_dir, exist_ok=True)
    library = None
    if d.library_size:
        library = spectral_library(cube_seed(seed, "train", 998), d.library_size, d.hsi_bands, d.spectra)
    manifest = DatasetManifest(patch=d.patch, stride=d.stride, seed=seed)
    for role, n in (("train", d.n_train), ("test", d.n_test)):
        for i in range(n):
            s = cube_seed(seed, role, i)
            cube = synth_hsi(s, d.height, d.width, d.hsi_bands, d.endmembers, d.blur, d.sharpness, library, d.tint)
            name = f"{role}_{i:02d}.hsc"
            write_cube(cube, os.path.join(data_dir, name))
            manifest.entries.append((role, name))
    path = os.path.join(data_dir, "manifest.txt")
    write_manifest(manifest, path)
    return path


def manifest_path(cfg, out_dir):
    if cfg.data.manifest:
        return cfg.resolve(cfg.data.manifest)
    return os.path.join(out_dir, "data", "manifest.txt")


def load_dataset(cfg, out_dir):
    """(train cubes, test cubes, manifest); cubes are checked against the configured bands."""
    path = manifest_path(cfg, out_dir)
    if not os.path.exists(path):
        raise FileNotFoundError(f"no dataset manifest at {path}; run gen-data first")
    m = read_manifest(path)
    train = [read_cube(p) for p in m.paths("train")]
    test = [read_cube(p) for p in m.paths("test")]
    if not train or not test:
        raise ValueError("manifest needs both train and test cubes")
    s = cfg.known.scale
    for c in train + test:
        B, H, W = c.shape
        if B != cfg.data.hsi_bands:
            raise ValueError(f"cube {c.name} has {B} bands, config says {cfg.data.hsi_bands}")
        if H % s or W % s:
            raise ValueError(f"cube {c.name} extent {(H, W)} not divisible by scale {s}")
        if m.patch > min(H, W):
            raise ValueError(f"patch {m.patch} exceeds cube {c.name} extent {(H, W)}")
    return train, test, m


def observe(cubes, spec, seed):
    """Stack test cubes and observe them through ``spec``; noise (if any) is seeded."""
    Z = np.stack([c.data for c in cubes])
    X, Y = apply_observation(Z, spec, seed=noise_seed(seed) if spec.snr_db is not None else None)
    return Z, X, Y


# ------------------------------------------------------------------- models

def pretrain_config(cfg, manifest, seed):
    p = cfg.pretrain
    return PretrainConfig(cfg.known_spec(), p.epochs, p.batch_size, p.lr, seed, manifest.patch, manifest.stride)


def build_net(cfg, seed):
    return FusionNet(cfg.data.hsi_bands, cfg.data.msi_bands, cfg.known.scale, cfg.pretrain.hidden, seed)


def load_net(cfg, path, seed=0):
    net = build_net(cfg, seed)
    net.load_state_dict(serialize.load(path))
    return net.astype(T.get_dtype()).freeze()


def u2k_config(cfg, manifest, seed, strategy=None, drop=None, **override):
    u = cfg.u2k
    kw = dict(
        known=cfg.known_spec(), lam=u.lam, mu=u.mu, k_dw=u.k_dw, epochs_a=u.epochs_a, epochs_b=u.epochs_b,
        n_inner=u.n_inner, dw_decay=u.dw_decay, lr_spectral=u.lr_spectral, lr_spatial=u.lr_spatial, lr_dt=u.lr_dt,
        batch_size=u.batch_size, seed=seed, crop=u.crop, patch=manifest.patch, stride=manifest.stride,
        strategy=strategy or u.strategy, drop=u.drop if drop is None else drop,
    )
    kw.update(override)
    return U2kConfig(**kw)


# ------------------------------------------------------------------- evaluation

def per_image_reports(Z, out, s, method, degradation, names):
    return [metrics.evaluate(z, o, s, method, degradation, n) for z, o, n in zip(Z, out, names)]


def bilinear_psnr(Z, X, s):
    up = T.upsample_bilinear(T.Tensor(X.astype(T.get_dtype())), s).data
    return float(np.mean([metrics.psnr(z, u) for z, u in zip(Z, up)]))


def run_variant(net, train, Z, X, Y, ucfg, names=None, label=""):
    """Adapt with ``ucfg`` and score u2k_infer on the test stack; returns (result, reports)."""
    result = gao_train(net, train, X, Y, ucfg, log=log.debug)
    out = u2k_infer(result.dt, net, X, Y)
    names = names or [f"img{i}" for i in range(len(Z))]
    return result, per_image_reports(Z, out, ucfg.known.scale, label or "u2k", "", names)


def write_table(rows, header, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.10g}" if isinstance(v, float) else v for v in row])


def write_ppm(cube, path):
    """8-bit false-colour preview: first, middle and last band as R, G, B."""
    B = cube.shape[0]
    bands = cube[[B - 1, B // 2, 0]] if B >= 3 else np.repeat(cube[:1], 3, axis=0)
    img = (np.clip(bands, 0, 1) * 255 + 0.5).astype(np.uint8).transpose(1, 2, 0)
    H, W = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{W} {H}\n255\n".encode("ascii"))
        fh.write(img.tobytes())
