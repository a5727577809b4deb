"""Synthetic hyperspectral scenes, patch extraction and on-disk formats."""
import os
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter, gaussian_filter1d

CUBE_MAGIC = b"HSC1"
_HEADER = struct.Struct("<4sIIIB")
MAX_CUBE_ENTRIES = 1 << 31


class CubeFormatError(ValueError):
    pass


class BadMagicError(CubeFormatError):
    pass


class TruncatedError(CubeFormatError):
    pass


class DimsOverflowError(CubeFormatError):
    pass


@dataclass
class HsiCube:
    """Band-sequential reflectance cube, ``data`` has shape (B, H, W)."""

    data: np.ndarray
    name: str = ""
    source: str = ""

    @property
    def shape(self):
        return self.data.shape

    @property
    def bands(self):
        return self.data.shape[0]


def synth_hsi(seed, H, W, B, n_endmembers, blur=4.0, sharpness=4.0, library=None, tint=0.0):
    """Linear-mixing scene: ``n_endmembers`` spectra mixed by smooth abundance maps.

    Abundances are a per-pixel softmax of blurred noise fields (so they sum to
    one); ``sharpness`` scales the fields before the softmax and sets how
    crisp the material boundaries are. Spectra are drawn fresh from ``seed``
    unless a shared ``library`` (n, B) is given, in which case the scene picks
    ``n_endmembers`` of its rows. ``tint`` > 0 multiplies every spectrum by a
    smooth per-scene illumination curve ``exp(tint * t)`` with unit-std ``t``.
    The cube is divided by its maximum, so it lies in [0, 1].
    """
    if n_endmembers < 1:
        raise ValueError("need at least one endmember")
    if min(H, W, B) < 4:
        raise ValueError(f"cube extents must be >= 4, got {(H, W, B)}")
    rng = np.random.default_rng(seed)
    if library is None:
        spectra = endmember_spectra(rng, n_endmembers, B)
    else:
        library = np.asarray(library, dtype=np.float64)
        if library.shape[1] != B:
            raise ValueError(f"library spectra have {library.shape[1]} bands, cube wants {B}")
        if n_endmembers > len(library):
            raise ValueError(f"library holds {len(library)} spectra, {n_endmembers} requested")
        pick = np.sort(rng.choice(len(library), size=n_endmembers, replace=False))
        spectra = library[pick]
    if tint:
        t = gaussian_filter1d(rng.standard_normal(B), sigma=2.0, mode="nearest")
        spectra = spectra * np.exp(tint * t / (t.std() + 1e-12))[None]
    fields = gaussian_filter(rng.standard_normal((n_endmembers, H, W)), sigma=(0, blur, blur), mode="wrap")
    fields /= fields.std(axis=(1, 2), keepdims=True) + 1e-12
    abundances = abundance_softmax(sharpness * fields)
    cube = np.tensordot(spectra.T, abundances, axes=1)
    peak = cube.max()
    if peak > 0:
        cube = cube / peak
    return HsiCube(np.clip(cube, 0.0, 1.0).astype(np.float32), name=f"synth_{seed}", source=f"seed={seed}")


def endmember_spectra(rng, n, B, style="absorption"):
    """(n, B) positive spectra with values in (0, 1].

    ``absorption``: softplus of band-correlated noise, peak-normalized, so
    each material has its own bumps and dips. ``cumulative``: normalized
    running sums of the same, i.e. smooth monotone ramps.
    """
    if style == "absorption":
        noise = gaussian_filter1d(rng.standard_normal((n, B)), sigma=1.0, axis=1, mode="nearest")
        noise *= 2.0 / (noise.std(axis=1, keepdims=True) + 1e-12)
        spectra = np.logaddexp(0.0, noise)
        return spectra / spectra.max(axis=1, keepdims=True)
    if style == "cumulative":
        noise = gaussian_filter1d(rng.standard_normal((n, B)), sigma=max(B / 12.0, 0.5), axis=1, mode="nearest")
        noise *= 3.0 / (noise.std(axis=1, keepdims=True) + 1e-12)
        spectra = np.cumsum(np.logaddexp(0.0, noise), axis=1)
        return spectra / spectra[:, -1:]
    raise ValueError(f"unknown spectrum style {style!r}")


def spectral_library(seed, n, B, style="absorption"):
    """A reusable set of ``n`` endmember spectra shared by every scene of a dataset."""
    return endmember_spectra(np.random.default_rng(seed), n, B, style)


def abundance_softmax(fields):
    e = np.exp(fields - fields.max(axis=0, keepdims=True))
    return e / e.sum(axis=0, keepdims=True)


def _window_offsets(n, size, stride):
    offs = list(range(0, n - size + 1, stride))
    if offs[-1] != n - size:
        offs.append(n - size)
    return offs


def extract_patches(cube, size, stride):
    """All ``size x size`` windows at multiples of ``stride`` plus the edge-aligned last one."""
    data = cube.data if isinstance(cube, HsiCube) else np.asarray(cube)
    H, W = data.shape[-2:]
    if size > min(H, W):
        raise ValueError(f"patch size {size} exceeds cube extent {(H, W)}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    name = cube.name if isinstance(cube, HsiCube) else ""
    return [
        HsiCube(np.ascontiguousarray(data[..., i:i + size, j:j + size]), name=f"{name}@{i},{j}")
        for i in _window_offsets(H, size, stride)
        for j in _window_offsets(W, size, stride)
    ]


def write_cube(cube, path):
    data = cube.data if isinstance(cube, HsiCube) else np.asarray(cube)
    B, H, W = data.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CUBE_MAGIC, H, W, B, 0))
        fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def read_cube(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 4 or buf[:4] != CUBE_MAGIC:
        raise BadMagicError(f"{path}: bad magic {buf[:4]!r}")
    if len(buf) < _HEADER.size:
        raise TruncatedError(f"{path}: header truncated")
    _, H, W, B, dtype = _HEADER.unpack_from(buf)
    if dtype != 0:
        raise CubeFormatError(f"{path}: unsupported dtype code {dtype}")
    n = H * W * B
    if n == 0 or n > MAX_CUBE_ENTRIES:
        raise DimsOverflowError(f"{path}: dims {(H, W, B)} out of range")
    payload = len(buf) - _HEADER.size
    if payload < 4 * n:
        raise TruncatedError(f"{path}: payload has {payload} bytes, header promises {4 * n}")
    data = np.frombuffer(buf, dtype="<f4", count=n, offset=_HEADER.size).reshape(B, H, W).astype(np.float32)
    return HsiCube(data, name=os.path.splitext(os.path.basename(path))[0], source=str(path))


@dataclass
class DatasetManifest:
    entries: list = field(default_factory=list)  # (role, path)
    patch: int = 32
    stride: int = 16
    seed: int = 0

    def paths(self, role):
        return [p for r, p in self.entries if r == role]

    def validate(self):
        train, test = set(self.paths("train")), set(self.paths("test"))
        if train & test:
            raise ValueError(f"cubes listed as both train and test: {sorted(train & test)}")
        bad = [r for r, _ in self.entries if r not in ("train", "test")]
        if bad:
            raise ValueError(f"unknown manifest roles: {sorted(set(bad))}")


def write_manifest(manifest, path):
    lines = [f"# patch={manifest.patch}", f"# stride={manifest.stride}", f"# seed={manifest.seed}"]
    lines += [f"{role} {p}" for role, p in manifest.entries]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_manifest(path):
    m = DatasetManifest()
    base = os.path.dirname(os.path.abspath(path))
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, sep, value = line[1:].partition("=")
                if sep and key.strip() in ("patch", "stride", "seed"):
                    setattr(m, key.strip(), int(value))
                continue
            role, p = line.split(None, 1)
            m.entries.append((role, p if os.path.isabs(p) else os.path.join(base, p)))
    m.validate()
    return m
