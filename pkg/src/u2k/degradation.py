"""Point spread functions, spectral response functions and the observation model.

A cube ``Z`` of shape (B, H, W) (or a batch (N, B, H, W)) is observed as

    X = downsample(blur(Z, psf), s)   low-resolution hyperspectral
    Y = srf applied to every spectrum  high-resolution multispectral

with optional white Gaussian noise at a requested SNR.
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T

SIMPLEX_TOL = 1e-6


@dataclass
class Psf:
    weights: np.ndarray
    kind: str = "custom"

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError(f"PSF must be square, got shape {w.shape}")
        if w.shape[0] % 2 == 0:
            raise ValueError(f"PSF size must be odd, got {w.shape[0]}")
        if (w < 0).any():
            raise ValueError("PSF has negative entries")
        total = w.sum()
        if total <= 0:
            raise ValueError("PSF sums to zero")
        self.weights = w / total

    @property
    def size(self):
        return self.weights.shape[0]

    def padded(self, size):
        """The same kernel zero-embedded in a larger odd ``size``."""
        if size < self.size or size % 2 == 0:
            raise ValueError(f"cannot embed a {self.size}x{self.size} PSF in {size}x{size}")
        out = np.zeros((size, size))
        o = (size - self.size) // 2
        out[o:o + self.size, o:o + self.size] = self.weights
        return out


@dataclass
class Srf:
    matrix: np.ndarray
    centers_nm: Optional[np.ndarray] = None

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2:
            raise ValueError(f"SRF must be a matrix, got shape {m.shape}")
        if (m < 0).any():
            raise ValueError("SRF has negative entries")
        sums = m.sum(axis=1, keepdims=True)
        if (sums <= 0).any():
            raise ValueError("SRF has an all-zero row")
        self.matrix = m / sums

    @property
    def msi_bands(self):
        return self.matrix.shape[0]

    @property
    def hsi_bands(self):
        return self.matrix.shape[1]


@dataclass
class DegradationSpec:
    psf: Psf
    srf: Srf
    scale: int
    snr_db: Optional[float] = None
    name: str = field(default="")

    def __post_init__(self):
        if self.scale < 1:
            raise ValueError(f"scale must be >= 1, got {self.scale}")
        if self.snr_db is not None and self.snr_db <= 0:
            raise ValueError(f"SNR must be positive, got {self.snr_db}")


def _check_odd(size):
    if size < 1 or size % 2 == 0:
        raise ValueError(f"PSF size must be a positive odd integer, got {size}")


def _offsets(size):
    r = size // 2
    return np.arange(-r, r + 1)


def make_gaussian_psf(size, sigma):
    _check_odd(size)
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    d = _offsets(size)
    w = np.exp(-(d[:, None] ** 2 + d[None, :] ** 2) / (2.0 * sigma ** 2))
    return Psf(w, "gaussian")


def make_psf(kind, size, *params):
    """Build a named PSF.

    ``gaussian(size, sigma)``, ``box(size)``, ``disk(size, radius)`` and
    ``motion(size, length, angle_deg)``; the motion blur is a one-pixel-wide
    line through the centre.
    """
    _check_odd(size)
    if kind == "gaussian":
        return make_gaussian_psf(size, *params)
    if kind == "box":
        return Psf(np.ones((size, size)), "box")
    d = _offsets(size)
    if kind == "disk":
        (radius,) = params
        if radius < 0 or radius > size // 2:
            raise ValueError(f"disk radius {radius} does not fit a {size}x{size} kernel")
        w = (d[:, None] ** 2 + d[None, :] ** 2 <= radius ** 2 + 1e-9).astype(float)
        return Psf(w, "disk")
    if kind == "motion":
        length, angle = params
        if length < 1 or length > size:
            raise ValueError(f"motion length {length} does not fit a {size}x{size} kernel")
        w = np.zeros((size, size))
        a = np.deg2rad(angle)
        r = size // 2
        for t in np.linspace(-(length - 1) / 2, (length - 1) / 2, 8 * int(length) + 1):
            col = int(np.rint(r + t * np.cos(a)))
            row = int(np.rint(r - t * np.sin(a)))
            w[row, col] = 1.0
        return Psf(w, "motion")
    raise ValueError(f"unknown PSF kind {kind!r}")


def synth_srf(msi_bands, hsi_bands, width):
    """Gaussian band responses with evenly spaced centres, rows normalized."""
    if not 1 <= msi_bands <= hsi_bands:
        raise ValueError(f"need 1 <= msi_bands <= hsi_bands, got {msi_bands}, {hsi_bands}")
    if width < 0:
        raise ValueError(f"width must be non-negative, got {width}")
    centers = (np.arange(msi_bands) + 0.5) * hsi_bands / msi_bands - 0.5
    b = np.arange(hsi_bands)
    m = np.zeros((msi_bands, hsi_bands))
    for i, c in enumerate(centers):
        if width > 0:
            m[i] = np.exp(-((b - c) ** 2) / (2.0 * width ** 2))
        if m[i].sum() == 0:
            m[i, int(np.clip(np.rint(c), 0, hsi_bands - 1))] = 1.0
    return Srf(m)


def degrade_spatial(Z, kernel, s):
    """``downsample(blur(Z, kernel), s)`` with replicate-same blur."""
    return T.downsample(T.conv2d_per_band(Z, kernel, "same"), s)


def degrade_spectral(Z, matrix):
    return T.mode3_product(Z, matrix)


def _add_noise(arr, snr_db, rng):
    power = np.mean(arr.astype(np.float64) ** 2)
    std = np.sqrt(power / 10 ** (snr_db / 10.0))
    return (arr + rng.normal(0.0, std, size=arr.shape)).astype(arr.dtype)


def apply_observation(Z, spec, seed=None):
    """Return ``(X, Y)`` for cube(s) ``Z`` under ``spec`` as numpy arrays."""
    Z = np.asarray(Z)
    if Z.ndim not in (3, 4):
        raise ValueError(f"expected (B, H, W) or (N, B, H, W), got shape {Z.shape}")
    B, H, W = Z.shape[-3:]
    if spec.srf.hsi_bands != B:
        raise ValueError(f"SRF expects {spec.srf.hsi_bands} bands, cube has {B}")
    for axis, n in (("height", H), ("width", W)):
        if n % spec.scale:
            raise ValueError(f"{axis} {n} is not divisible by scale {spec.scale}")
    if spec.snr_db is not None and seed is None:
        raise ValueError("noise requested without a seed")
    dtype = T.get_dtype()
    z = T.as_tensor(Z.astype(dtype))
    X = degrade_spatial(z, spec.psf.weights.astype(dtype), spec.scale).data
    Y = degrade_spectral(z, spec.srf.matrix.astype(dtype)).data
    if spec.snr_db is not None:
        rng = np.random.default_rng(seed)
        X = _add_noise(X, spec.snr_db, rng)
        Y = _add_noise(Y, spec.snr_db, rng)
    return X, Y


def commutation_check(Z, kernel, matrix, s):
    """Largest gap between spatial-then-spectral and spectral-then-spatial degradation."""
    dtype = T.get_dtype()
    z = T.as_tensor(np.asarray(Z, dtype=dtype))
    k = np.asarray(kernel, dtype=dtype)
    R = np.asarray(matrix, dtype=dtype)
    a = degrade_spectral(degrade_spatial(z, k, s), R).data
    b = degrade_spatial(degrade_spectral(z, R), k, s).data
    return float(np.max(np.abs(a - b)))


# ---------------------------------------------------------------- zoo

def psf_zoo():
    """Named kernels used by sweeps and the commutation suite."""
    zoo = {}
    for size in (5, 9, 13, 17):
        for sigma in (1, 2, 3, 4):
            zoo[f"gaussian_{size}_{sigma}"] = make_gaussian_psf(size, sigma)
    zoo["box_5"] = make_psf("box", 5)
    zoo["disk_7_3"] = make_psf("disk", 7, 3)
    zoo["motion_9_7_30"] = make_psf("motion", 9, 7, 30)
    return zoo


SRF_ZOO_WIDTHS = (1.0, 2.0, 4.0)


# ---------------------------------------------------------------- text files

def _numeric_lines(text):
    rows = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            rows.append([float(tok) for tok in line.split()])
    return rows


def _parse_table(text, what):
    rows = _numeric_lines(text)
    if not rows or len(rows[0]) != 2:
        raise ValueError(f"{what} file must start with a 'rows cols' header")
    n_rows, n_cols = int(rows[0][0]), int(rows[0][1])
    body = rows[1:]
    if len(body) != n_rows or any(len(r) != n_cols for r in body):
        raise ValueError(f"{what} file does not match its {n_rows}x{n_cols} header")
    return np.array(body, dtype=np.float64)


def _format_table(m, comment):
    lines = [f"# {comment}"] if comment else []
    lines.append(f"{m.shape[0]} {m.shape[1]}")
    lines.extend(" ".join(f"{v:.9g}" for v in row) for row in m)
    return "\n".join(lines) + "\n"


def read_psf(path):
    with open(path) as fh:
        m = _parse_table(fh.read(), "PSF")
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"PSF file is {m.shape[0]}x{m.shape[1]}, expected square")
    return Psf(m, "custom")


def write_psf(psf, path, comment=""):
    with open(path, "w") as fh:
        fh.write(_format_table(np.asarray(psf.weights if isinstance(psf, Psf) else psf), comment))


def read_srf(path):
    with open(path) as fh:
        return Srf(_parse_table(fh.read(), "SRF"))


def write_srf(srf, path, comment=""):
    with open(path, "w") as fh:
        fh.write(_format_table(np.asarray(srf.matrix if isinstance(srf, Srf) else srf), comment))
