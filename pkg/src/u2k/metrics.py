"""Full-reference quality measures for fused cubes (band-first arrays, unit range)."""
import csv
import warnings
from dataclasses import asdict, dataclass

import numpy as np

PSNR_CAP = 100.0
REPORT_FIELDS = ("method", "degradation", "image", "rmse", "psnr", "ssim", "sam", "ergas")


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def rmse(a, b):
    a, b = _pair(a, b)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def psnr(a, b):
    """Whole-cube PSNR for unit data range, capped at 100 dB."""
    e = rmse(a, b)
    if e < 1e-5:
        return PSNR_CAP
    return float(-20.0 * np.log10(e))


def _gaussian_window(size=11, sigma=1.5):
    d = np.arange(size) - size // 2
    g = np.exp(-(d ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    return g


def _filter_valid(img, g):
    from scipy.signal import convolve

    return convolve(convolve(img, g[:, None], mode="valid"), g[None, :], mode="valid")


def ssim_with_flag(a, b, win=11, sigma=1.5):
    """Mean SSIM over bands and the flag telling whether global statistics were used.

    Images smaller than the window fall back to one SSIM value from whole-band
    statistics.
    """
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[None], b[None]
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    fallback = min(a.shape[-2:]) < win
    scores = []
    g = _gaussian_window(win, sigma)
    for x, y in zip(a, b):
        if fallback:
            mx, my = x.mean(), y.mean()
            vx, vy = x.var(), y.var()
            cxy = ((x - mx) * (y - my)).mean()
        else:
            mx, my = _filter_valid(x, g), _filter_valid(y, g)
            vx = _filter_valid(x * x, g) - mx * mx
            vy = _filter_valid(y * y, g) - my * my
            cxy = _filter_valid(x * y, g) - mx * my
        s = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        scores.append(np.mean(s))
    return float(np.mean(scores)), fallback


def ssim(a, b):
    value, fallback = ssim_with_flag(a, b)
    if fallback:
        warnings.warn("image smaller than the SSIM window; used global statistics", stacklevel=2)
    return value


def sam(a, b, return_skipped=False):
    """Mean spectral angle in degrees over pixels; zero-norm pixels are skipped."""
    a, b = _pair(a, b)
    sa = a.reshape(a.shape[0], -1).T
    sb = b.reshape(b.shape[0], -1).T
    na = np.linalg.norm(sa, axis=1)
    nb = np.linalg.norm(sb, axis=1)
    ok = (na > 0) & (nb > 0)
    skipped = int((~ok).sum())
    if not ok.any():
        raise ValueError("every pixel has a zero-norm spectrum")
    ua = sa[ok] / na[ok, None]
    ub = sb[ok] / nb[ok, None]
    # 2*atan2(|u-v|, |u+v|) stays accurate near 0 and 180 degrees, unlike arccos
    ang = 2.0 * np.arctan2(np.linalg.norm(ua - ub, axis=1), np.linalg.norm(ua + ub, axis=1))
    deg = float(np.degrees(ang.mean()))
    return (deg, skipped) if return_skipped else deg


def ergas(ref, est, s):
    """100/s * sqrt(mean over bands of (band rmse / band reference mean)^2). Reference first."""
    ref, est = _pair(ref, est)
    B = ref.shape[0]
    band_rmse = np.sqrt(((ref - est) ** 2).reshape(B, -1).mean(axis=1))
    band_mean = ref.reshape(B, -1).mean(axis=1)
    keep = band_mean != 0
    if not keep.all():
        warnings.warn(f"{int((~keep).sum())} band(s) with zero mean excluded from ERGAS", stacklevel=2)
    if not keep.any():
        raise ValueError("all reference bands have zero mean")
    return float(100.0 / s * np.sqrt(np.mean((band_rmse[keep] / band_mean[keep]) ** 2)))


@dataclass
class MetricReport:
    method: str
    degradation: str
    image: str
    rmse: float
    psnr: float
    ssim: float
    sam: float
    ergas: float
    ssim_fallback: bool = False


def evaluate(ref, est, s, method="", degradation="", image=""):
    value, fallback = ssim_with_flag(ref, est)
    return MetricReport(
        method=method,
        degradation=degradation,
        image=image,
        rmse=rmse(ref, est),
        psnr=psnr(ref, est),
        ssim=value,
        sam=sam(ref, est),
        ergas=ergas(ref, est, s),
        ssim_fallback=fallback,
    )


def mean_report(reports, method, degradation, image="mean"):
    cols = ("rmse", "psnr", "ssim", "sam", "ergas")
    avg = {c: float(np.mean([getattr(r, c) for r in reports])) for c in cols}
    return MetricReport(method, degradation, image, **avg, ssim_fallback=any(r.ssim_fallback for r in reports))


def _fmt(v):
    return f"{v:.10g}" if isinstance(v, float) else str(v)


def write_report(reports, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_FIELDS)
        for r in reports:
            row = asdict(r)
            w.writerow([_fmt(row[k]) for k in REPORT_FIELDS])


def minmax_normalize(values):
    """Map a series to [0, 1]; returns (series, degenerate) where a flat series maps to zeros."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        raise ValueError("need at least two values to normalize")
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.zeros_like(v), True
    return (v - lo) / (hi - lo), False


def mmn_psnr_curve(records):
    """Normalize (input_psnr, output_psnr) pairs series-wise for relative-change plots.

    Returns (rows, degenerate) where ``rows`` is a list of normalized pairs and
    ``degenerate`` is true if either series was constant.
    """
    if len(records) < 2:
        raise ValueError("need at least two records")
    inp, d1 = minmax_normalize([r[0] for r in records])
    out, d2 = minmax_normalize([r[1] for r in records])
    return list(zip(inp.tolist(), out.tolist())), d1 or d2


def write_mmn_curve(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("input_psnr_norm", "output_psnr_norm"))
        for a, b in rows:
            w.writerow((_fmt(a), _fmt(b)))
