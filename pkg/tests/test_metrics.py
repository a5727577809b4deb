import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from u2k import metrics


# ------------------------------------------------------------ loop oracles

def loop_rmse(a, b):
    total, n = 0.0, 0
    for band in range(a.shape[0]):
        for i in range(a.shape[1]):
            for j in range(a.shape[2]):
                d = float(a[band, i, j]) - float(b[band, i, j])
                total += d * d
                n += 1
    return math.sqrt(total / n)


def loop_psnr(a, b):
    e = loop_rmse(a, b)
    return 100.0 if e < 1e-5 else 20 * math.log10(1 / e)


def loop_sam(a, b):
    angles = []
    for i in range(a.shape[1]):
        for j in range(a.shape[2]):
            dot = na = nb = 0.0
            for band in range(a.shape[0]):
                x, y = float(a[band, i, j]), float(b[band, i, j])
                dot += x * y
                na += x * x
                nb += y * y
            if na == 0 or nb == 0:
                continue
            c = max(-1.0, min(1.0, dot / math.sqrt(na * nb)))
            angles.append(math.degrees(math.acos(c)))
    return sum(angles) / len(angles)


def loop_ergas(ref, est, s):
    acc = 0.0
    for band in range(ref.shape[0]):
        se = mean = 0.0
        n = ref.shape[1] * ref.shape[2]
        for i in range(ref.shape[1]):
            for j in range(ref.shape[2]):
                se += (float(ref[band, i, j]) - float(est[band, i, j])) ** 2
                mean += float(ref[band, i, j])
        acc += (math.sqrt(se / n) / (mean / n)) ** 2
    return 100 / s * math.sqrt(acc / ref.shape[0])


def random_pairs(n, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        B, H, W = rng.integers(2, 6), rng.integers(3, 9), rng.integers(3, 9)
        a = rng.random((B, H, W)) + 0.05
        yield a, np.clip(a + rng.normal(0, rng.uniform(0.01, 0.2), a.shape), 0.01, None)


def test_loop_oracles_on_100_pairs():
    worst = 0.0
    for a, b in random_pairs(100):
        worst = max(
            worst,
            abs(metrics.rmse(a, b) - loop_rmse(a, b)),
            abs(metrics.psnr(a, b) - loop_psnr(a, b)),
            abs(metrics.sam(a, b) - loop_sam(a, b)),
            abs(metrics.ergas(a, b, 4) - loop_ergas(a, b, 4)),
        )
    assert worst < 1e-8


# ------------------------------------------------------------ closed forms

def test_identical_cubes():
    a = np.random.default_rng(1).random((4, 12, 12))
    assert metrics.rmse(a, a) == 0.0
    assert metrics.psnr(a, a) == 100.0
    assert metrics.ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    assert metrics.sam(a, a) == pytest.approx(0.0, abs=1e-6)
    assert metrics.ergas(a, a, 4) == 0.0


def test_constant_offset():
    a = np.random.default_rng(2).random((3, 8, 8)) * 0.5
    assert metrics.rmse(a, a + 0.1) == pytest.approx(0.1, abs=1e-12)
    assert metrics.psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-9)


def test_ssim_examples():
    rng = np.random.default_rng(3)
    a = rng.random((2, 16, 16))
    assert metrics.ssim(a, 1 - a) < 1.0
    c = np.full((2, 16, 16), 0.3)
    assert metrics.ssim(c, c) == pytest.approx(1.0, abs=1e-12)


def test_ssim_small_image_falls_back_and_flags():
    a = np.random.default_rng(4).random((2, 8, 8))
    value, flagged = metrics.ssim_with_flag(a, a * 0.9)
    assert flagged and -1 <= value <= 1
    with pytest.warns(UserWarning):
        metrics.ssim(a, a * 0.9)
    assert metrics.evaluate(a, a, 2).ssim_fallback


def test_sam_examples():
    a = np.random.default_rng(5).random((5, 6, 6)) + 0.1
    assert metrics.sam(a, 2 * a) == pytest.approx(0.0, abs=1e-6)
    e1 = np.zeros((2, 4, 4))
    e1[0] = 1
    e2 = np.zeros((2, 4, 4))
    e2[1] = 1
    assert metrics.sam(e1, e2) == pytest.approx(90.0, abs=1e-12)


def test_sam_skips_zero_pixels():
    a = np.ones((3, 2, 2))
    b = np.ones((3, 2, 2))
    b[:, 0, 0] = 0
    value, skipped = metrics.sam(a, b, return_skipped=True)
    assert skipped == 1 and value == pytest.approx(0.0, abs=1e-7)
    with pytest.raises(ValueError):
        metrics.sam(np.zeros((3, 2, 2)), b)


def test_ergas_examples():
    # per-band constants: band rmse is then eps times the band mean exactly
    ref = np.broadcast_to(np.array([0.2, 0.4, 0.6, 0.8])[:, None, None], (4, 8, 8))
    assert metrics.ergas(ref, ref * 1.02, 4) == pytest.approx(100 / 4 * 0.02, rel=1e-9)


def test_ergas_zero_mean_band_excluded():
    ref = np.broadcast_to(np.array([0.3, 0.0, 0.7])[:, None, None], (3, 5, 5))
    est = ref * 1.1
    with pytest.warns(UserWarning, match="excluded"):
        value = metrics.ergas(ref, est, 2)
    assert value == pytest.approx(100 / 2 * 0.1, rel=1e-9)


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        metrics.rmse(np.zeros((2, 3, 3)), np.zeros((2, 3, 4)))


def test_psnr_decreases_with_noise():
    rng = np.random.default_rng(8)
    a = rng.random((3, 16, 16))
    noise = rng.standard_normal(a.shape)
    values = [metrics.psnr(a, a + m * noise) for m in (0.01, 0.05, 0.2)]
    assert values[0] > values[1] > values[2]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 10.0))
def test_symmetry_and_scale_invariance(seed, scale):
    rng = np.random.default_rng(seed)
    a = rng.random((3, 12, 12)) + 0.05
    b = rng.random((3, 12, 12)) + 0.05
    assert metrics.rmse(a, b) == pytest.approx(metrics.rmse(b, a))
    assert metrics.psnr(a, b) == pytest.approx(metrics.psnr(b, a))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert metrics.ssim(a, b) == pytest.approx(metrics.ssim(b, a))
    assert metrics.sam(a, b) == pytest.approx(metrics.sam(b, a))
    per_pixel = rng.uniform(0.5, 2.0, (1, 12, 12)) * scale
    assert metrics.sam(a * per_pixel, b) == pytest.approx(metrics.sam(a, b), abs=1e-9)


def test_report_ranges_and_csv(tmp_path):
    rng = np.random.default_rng(9)
    ref = rng.random((4, 16, 16))
    est = np.clip(ref + rng.normal(0, 0.05, ref.shape), 0, 1)
    r = metrics.evaluate(ref, est, 4, "fuse", "matched", "img0")
    assert r.rmse >= 0 and -1 <= r.ssim <= 1 and 0 <= r.sam <= 180 and r.ergas >= 0
    m = metrics.mean_report([r, r], "fuse", "matched")
    assert m.psnr == pytest.approx(r.psnr)
    path = tmp_path / "report.csv"
    metrics.write_report([r, m], path)
    lines = path.read_text().splitlines()
    assert lines[0] == "method,degradation,image,rmse,psnr,ssim,sam,ergas"
    assert len(lines) == 3 and lines[2].startswith("fuse,matched,mean,")


def test_minmax_examples(tmp_path):
    series, flat = metrics.minmax_normalize([10, 20, 30])
    assert series.tolist() == [0.0, 0.5, 1.0] and not flat
    assert metrics.minmax_normalize([3, 7])[0].tolist() == [0.0, 1.0]
    series, flat = metrics.minmax_normalize([5, 5, 5])
    assert flat and series.tolist() == [0.0, 0.0, 0.0]
    with pytest.raises(ValueError):
        metrics.mmn_psnr_curve([(1, 2)])
    rows, degenerate = metrics.mmn_psnr_curve([(20, 30), (25, 31), (30, 35)])
    assert rows[0] == (0.0, 0.0) and rows[-1] == (1.0, 1.0) and not degenerate
    metrics.write_mmn_curve(rows, tmp_path / "mmn.csv")
    assert (tmp_path / "mmn.csv").read_text().splitlines()[0] == "input_psnr_norm,output_psnr_norm"
