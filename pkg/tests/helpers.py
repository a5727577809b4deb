"""Finite-difference gradient oracle and nested-loop reference implementations."""
import numpy as np

from u2k import tensor as T


def fd_check(build, leaves, rng, n_points=10, h=1e-6):
    """Compare analytic and central-difference gradients of ``build()``.

    ``build`` must return a scalar Tensor computed from the Tensors in
    ``leaves`` (float64). Up to ``n_points`` random coordinates of every leaf
    are probed. Returns the worst relative error.
    """
    for leaf in leaves:
        leaf.grad = None
    loss = build()
    loss.backward()
    worst = 0.0
    for leaf in leaves:
        analytic = np.zeros_like(leaf.data) if leaf.grad is None else leaf.grad
        flat = leaf.data.reshape(-1)
        picks = rng.choice(flat.size, size=min(n_points, flat.size), replace=False)
        for i in picks:
            old = flat[i]
            flat[i] = old + h
            fp = build().item()
            flat[i] = old - h
            fm = build().item()
            flat[i] = old
            numeric = (fp - fm) / (2 * h)
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-6)
            worst = max(worst, err)
    return worst


def loop_conv_valid(cube, k):
    """Per-band valid cross-correlation with explicit loops; cube is (B, H, W)."""
    B, H, W = cube.shape
    kh = k.shape[0]
    out = np.zeros((B, H - kh + 1, W - kh + 1))
    for b in range(B):
        for i in range(H - kh + 1):
            for j in range(W - kh + 1):
                acc = 0.0
                for u in range(kh):
                    for v in range(kh):
                        acc += cube[b, i + u, j + v] * k[u, v]
                out[b, i, j] = acc
    return out


def loop_observation(Z, k, R, s):
    """Replicate-padded blur, top-left decimation and per-pixel SRF, all with loops."""
    B, H, W = Z.shape
    r = k.shape[0] // 2
    X = np.zeros((B, H // s, W // s))
    for b in range(B):
        for i in range(0, H, s):
            for j in range(0, W, s):
                acc = 0.0
                for u in range(-r, r + 1):
                    for v in range(-r, r + 1):
                        y = min(max(i + u, 0), H - 1)
                        x = min(max(j + v, 0), W - 1)
                        acc += Z[b, y, x] * k[u + r, v + r]
                X[b, i // s, j // s] = acc
    M = R.shape[0]
    Y = np.zeros((M, H, W))
    for m in range(M):
        for i in range(H):
            for j in range(W):
                Y[m, i, j] = sum(R[m, b] * Z[b, i, j] for b in range(B))
    return X, Y


VERDICTS = []


def record_verdict(tag, ok, detail):
    """Remember one acceptance line for the terminal summary; returns ``ok``."""
    VERDICTS.append(f"{tag}: {'PASS' if ok else 'FAIL'}  {detail}")
    return ok
