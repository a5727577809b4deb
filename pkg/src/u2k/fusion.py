"""Compact residual CNN used as the frozen supervised fusion backbone."""
import csv
from dataclasses import dataclass

import numpy as np

from . import serialize
from . import tensor as T
from .data import extract_patches
from .degradation import apply_observation
from .nn import Conv2d, Module
from .optim import Adam, DivergenceError


class FusionNet(Module):
    """Bilinear-upsampled LR-HSI concatenated with the HR-MSI, four 3x3 convs,
    residual connection from the upsampled LR-HSI to the output."""

    def __init__(self, hsi_bands, msi_bands, scale, hidden=32, seed=0):
        rng = np.random.default_rng(seed)
        self.hsi_bands = hsi_bands
        self.msi_bands = msi_bands
        self.scale = scale
        self.layers = [
            Conv2d(hsi_bands + msi_bands, hidden, 3, rng),
            Conv2d(hidden, hidden, 3, rng),
            Conv2d(hidden, hidden, 3, rng),
            Conv2d(hidden, hsi_bands, 3, rng),
        ]
        self.frozen = False

    def freeze(self):
        self.requires_grad_(False)
        self.frozen = True
        return self

    def __call__(self, X, Y):
        up = T.upsample_bilinear(X, self.scale)
        h = T.concat([up, Y], axis=1)
        for layer in self.layers[:-1]:
            h = T.relu(layer(h))
        return T.add(self.layers[-1](h), up)

    def check_inputs(self, xs, ys):
        if xs[-3] != self.hsi_bands or ys[-3] != self.msi_bands:
            raise ValueError(
                f"expected {self.hsi_bands} LR-HSI bands and {self.msi_bands} MSI bands, got {xs[-3]} and {ys[-3]}"
            )
        if xs[-2] * self.scale != ys[-2] or xs[-1] * self.scale != ys[-1]:
            raise ValueError(f"LR-HSI {xs[-2:]} times scale {self.scale} does not match MSI {ys[-2:]}")


def fuse(net, X, Y):
    """Run the network on numpy inputs, single cube (B, h, w) or batch (N, B, h, w)."""
    X = np.asarray(X)
    Y = np.asarray(Y)
    net.check_inputs(X.shape, Y.shape)
    single = X.ndim == 3
    if single:
        X, Y = X[None], Y[None]
    dtype = T.get_dtype()
    out = net(T.Tensor(X.astype(dtype)), T.Tensor(Y.astype(dtype))).data
    return out[0] if single else out


@dataclass
class PretrainConfig:
    known: object  # DegradationSpec
    epochs: int = 200
    batch_size: int = 16
    lr: float = 0.001
    seed: int = 0
    patch: int = 32
    stride: int = 16

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


def make_training_pairs(cubes, spec, patch, stride, seed=0):
    """Stack patches of ``cubes`` and degrade them with ``spec``; returns (Z, X, Y) batches."""
    patches = [p.data for c in cubes for p in extract_patches(c, patch, stride)]
    Z = np.stack(patches).astype(T.get_dtype())
    X, Y = apply_observation(Z, spec, seed=seed if spec.snr_db is not None else None)
    return Z, X, Y


def batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def pretrain(net, cubes, cfg, snapshot_path=None, log=None):
    """Supervised L1 training on patches degraded with the known spec.

    Returns the per-epoch mean loss. On a non-finite loss the last good
    weights are written to ``snapshot_path`` (if given) before raising.
    """
    rng = np.random.default_rng(cfg.seed)
    Z, X, Y = make_training_pairs(cubes, cfg.known, cfg.patch, cfg.stride, seed=cfg.seed)
    net.requires_grad_(True)
    net.astype(T.get_dtype())
    opt = Adam([{"params": net.parameters(), "lr": cfg.lr}])
    curve = []
    last_good = net.state_dict()
    for epoch in range(cfg.epochs):
        losses = []
        for idx in batches(len(Z), cfg.batch_size, rng):
            loss = T.mae(net(T.Tensor(X[idx]), T.Tensor(Y[idx])), T.Tensor(Z[idx]))
            if not np.isfinite(loss.item()):
                if snapshot_path:
                    serialize.save(last_good, snapshot_path)
                raise DivergenceError(f"pretraining loss became non-finite at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            last_good = {k: v.copy() for k, v in net.state_dict().items()}
            losses.append(loss.item())
        curve.append(float(np.mean(losses)))
        if log:
            log(f"pretrain epoch {epoch + 1}/{cfg.epochs} loss {curve[-1]:.6f}")
    return curve


def write_loss_curve(curve, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("epoch", "loss"))
        for i, v in enumerate(curve, 1):
            w.writerow((i, f"{v:.10g}"))
