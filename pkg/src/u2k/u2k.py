"""Degradation wrapping (DW), degradation transformation (DT) and their training.

DW learns image-independent stand-ins for the unknown blur kernel and
spectral response; DT learns to re-map observations produced by the unknown
degradation into the form the frozen fusion network was trained on.
"""
import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .fusion import batches, make_training_pairs
from .nn import Conv2d, Dense, Module
from .optim import Adam, DivergenceError

STRATEGIES = ("gao", "ao", "naive")
LOSS_TERMS = ("rec", "dt", "con")


class _SimplexGenerator(Module):
    """Learnable latent -> 3-layer MLP -> logits, reshaped to ``shape``."""

    def __init__(self, shape, rng, latent=64, hidden=128):
        self.shape = shape
        self.latent = T.tensor(rng.standard_normal((1, latent)), requires_grad=True)
        n_out = int(np.prod(shape))
        self.mlp = [Dense(latent, hidden, rng), Dense(hidden, hidden, rng), Dense(hidden, n_out, rng)]

    def logits(self):
        h = self.latent
        for layer in self.mlp[:-1]:
            h = T.relu(layer(h))
        return self.mlp[-1](h)


class SpatialWrapper(_SimplexGenerator):
    def kernel(self):
        """(k, k) kernel, nonnegative and summing to one over all entries."""
        return T.reshape(T.softmax(self.logits(), axis=-1), self.shape)


class SpectralWrapper(_SimplexGenerator):
    def matrix(self):
        """(B_msi, B_hsi) response with each row on the simplex."""
        return T.softmax(T.reshape(self.logits(), self.shape), axis=-1)


class DwModule(Module):
    def __init__(self, hsi_bands, msi_bands, scale, k_dw=15, seed=0, latent=64, hidden=128):
        if k_dw % 2 == 0:
            raise ValueError(f"k_dw must be odd, got {k_dw}")
        rng = np.random.default_rng(seed)
        self.scale = scale
        self.k_dw = k_dw
        self.spatial = SpatialWrapper((k_dw, k_dw), rng, latent, hidden)
        self.spectral = SpectralWrapper((msi_bands, hsi_bands), rng, latent, hidden)

    def spatial_dw(self, Z, kernel=None):
        """(Z blurred by the learned kernel), decimated: an LR-HSI-like output."""
        Z = T.as_tensor(Z)
        _check_divisible(Z.shape, self.scale)
        k = self.spatial.kernel() if kernel is None else kernel
        return T.downsample(T.conv2d_per_band(Z, k, "same"), self.scale)

    def spectral_dw(self, Z, matrix=None):
        """Learned response applied per pixel: an HR-MSI-like output."""
        Z = T.as_tensor(Z)
        R = self.spectral.matrix() if matrix is None else matrix
        if Z.shape[-3] != R.shape[1]:
            raise ValueError(f"input has {Z.shape[-3]} bands, wrapper expects {R.shape[1]}")
        return T.mode3_product(Z, R)

    def phi_k(self):
        return self.spatial.kernel().data.copy()

    def phi_r(self):
        return self.spectral.matrix().data.copy()


def _check_divisible(shape, s):
    H, W = shape[-2:]
    if H % s or W % s:
        raise ValueError(f"spatial extent {(H, W)} is not divisible by scale {s}")


def _batched(x):
    x = T.as_tensor(x)
    return T.reshape(x, (1,) + x.shape) if x.ndim == 3 else x


class SpatialDt(Module):
    """Convolutions with growing receptive fields 3, 5, 7 plus an identity skip."""

    def __init__(self, bands, rng, hidden=32):
        self.convs = [Conv2d(bands, hidden, 3, rng), Conv2d(hidden, hidden, 5, rng), Conv2d(hidden, bands, 7, rng, zero=True)]

    def __call__(self, x):
        x = T.as_tensor(x)
        squeeze = x.ndim == 3
        x = _batched(x)
        h = T.relu(self.convs[0](x))
        h = T.relu(self.convs[1](h))
        out = T.add(self.convs[2](h), x)
        return T.reshape(out, out.shape[1:]) if squeeze else out


class SpectralDt(Module):
    """Six 1x1 convolutions (widths 16-32-64-32-16) plus an identity skip."""

    WIDTHS = (16, 32, 64, 32, 16)

    def __init__(self, bands, rng):
        chans = (bands,) + self.WIDTHS + (bands,)
        self.convs = [
            Conv2d(a, b, 1, rng, zero=(i == len(chans) - 2)) for i, (a, b) in enumerate(zip(chans[:-1], chans[1:]))
        ]

    def __call__(self, y):
        y = T.as_tensor(y)
        squeeze = y.ndim == 3
        y = _batched(y)
        h = y
        for conv in self.convs[:-1]:
            h = T.relu(conv(h))
        out = T.add(self.convs[-1](h), y)
        return T.reshape(out, out.shape[1:]) if squeeze else out


class DtModule(Module):
    """Zero-initialised last layers make a fresh DT the identity map."""

    def __init__(self, hsi_bands, msi_bands, seed=0, hidden=32):
        rng = np.random.default_rng(seed)
        self.spatial = SpatialDt(hsi_bands, rng, hidden)
        self.spectral = SpectralDt(msi_bands, rng)

    def spatial_dt(self, x):
        return self.spatial(x)

    def spectral_dt(self, y):
        return self.spectral(y)


# ---------------------------------------------------------------- losses

def loss_rec(Z, Z_hat):
    return T.mae(Z_hat, Z)


def loss_dt(X, X_hat, Y, Y_hat):
    return T.add(T.mae(X_hat, X), T.mae(Y_hat, Y))


def loss_con(dw, X_test, Y_test):
    """L1 gap between the learned response applied to the LR-HSI and the learned blur
    applied to the HR-MSI; both should equal the doubly degraded scene."""
    H_x = dw.spectral_dw(X_test)
    H_y = dw.spatial_dw(Y_test)
    if H_x.shape != H_y.shape:
        raise ValueError(f"misaligned consistency pair: {H_x.shape} vs {H_y.shape}")
    return T.mae(H_x, H_y)


def loss_total(l_rec, l_dt, l_con, lam=1.0, mu=1.0, w_rec=1.0):
    if lam < 0 or mu < 0:
        raise ValueError("loss weights must be non-negative")
    terms = [(w_rec, l_rec), (lam, l_dt), (mu, l_con)]
    total = None
    for w, term in terms:
        if w == 0 or term is None:
            continue
        part = T.mul(term, w) if w != 1 else T.as_tensor(term)
        total = part if total is None else T.add(total, part)
    return total if total is not None else T.tensor(0.0)


class ConsistencySampler:
    """Random scale-aligned crops of the test pair for the consistency loss.

    The HR-MSI is replicate-padded once by the DW kernel radius so a valid
    blur of each crop reproduces what a full-image blur would give there.
    """

    def __init__(self, X_test, Y_test, scale, k_dw, crop=32):
        X_test = np.asarray(X_test)
        Y_test = np.asarray(Y_test)
        if X_test.ndim == 3:
            X_test, Y_test = X_test[None], Y_test[None]
        if X_test.shape[0] != Y_test.shape[0]:
            raise ValueError("X_test and Y_test hold different numbers of scenes")
        if X_test.shape[-2] * scale != Y_test.shape[-2] or X_test.shape[-1] * scale != Y_test.shape[-1]:
            raise ValueError(f"test pair misaligned: {X_test.shape} vs {Y_test.shape} at scale {scale}")
        self.s = scale
        self.r = k_dw // 2
        H, W = Y_test.shape[-2:]
        self.crop = min(crop - crop % scale, H - H % scale, W - W % scale)
        if self.crop < scale:
            raise ValueError("test images are smaller than one scale block")
        self.X = X_test
        self.Ypad = np.pad(Y_test, [(0, 0), (0, 0), (self.r, self.r), (self.r, self.r)], mode="edge")
        self.H, self.W = H, W

    def sample(self, rng, n):
        c, s, r = self.crop, self.s, self.r
        img = rng.integers(0, self.X.shape[0], size=n)
        oy = rng.integers(0, (self.H - c) // s + 1, size=n)
        ox = rng.integers(0, (self.W - c) // s + 1, size=n)
        xc = np.stack([self.X[i, :, y:y + c // s, x:x + c // s] for i, y, x in zip(img, oy, ox)])
        yc = np.stack([self.Ypad[i, :, y * s:y * s + c + 2 * r, x * s:x * s + c + 2 * r] for i, y, x in zip(img, oy, ox)])
        return xc, yc

    def loss(self, dw, xc, yc):
        dtype = T.get_dtype()
        H_x = T.mode3_product(T.Tensor(xc.astype(dtype)), dw.spectral.matrix())
        H_y = T.downsample(T.depthwise_conv_valid(T.Tensor(yc.astype(dtype)), dw.spatial.kernel()), self.s)
        return T.mae(H_x, H_y)


# ---------------------------------------------------------------- training

@dataclass
class U2kConfig:
    known: object  # DegradationSpec the fusion network was trained on
    lam: float = 1.0
    mu: float = 1.0
    k_dw: int = 15
    epochs_a: int = 100
    epochs_b: int = 10
    n_inner: int = 5
    dw_decay: float = 0.1
    lr_spectral: float = 0.001
    lr_spatial: float = 0.01
    lr_dt: float = 0.01
    batch_size: int = 16
    seed: int = 0
    crop: int = 32
    patch: int = 32
    stride: int = 16
    weight_decay: float = 1e-8
    strategy: str = "gao"
    drop: tuple = ()

    def __post_init__(self):
        if self.lam < 0 or self.mu < 0:
            raise ValueError("lambda and mu must be non-negative")
        if not 0 < self.dw_decay <= 1:
            raise ValueError("dw_decay must lie in (0, 1]")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        self.drop = tuple(self.drop)
        for term in self.drop:
            if term not in LOSS_TERMS:
                raise ValueError(f"unknown loss term {term!r}; expected one of {LOSS_TERMS}")

    @property
    def weights(self):
        """(rec, dt, con) weights after applying ``drop``."""
        return (
            0.0 if "rec" in self.drop else 1.0,
            0.0 if "dt" in self.drop else self.lam,
            0.0 if "con" in self.drop else self.mu,
        )


@dataclass
class U2kResult:
    dw: DwModule
    dt: DtModule
    curve: list = field(default_factory=list)  # dicts: phase, epoch, l_rec, l_dt, l_con, l_total
    snapshots: list = field(default_factory=list)  # (phase, epoch, phi_k, phi_r)
    steps: int = 0


class _Trainer:
    def __init__(self, net, train_cubes, X_test, Y_test, cfg, log=None):
        if not net.frozen:
            raise ValueError("fusion network must be frozen before adaptation")
        if X_test is None or Y_test is None:
            raise ValueError("a test pair is required for the consistency loss")
        if not train_cubes:
            raise ValueError("no training cubes")
        self.cfg = cfg
        self.net = net
        self.log = log
        self.rng = np.random.default_rng(cfg.seed)
        s = cfg.known.scale
        self.Z, self.X, self.Y = make_training_pairs(train_cubes, cfg.known, cfg.patch, cfg.stride, seed=cfg.seed)
        hsi, msi = self.Z.shape[1], self.Y.shape[1]
        dtype = T.get_dtype()
        self.dw = DwModule(hsi, msi, s, cfg.k_dw, seed=cfg.seed).astype(dtype)
        self.dt = DtModule(hsi, msi, seed=cfg.seed + 1).astype(dtype)
        self.sampler = ConsistencySampler(X_test, Y_test, s, cfg.k_dw, cfg.crop)
        self.opt_dw = Adam(
            [
                {"params": self.dw.spatial.parameters(), "lr": cfg.lr_spatial},
                {"params": self.dw.spectral.parameters(), "lr": cfg.lr_spectral},
            ],
            weight_decay=cfg.weight_decay,
        )
        self.opt_dt = Adam([{"params": self.dt.parameters(), "lr": cfg.lr_dt}], weight_decay=cfg.weight_decay)
        self.result = U2kResult(self.dw, self.dt)
        self.n_batches = len(batches(len(self.Z), cfg.batch_size, np.random.default_rng(0)))
        self.last_good = None

    # one optimizer step on the consistency loss alone, DW parameters only
    def con_step(self, lr_scale):
        w_con = self.cfg.weights[2]
        xc, yc = self.sampler.sample(self.rng, self.cfg.batch_size)
        l = self.sampler.loss(self.dw, xc, yc)
        self._guard(l.item())
        if w_con > 0:
            self.opt_dw.zero_grad()
            T.mul(l, w_con).backward()
            self.opt_dw.step(lr_scale)
        self.result.steps += 1
        return l.item()

    def total_loss(self, idx):
        w_rec, lam, mu = self.cfg.weights
        dtype = T.get_dtype()
        Zb = T.Tensor(self.Z[idx].astype(dtype))
        X_tilde = self.dw.spatial_dw(Zb)
        Y_tilde = self.dw.spectral_dw(Zb)
        X_hat = self.dt.spatial_dt(X_tilde)
        Y_hat = self.dt.spectral_dt(Y_tilde)
        l_rec = loss_rec(Zb, self.net(X_hat, Y_hat))
        l_dt = loss_dt(T.Tensor(self.X[idx]), X_hat, T.Tensor(self.Y[idx]), Y_hat)
        xc, yc = self.sampler.sample(self.rng, self.cfg.batch_size)
        l_con = self.sampler.loss(self.dw, xc, yc)
        total = loss_total(l_rec, l_dt, l_con, lam, mu, w_rec)
        self._guard(total.item())
        return total, (l_rec.item(), l_dt.item(), l_con.item(), total.item())

    def _guard(self, value):
        if not np.isfinite(value):
            raise DivergenceError("adaptation loss became non-finite")

    def record(self, phase, epoch, rows):
        rows = np.asarray(rows, dtype=np.float64)
        l_rec, l_dt, l_con, l_total = (rows.mean(axis=0) if rows.ndim == 2 else rows).tolist()
        self.result.curve.append(
            {"phase": phase, "epoch": epoch, "l_rec": l_rec, "l_dt": l_dt, "l_con": l_con, "l_total": l_total}
        )
        self.result.snapshots.append((phase, epoch, self.dw.phi_k(), self.dw.phi_r()))
        self.last_good = (self.dw.state_dict(), self.dt.state_dict())
        if self.log:
            self.log(f"{phase} epoch {epoch} rec {l_rec:.5f} dt {l_dt:.5f} con {l_con:.6f} total {l_total:.5f}")

    def train_batches(self):
        return batches(len(self.Z), self.cfg.batch_size, self.rng)

    def run(self):
        try:
            getattr(self, f"_run_{self.cfg.strategy}")()
        except DivergenceError as exc:
            exc.last_good = self.last_good
            raise
        return self.result

    def _run_gao(self):
        cfg = self.cfg
        mu = cfg.weights[2]
        for epoch in range(1, cfg.epochs_a + 1):
            cons = [self.con_step(1.0) for _ in range(self.n_batches)]
            c = float(np.mean(cons))
            self.record("A", epoch, [np.nan, np.nan, c, mu * c])
        for epoch in range(1, cfg.epochs_b + 1):
            rows = []
            for idx in self.train_batches():
                for _ in range(cfg.n_inner):
                    self.con_step(cfg.dw_decay)
                total, vals = self.total_loss(idx)
                self.opt_dw.zero_grad()
                self.opt_dt.zero_grad()
                total.backward()
                self.opt_dt.step()
                self.opt_dw.step(cfg.dw_decay)
                self.result.steps += 1
                rows.append(vals)
            self.record("B", epoch, rows)

    def _budget(self):
        cfg = self.cfg
        return self.n_batches * (cfg.epochs_a + cfg.epochs_b * (cfg.n_inner + 1))

    def _epochs_for_budget(self):
        steps, epoch = self._budget(), 0
        while steps > 0:
            epoch += 1
            chunk = self.train_batches()[:steps]
            steps -= len(chunk)
            yield epoch, chunk

    def _run_naive(self):
        for epoch, chunk in self._epochs_for_budget():
            rows = []
            for idx in chunk:
                total, vals = self.total_loss(idx)
                self.opt_dw.zero_grad()
                self.opt_dt.zero_grad()
                total.backward()
                self.opt_dw.step()
                self.opt_dt.step()
                self.result.steps += 1
                rows.append(vals)
            self.record("joint", epoch, rows)

    def _run_ao(self):
        turn = 0
        for epoch, chunk in self._epochs_for_budget():
            rows = []
            for idx in chunk:
                total, vals = self.total_loss(idx)
                self.opt_dw.zero_grad()
                self.opt_dt.zero_grad()
                total.backward()
                (self.opt_dw if turn % 2 == 0 else self.opt_dt).step()
                turn += 1
                self.result.steps += 1
                rows.append(vals)
            self.record("alt", epoch, rows)


def gao_train(net, train_cubes, X_test, Y_test, cfg, log=None):
    """Adapt DW and DT around the frozen ``net`` with the schedule named by ``cfg.strategy``.

    ``gao``: wrapper-only epochs on the consistency loss, then for each batch
    ``n_inner`` consistency steps on DW at the decayed rate followed by one
    step on the total loss (DT at full rate, DW at the decayed rate).
    ``ao`` alternates DW-only and DT-only steps on the total loss; ``naive``
    takes joint steps. All three spend the same number of optimizer steps.
    """
    return _Trainer(net, train_cubes, X_test, Y_test, cfg, log).run()


def u2k_infer(dt, net, X_test, Y_test):
    """Fuse after mapping the test observations through DT; DW is not used."""
    X_test = np.asarray(X_test)
    Y_test = np.asarray(Y_test)
    net.check_inputs(X_test.shape, Y_test.shape)
    dtype = T.get_dtype()
    single = X_test.ndim == 3
    x = T.Tensor((X_test[None] if single else X_test).astype(dtype))
    y = T.Tensor((Y_test[None] if single else Y_test).astype(dtype))
    out = net(dt.spatial_dt(x), dt.spectral_dt(y)).data
    return out[0] if single else out


def write_adapt_curve(curve, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("epoch", "l_rec", "l_dt", "l_con", "l_total"))
        for i, row in enumerate(curve, 1):
            w.writerow([i] + [f"{row[k]:.10g}" for k in ("l_rec", "l_dt", "l_con", "l_total")])


def dw_state(dw, dt):
    return dw.state_dict(), dt.state_dict()
