"""ADAM with bias correction and decoupled weight decay."""
import numpy as np


class DivergenceError(RuntimeError):
    """Raised when a gradient or loss turns non-finite."""


class Adam:
    """ADAM over parameter groups.

    ``groups`` is a list of dicts with keys ``params`` (list of Tensors) and
    ``lr``. Weight decay is decoupled: ``p -= lr * weight_decay * p`` after
    the moment update.
    """

    def __init__(self, groups, betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-8):
        if isinstance(groups, dict):
            groups = [groups]
        self.groups = [dict(g) for g in groups]
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {}
        self.v = {}
        for g in self.groups:
            for p in g["params"]:
                self.m[id(p)] = np.zeros_like(p.data)
                self.v[id(p)] = np.zeros_like(p.data)

    def zero_grad(self):
        for g in self.groups:
            for p in g["params"]:
                p.grad = None

    def step(self, lr_scale=1.0):
        for g in self.groups:
            for p in g["params"]:
                if p.grad is not None and not np.all(np.isfinite(p.grad)):
                    bad = int(np.size(p.grad) - np.isfinite(p.grad).sum())
                    raise DivergenceError(f"non-finite gradient in parameter {p.name or '?'} ({bad} entries)")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for g in self.groups:
            lr = g["lr"] * lr_scale
            for p in g["params"]:
                grad = p.grad if p.grad is not None else np.zeros_like(p.data)
                m = self.m[id(p)]
                v = self.v[id(p)]
                m *= b1
                m += (1 - b1) * grad
                v *= b2
                v += (1 - b2) * grad * grad
                update = (m / c1) / (np.sqrt(v / c2) + self.eps)
                p.data = (p.data - lr * update - lr * self.weight_decay * p.data).astype(p.data.dtype)
