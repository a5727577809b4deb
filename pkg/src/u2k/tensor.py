"""Dense tensors with reverse-mode differentiation over a fixed primitive set.

Image data is band-sequential: a cube is ``(B, H, W)`` and a batch of cubes
is ``(N, B, H, W)``. Spatial ops act on the last two axes and spectral ops on
axis ``-3``.

Every op records a closure that maps the output gradient to input gradients;
``Tensor.backward`` replays them in reverse topological order.
"""
from contextlib import contextmanager

import numpy as np

from . import kernels

_PRECISIONS = {"f32": np.float32, "f64": np.float64}
_dtype = np.float32


def get_dtype():
    return _dtype


def set_precision(mode):
    """Select ``"f32"`` (training) or ``"f64"`` (gradient verification)."""
    global _dtype
    try:
        _dtype = _PRECISIONS[mode]
    except KeyError:
        raise ValueError(f"unknown precision {mode!r}; expected one of {sorted(_PRECISIONS)}") from None


@contextmanager
def precision(mode):
    previous = _dtype
    set_precision(mode)
    try:
        yield
    finally:
        globals()["_dtype"] = previous


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(_dtype)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf that requires it."""
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)


def tensor(data, requires_grad=False, name=None):
    """Leaf tensor in the active precision."""
    return Tensor(np.array(data, dtype=_dtype), requires_grad=requires_grad, name=name)


def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=_dtype))


def _make(data, parents, backward):
    req = any(p.requires_grad for p in parents)
    if not req:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values produced by {what}")
    return arr


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(out, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(out, (a, b), backward)


def relu(x):
    mask = x.data > 0
    out = np.where(mask, x.data, 0).astype(x.data.dtype)

    def backward(g):
        return (g * mask,)

    return _make(out, (x,), backward)


def softmax(x, axis=-1):
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), backward)


# ---------------------------------------------------------------- shape ops

def reshape(x, shape):
    out = x.data.reshape(shape)

    def backward(g):
        return (g.reshape(x.shape),)

    return _make(out, (x,), backward)


def concat(tensors, axis):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return tuple(np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:]))

    return _make(out, tuple(tensors), backward)


def crop(x, top, left, height, width):
    """Spatial window ``[top:top+height, left:left+width]`` over the last two axes."""
    out = x.data[..., top:top + height, left:left + width]

    def backward(g):
        full = np.zeros_like(x.data)
        full[..., top:top + height, left:left + width] = g
        return (full,)

    return _make(np.ascontiguousarray(out), (x,), backward)


# ---------------------------------------------------------------- reductions

def mean(x):
    n = x.data.size
    out = np.asarray(x.data.mean(), dtype=x.data.dtype)

    def backward(g):
        return (np.full_like(x.data, g / n),)

    return _make(out, (x,), backward)


def mae(a, b):
    """Mean absolute error over all entries (the subgradient at 0 is 0)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"mae shape mismatch: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    n = diff.size
    out = np.asarray(np.abs(diff).mean(), dtype=diff.dtype)

    def backward(g):
        s = np.sign(diff) * (g / n)
        return s, -s

    return _make(out, (a, b), backward)


# ---------------------------------------------------------------- linear algebra

def dense(x, weight, bias=None):
    """Affine map ``x @ weight + bias`` for ``x`` of shape (N, in)."""
    if x.shape[-1] != weight.shape[0]:
        raise ValueError(f"dense: input width {x.shape[-1]} does not match weight {weight.shape}")
    out = x.data @ weight.data
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gx = g @ weight.data.T if x.requires_grad else None
        gw = x.data.T @ g if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    return _make(out, parents, backward)


def mode3_product(cube, matrix):
    """Apply ``matrix`` (B2, B1) to the spectrum of every pixel of ``cube`` (..., B1, H, W)."""
    cube, matrix = as_tensor(cube), as_tensor(matrix)
    if cube.ndim < 3:
        raise ValueError(f"mode3_product needs a cube, got shape {cube.shape}")
    if matrix.ndim != 2 or matrix.shape[1] != cube.shape[-3]:
        raise ValueError(f"mode3_product: matrix {matrix.shape} does not match {cube.shape[-3]} bands")
    # move bands last so the contraction is one GEMM
    x = np.moveaxis(cube.data, -3, -1)
    out = np.moveaxis(x @ matrix.data.T, -1, -3)

    def backward(g):
        gl = np.moveaxis(g, -3, -1)
        gc = np.moveaxis(gl @ matrix.data, -1, -3) if cube.requires_grad else None
        gm = None
        if matrix.requires_grad:
            gm = gl.reshape(-1, gl.shape[-1]).T @ x.reshape(-1, x.shape[-1])
        return gc, gm

    return _make(np.ascontiguousarray(out), (cube, matrix), backward)


# ---------------------------------------------------------------- spatial ops

def _as4(a):
    lead = a.shape[:-2]
    return a.reshape((-1, 1) + a.shape[-2:]) if a.ndim != 4 else a, lead


def pad_replicate(x, p):
    """Edge-replicate ``p`` pixels on each side of the last two axes."""
    if p == 0:
        return x
    width = [(0, 0)] * (x.ndim - 2) + [(p, p), (p, p)]
    out = np.pad(x.data, width, mode="edge")
    H, W = x.shape[-2:]

    def backward(g):
        rows = g[..., p:p + H, :].copy()
        rows[..., 0, :] += g[..., :p, :].sum(axis=-2)
        rows[..., -1, :] += g[..., p + H:, :].sum(axis=-2)
        gx = rows[..., :, p:p + W].copy()
        gx[..., :, 0] += rows[..., :, :p].sum(axis=-1)
        gx[..., :, -1] += rows[..., :, p + W:].sum(axis=-1)
        return (gx,)

    return _make(out, (x,), backward)


def depthwise_conv_valid(x, kernel):
    """Cross-correlate every band plane of ``x`` with one shared 2-D ``kernel``."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    kh, kw = kernel.shape
    if x.shape[-2] < kh or x.shape[-1] < kw:
        raise ValueError(f"kernel {kernel.shape} larger than image {x.shape[-2:]} in valid mode")
    lead = x.shape[:-2]
    x4 = x.data.reshape((-1, 1) + x.shape[-2:])
    k = kernel.data.astype(x.data.dtype, copy=False)
    out = kernels.depthwise_conv2d(x4, k)
    out = out.reshape(lead + out.shape[-2:])

    def backward(g):
        g4 = np.ascontiguousarray(g.reshape((-1, 1) + g.shape[-2:]))
        gx = gk = None
        if x.requires_grad:
            gx = kernels.depthwise_conv2d_grad_input(g4, k).reshape(x.shape)
        if kernel.requires_grad:
            gk = kernels.depthwise_conv2d_grad_kernel(x4, g4, kh, kw).astype(kernel.data.dtype)
        return gx, gk

    return _make(out, (x, kernel), backward)


def conv2d_per_band(cube, kernel, padding="same"):
    """Blur each band of ``cube`` with ``kernel`` (odd size, no flip).

    ``padding="same"`` replicate-pads so the spatial size is kept;
    ``padding="valid"`` shrinks it by ``k - 1``.
    """
    kernel = as_tensor(kernel)
    k = kernel.shape[0]
    if kernel.ndim != 2 or kernel.shape[1] != k:
        raise ValueError(f"kernel must be square, got {kernel.shape}")
    if k % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {k}")
    cube = as_tensor(cube)
    if padding == "same":
        return depthwise_conv_valid(pad_replicate(cube, k // 2), kernel)
    if padding == "valid":
        if k > min(cube.shape[-2:]):
            raise ValueError(f"kernel size {k} exceeds image extent {cube.shape[-2:]} in valid mode")
        return depthwise_conv_valid(cube, kernel)
    raise ValueError(f"unknown padding mode {padding!r}")


def downsample(x, s):
    """Keep the top-left sample of every ``s x s`` block."""
    x = as_tensor(x)
    if s < 1:
        raise ValueError(f"scale must be positive, got {s}")
    H, W = x.shape[-2:]
    if H % s:
        raise ValueError(f"height {H} is not divisible by scale {s}")
    if W % s:
        raise ValueError(f"width {W} is not divisible by scale {s}")
    if s == 1:
        return x
    out = np.ascontiguousarray(x.data[..., ::s, ::s])

    def backward(g):
        full = np.zeros_like(x.data)
        full[..., ::s, ::s] = g
        return (full,)

    return _make(out, (x,), backward)


def _bilinear_matrix(n, s, dtype):
    """(n*s, n) interpolation matrix, half-pixel centres, edge-clamped."""
    m = np.zeros((n * s, n), dtype=np.float64)
    for i in range(n * s):
        src = (i + 0.5) / s - 0.5
        src = min(max(src, 0.0), n - 1)
        lo = int(np.floor(src))
        hi = min(lo + 1, n - 1)
        t = src - lo
        m[i, lo] += 1.0 - t
        m[i, hi] += t
    return m.astype(dtype)


def upsample_bilinear(x, s):
    """Fixed separable bilinear upsampling of the last two axes by ``s``."""
    if s == 1:
        return x
    H, W = x.shape[-2:]
    mh = _bilinear_matrix(H, s, x.data.dtype)
    mw = _bilinear_matrix(W, s, x.data.dtype)
    out = mh @ x.data @ mw.T

    def backward(g):
        return (mh.T @ g @ mw,)

    return _make(out, (x,), backward)


def conv2d(x, weight, bias=None, padding="same"):
    """Multi-channel cross-correlation: (N, C, H, W) with (O, C, k, k) -> (N, O, H', W')."""
    x, weight = as_tensor(x), as_tensor(weight)
    O, C, kh, kw = weight.shape
    if x.ndim != 4 or x.shape[1] != C:
        raise ValueError(f"conv2d: input {x.shape} does not match weight {weight.shape}")
    if padding == "same":
        x = pad_replicate(x, kh // 2)
    elif padding != "valid":
        raise ValueError(f"unknown padding mode {padding!r}")
    N, _, H, W = x.shape
    Ho, Wo = H - kh + 1, W - kw + 1
    # columns are (C*kh*kw, N*Ho*Wo) so the product is one GEMM
    cols = kernels.im2col(x.data, kh, kw).reshape(C * kh * kw, N * Ho * Wo)
    wmat = weight.data.reshape(O, -1)
    out = wmat @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = np.ascontiguousarray(out.reshape(O, N, Ho, Wo).transpose(1, 0, 2, 3))
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gmat = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(O, -1)
        gx = gw = None
        if x.requires_grad:
            dcols = (wmat.T @ gmat).reshape(C, kh, kw, N, Ho, Wo)
            gx = kernels.col2im(dcols, H, W)
        if weight.requires_grad:
            gw = (gmat @ cols.T).reshape(weight.shape)
        if bias is None:
            return gx, gw
        return gx, gw, gmat.sum(axis=1)

    return _make(out, parents, backward)
