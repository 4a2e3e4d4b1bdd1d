"""Reverse-mode automatic differentiation over dense float64 numpy arrays.

Every operation records itself on the active :class:`Tape`; ``Tape.backward``
replays the records in reverse execution order (a valid reverse topological
order) and accumulates gradients into the participating tensors.
"""

from __future__ import annotations

import threading

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT2PI = 0.3989422804014327

_state = threading.local()

# When True, every op output is checked for NaN/Inf. Leaf construction via
# Tensor(...) is always checked.
checked_mode = False


def _active_tape():
    return getattr(_state, "tape", None)


class Tensor:
    """Dense float64 array with an optional gradient buffer.

    ``data`` is kept C-contiguous (row-major). ``grad`` is allocated lazily on
    the first backward accumulation and always matches ``data.shape``.
    """

    __slots__ = ("data", "requires_grad", "grad")

    # Make ndarray <op> Tensor defer to our reflected operators instead of
    # numpy broadcasting Tensors into object arrays.
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        if not np.all(np.isfinite(arr)):
            raise ValueError("non-finite values in tensor construction")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None

    @classmethod
    def _result(cls, data: np.ndarray, requires_grad: bool) -> "Tensor":
        # Internal fast path for op outputs; finiteness enforced by the tape
        # in checked mode instead of here.
        t = cls.__new__(cls)
        t.data = data
        t.requires_grad = requires_grad
        t.grad = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return self.data.item()

    def detach(self) -> "Tensor":
        return Tensor._result(self.data, False)

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g: np.ndarray):
        # First touch binds a private copy (g may alias another tensor's
        # gradient buffer); later touches accumulate in place.
        if self.grad is None:
            if np.shape(g) != self.data.shape:
                g = np.broadcast_to(g, self.data.shape)
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; constants are folded as plain ndarrays
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


class Tape:
    """Ordered record of executed operations for reverse accumulation.

    Usable as a context manager; ops executed inside record themselves when
    at least one input requires a gradient. Tapes are thread-local: one tape
    runs single-threaded, independent tapes may live on separate threads.
    """

    def __init__(self):
        self._nodes = []

    def __len__(self):
        return len(self._nodes)

    def __enter__(self):
        if _active_tape() is not None:
            raise RuntimeError("a tape is already active on this thread")
        _state.tape = self
        return self

    def __exit__(self, *exc):
        _state.tape = None
        return False

    def _record(self, out: Tensor, parents, backward):
        self._nodes.append((out, parents, backward))

    def backward(self, loss: Tensor):
        """Seed d(loss)/d(loss)=1 and propagate through the tape in reverse."""
        if loss.data.size != 1:
            raise ValueError("backward requires a scalar loss")
        loss.accumulate_grad(np.ones_like(loss.data))
        for out, parents, backward in reversed(self._nodes):
            g = out.grad
            if g is None:
                continue
            backward(g, parents)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _record(out_data: np.ndarray, parents, backward) -> Tensor:
    """Wrap an op result, registering on the active tape when needed."""
    tape = _active_tape()
    needs = tape is not None and any(
        isinstance(p, Tensor) and p.requires_grad for p in parents
    )
    if checked_mode and not np.all(np.isfinite(out_data)):
        raise FloatingPointError("non-finite values produced by an operation")
    arr = np.asarray(out_data)
    if not arr.flags["C_CONTIGUOUS"]:
        arr = np.ascontiguousarray(arr)
    out = Tensor._result(arr, needs)
    if needs:
        tape._record(out, parents, backward)
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _data(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _acc(p, g):
    if isinstance(p, Tensor) and p.requires_grad:
        p.accumulate_grad(g)


# ---------------------------------------------------------------------------
# elementwise / arithmetic
# ---------------------------------------------------------------------------

def add(a, b):
    ad, bd = _data(a), _data(b)

    def backward(g, parents):
        pa, pb = parents
        _acc(pa, _unbroadcast(g, ad.shape))
        _acc(pb, _unbroadcast(g, bd.shape))

    return _record(ad + bd, (a, b), backward)


def sub(a, b):
    ad, bd = _data(a), _data(b)

    def backward(g, parents):
        pa, pb = parents
        _acc(pa, _unbroadcast(g, ad.shape))
        _acc(pb, _unbroadcast(-g, bd.shape))

    return _record(ad - bd, (a, b), backward)


def mul(a, b):
    ad, bd = _data(a), _data(b)

    def backward(g, parents):
        pa, pb = parents
        _acc(pa, _unbroadcast(g * bd, ad.shape))
        _acc(pb, _unbroadcast(g * ad, bd.shape))

    return _record(ad * bd, (a, b), backward)


def div(a, b):
    ad, bd = _data(a), _data(b)

    def backward(g, parents):
        pa, pb = parents
        _acc(pa, _unbroadcast(g / bd, ad.shape))
        _acc(pb, _unbroadcast(-g * ad / (bd * bd), bd.shape))

    return _record(ad / bd, (a, b), backward)


def neg(a):
    def backward(g, parents):
        _acc(parents[0], -g)

    return _record(-_data(a), (a,), backward)


def maximum(a, b):
    """Elementwise max; at ties the gradient goes to the first argument."""
    ad, bd = _data(a), _data(b)
    take_a = ad >= bd

    def backward(g, parents):
        pa, pb = parents
        _acc(pa, _unbroadcast(np.where(take_a, g, 0.0), ad.shape))
        _acc(pb, _unbroadcast(np.where(take_a, 0.0, g), bd.shape))

    return _record(np.maximum(ad, bd), (a, b), backward)


def minimum(a, b):
    ad, bd = _data(a), _data(b)
    take_a = ad <= bd

    def backward(g, parents):
        pa, pb = parents
        _acc(pa, _unbroadcast(np.where(take_a, g, 0.0), ad.shape))
        _acc(pb, _unbroadcast(np.where(take_a, 0.0, g), bd.shape))

    return _record(np.minimum(ad, bd), (a, b), backward)


def abs_(a):
    """Elementwise absolute value with sign(0) = 0 subgradient."""
    ad = _data(a)
    s = np.sign(ad)

    def backward(g, parents):
        _acc(parents[0], g * s)

    return _record(np.abs(ad), (a,), backward)


def clamp_min(a, lo: float):
    ad = _data(a)
    mask = ad > lo

    def backward(g, parents):
        _acc(parents[0], np.where(mask, g, 0.0))

    return _record(np.maximum(ad, lo), (a,), backward)


def sigmoid(a):
    ad = _data(a)
    # stable in both tails
    out = np.where(ad >= 0, 1.0 / (1.0 + np.exp(-np.abs(ad))),
                   np.exp(-np.abs(ad)) / (1.0 + np.exp(-np.abs(ad))))

    def backward(g, parents):
        _acc(parents[0], g * out * (1.0 - out))

    return _record(out, (a,), backward)


def gelu(a):
    """Exact GELU: x * Phi(x) with Phi the standard normal CDF."""
    ad = _data(a)
    cdf = 0.5 * (1.0 + erf(ad * _INV_SQRT2))

    def backward(g, parents):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * ad * ad)
        _acc(parents[0], g * (cdf + ad * pdf))

    return _record(ad * cdf, (a,), backward)


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------

def reshape(a, shape):
    ad = _data(a)

    def backward(g, parents):
        _acc(parents[0], g.reshape(ad.shape))

    return _record(np.ascontiguousarray(ad.reshape(shape)), (a,), backward)


def transpose(a, axes):
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def backward(g, parents):
        _acc(parents[0], np.ascontiguousarray(g.transpose(inv)))

    return _record(np.ascontiguousarray(_data(a).transpose(axes)), (a,), backward)


def concat(tensors, axis: int = 0):
    datas = [_data(t) for t in tensors]
    sizes = [d.shape[axis] for d in datas]
    splits = np.cumsum(sizes)[:-1]

    def backward(g, parents):
        for p, piece in zip(parents, np.split(g, splits, axis=axis)):
            _acc(p, np.ascontiguousarray(piece))

    return _record(np.concatenate(datas, axis=axis), tuple(tensors), backward)


def narrow(a, axis: int, start: int, length: int):
    """Contiguous slice [start, start+length) along ``axis``."""
    ad = _data(a)
    axis = axis % ad.ndim
    idx = tuple(
        slice(start, start + length) if i == axis else slice(None)
        for i in range(ad.ndim)
    )

    def backward(g, parents):
        full = np.zeros(ad.shape)
        full[idx] = g
        _acc(parents[0], full)

    return _record(np.ascontiguousarray(ad[idx]), (a,), backward)


def take(a, indices, axis: int):
    """Gather along ``axis`` with an integer index array."""
    ad = _data(a)
    axis = axis % ad.ndim
    idx = np.asarray(indices, dtype=np.intp)

    def backward(g, parents):
        p = parents[0]
        if not (isinstance(p, Tensor) and p.requires_grad):
            return
        full = np.zeros(ad.shape)
        sel = tuple(idx if i == axis else slice(None) for i in range(ad.ndim))
        np.add.at(full, sel, g)
        p.accumulate_grad(full)

    return _record(np.ascontiguousarray(np.take(ad, idx, axis=axis)), (a,), backward)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def sum_(a, axis=None, keepdims=False):
    ad = _data(a)

    def backward(g, parents):
        gl = g
        if axis is not None and not keepdims:
            gl = np.expand_dims(gl, axis)
        _acc(parents[0], np.broadcast_to(gl, ad.shape).copy())

    return _record(ad.sum(axis=axis, keepdims=keepdims), (a,), backward)


def mean(a, axis=None, keepdims=False):
    ad = _data(a)
    if axis is None:
        n = ad.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([ad.shape[i] for i in axes]))

    def backward(g, parents):
        gl = g
        if axis is not None and not keepdims:
            gl = np.expand_dims(gl, axis)
        _acc(parents[0], np.broadcast_to(gl, ad.shape) / n)

    return _record(ad.mean(axis=axis, keepdims=keepdims), (a,), backward)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a, b):
    ad, bd = _data(a), _data(b)
    if ad.ndim < 2 or bd.ndim < 2:
        raise ValueError(f"matmul needs >=2-d operands, got {ad.shape} x {bd.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {ad.shape} x {bd.shape}")
    if ad.shape[:-2] != bd.shape[:-2]:
        raise ValueError(
            f"matmul batch dims must agree, got {ad.shape} x {bd.shape}"
        )

    def backward(g, parents):
        pa, pb = parents
        if isinstance(pa, Tensor) and pa.requires_grad:
            _acc(pa, g @ bd.swapaxes(-1, -2))
        if isinstance(pb, Tensor) and pb.requires_grad:
            _acc(pb, ad.swapaxes(-1, -2) @ g)

    return _record(ad @ bd, (a, b), backward)


def attention_heads(qkv, heads: int):
    """Fused scaled dot-product attention over packed projections.

    ``qkv`` is (B, L, 3d) laid out as [queries | keys | values]; the op
    splits d into ``heads`` independent slices, attends with 1/sqrt(d_head)
    scaling, and returns the re-packed (B, L, d) context. One tape node
    replaces the narrow/transpose/matmul/softmax chain, with the softmax
    matrix kept for the hand-derived backward.
    """
    qkvd = _data(qkv)
    if qkvd.ndim != 3 or qkvd.shape[-1] % (3 * heads) != 0:
        raise ValueError(f"packed qkv shape {qkvd.shape} does not split into "
                         f"3 x {heads} heads")
    B, L, three_d = qkvd.shape
    d = three_d // 3
    dh = d // heads
    scale = 1.0 / np.sqrt(dh)
    # (B, L, 3, h, dh) -> (3, B, h, L, dh)
    parts = np.ascontiguousarray(
        qkvd.reshape(B, L, 3, heads, dh).transpose(2, 0, 3, 1, 4))
    q, k, v = parts[0] * scale, parts[1], parts[2]
    scores = q @ k.swapaxes(-1, -2)
    scores -= scores.max(axis=-1, keepdims=True)
    np.exp(scores, out=scores)
    scores /= scores.sum(axis=-1, keepdims=True)
    probs = scores                       # (B, h, L, L)
    ctx = probs @ v                      # (B, h, L, dh)
    out = np.ascontiguousarray(ctx.transpose(0, 2, 1, 3)).reshape(B, L, d)

    def backward(g, parents):
        gctx = np.ascontiguousarray(
            g.reshape(B, L, heads, dh).transpose(0, 2, 1, 3))
        dv = probs.swapaxes(-1, -2) @ gctx
        dp = gctx @ v.swapaxes(-1, -2)
        dp -= (dp * probs).sum(axis=-1, keepdims=True)
        dp *= probs                      # now the score gradient
        dq = (dp @ k) * scale
        dk = dp.swapaxes(-1, -2) @ q     # q carries the scale already
        dqkv = np.empty_like(qkvd)
        packed = dqkv.reshape(B, L, 3, heads, dh)
        packed[:, :, 0] = dq.transpose(0, 2, 1, 3)
        packed[:, :, 1] = dk.transpose(0, 2, 1, 3)
        packed[:, :, 2] = dv.transpose(0, 2, 1, 3)
        _acc(parents[0], dqkv)

    return _record(out, (qkv,), backward)


def linear(x, w, b=None):
    """x @ w + b over the last axis of x; w is (din, dout), b is (dout,)."""
    xd, wd = _data(x), _data(w)
    if xd.shape[-1] != wd.shape[0]:
        raise ValueError(f"linear shape mismatch: {xd.shape} x {wd.shape}")
    lead = xd.shape[:-1]
    x2 = xd.reshape(-1, wd.shape[0])
    out = x2 @ wd
    if b is not None:
        out = out + _data(b)

    def backward(g, parents):
        px, pw, pb = parents
        g2 = g.reshape(-1, wd.shape[1])
        if isinstance(px, Tensor) and px.requires_grad:
            _acc(px, (g2 @ wd.T).reshape(xd.shape))
        if isinstance(pw, Tensor) and pw.requires_grad:
            _acc(pw, x2.T @ g2)
        if pb is not None:
            _acc(pb, g2.sum(axis=0))

    return _record(out.reshape(lead + (wd.shape[1],)), (x, w, b), backward)


# ---------------------------------------------------------------------------
# normalization / probability
# ---------------------------------------------------------------------------

def layer_norm(x, gain, bias, eps: float = 1e-6):
    """Normalize the last axis to zero mean / unit variance, then scale+shift."""
    xd = _data(x)
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = _data(gain)
    out = xhat * gd + _data(bias)

    def backward(g, parents):
        px, pg, pb = parents
        gg = g * gd
        # d(xhat)/dx folded: inv * (gg - mean(gg) - xhat * mean(gg*xhat))
        m1 = gg.mean(axis=-1, keepdims=True)
        m2 = (gg * xhat).mean(axis=-1, keepdims=True)
        _acc(px, inv * (gg - m1 - xhat * m2))
        red = tuple(range(g.ndim - 1))
        _acc(pg, (g * xhat).sum(axis=red))
        _acc(pb, g.sum(axis=red))

    return _record(out, (x, gain, bias), backward)


def softmax(x, axis: int = -1):
    xd = _data(x)
    shifted = xd - xd.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g, parents):
        dot = (g * out).sum(axis=axis, keepdims=True)
        _acc(parents[0], out * (g - dot))

    return _record(out, (x,), backward)


def log_softmax_dense(xd: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = xd - xd.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer labels under logits.

    ``logits`` is (K,) or (B, K); computed via log-sum-exp, never through an
    explicit softmax. The gradient is softmax(logits) - one_hot(labels).
    """
    xd = _data(logits)
    squeeze = xd.ndim == 1
    x2 = xd[None, :] if squeeze else xd
    lab = np.atleast_1d(np.asarray(labels, dtype=np.intp))
    if lab.ndim != 1 or lab.shape[0] != x2.shape[0]:
        raise ValueError("labels must be one integer per logit row")
    if np.any(lab < 0) or np.any(lab >= x2.shape[1]):
        raise IndexError(f"class index out of range for K={x2.shape[1]}")
    logp = log_softmax_dense(x2, axis=1)
    rows = np.arange(x2.shape[0])
    out = -logp[rows, lab].mean()

    def backward(g, parents):
        p = parents[0]
        if not (isinstance(p, Tensor) and p.requires_grad):
            return
        gx = np.exp(logp)
        gx[rows, lab] -= 1.0
        gx *= g / x2.shape[0]
        p.accumulate_grad(gx[0] if squeeze else gx)

    return _record(np.asarray(out), (logits,), backward)


def bce_with_logit(logit, target):
    """Elementwise binary cross-entropy on raw logits (log-sum-exp form)."""
    zd = _data(logit)
    td = _data(target)
    # max(z,0) - z*t + log(1+exp(-|z|))
    out = np.maximum(zd, 0.0) - zd * td + np.log1p(np.exp(-np.abs(zd)))

    def backward(g, parents):
        pz, pt = parents
        s = np.where(zd >= 0, 1.0 / (1.0 + np.exp(-np.abs(zd))),
                     np.exp(-np.abs(zd)) / (1.0 + np.exp(-np.abs(zd))))
        _acc(pz, _unbroadcast(g * (s - td), zd.shape))
        _acc(pt, _unbroadcast(g * (-zd), td.shape))

    return _record(out, (logit, target), backward)


def l1_distance(a, b):
    """Mean absolute elementwise difference (zero subgradient at ties)."""
    ad, bd = _data(a), _data(b)
    if ad.shape != bd.shape:
        raise ValueError(f"l1_distance shape mismatch: {ad.shape} vs {bd.shape}")
    diff = ad - bd
    n = diff.size

    def backward(g, parents):
        pa, pb = parents
        s = np.sign(diff) * (g / n)
        _acc(pa, s)
        _acc(pb, -s)

    return _record(np.asarray(np.abs(diff).mean()), (a, b), backward)


def dropout(x, rate: float, rng: np.random.Generator):
    """Inverted dropout; identity when rate <= 0."""
    if rate <= 0.0:
        return x
    xd = _data(x)
    keep = (rng.random(xd.shape) >= rate) / (1.0 - rate)

    def backward(g, parents):
        _acc(parents[0], g * keep)

    return _record(xd * keep, (x,), backward)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

# Relative-error denominator floor. Central differences on a unit-scale
# function carry cancellation noise of roughly ulp/(2*eps) ~ 1e-12, so
# coordinates whose true gradient is exactly zero (softmax shift invariance
# produces these) would otherwise divide FD noise by a vanishing number.
_REL_FLOOR = 1e-6


def _rel_error(a: np.ndarray, n: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), _REL_FLOOR)
    return float(np.max(np.abs(a - n) / denom))


def grad_check(f, x: Tensor, eps: float = 1e-4) -> float:
    """Worst relative error between reverse-mode and central differences.

    ``f`` maps a tensor to a scalar Tensor. Relative error uses denominator
    max(|analytic|, |numeric|, floor) per coordinate.
    """
    x.requires_grad = True
    x.zero_grad()
    with Tape() as tape:
        out = f(x)
        if not np.isfinite(out.data):
            raise FloatingPointError("non-finite function value in grad_check")
        tape.backward(out)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    flat = x.data.reshape(-1)
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(x).data.item()
        flat[i] = orig - eps
        lo = f(x).data.item()
        flat[i] = orig
        numeric[i] = (hi - lo) / (2.0 * eps)
    return _rel_error(analytic, numeric.reshape(x.data.shape))


def grad_check_params(f, params, eps: float = 1e-4, max_coords=None, rng=None):
    """Gradient check of a multi-parameter scalar function.

    ``f`` takes no arguments and closes over ``params`` (a list of Tensors).
    When ``max_coords`` is given, a random subset of coordinates per tensor is
    probed instead of all of them. Returns the worst relative error.
    """
    for p in params:
        p.requires_grad = True
        p.zero_grad()
    with Tape() as tape:
        out = f()
        if not np.isfinite(out.data):
            raise FloatingPointError("non-finite function value in grad_check")
        tape.backward(out)
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        aflat = analytic.reshape(-1)
        if max_coords is not None and flat.size > max_coords:
            coords = (rng or np.random.default_rng(0)).choice(
                flat.size, size=max_coords, replace=False
            )
        else:
            coords = range(flat.size)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            hi = f().data.item()
            flat[i] = orig - eps
            lo = f().data.item()
            flat[i] = orig
            num = (hi - lo) / (2.0 * eps)
            denom = max(abs(aflat[i]), abs(num), _REL_FLOOR)
            worst = max(worst, abs(aflat[i] - num) / denom)
    return worst
