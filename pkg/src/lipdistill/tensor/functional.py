"""Differentiable operations on :class:`~lipdistill.tensor.core.Tensor`.

Convolutions are cross-correlations (no kernel flip). Reductions that feed
the masked temporal pooling are done per sample over the valid prefix so the
result does not depend on how much padding follows it.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import DimensionError, DomainError, GeometryError
from .core import Tensor, as_tensor, record

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _operand(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


# ---------------------------------------------------------------- elementwise
def add(a, b) -> Tensor:
    a = _operand(a, b if isinstance(b, Tensor) else None)
    b = _operand(b, a)
    sa, sb = a.shape, b.shape
    return record("add", a.data + b.data, (a, b),
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a = _operand(a, b if isinstance(b, Tensor) else None)
    b = _operand(b, a)
    sa, sb = a.shape, b.shape
    return record("sub", a.data - b.data, (a, b),
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a = _operand(a, b if isinstance(b, Tensor) else None)
    b = _operand(b, a)
    ad, bd = a.data, b.data
    return record("mul", ad * bd, (a, b),
                  lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        y = np.exp(x.data)
    return record("exp", y, (x,), lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    if (x.data <= 0).any():
        raise DomainError("log of a non-positive value")
    xd = x.data
    return record("log", np.log(xd), (x,), lambda g: (g / xd,))


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors the numpy name
    shape = x.shape
    return record("sum", np.asarray(x.data.sum()), (x,),
                  lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(x: Tensor) -> Tensor:
    shape, n = x.shape, max(x.data.size, 1)
    return record("mean", np.asarray(x.data.mean()), (x,),
                  lambda g: (np.broadcast_to(g / n, shape).copy(),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    return record("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def concat(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Concatenate along ``axis`` (channel axis by default)."""
    xs = list(xs)
    if len(xs) == 1:
        return xs[0]
    sizes = [t.shape[axis] for t in xs]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return record("concat", np.concatenate([t.data for t in xs], axis=axis), xs, backward)


# ---------------------------------------------------------------- layers
def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``y = x @ w.T + b`` for ``x`` of shape [B, F_in] and ``w`` of shape [F_out, F_in]."""
    if x.ndim != 2 or w.ndim != 2:
        raise DimensionError(f"linear expects x[B,F_in] and w[F_out,F_in], got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise DimensionError(f"linear: x F_in={x.shape[1]} does not match w F_in={w.shape[1]}")
    if b is not None and b.shape != (w.shape[0],):
        raise DimensionError(f"linear: bias shape {b.shape} does not match F_out={w.shape[0]}")
    xd, wd = x.data, w.data
    y = xd @ wd.T
    if b is not None:
        y = y + b.data

    def backward(g):
        gx = g @ wd
        gw = g.T @ xd
        return (gx, gw) if b is None else (gx, gw, g.sum(axis=0))

    inputs = (x, w) if b is None else (x, w, b)
    return record("linear", y, inputs, backward)


def conv_output_length(t: int, k: int, stride: int = 1, padding: int = 0, dilation: int = 1) -> int:
    return (t + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0,
           dilation: int = 1, groups: int = 1) -> Tensor:
    """1D cross-correlation of ``x`` [B, C_in, T] with ``w`` [C_out, C_in/groups, k]."""
    if x.ndim != 3 or w.ndim != 3:
        raise DimensionError(f"conv1d expects x[B,C,T] and w[C_out,C_in/g,k], got {x.shape} and {w.shape}")
    B, C_in, T = x.shape
    C_out, cpg, k = w.shape
    if groups < 1 or C_in % groups or C_out % groups:
        raise DimensionError(f"conv1d: channels (C_in={C_in}, C_out={C_out}) not divisible by groups={groups}")
    if cpg != C_in // groups:
        raise DimensionError(f"conv1d: weight axis 1 is {cpg}, expected C_in/groups={C_in // groups}")
    if b is not None and b.shape != (C_out,):
        raise DimensionError(f"conv1d: bias shape {b.shape} does not match C_out={C_out}")
    if k < 1 or stride < 1 or dilation < 1 or padding < 0:
        raise GeometryError(f"conv1d: invalid geometry k={k} stride={stride} dilation={dilation} padding={padding}")
    T_out = conv_output_length(T, k, stride, padding, dilation)
    if T_out < 1:
        raise GeometryError(f"conv1d: output length {T_out} < 1 for T={T}, k={k}, dilation={dilation}")

    xd, wd = x.data, w.data
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding))) if padding else xd
    span = stride * (T_out - 1) + 1
    taps = [slice(j * dilation, j * dilation + span, stride) for j in range(k)]
    depthwise = groups == C_in and cpg == 1

    if depthwise:
        m = C_out // C_in
        xr = np.repeat(xp, m, axis=1) if m > 1 else xp
        y = np.zeros((B, C_out, T_out), dtype=np.result_type(xd, wd))
        for j, sl in enumerate(taps):
            y += xr[:, :, sl] * wd[None, :, 0, j, None]
    else:
        # cols: [G, C_in/G * k, B * T_out], one GEMM per group
        cols = np.stack([xp[:, :, sl] for sl in taps], axis=0)  # [k, B, C_in, T_out]
        cols = cols.transpose(2, 0, 1, 3).reshape(groups, cpg * k, B * T_out)
        wg = wd.reshape(groups, C_out // groups, cpg * k)
        y = np.matmul(wg, cols).reshape(C_out, B, T_out).transpose(1, 0, 2)
    if b is not None:
        y = y + b.data[None, :, None]
    y = np.ascontiguousarray(y)

    def backward(g):
        gxp = np.zeros_like(xp)
        if depthwise:
            gw = np.empty_like(wd)
            for j, sl in enumerate(taps):
                gw[:, 0, j] = np.einsum("bct,bct->c", g, xr[:, :, sl])
                contrib = g * wd[None, :, 0, j, None]
                if m > 1:
                    contrib = contrib.reshape(B, C_in, m, T_out).sum(axis=2)
                gxp[:, :, sl] += contrib
        else:
            gg = g.transpose(1, 0, 2).reshape(groups, C_out // groups, B * T_out)
            gw = np.matmul(gg, cols.transpose(0, 2, 1)).reshape(wd.shape)
            gcols = np.matmul(wg.transpose(0, 2, 1), gg).reshape(C_in, k, B, T_out)
            for j, sl in enumerate(taps):
                gxp[:, :, sl] += gcols[:, j].transpose(1, 0, 2)
        gx = gxp[:, :, padding:padding + T] if padding else gxp
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2))

    inputs = (x, w) if b is None else (x, w, b)
    return record("conv1d", y, inputs, backward)


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return record("relu", np.where(pos, x.data, 0).astype(x.data.dtype), (x,), lambda g: (g * pos,))


def prelu(x: Tensor, a: Tensor) -> Tensor:
    """Parametric ReLU with one slope per channel (axis 1)."""
    if a.ndim != 1 or (x.ndim > 1 and a.shape[0] not in (1, x.shape[1])):
        raise DimensionError(f"prelu: slope shape {a.shape} incompatible with input {x.shape}")
    bshape = (1, -1) + (1,) * (x.ndim - 2)
    ad = a.data.reshape(bshape)
    xd = x.data
    pos = xd > 0
    y = np.where(pos, xd, ad * xd)

    def backward(g):
        ga = np.where(pos, 0, g * xd)
        axes = tuple(i for i in range(xd.ndim) if i != 1)
        ga = ga.sum(axis=axes) if a.shape[0] != 1 else np.array([ga.sum()])
        return np.where(pos, g, g * ad), ga.astype(a.data.dtype)

    return record("prelu", y, (x, a), backward)


def batchnorm1d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
                running_var: np.ndarray, training: bool, mask: np.ndarray | None = None,
                momentum: float = BN_MOMENTUM, eps: float = BN_EPS) -> Tensor:
    """Batch normalisation over [B, C] or [B, C, T] inputs.

    In training mode the statistics are taken over the batch and time axes
    (restricted to ``mask`` when given, a {0,1} array broadcastable to x) and
    ``running_mean``/``running_var`` are updated in place with the unbiased
    variance. Eval mode is a per-channel affine map using the running stats.
    """
    if x.ndim not in (2, 3):
        raise DimensionError(f"batchnorm1d expects [B,C] or [B,C,T], got {x.shape}")
    C = x.shape[1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise DimensionError(f"batchnorm1d: affine params must have shape ({C},)")
    bshape = (1, C) + (1,) * (x.ndim - 2)
    axes = (0,) + tuple(range(2, x.ndim))
    xd, gd = x.data, gamma.data.reshape(bshape)

    if not training:
        scale = 1.0 / np.sqrt(running_var + eps)
        xhat = (xd - running_mean.reshape(bshape)) * scale.reshape(bshape)
        xhat = xhat.astype(xd.dtype)
        y = gd * xhat + beta.data.reshape(bshape)

        def backward_eval(g):
            return (g * gd * scale.reshape(bshape).astype(xd.dtype),
                    (g * xhat).sum(axis=axes), g.sum(axis=axes))

        return record("batchnorm1d", y, (x, gamma, beta), backward_eval)

    if mask is None:
        m = np.ones((1,) * xd.ndim, dtype=xd.dtype)
        n = xd.size // C
    else:
        m = np.broadcast_to(mask, xd.shape).astype(xd.dtype)
        n = int(m.sum(axis=axes)[0]) if xd.ndim > 1 else int(m.sum())
    if n < 1:
        raise DomainError("batchnorm1d: no valid positions to normalise over")
    mu = (xd * m).sum(axis=axes, keepdims=True) / n
    xc = xd - mu
    var = (m * xc * xc).sum(axis=axes, keepdims=True) / n
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = gd * xhat + beta.data.reshape(bshape)

    running_mean *= 1 - momentum
    running_mean += momentum * mu.reshape(C)
    unbiased = var.reshape(C) * (n / (n - 1) if n > 1 else 1.0)
    running_var *= 1 - momentum
    running_var += momentum * unbiased

    def backward(g):
        gxhat = g * gd
        s1 = gxhat.sum(axis=axes, keepdims=True)
        s2 = (gxhat * xhat).sum(axis=axes, keepdims=True)
        gx = inv * (gxhat - m * (s1 + xhat * s2) / n)
        return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return record("batchnorm1d", y, (x, gamma, beta), backward)


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; the identity in eval mode or when ``p == 0``."""
    if not 0.0 <= p < 1.0:
        raise DomainError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an explicit rng")
    keep = (rng.random(x.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    return record("dropout", x.data * keep, (x,), lambda g: (g * keep,))


# ---------------------------------------------------------------- pooling and losses
def time_mask(lengths: Sequence[int], T: int, dtype=np.float64) -> np.ndarray:
    """{0,1} mask of shape [B, 1, T] selecting the first ``lengths[b]`` frames."""
    lengths = np.asarray(lengths)
    return (np.arange(T)[None, :] < lengths[:, None]).astype(dtype)[:, None, :]


def _check_lengths(lengths, B: int, T: int) -> np.ndarray:
    lengths = np.asarray(lengths, dtype=np.int64).reshape(-1)
    if lengths.shape[0] != B:
        raise DimensionError(f"got {lengths.shape[0]} lengths for a batch of {B}")
    if (lengths < 1).any() or (lengths > T).any():
        raise DomainError(f"lengths must lie in [1, {T}], got {lengths.tolist()}")
    return lengths


def masked_mean_over_time(x: Tensor, lengths: Sequence[int]) -> Tensor:
    """Mean over the first ``lengths[b]`` frames of each sample of ``x`` [B, C, T]."""
    if x.ndim != 3:
        raise DimensionError(f"masked_mean_over_time expects [B,C,T], got {x.shape}")
    B, C, T = x.shape
    lengths = _check_lengths(lengths, B, T)
    xd = x.data
    y = np.empty((B, C), dtype=xd.dtype)
    for i, n in enumerate(lengths):
        y[i] = xd[i, :, :n].sum(axis=1) / n

    def backward(g):
        gx = np.zeros_like(xd)
        for i, n in enumerate(lengths):
            gx[i, :, :n] = (g[i] / n)[:, None]
        return (gx,)

    return record("masked_mean_over_time", y, (x,), backward)


def softmax(z: Tensor, axis: int = -1) -> Tensor:
    zd = z.data
    e = np.exp(zd - zd.max(axis=axis, keepdims=True))
    s = e / e.sum(axis=axis, keepdims=True)
    return record("softmax", s, (z,), lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),))


def log_softmax(z: Tensor, axis: int = -1) -> Tensor:
    zd = z.data
    shifted = zd - zd.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse

    def backward(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return record("log_softmax", y, (z,), backward)


def _check_labels(y, B: int, K: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    if y.shape[0] != B:
        raise DimensionError(f"got {y.shape[0]} labels for a batch of {B}")
    if (y < 0).any() or (y >= K).any():
        raise DomainError(f"labels must lie in [0, {K})")
    return y


def cross_entropy(z: Tensor, y, weights=None) -> Tensor:
    """Mean over the batch of ``-log softmax(z)[y]``.

    ``weights`` optionally rescales each sample's term before averaging
    (mixup uses this for its two label sets).
    """
    if z.ndim != 2:
        raise DimensionError(f"cross_entropy expects logits [B,K], got {z.shape}")
    B, K = z.shape
    y = _check_labels(y, B, K)
    zd = z.data
    shifted = zd - zd.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    w = np.ones(B, dtype=zd.dtype) if weights is None else np.asarray(weights, dtype=zd.dtype)
    loss = -(w * logp[np.arange(B), y]).sum() / B

    def backward(g):
        p = np.exp(logp)
        p[np.arange(B), y] -= 1.0
        return (g * p * (w / B)[:, None],)

    return record("cross_entropy", np.asarray(loss, dtype=zd.dtype), (z,), backward)


def _check_distribution(name: str, p: np.ndarray, tol: float = 1e-5) -> None:
    if (p < 0).any():
        raise DomainError(f"{name} has negative entries")
    sums = p.sum(axis=-1)
    if np.abs(sums - 1.0).max(initial=0.0) > tol:
        raise DomainError(f"{name} rows must sum to 1 (max deviation {np.abs(sums - 1.0).max():.2e})")


def kl_div(p: Tensor, q: Tensor) -> Tensor:
    """Batch mean of ``sum_k p log(p/q)`` for row-stochastic ``p`` and ``q``.

    Terms with ``p == 0`` contribute zero; ``q == 0`` where ``p > 0`` is a
    domain error. At ``p == 0`` the gradient w.r.t. ``p`` is taken as 0.
    """
    p, q = as_tensor(p), as_tensor(q)
    if p.shape != q.shape or p.ndim != 2:
        raise DimensionError(f"kl_div expects matching [B,K] inputs, got {p.shape} and {q.shape}")
    pd, qd = p.data, q.data
    _check_distribution("p", pd)
    _check_distribution("q", qd)
    support = pd > 0
    if (support & (qd <= 0)).any():
        raise DomainError("kl_div: q is zero where p is positive")
    B = pd.shape[0]
    ratio = np.where(support, pd / np.where(support, qd, 1.0), 1.0)
    logr = np.log(ratio)
    val = np.where(support, pd * logr, 0.0).sum() / max(B, 1)

    def backward(g):
        gp = np.where(support, logr + 1.0, 0.0) * g / B
        gq = -np.where(support, pd / np.where(support, qd, 1.0), 0.0) * g / B
        return gp, gq

    return record("kl_div", np.asarray(val, dtype=pd.dtype), (p, q), backward)


def kl_div_log(logp: Tensor, logq: Tensor) -> Tensor:
    """Batch mean of ``sum_k exp(logp) (logp - logq)``; KL divergence given log-probabilities."""
    if logp.shape != logq.shape or logp.ndim != 2:
        raise DimensionError(f"kl_div_log expects matching [B,K] inputs, got {logp.shape} and {logq.shape}")
    lp, lq = logp.data, logq.data
    B = lp.shape[0]
    p = np.exp(lp)
    diff = lp - lq
    val = (p * diff).sum() / max(B, 1)

    def backward(g):
        return g * p * (diff + 1.0) / B, -g * p / B

    return record("kl_div_log", np.asarray(val, dtype=lp.dtype), (logp, logq), backward)
