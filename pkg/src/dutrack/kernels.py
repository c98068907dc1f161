"""Dense numerical kernels: matmul, softmax, layer norm, GELU and multi-head
self-attention, each with a backward companion, plus central-difference
gradient checking.

Everything operates on plain numpy arrays (row-major). Tests run in double
precision; single precision inputs are accepted for runtime use. Backward
functions consume the cache returned by the corresponding ``*_cached``
forward so the trainer can chain them without an autodiff framework.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

LN_EPS = 1e-12

_GELU_C0 = 0.7978845608028654  # sqrt(2/pi)
_GELU_C1 = 0.044715


class ShapeError(ValueError):
    """Operand shapes are inconsistent."""


def require_finite(name: str, a: np.ndarray) -> None:
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")


def _as_float(a) -> np.ndarray:
    a = np.asarray(a)
    if a.dtype.kind != "f":
        a = a.astype(np.float64)
    return a


# ---------------------------------------------------------------------------
# matmul


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with explicit shape validation."""
    a = _as_float(a)
    b = _as_float(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got shapes {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


# ---------------------------------------------------------------------------
# softmax


def _softmax_last(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise softmax, stabilized by subtracting each row's maximum."""
    m = _as_float(m)
    if m.ndim != 2:
        raise ShapeError(f"softmax_rows expects a matrix, got shape {m.shape}")
    require_finite("softmax_rows input", m)
    return _softmax_last(m)


def softmax_backward(probs: np.ndarray, d_probs: np.ndarray) -> np.ndarray:
    """Gradient through softmax given output probabilities and their grads."""
    inner = (d_probs * probs).sum(axis=-1, keepdims=True)
    return probs * (d_probs - inner)


# ---------------------------------------------------------------------------
# layer normalization


def layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float = LN_EPS) -> np.ndarray:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    out, _ = layer_norm_cached(x, gain, bias, eps)
    return out


def layer_norm_cached(x, gain, bias, eps: float = LN_EPS):
    x = _as_float(x)
    gain = _as_float(gain)
    bias = _as_float(bias)
    d = x.shape[-1] if x.ndim else 0
    if d < 1:
        raise ShapeError("layer_norm requires at least one feature")
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm gain/bias must have shape ({d},)")
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return gain * xhat + bias, (xhat, inv, gain)


def layer_norm_backward(cache, d_out):
    """Returns (d_x, d_gain, d_bias) for a cached layer_norm call."""
    xhat, inv, gain = cache
    lead = tuple(range(d_out.ndim - 1))
    d_gain = (d_out * xhat).sum(axis=lead)
    d_bias = d_out.sum(axis=lead)
    d_xhat = d_out * gain
    d_x = inv * (
        d_xhat
        - d_xhat.mean(axis=-1, keepdims=True)
        - xhat * (d_xhat * xhat).mean(axis=-1, keepdims=True)
    )
    return d_x, d_gain, d_bias


# ---------------------------------------------------------------------------
# GELU (tanh form)


def gelu(x: np.ndarray) -> np.ndarray:
    u = _GELU_C0 * (x + _GELU_C1 * x * x * x)
    return 0.5 * x * (1.0 + np.tanh(u))


def gelu_backward(x: np.ndarray, d_out: np.ndarray) -> np.ndarray:
    u = _GELU_C0 * (x + _GELU_C1 * x * x * x)
    t = np.tanh(u)
    du = _GELU_C0 * (1.0 + 3.0 * _GELU_C1 * x * x)
    return d_out * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


# ---------------------------------------------------------------------------
# multi-head self-attention


@dataclass
class MhsaParams:
    """Projection weights for multi-head self-attention over width-D tokens.

    The key projection carries no bias: a shared key offset shifts every
    logit in a row by the same amount, which softmax cancels exactly.
    """

    num_heads: int
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    bq: np.ndarray
    bv: np.ndarray
    bo: np.ndarray

    @property
    def model_dim(self) -> int:
        return self.wq.shape[0]

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads

    def validate(self) -> None:
        d = self.model_dim
        if d % self.num_heads != 0:
            raise ShapeError(f"width {d} not divisible by {self.num_heads} heads")
        for name in ("wq", "wk", "wv", "wo"):
            w = getattr(self, name)
            if w.shape != (d, d):
                raise ShapeError(f"{name} must be ({d},{d}), got {w.shape}")
        for name in ("bq", "bv", "bo"):
            b = getattr(self, name)
            if b.shape != (d,):
                raise ShapeError(f"{name} must be ({d},), got {b.shape}")
            require_finite(name, b)

    @classmethod
    def create(cls, d: int, num_heads: int, rng: np.random.Generator, dtype=np.float64) -> "MhsaParams":
        scale = 1.0 / np.sqrt(d)
        def w():
            return (rng.standard_normal((d, d)) * scale).astype(dtype)
        def b():
            return np.zeros(d, dtype=dtype)
        p = cls(num_heads, w(), w(), w(), w(), b(), b(), b())
        p.validate()
        return p


def mhsa_forward(x: np.ndarray, params: MhsaParams):
    """Returns (feat, attn): projected aggregation plus the per-head
    attention probabilities, so callers downstream can read the raw map."""
    feat, attn, _ = _mhsa_forward(x, params, keep_cache=False)
    return feat, attn


def mhsa_forward_cached(x: np.ndarray, params: MhsaParams):
    return _mhsa_forward(x, params, keep_cache=True)


def _split_heads(m: np.ndarray, num_heads: int) -> np.ndarray:
    n, d = m.shape
    return m.reshape(n, num_heads, d // num_heads).transpose(1, 0, 2)


def _merge_heads(m: np.ndarray) -> np.ndarray:
    h, n, hd = m.shape
    return m.transpose(1, 0, 2).reshape(n, h * hd)


def _mhsa_forward(x, params, keep_cache):
    x = _as_float(x)
    params.validate()
    if x.ndim != 2 or x.shape[1] != params.model_dim:
        raise ShapeError(f"token matrix {x.shape} does not match width {params.model_dim}")
    if x.shape[0] < 1:
        raise ShapeError("mhsa_forward needs at least one token")
    require_finite("mhsa_forward input", x)

    q = _split_heads(x @ params.wq + params.bq, params.num_heads)
    k = _split_heads(x @ params.wk, params.num_heads)
    v = _split_heads(x @ params.wv + params.bv, params.num_heads)
    logits = (q @ k.transpose(0, 2, 1)) / np.sqrt(params.head_dim)
    probs = _softmax_last(logits)
    ctx = probs @ v
    merged = _merge_heads(ctx)
    feat = merged @ params.wo + params.bo
    cache = (x, q, k, v, probs, merged) if keep_cache else None
    return feat, probs, cache


def mhsa_backward(cache, params: MhsaParams, d_feat: np.ndarray, d_attn: np.ndarray | None = None):
    """Backward pass. `d_attn`, when given, is the gradient arriving directly
    at the returned attention probabilities (used by attention supervision).

    Returns (d_x, grads) with grads keyed by parameter field name.
    """
    x, q, k, v, probs, merged = cache
    inv_sqrt = 1.0 / np.sqrt(params.head_dim)

    grads = {
        "wo": merged.T @ d_feat,
        "bo": d_feat.sum(axis=0),
    }
    d_ctx = _split_heads(d_feat @ params.wo.T, params.num_heads)
    d_probs = d_ctx @ v.transpose(0, 2, 1)
    if d_attn is not None:
        d_probs = d_probs + d_attn
    d_v = probs.transpose(0, 2, 1) @ d_ctx
    d_logits = softmax_backward(probs, d_probs)
    d_q = (d_logits @ k) * inv_sqrt
    d_k = (d_logits.transpose(0, 2, 1) @ q) * inv_sqrt

    dq = _merge_heads(d_q)
    dk = _merge_heads(d_k)
    dv = _merge_heads(d_v)
    grads["wq"] = x.T @ dq
    grads["bq"] = dq.sum(axis=0)
    grads["wk"] = x.T @ dk
    grads["wv"] = x.T @ dv
    grads["bv"] = dv.sum(axis=0)
    d_x = dq @ params.wq.T + dk @ params.wk.T + dv @ params.wv.T
    return d_x, grads


# ---------------------------------------------------------------------------
# finite differences


def finite_diff_check(
    f: Callable[[], float],
    params: Mapping[str, np.ndarray],
    analytic: Mapping[str, np.ndarray],
    step: float = 1e-5,
) -> float:
    """Compare analytic gradients against central differences.

    `f` is a zero-argument scalar function that reads `params`; the checker
    perturbs parameter entries in place and restores them. Returns the worst
    relative error max |analytic - central| / (|central| + 1e-12).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    worst = 0.0
    for name, arr in params.items():
        grad = np.asarray(analytic[name], dtype=np.float64)
        if grad.shape != arr.shape:
            raise ShapeError(f"gradient for {name} has shape {grad.shape}, expected {arr.shape}")
        gflat = grad.reshape(-1)
        for i in range(arr.size):
            orig = arr.flat[i]
            arr.flat[i] = orig + step
            f_plus = float(f())
            arr.flat[i] = orig - step
            f_minus = float(f())
            arr.flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise ValueError(f"non-finite loss while differencing {name}[{i}]")
            central = (f_plus - f_minus) / (2.0 * step)
            err = abs(gflat[i] - central) / (abs(central) + 1e-12)
            if err > worst:
                worst = err
    return worst
