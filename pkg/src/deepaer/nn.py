"""Layer kernels with hand-written backward passes.

Tensors are laid out ``(batch, length, channels)``. Convolution kernels are
``(out_channels, receptive_field, in_channels)``. Every forward that needs to
be differentiated returns a cache consumed by the matching backward.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Array dimensions are inconsistent with the layer."""


# --------------------------------------------------------------------------
# convolution
# --------------------------------------------------------------------------

def _colsum(x: np.ndarray) -> np.ndarray:
    # sum over every axis but the last; a BLAS matvec beats ufunc.reduce for narrow rows
    x2 = x.reshape(-1, x.shape[-1])
    return np.ones(x2.shape[0], x.dtype) @ x2


def conv_output_length(n: int, receptive_field: int, stride: int) -> int:
    if n < receptive_field:
        raise ShapeError(
            f"input length {n} is shorter than receptive field {receptive_field}"
        )
    return (n - receptive_field) // stride + 1


def _im2col(x: np.ndarray, r: int, s: int) -> np.ndarray:
    # (B, N, C) -> (B * L, r * C), tap-major to match w.reshape(C_out, r * C_in)
    b, _, c = x.shape
    v = sliding_window_view(x, r, axis=1)[:, ::s]  # (B, L, C, r)
    return v.transpose(0, 1, 3, 2).reshape(b * v.shape[1], r * c)


def conv1d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int = 1):
    """Valid (unpadded) strided cross-correlation.

    ``x`` is ``(B, N, C_in)``, ``w`` is ``(C_out, r, C_in)``, ``b`` is ``(C_out,)``.
    Returns ``(y, cache)`` with ``y`` of shape ``(B, floor((N - r)/s) + 1, C_out)``.
    """
    if x.ndim != 3 or w.ndim != 3:
        raise ShapeError(f"expected 3-d input and kernels, got {x.shape} and {w.shape}")
    c_out, r, c_in = w.shape
    if x.shape[2] != c_in:
        raise ShapeError(f"input has {x.shape[2]} channels, kernels expect {c_in}")
    if stride < 1:
        raise ShapeError("stride must be >= 1")
    n_out = conv_output_length(x.shape[1], r, stride)
    cols = _im2col(x, r, stride)
    y = cols @ w.reshape(c_out, r * c_in).T + b
    return y.reshape(x.shape[0], n_out, c_out), (x, w, stride, cols)


def conv1d_backward(dy: np.ndarray, cache, need_dx: bool = True):
    """Returns ``(dx, dw, db)``; ``dx`` is ``None`` when ``need_dx`` is false."""
    x, w, s, cols = cache
    c_out, r, c_in = w.shape
    bsz, n, _ = x.shape
    n_out = (n - r) // s + 1
    if dy.shape != (bsz, n_out, c_out):
        raise ShapeError(f"output grad {dy.shape} != {(bsz, n_out, c_out)}")
    dyf = dy.reshape(bsz * n_out, c_out)
    db = _colsum(dyf)
    dw = (dyf.T @ cols).reshape(c_out, r, c_in)
    if not need_dx:
        return None, dw, db
    dcols = (dyf @ w.reshape(c_out, r * c_in)).reshape(bsz, n_out, r, c_in)
    dx = np.zeros_like(x)
    span = s * (n_out - 1) + 1
    for k in range(r):
        dx[:, k:k + span:s, :] += dcols[:, :, k, :]
    return dx, dw, db


# --------------------------------------------------------------------------
# batch normalisation
# --------------------------------------------------------------------------

@dataclass
class BatchNormState:
    """Running statistics for one batch-norm layer (one entry per feature map)."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    eps: float = 1e-5
    gamma: np.ndarray | None = None
    beta: np.ndarray | None = None

    @classmethod
    def fresh(cls, n_maps: int, dtype=np.float32, affine: bool = False, **kw) -> "BatchNormState":
        st = cls(np.zeros(n_maps, dtype), np.ones(n_maps, dtype), **kw)
        if affine:
            st.gamma = np.ones(n_maps, dtype)
            st.beta = np.zeros(n_maps, dtype)
        return st

    @property
    def affine(self) -> bool:
        return self.gamma is not None


def batchnorm_forward(x: np.ndarray, state: BatchNormState, train: bool):
    """Normalise each feature map over batch and length.

    In train mode the running statistics are updated in place as
    ``running = momentum * running + (1 - momentum) * batch``; the batch
    variance is the population variance.
    """
    if train:
        if x.shape[0] < 2:
            raise ValueError("batch norm in train mode needs a batch of at least 2")
        m = x.shape[0] * x.shape[1]
        mu = _colsum(x) / m
        xc = x - mu
        var = _colsum(xc * xc) / m
        k = state.momentum
        state.running_mean[...] = k * state.running_mean + (1 - k) * mu
        state.running_var[...] = k * state.running_var + (1 - k) * var
    else:
        mu, var = state.running_mean, state.running_var
        xc = x - mu
    inv_std = (1.0 / np.sqrt(var + state.eps)).astype(x.dtype)
    xhat = xc * inv_std
    y = xhat
    if state.affine:
        y = state.gamma * xhat + state.beta
    cache = (xhat, inv_std, state.gamma, train)
    return y, cache


def batchnorm_backward(dy: np.ndarray, cache):
    """Returns ``(dx, dgamma, dbeta)``; the affine grads are ``None`` when disabled."""
    xhat, inv_std, gamma, train = cache
    if not train:
        raise ValueError("batch norm backward is only defined for train-mode forwards")
    dgamma = dbeta = None
    if gamma is not None:
        dgamma = _colsum(dy * xhat)
        dbeta = _colsum(dy)
        dy = dy * gamma
    m = xhat.shape[0] * xhat.shape[1]
    sum_dy = _colsum(dy)
    sum_dy_xhat = _colsum(dy * xhat)
    dx = (inv_std / m) * (m * dy - sum_dy - xhat * sum_dy_xhat)
    return dx, dgamma, dbeta


# --------------------------------------------------------------------------
# pointwise, dense, dropout, loss
# --------------------------------------------------------------------------

def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    # gradient at exactly 0 is 0
    return dy * (x > 0)


def fc_forward(a: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``z = a @ W + b`` for a batch ``a`` of shape ``(B, in_dim)``; ``W`` is ``(in_dim, out_dim)``."""
    if a.shape[-1] != W.shape[0]:
        raise ShapeError(f"input dim {a.shape[-1]} != weight rows {W.shape[0]}")
    if b.shape != (W.shape[1],):
        raise ShapeError(f"bias shape {b.shape} != ({W.shape[1]},)")
    return a @ W + b


def fc_backward(a: np.ndarray, W: np.ndarray, dz: np.ndarray):
    """Returns ``(da, dW, db)``."""
    if dz.shape[-1] != W.shape[1]:
        raise ShapeError(f"output grad dim {dz.shape[-1]} != {W.shape[1]}")
    return dz @ W.T, a.T @ dz, _colsum(dz)


def dropout(x: np.ndarray, p: float, train: bool, rng: np.random.Generator | None = None):
    """Inverted dropout. Returns ``(y, mask)``; the mask already carries the 1/(1-p) scale."""
    if not 0 <= p < 1:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not train or p == 0:
        return x, np.ones_like(x)
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    keep = rng.random(x.shape) >= p
    mask = keep.astype(x.dtype) / x.dtype.type(1 - p)
    return x * mask, mask


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels):
    """Mean cross-entropy over the batch.

    Returns ``(loss, probs, dlogits)`` where ``dlogits`` is the gradient of the
    mean loss, i.e. ``(probs - onehot) / B``.
    """
    logits = np.atleast_2d(logits)
    labels = np.atleast_1d(np.asarray(labels))
    if not np.all(np.isfinite(logits)):
        raise ValueError("non-finite logits")
    if labels.shape[0] != logits.shape[0]:
        raise ShapeError("one label per row of logits is required")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ValueError("label out of range")
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_p = z - log_z
    probs = np.exp(log_p)
    rows = np.arange(n)
    loss = float(-log_p[rows, labels].mean())
    dlogits = probs.copy()
    dlogits[rows, labels] -= 1
    dlogits /= n
    return loss, probs, dlogits


# --------------------------------------------------------------------------
# finite-difference checking
# --------------------------------------------------------------------------

def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12) -> float:
    """Norm-wise relative error ``|a - n| / (|a| + |n|)``; 0 when both are below ``floor``."""
    num = np.linalg.norm(analytic - numeric)
    den = np.linalg.norm(analytic) + np.linalg.norm(numeric)
    if den < floor:
        return 0.0
    return float(num / den)


def numerical_gradient(f: Callable[[], float], x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. ``x`` (perturbed in place, then restored)."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


@dataclass
class GradCheckReport:
    errors: dict[str, float]
    tolerance: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def lines(self) -> list[str]:
        out = []
        for name, err in self.errors.items():
            flag = "ok" if err < self.tolerance else "FAIL"
            out.append(f"{name:<16} rel_err={err:.3e}  {flag}")
        return out


def finite_difference_check(
    loss_fn: Callable[[], float],
    params: dict[str, np.ndarray],
    analytic: dict[str, np.ndarray],
    tolerance: float = 1e-4,
    h: float = 1e-6,
    zero_floor: float = 1e-12,
) -> GradCheckReport:
    """Compare analytic gradients against central differences for each named array.

    ``loss_fn`` must recompute the loss from the current contents of ``params``
    (which are perturbed in place) and be deterministic.
    """
    errors = {}
    for name, p in params.items():
        num = numerical_gradient(loss_fn, p, h)
        errors[name] = relative_error(np.asarray(analytic[name], np.float64), num, zero_floor)
    return GradCheckReport(errors, tolerance)
