"""Finite-difference checks of every layer and of a full model, in float64."""
from __future__ import annotations

import numpy as np

from . import nn
from .model import backward, build_model, forward, variant_spec
from .nn import BatchNormState, GradCheckReport, finite_difference_check

# absolute floor below which both gradients count as zero (e.g. conv biases feeding batch norm)
ZERO_FLOOR = 1e-8


def _projected_loss(fwd, proj):
    return lambda: float(np.sum(fwd() * proj))


def check_conv(rng, tol=1e-4, n=11, r=3, s=2, c_in=2, c_out=3, batch=2) -> GradCheckReport:
    x = rng.standard_normal((batch, n, c_in))
    w = rng.standard_normal((c_out, r, c_in))
    b = rng.standard_normal(c_out)
    y, cache = nn.conv1d_forward(x, w, b, s)
    proj = rng.standard_normal(y.shape)
    dx, dw, db = nn.conv1d_backward(proj, cache)
    f = _projected_loss(lambda: nn.conv1d_forward(x, w, b, s)[0], proj)
    return _check(f, dict(x=x, w=w, b=b), dict(x=dx, w=dw, b=db), tol)


def check_batchnorm(rng, tol=1e-4, affine=False, batch=4, n=5, c=3) -> GradCheckReport:
    x = rng.standard_normal((batch, n, c)) * 2 + 0.5
    st = BatchNormState.fresh(c, np.float64, affine=affine)
    if affine:
        st.gamma[:] = rng.uniform(0.5, 1.5, c)
        st.beta[:] = rng.standard_normal(c)
    y, cache = nn.batchnorm_forward(x, st, True)
    proj = rng.standard_normal(y.shape)
    dx, dg, dbeta = nn.batchnorm_backward(proj, cache)
    f = _projected_loss(lambda: nn.batchnorm_forward(x, st, True)[0], proj)
    params, grads = dict(x=x), dict(x=dx)
    if affine:
        params.update(gamma=st.gamma, beta=st.beta)
        grads.update(gamma=dg, beta=dbeta)
    return _check(f, params, grads, tol)


def check_relu(rng, tol=1e-4) -> GradCheckReport:
    x = rng.standard_normal((4, 7))
    x[np.abs(x) < 1e-3] = 0.5  # keep clear of the kink
    proj = rng.standard_normal(x.shape)
    f = _projected_loss(lambda: nn.relu(x), proj)
    return _check(f, dict(x=x), dict(x=nn.relu_backward(x, proj)), tol)


def check_fc(rng, tol=1e-4, d_in=6, d_out=4, batch=3) -> GradCheckReport:
    a = rng.standard_normal((batch, d_in))
    W = rng.standard_normal((d_in, d_out))
    b = rng.standard_normal(d_out)
    proj = rng.standard_normal((batch, d_out))
    da, dW, db = nn.fc_backward(a, W, proj)
    f = _projected_loss(lambda: nn.fc_forward(a, W, b), proj)
    return _check(f, dict(a=a, W=W, b=b), dict(a=da, W=dW, b=db), tol)


def check_dropout(rng, tol=1e-4, p=0.5) -> GradCheckReport:
    x = rng.standard_normal((5, 8))
    _, mask = nn.dropout(x, p, True, np.random.default_rng(7))
    proj = rng.standard_normal(x.shape)
    f = _projected_loss(lambda: nn.dropout(x, p, True, np.random.default_rng(7))[0], proj)
    return _check(f, dict(x=x), dict(x=proj * mask), tol)


def check_softmax_ce(rng, tol=1e-4, batch=5) -> GradCheckReport:
    logits = rng.standard_normal((batch, 2)) * 3
    labels = rng.integers(0, 2, batch)
    _, _, dlogits = nn.softmax_cross_entropy(logits, labels)
    f = lambda: nn.softmax_cross_entropy(logits, labels)[0]  # noqa: E731
    return _check(f, dict(logits=logits), dict(logits=dlogits), tol)


def check_model(variant: str = "M2", tol: float = 1e-4, seed: int = 0, batch: int = 4,
                input_length: int = 672) -> GradCheckReport:
    """Every parameter group of a full model in train mode (fixed dropout mask)."""
    rng = np.random.default_rng(seed)
    spec = variant_spec(variant, input_length)
    model = build_model(spec, rng, variant, dtype=np.float64)
    for name, p in model.params.items():
        if name.endswith(".b"):
            p[:] = rng.standard_normal(p.shape) * 0.1
    x = rng.standard_normal((batch, input_length))
    y = np.arange(batch) % 2

    def loss():
        logits, _, _ = forward(model, x, train=True, rng=np.random.default_rng(seed + 1))
        return nn.softmax_cross_entropy(logits, y)[0]

    logits, _, cache = forward(model, x, train=True, rng=np.random.default_rng(seed + 1))
    _, _, dlogits = nn.softmax_cross_entropy(logits, y)
    grads = backward(model, cache, dlogits)
    return _check(loss, model.params, grads, tol)


def _check(f, params, grads, tol) -> GradCheckReport:
    return finite_difference_check(f, params, grads, tolerance=tol, zero_floor=ZERO_FLOOR)


def run_suite(seed: int = 0, tol: float = 1e-4, variant: str = "M2") -> dict[str, GradCheckReport]:
    """All layer checks plus the full model; keys are layer names."""
    rng = np.random.default_rng(seed)
    return {
        "conv1d": check_conv(rng, tol),
        "batchnorm": check_batchnorm(rng, tol),
        "batchnorm_affine": check_batchnorm(rng, tol, affine=True),
        "relu": check_relu(rng, tol),
        "fc": check_fc(rng, tol),
        "dropout": check_dropout(rng, tol),
        "softmax_ce": check_softmax_ce(rng, tol),
        f"model_{variant}": check_model(variant, tol, seed),
    }
