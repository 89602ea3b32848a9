"""Numeric primitives: activations, masked softmax, initialisation, AdaDelta,
global-norm clipping and a central-difference gradient checker.

Parameters and gradients are plain ``dict[str, np.ndarray]`` keyed by name.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def sigmoid(x):
    """Numerically stable logistic function."""
    x = np.asarray(x)
    if x.dtype.kind != "f":
        x = x.astype(float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def masked_softmax(scores, mask):
    """Softmax over the positions where ``mask`` is set; other positions are exactly 0."""
    scores = np.asarray(scores, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("masked_softmax needs at least one selected position")
    out = np.zeros_like(scores)
    sel = scores[mask]
    ex = np.exp(sel - sel.max())
    out[mask] = ex / ex.sum()
    return out


def masked_log_softmax(scores, mask):
    """Log-probabilities over selected positions; unselected positions are -inf."""
    scores = np.asarray(scores, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("masked_log_softmax needs at least one selected position")
    sel = scores[mask]
    mx = sel.max()
    lse = mx + np.log(np.exp(sel - mx).sum())
    out = np.full_like(scores, -np.inf)
    out[mask] = sel - lse
    return out


def glorot_bound(shape):
    if len(shape) == 1:
        fan_in, fan_out = 1, shape[0]
    else:
        fan_out, fan_in = shape[0], int(np.prod(shape[1:]))
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_params(shapes, seed, scheme="uniform", biases=(), dtype=np.float64):
    """Initialise tensors deterministically.

    Args:
        shapes: mapping name -> shape.
        seed: integer seed; tensors are drawn in sorted-name order.
        scheme: ``"uniform"`` (U(-a, a) with a = sqrt(6 / (fan_in + fan_out)))
            or ``"zeros"``; may also be a mapping name -> scheme.
        biases: names that are always zero-initialised.
    """
    rng = np.random.default_rng(seed)
    params = {}
    for name in sorted(shapes):
        shape = tuple(int(s) for s in shapes[name])
        kind = scheme.get(name, "uniform") if isinstance(scheme, dict) else scheme
        if kind not in ("uniform", "zeros"):
            raise ValueError(f"unknown init scheme {kind!r}")
        if kind == "zeros" or name in biases:
            params[name] = np.zeros(shape, dtype=dtype)
            continue
        a = glorot_bound(shape)
        params[name] = rng.uniform(-a, a, size=shape).astype(dtype, copy=False)
    return params


@dataclass
class OptimizerState:
    """AdaDelta running averages E[g^2] and E[dx^2]."""

    sq_grad: dict
    sq_delta: dict
    rho: float = 0.95
    eps: float = 1e-6

    @classmethod
    def zeros_like(cls, params, rho=0.95, eps=1e-6):
        return cls(
            {k: np.zeros_like(v) for k, v in params.items()},
            {k: np.zeros_like(v) for k, v in params.items()},
            rho,
            eps,
        )

    def copy(self):
        return OptimizerState(
            {k: v.copy() for k, v in self.sq_grad.items()},
            {k: v.copy() for k, v in self.sq_delta.items()},
            self.rho,
            self.eps,
        )


def adadelta_step(params, grads, state, lr_scale=1.0, keys=None):
    """One AdaDelta update of the ``keys`` subset (default: every gradient key).

    Returns new ``(params, state)``; inputs are not modified. ``grads`` are
    gradients of the quantity being *minimised*.
    """
    keys = sorted(grads) if keys is None else sorted(keys)
    rho, eps = state.rho, state.eps
    new_params = dict(params)
    new_state = OptimizerState(dict(state.sq_grad), dict(state.sq_delta), rho, eps)
    for k in keys:
        g = grads[k]
        if g.shape != params[k].shape or g.shape != state.sq_grad[k].shape:
            raise ValueError(f"shape mismatch for {k}: grad {g.shape}, param {params[k].shape}")
        eg2 = rho * state.sq_grad[k] + (1.0 - rho) * g * g
        delta = -(np.sqrt(state.sq_delta[k] + eps) / np.sqrt(eg2 + eps)) * g
        new_state.sq_grad[k] = eg2
        new_state.sq_delta[k] = rho * state.sq_delta[k] + (1.0 - rho) * delta * delta
        new_params[k] = params[k] + lr_scale * delta
    return new_params, new_state


def global_norm(grads):
    return float(np.sqrt(sum(float(np.vdot(g, g)) for g in grads.values())))


def clip_by_global_norm(grads, max_norm):
    norm = global_norm(grads)
    if max_norm is None or norm <= max_norm or norm == 0.0:
        return grads, norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm


def gradient_check(loss_fn, params, eps=1e-5, keys=None, max_coords=None, seed=0,
                   value_fn=None, fd_dtype=None):
    """Largest relative error between analytic and central-difference gradients.

    ``loss_fn(params)`` returns ``(loss, grads)``. Relative error per
    coordinate is ``|a - n| / max(1e-8, |a| + |n|)``.

    Args:
        max_coords: probe at most this many random coordinates per tensor.
        value_fn: forward-only loss used for the probes (default: ``loss_fn``).
        fd_dtype: evaluate the probes with parameters cast to this dtype
            (e.g. ``np.longdouble``) so that difference roundoff stays far
            below the tolerance; the analytic side keeps the input precision.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-7, 1e-3]")
    loss, grads = loss_fn(params)
    if not np.isfinite(loss):
        raise FloatingPointError("loss is not finite at the check point")
    value_fn = value_fn or (lambda p: loss_fn(p)[0])
    base = params if fd_dtype is None else {k: v.astype(fd_dtype) for k, v in params.items()}
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in sorted(params if keys is None else keys):
        flat_size = params[k].size
        coords = np.arange(flat_size)
        if max_coords is not None and flat_size > max_coords:
            coords = rng.choice(flat_size, size=max_coords, replace=False)
        for c in coords:
            idx = np.unravel_index(c, params[k].shape)
            probe = dict(base)
            bumped = base[k].copy()
            bumped[idx] += eps
            probe[k] = bumped
            up = value_fn(probe)
            bumped = base[k].copy()
            bumped[idx] -= eps
            probe[k] = bumped
            down = value_fn(probe)
            if not (np.isfinite(up) and np.isfinite(down)):
                raise FloatingPointError(f"loss not finite while probing {k}{idx}")
            num = float((up - down) / (2 * eps))
            ana = float(grads[k][idx])
            err = abs(ana - num) / max(1e-8, abs(ana) + abs(num))
            worst = max(worst, err)
    return worst
