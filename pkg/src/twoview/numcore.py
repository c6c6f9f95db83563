"""Dense float64 matrix operations, the Adam optimizer, global-norm gradient
clipping, and a central-finite-difference gradient verification harness.

All functions are pure: they never mutate their array arguments. AdamState is
the one mutable object and is owned by a single trainer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError


def as_matrix(x, name="matrix"):
    """Validate and return a 2-d float64 array with finite entries."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-d, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise NumericalError(f"{name} contains non-finite entries")
    return a


def matmul(a, b):
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def cosine(u, v):
    """Cosine similarity of two 1-d vectors. Rejects zero-norm inputs."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise ValueError(f"cosine needs equal-length vectors, got {u.shape} and {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise NumericalError("cosine of a zero-norm vector (degenerate representation)")
    return float(u @ v / (nu * nv))


def l2_normalize_rows(x):
    """Scale every row of `x` to unit Euclidean norm."""
    x = as_matrix(x)
    norms = np.linalg.norm(x, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise NumericalError(f"cannot normalize zero row {int(zero[0])}")
    return x / norms[:, None]


def global_norm(grads):
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def clip_global_norm(grads, max_norm):
    """Rescale all gradients together when their joint norm exceeds `max_norm`."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    grads = [np.asarray(g, dtype=np.float64) for g in grads]
    norm = global_norm(grads)
    if norm <= max_norm:
        return grads
    scale = max_norm / norm
    return [g * scale for g in grads]


@dataclass
class AdamState:
    """First/second moment accumulators, one pair per parameter."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, lr=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        return cls(
            lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon, step=0,
            m=[np.zeros_like(np.asarray(p, dtype=np.float64)) for p in params],
            v=[np.zeros_like(np.asarray(p, dtype=np.float64)) for p in params],
        )


def adam_step(params, grads, state):
    """One bias-corrected Adam update. Mutates `state`, returns new parameter arrays."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError(
            f"adam_step got {len(params)} params, {len(grads)} grads, state of {len(state.m)}"
        )
    for p, g, m in zip(params, grads, state.m):
        if np.shape(p) != np.shape(g) or np.shape(p) != np.shape(m):
            raise ValueError(f"adam_step shape mismatch: param {np.shape(p)} vs grad {np.shape(g)}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1**state.step
    correction2 = 1.0 - b2**state.step
    updated = []
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.asarray(g, dtype=np.float64)
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        m_hat = state.m[i] / correction1
        v_hat = state.v[i] / correction2
        updated.append(np.asarray(p, dtype=np.float64) - state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon))
    return updated


@dataclass
class GradCheckReport:
    """Outcome of one finite-difference comparison."""

    name: str
    max_rel_error: float
    probes: int

    def ok(self, bound=1e-4):
        return self.max_rel_error <= bound


# Relative-error denominator floor; avoids blowup where both gradients vanish.
_REL_FLOOR = 1e-8


def finite_diff_check(fn, point, step=1e-5, probes=None, seed=0, name="op"):
    """Compare the analytic gradient of `fn` against central differences.

    `fn(x)` must return ``(value, gradient)`` where `gradient` has the shape
    of `x`. When `probes` is given, only that many randomly chosen entries of
    `point` are perturbed; otherwise every entry is.
    """
    point = np.asarray(point, dtype=np.float64)
    value, analytic = fn(point)
    if not np.isfinite(value):
        raise NumericalError(f"{name}: non-finite value at base point")
    analytic = np.asarray(analytic, dtype=np.float64)
    if analytic.shape != point.shape:
        raise ValueError(f"{name}: gradient shape {analytic.shape} != point shape {point.shape}")

    flat_indices = np.arange(point.size)
    if probes is not None and probes < point.size:
        rng = np.random.default_rng(seed)
        flat_indices = rng.choice(point.size, size=probes, replace=False)

    max_rel = 0.0
    for idx in flat_indices:
        offset = np.zeros(point.size)
        offset[idx] = step
        offset = offset.reshape(point.shape)
        hi, _ = fn(point + offset)
        lo, _ = fn(point - offset)
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NumericalError(f"{name}: non-finite value during probing")
        numeric = (hi - lo) / (2.0 * step)
        a = float(analytic.reshape(-1)[idx])
        rel = abs(a - numeric) / max(abs(a), abs(numeric), _REL_FLOOR)
        max_rel = max(max_rel, rel)
    return GradCheckReport(name=name, max_rel_error=max_rel, probes=len(flat_indices))
