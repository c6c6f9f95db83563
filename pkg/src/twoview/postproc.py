"""Top-principal-component removal with a final row normalization.

The dominant direction of a batch of representations is estimated by power
iteration on X^T X, projected out of every row, and the rows are rescaled to
unit norm. During training the estimated direction is held constant with
respect to gradients; only the removal and the normalization are
differentiated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import CollapseError, NumericalError
from .numcore import l2_normalize_rows

# a row whose post-removal norm falls below this fraction of its original
# norm is treated as parallel to the removed direction
COLLAPSE_TOL = 1e-8


@dataclass
class PrincipalComponent:
    direction: np.ndarray  # unit vector
    iterations_used: int
    converged: bool


def power_iteration_top(x, max_iters=100, tol=1e-8, seed=0) -> PrincipalComponent:
    """Dominant eigenvector of X^T X from a seeded random unit start.

    Stops when successive iterates differ by less than `tol` in Euclidean
    norm. The sign of the returned direction is arbitrary.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError(f"need at least two rows, got shape {x.shape}")
    if not np.any(x):
        raise NumericalError("power iteration on an all-zero matrix")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(x.shape[1])
    v /= np.linalg.norm(v)
    converged = False
    iterations = 0
    for iterations in range(1, max_iters + 1):
        w = x.T @ (x @ v)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            # start vector lay in the null space; draw again
            v = rng.standard_normal(x.shape[1])
            v /= np.linalg.norm(v)
            continue
        w /= norm
        if np.linalg.norm(w - v) < tol:
            v = w
            converged = True
            break
        v = w
    return PrincipalComponent(direction=v, iterations_used=iterations, converged=converged)


def remove_component(x, direction) -> np.ndarray:
    """Project every row off `direction` (a unit vector)."""
    x = np.asarray(x, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-9:
        raise ValueError("direction must be a unit vector")
    return x - np.outer(x @ direction, direction)


def _collapsed_rows(values, residual):
    before = np.linalg.norm(values, axis=1)
    after = np.linalg.norm(residual, axis=1)
    return np.flatnonzero(after <= COLLAPSE_TOL * np.maximum(before, 1e-300))


def postprocess_batch(x, max_iters=100, tol=1e-8, seed=0) -> np.ndarray:
    """Estimate, remove, normalize. Rejects rows that the removal annihilates,
    because that means the whole representation lives in the removed
    direction."""
    x = np.asarray(x, dtype=np.float64)
    component = power_iteration_top(x, max_iters=max_iters, tol=tol, seed=seed)
    residual = remove_component(x, component.direction)
    collapsed = _collapsed_rows(x, residual)
    if collapsed.size:
        raise CollapseError(
            f"row {int(collapsed[0])} is parallel to the removed component",
            row=int(collapsed[0]),
        )
    return l2_normalize_rows(residual)


def postprocess_batch_tape(x, max_iters=5, tol=1e-8, seed=0):
    """Training-time twin of postprocess_batch on a Tensor.

    The direction comes from the current values and is frozen for gradient
    purposes; removal and normalization stay on the tape.
    """
    component = power_iteration_top(x.value, max_iters=max_iters, tol=tol, seed=seed)
    return remove_and_normalize_tape(x, component.direction)


def remove_and_normalize_tape(x, direction):
    x = ad.astensor(x)
    direction = np.asarray(direction, dtype=np.float64)
    col = direction.reshape(-1, 1)
    residual = x - (x @ col) @ col.T
    collapsed = _collapsed_rows(x.value, residual.value)
    if collapsed.size:
        raise CollapseError(
            f"row {int(collapsed[0])} is parallel to the removed component",
            row=int(collapsed[0]),
        )
    return ad.normalize_rows(residual)
