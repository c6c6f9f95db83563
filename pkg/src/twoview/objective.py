"""Agreement functions for every objective variant and the temperature-scaled
contrastive loss over adjacent sentences.

An agreement a(i, j) is a variant-specific sum of cosines between view
representations of sentences i and j. The loss turns each batch row into a
softmax over scaled agreements and pulls up the probability of every ordered
pair within the context window.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import autodiff as ad
from .errors import NumericalError
from .numcore import cosine

TAU_MIN = 0.01
TAU_MAX = 100.0


class ObjectiveVariant(str, Enum):
    MULTI_VIEW_FG = "MultiViewFG"
    MULTI_VIEW_F1F2 = "MultiViewF1F2"
    MULTI_VIEW_G1G2 = "MultiViewG1G2"
    SINGLE_VIEW_F = "SingleViewF"
    SINGLE_VIEW_G = "SingleViewG"
    MULTI_PLUS_SINGLE = "MultiPlusSingle"
    SKIP_CONNECTION = "SkipConnection"


# view names each variant trains, in report order
VARIANT_VIEWS = {
    ObjectiveVariant.MULTI_VIEW_FG: ("rnn", "linear"),
    ObjectiveVariant.MULTI_VIEW_F1F2: ("rnn", "rnn2"),
    ObjectiveVariant.MULTI_VIEW_G1G2: ("linear", "linear2"),
    ObjectiveVariant.SINGLE_VIEW_F: ("rnn",),
    ObjectiveVariant.SINGLE_VIEW_G: ("linear",),
    ObjectiveVariant.MULTI_PLUS_SINGLE: ("rnn", "linear"),
    ObjectiveVariant.SKIP_CONNECTION: ("rnn", "linear"),
}

_CROSS_VIEW_VARIANTS = {
    ObjectiveVariant.MULTI_VIEW_FG,
    ObjectiveVariant.MULTI_VIEW_F1F2,
    ObjectiveVariant.MULTI_VIEW_G1G2,
}

_SINGLE_VIEW_VARIANTS = {ObjectiveVariant.SINGLE_VIEW_F, ObjectiveVariant.SINGLE_VIEW_G}


def required_views(variant) -> tuple:
    return VARIANT_VIEWS[ObjectiveVariant(variant)]


def diagonal_included(variant) -> bool:
    """Same-sentence pairs carry cross-view signal; with a single view they
    would only add a constant (cos(z, z) = 1), so they are excluded there."""
    return ObjectiveVariant(variant) not in _SINGLE_VIEW_VARIANTS


@dataclass
class Temperature:
    """Learnable softmax scale, stored as a log so it stays positive."""

    log_value: float = 0.0

    def read(self) -> float:
        return float(np.clip(np.exp(self.log_value), TAU_MIN, TAU_MAX))


def agreement(variant, reps_i, reps_j) -> float:
    """Variant-specific agreement between two sentences, given one vector per
    required view in `reps_i` / `reps_j` (mappings keyed by view name)."""
    variant = ObjectiveVariant(variant)
    views = VARIANT_VIEWS[variant]
    a_i = [np.asarray(reps_i[v], dtype=np.float64) for v in views]
    a_j = [np.asarray(reps_j[v], dtype=np.float64) for v in views]
    if variant in _CROSS_VIEW_VARIANTS:
        return cosine(a_i[0], a_j[1]) + cosine(a_i[1], a_j[0])
    if variant in _SINGLE_VIEW_VARIANTS:
        return cosine(a_i[0], a_j[0])
    if variant is ObjectiveVariant.MULTI_PLUS_SINGLE:
        return (cosine(a_i[0], a_j[1]) + cosine(a_i[1], a_j[0])
                + cosine(a_i[0], a_j[0]) + cosine(a_i[1], a_j[1]))
    # skip connection: the linear view is added onto the recurrent output
    return cosine(a_i[0] + a_i[1], a_j[0] + a_j[1])


def agreement_matrix(variant, reps) -> np.ndarray:
    """All ordered pairs, diagonal included: A[i][j] = agreement(i, j)."""
    views = required_views(variant)
    mats = {v: np.asarray(reps[v], dtype=np.float64) for v in views}
    n = mats[views[0]].shape[0]
    if n < 2:
        raise ValueError("agreement matrix needs at least two sentences")
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            out[i, j] = agreement(variant, {v: mats[v][i] for v in views},
                                  {v: mats[v][j] for v in views})
    return out


def _checked_normalize_tape(x, what):
    norms = np.linalg.norm(x.value if isinstance(x, ad.Tensor) else x, axis=1)
    bad = np.flatnonzero(norms == 0.0)
    if bad.size:
        raise NumericalError(f"zero-norm {what} at row {int(bad[0])}")
    return ad.normalize_rows(x)


def agreement_matrix_tape(variant, reps):
    """Differentiable, vectorized twin of agreement_matrix.

    `reps` maps view names to (N, d) tensors. Cross-view sums are built as
    M + M.T so the result is exactly symmetric.
    """
    variant = ObjectiveVariant(variant)
    views = VARIANT_VIEWS[variant]
    units = {v: _checked_normalize_tape(reps[v], f"'{v}' representation") for v in views}
    if variant in _CROSS_VIEW_VARIANTS:
        cross = units[views[0]] @ units[views[1]].T
        return cross + cross.T
    if variant in _SINGLE_VIEW_VARIANTS:
        u = units[views[0]]
        return u @ u.T
    if variant is ObjectiveVariant.MULTI_PLUS_SINGLE:
        cross = units[views[0]] @ units[views[1]].T
        self_a = units[views[0]] @ units[views[0]].T
        self_b = units[views[1]] @ units[views[1]].T
        return cross + cross.T + self_a + self_b
    summed = reps[views[0]] + reps[views[1]]
    unit = _checked_normalize_tape(summed, "skip-connection sum")
    return unit @ unit.T


def positive_pair_mask(n, context, include_diagonal=True) -> np.ndarray:
    """0/1 mask of ordered pairs with |i - j| <= context, clipped at edges."""
    if not (1 <= context < n):
        raise ValueError(f"need 1 <= context < batch size, got context={context}, n={n}")
    idx = np.arange(n)
    mask = (np.abs(idx[:, None] - idx[None, :]) <= context).astype(np.float64)
    if not include_diagonal:
        np.fill_diagonal(mask, 0.0)
    return mask


def row_softmax(scores) -> np.ndarray:
    """Row-stabilized softmax; plain numpy, used for checks and reporting."""
    scores = np.asarray(scores, dtype=np.float64)
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def contrastive_loss(scores, log_temperature, context, include_diagonal=True, average=False):
    """Negative log-probability of every in-window ordered pair.

    Each row i of `scores` is scaled by 1/tau and normalized by a softmax over
    all N columns; the loss sums -log p[i, j] over pairs |i - j| <= context
    (optionally dropping i == j). Returns a scalar Tensor; call backward() for
    gradients with respect to `scores` and `log_temperature`.
    """
    scores = ad.astensor(scores)
    if not np.isfinite(scores.value).all():
        raise NumericalError("agreement matrix contains non-finite entries")
    n = scores.value.shape[0]
    if scores.value.ndim != 2 or scores.value.shape[1] != n:
        raise ValueError(f"agreement matrix must be square, got {scores.value.shape}")
    log_temperature = ad.astensor(log_temperature)
    tau = ad.exp(log_temperature).clip(TAU_MIN, TAU_MAX)
    scaled = scores / tau
    # subtracted row max is treated as a constant; softmax is shift invariant
    row_max = scaled.value.max(axis=1, keepdims=True)
    log_norm = ad.log(ad.exp(scaled - row_max).sum(axis=1, keepdims=True)) + row_max
    log_prob = scaled - log_norm
    mask = positive_pair_mask(n, context, include_diagonal)
    total = -(ad.astensor(mask) * log_prob).sum()
    if average:
        total = total * (1.0 / mask.sum())
    return total
