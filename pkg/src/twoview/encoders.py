"""The two sentence encoders and their pooled representations.

View "rnn" runs a bi-directional GRU over the word vectors and keeps the
final state of each direction during training. View "linear" projects word
vectors through a single weight matrix and averages over time. Both map a
sentence of M word vectors to a vector of size 2*hidden, so cross-view
cosines and the skip-connection sum are well defined.

Plain numpy forwards here serve evaluation and act as an independent
recomputation of the taped forwards used in training (see *_tape functions).
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad

RNN_VIEW = "rnn"
LINEAR_VIEW = "linear"

SUPERVISED = "supervised"
UNSUPERVISED = "unsupervised"


@dataclass
class GruDirection:
    """One direction's gate parameters. Rows of inputs multiply from the left,
    so input maps are (dim, hidden) and recurrent maps are (hidden, hidden)."""

    w_update: np.ndarray
    w_reset: np.ndarray
    w_cand: np.ndarray
    u_update: np.ndarray
    u_reset: np.ndarray
    u_cand: np.ndarray
    b_update: np.ndarray
    b_reset: np.ndarray
    b_cand: np.ndarray

    def arrays(self):
        return [(f.name, getattr(self, f.name)) for f in fields(self)]


@dataclass
class GruParams:
    fwd: GruDirection
    bwd: GruDirection

    @property
    def input_dim(self):
        return self.fwd.w_update.shape[0]

    @property
    def hidden_dim(self):
        return self.fwd.w_update.shape[1]

    def arrays(self):
        out = [("fwd." + n, a) for n, a in self.fwd.arrays()]
        out += [("bwd." + n, a) for n, a in self.bwd.arrays()]
        return out


@dataclass
class LinearParams:
    """Projection (dim, 2*hidden); output dimension matches the GRU view."""

    weight: np.ndarray

    def arrays(self):
        return [("weight", self.weight)]


@dataclass
class EncoderOutput:
    """Fields filled per view: the GRU view sets hidden_states and last_state,
    the linear view sets projected and projected_mean."""

    hidden_states: np.ndarray | None = None
    last_state: np.ndarray | None = None
    projected: np.ndarray | None = None
    projected_mean: np.ndarray | None = None


def init_gru_params(input_dim, hidden_dim, rng) -> GruParams:
    scale = 1.0 / np.sqrt(hidden_dim)

    def direction():
        mats = [rng.uniform(-scale, scale, size=(input_dim, hidden_dim)) for _ in range(3)]
        recs = [rng.uniform(-scale, scale, size=(hidden_dim, hidden_dim)) for _ in range(3)]
        biases = [np.zeros(hidden_dim) for _ in range(3)]
        return GruDirection(*(mats + recs + biases))

    return GruParams(fwd=direction(), bwd=direction())


def init_linear_params(input_dim, hidden_dim, rng) -> LinearParams:
    scale = 1.0 / np.sqrt(input_dim)
    return LinearParams(weight=rng.uniform(-scale, scale, size=(input_dim, 2 * hidden_dim)))


def _sigmoid(x):
    # same formulation as the taped sigmoid so both paths agree bitwise
    return 1.0 / (1.0 + np.exp(-np.clip(x, -500.0, 500.0)))


def gru_cell_forward(x_t, h_prev, direction: GruDirection):
    """One recurrence step. update/reset gates gate the candidate state:
    h_t = (1 - z) * h_prev + z * tanh(x W_c + (r * h_prev) U_c + b_c)."""
    x_t = np.asarray(x_t, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    if x_t.shape[-1] != direction.w_update.shape[0]:
        raise ValueError(f"input size {x_t.shape[-1]} != expected {direction.w_update.shape[0]}")
    if h_prev.shape[-1] != direction.u_update.shape[0]:
        raise ValueError(f"state size {h_prev.shape[-1]} != expected {direction.u_update.shape[0]}")
    z = _sigmoid(x_t @ direction.w_update + h_prev @ direction.u_update + direction.b_update)
    r = _sigmoid(x_t @ direction.w_reset + h_prev @ direction.u_reset + direction.b_reset)
    cand = np.tanh(x_t @ direction.w_cand + (r * h_prev) @ direction.u_cand + direction.b_cand)
    return (1.0 - z) * h_prev + z * cand


def bigru_forward(x, params: GruParams) -> EncoderOutput:
    """Run both directions from zero initial states.

    hidden_states row t is [forward h_t ; backward h_t]; last_state is the
    final state of each direction, i.e. [forward h_M ; backward h_1].
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("encoder input must be a nonempty (M, dim) matrix")
    m = x.shape[0]
    d = params.hidden_dim
    fwd = np.zeros((m, d))
    h = np.zeros(d)
    for t in range(m):
        h = gru_cell_forward(x[t], h, params.fwd)
        fwd[t] = h
    bwd = np.zeros((m, d))
    h = np.zeros(d)
    for t in range(m - 1, -1, -1):
        h = gru_cell_forward(x[t], h, params.bwd)
        bwd[t] = h
    hidden = np.concatenate([fwd, bwd], axis=1)
    last = np.concatenate([fwd[-1], bwd[0]])
    return EncoderOutput(hidden_states=hidden, last_state=last)


def linear_encode(x, params: LinearParams) -> EncoderOutput:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("encoder input must be a nonempty (M, dim) matrix")
    projected = x @ params.weight
    return EncoderOutput(projected=projected, projected_mean=projected.mean(axis=0))


def pool(states, mode):
    """Columnwise max / avg / min, or the final row."""
    states = np.asarray(states, dtype=np.float64)
    if states.ndim != 2 or states.shape[0] == 0:
        raise ValueError("pool needs a nonempty (M, d) matrix")
    if mode == "max":
        return states.max(axis=0)
    if mode == "avg":
        return states.mean(axis=0)
    if mode == "min":
        return states.min(axis=0)
    if mode == "last":
        return states[-1].copy()
    raise ValueError(f"unknown pooling mode '{mode}'")


def compose_test_representation(output: EncoderOutput, view, regime):
    """Testing-phase vector for one view.

    supervised rnn     [max(H); avg(H); min(H); last_state]   (8*hidden)
    supervised linear  [max(P); avg(P); min(P)]               (6*hidden)
    unsupervised rnn   avg(H)
    unsupervised linear avg(P)
    """
    if view == RNN_VIEW:
        states = output.hidden_states
        if states is None:
            raise ValueError("output has no recurrent fields")
        if regime == UNSUPERVISED:
            return pool(states, "avg")
        if regime == SUPERVISED:
            return np.concatenate(
                [pool(states, "max"), pool(states, "avg"), pool(states, "min"), output.last_state]
            )
    elif view == LINEAR_VIEW:
        states = output.projected
        if states is None:
            raise ValueError("output has no linear fields")
        if regime == UNSUPERVISED:
            return pool(states, "avg")
        if regime == SUPERVISED:
            return np.concatenate([pool(states, "max"), pool(states, "avg"), pool(states, "min")])
    else:
        raise ValueError(f"unknown view '{view}'")
    raise ValueError(f"unknown regime '{regime}'")


# ---------------------------------------------------------------------------
# Taped forwards used by the trainer. Sentences are padded to the longest
# length in the batch; masking freezes a sentence's state once it ends, so
# the final recurrent state per row equals the per-sentence final state.
# ---------------------------------------------------------------------------


@dataclass
class PaddedBatch:
    """Word vectors of a batch, flattened time-major for single-matmul input
    projections. Row t * size + b of `flat` is token t of sentence b."""

    flat: np.ndarray
    flat_reversed: np.ndarray
    mask: np.ndarray  # (T, B, 1) floats, 1 while the sentence is running
    mean: np.ndarray  # (B, dim) per-sentence average word vector
    lengths: np.ndarray
    size: int
    max_len: int


def pad_batch(embedded) -> PaddedBatch:
    lengths = np.array([e.shape[0] for e in embedded], dtype=np.int64)
    b = len(embedded)
    t_max = int(lengths.max())
    dim = embedded[0].shape[1]
    flat = np.zeros((t_max * b, dim))
    flat_rev = np.zeros((t_max * b, dim))
    mask = np.zeros((t_max, b, 1))
    mean = np.zeros((b, dim))
    for i, e in enumerate(embedded):
        m = e.shape[0]
        flat[i::b][:m] = e
        flat_rev[i::b][:m] = e[::-1]
        mask[:m, i, 0] = 1.0
        mean[i] = e.mean(axis=0)
    return PaddedBatch(flat=flat, flat_reversed=flat_rev, mask=mask, mean=mean,
                       lengths=lengths, size=b, max_len=t_max)


def _direction_final_state_tape(flat, mask, size, max_len, p: GruDirection, h0=None):
    xu = ad.astensor(flat) @ p.w_update
    xr = ad.astensor(flat) @ p.w_reset
    xc = ad.astensor(flat) @ p.w_cand
    h = ad.astensor(np.zeros((size, p.u_update.value.shape[0])) if h0 is None else h0)
    for t in range(max_len):
        rows = slice(t * size, (t + 1) * size)
        z = ad.sigmoid(xu[rows] + h @ p.u_update + p.b_update)
        r = ad.sigmoid(xr[rows] + h @ p.u_reset + p.b_reset)
        cand = ad.tanh(xc[rows] + (r * h) @ p.u_cand + p.b_cand)
        # masked form of h + z*(cand - h); padding keeps the state frozen
        h = h + (mask[t] * z) * (cand - h)
    return h


def bigru_final_states_tape(batch: PaddedBatch, fwd: GruDirection, bwd: GruDirection):
    """(B, 2*hidden) tensor of per-sentence final states of both directions."""
    forward = _direction_final_state_tape(batch.flat, batch.mask, batch.size, batch.max_len, fwd)
    backward = _direction_final_state_tape(
        batch.flat_reversed, batch.mask, batch.size, batch.max_len, bwd
    )
    return ad.concat([forward, backward], axis=1)


def linear_means_tape(batch: PaddedBatch, weight):
    """(B, 2*hidden) tensor of averaged projections.

    mean_t(x_t W) == (mean_t x_t) W, so one matmul on precomputed means.
    """
    return ad.astensor(batch.mean) @ weight
