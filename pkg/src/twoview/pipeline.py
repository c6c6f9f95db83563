"""End-to-end training: batching, encoding, postprocessing, the contrastive
objective, Adam with global-norm clipping, metrics, and bit-exact checkpoints.

Determinism contract: a config fully determines the loss trajectory. Window
order depends only on (seed, epoch), power-iteration starts only on
(seed, step, view), so a run resumed from a checkpoint continues exactly the
trajectory of an uninterrupted run.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import autodiff as ad
from .encoders import (
    GruDirection,
    GruParams,
    LinearParams,
    PaddedBatch,
    RNN_VIEW,
    LINEAR_VIEW,
    SUPERVISED,
    UNSUPERVISED,
    bigru_final_states_tape,
    bigru_forward,
    compose_test_representation,
    init_gru_params,
    init_linear_params,
    linear_encode,
    linear_means_tape,
    pad_batch,
)
from .errors import CollapseError, ConfigError, DataError, NumericalError
from .numcore import AdamState, adam_step, clip_global_norm
from .objective import (
    ObjectiveVariant,
    Temperature,
    agreement_matrix_tape,
    contrastive_loss,
    diagonal_included,
    required_views,
)
from .postproc import postprocess_batch, postprocess_batch_tape, power_iteration_top, remove_and_normalize_tape
from .textio import Corpus, EmbeddingTable, embed_sentence, load_corpus, load_word_vectors, make_batches


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

_BOOL_WORDS = {"true": True, "false": False}


@dataclass
class TrainConfig:
    """Flat training configuration. `max_steps` wins over `epochs` when both
    are set; with max_steps = 0 the run lasts exactly `epochs` passes."""

    variant: str = "MultiViewFG"
    corpus: str = ""
    vectors: str = ""
    batch_size: int = 16
    context: int = 2
    dim: int = 50
    hidden: int = 64
    epochs: int = 1
    max_steps: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    clip_norm: float = 5.0
    train_power_iters: int = 5
    power_tol: float = 1e-8
    postprocess_training: bool = True
    loss_average: bool = False
    seed: int = 0
    eval_every: int = 0
    eval_pairs: str = ""
    eval_corpus: str = ""
    cls_train: str = ""
    cls_test: str = ""

    def validate(self):
        try:
            ObjectiveVariant(self.variant)
        except ValueError:
            names = ", ".join(v.value for v in ObjectiveVariant)
            raise ConfigError(f"unknown variant '{self.variant}' (one of: {names})")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2")
        if not (1 <= self.context < self.batch_size):
            raise ConfigError("need 1 <= context < batch_size")
        if self.dim <= 0 or self.hidden <= 0:
            raise ConfigError("dim and hidden must be positive")
        if self.epochs < 0 or self.max_steps < 0:
            raise ConfigError("epochs and max_steps must be non-negative")
        if self.lr < 0:
            raise ConfigError("lr must be non-negative")
        if self.clip_norm <= 0:
            raise ConfigError("clip_norm must be positive")
        if self.train_power_iters < 1:
            raise ConfigError("train_power_iters must be at least 1")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.eval_every < 0:
            raise ConfigError("eval_every must be non-negative")
        return self


_CONFIG_FIELDS = {f.name: f.type for f in fields(TrainConfig)}
# fields a resumed run may change without breaking trajectory reproduction
_RESUME_FREE_FIELDS = {"epochs", "max_steps", "eval_every", "eval_pairs", "eval_corpus",
                       "cls_train", "cls_test"}


def _parse_value(key, text):
    kind = _CONFIG_FIELDS[key]
    if kind == "bool":
        if text.lower() not in _BOOL_WORDS:
            raise ConfigError(f"key '{key}' expects true/false, got '{text}'")
        return _BOOL_WORDS[text.lower()]
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
    except ValueError:
        raise ConfigError(f"key '{key}' expects a {kind}, got '{text}'")
    return text


def parse_config(text) -> TrainConfig:
    """Parse flat "key = value" lines. Unknown keys are rejected."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got '{line}'")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _CONFIG_FIELDS:
            raise ConfigError(f"line {lineno}: unknown key '{key}'")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key '{key}'")
        values[key] = _parse_value(key, value.strip())
    return TrainConfig(**values).validate()


def format_config(cfg: TrainConfig) -> str:
    lines = []
    for f in fields(TrainConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def load_config(path) -> TrainConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


# ---------------------------------------------------------------------------
# model parameters
# ---------------------------------------------------------------------------


@dataclass
class ModelParams:
    """Exactly the parameter sets the variant demands, plus the temperature."""

    rnn: GruParams | None = None
    rnn2: GruParams | None = None
    linear: LinearParams | None = None
    linear2: LinearParams | None = None
    temperature: Temperature = field(default_factory=Temperature)


# independent init streams per parameter set, so every variant that uses the
# recurrent view starts from the same recurrent weights for a given seed
_INIT_STREAMS = {"rnn": 0, "linear": 1, "rnn2": 2, "linear2": 3}


def init_model_params(cfg: TrainConfig) -> ModelParams:
    params = ModelParams()
    for name in required_views(cfg.variant):
        rng = np.random.default_rng([cfg.seed, _INIT_STREAMS[name]])
        if name.startswith("rnn"):
            setattr(params, name, init_gru_params(cfg.dim, cfg.hidden, rng))
        else:
            setattr(params, name, init_linear_params(cfg.dim, cfg.hidden, rng))
    return params


def model_arrays(params: ModelParams, variant):
    """Flat (name, array) list in the fixed order used by the optimizer and
    the checkpoint format."""
    out = []
    for name in required_views(variant):
        struct = getattr(params, name)
        if struct is None:
            raise ValueError(f"variant {variant} needs parameter set '{name}'")
        out.extend((f"{name}.{n}", a) for n, a in struct.arrays())
    out.append(("log_temperature", np.float64(params.temperature.log_value)))
    return out


@dataclass
class TapeModel:
    """Leaf tensors of the trainable state, plus per-view parameter structs
    built from those same tensors."""

    views: dict
    log_temperature: ad.Tensor
    order: list

    def values(self):
        return [t.value for _, t in self.order]

    def zero_grads(self):
        for _, t in self.order:
            t.grad = None

    def grads(self):
        return [t.grad if t.grad is not None else np.zeros_like(t.value) for _, t in self.order]


def build_tape_model(params: ModelParams, variant) -> TapeModel:
    order = []
    views = {}

    def lift_direction(direction, prefix):
        lifted = {}
        for n, a in direction.arrays():
            t = ad.parameter(a)
            order.append((f"{prefix}.{n}", t))
            lifted[n] = t
        return GruDirection(**lifted)

    for name in required_views(variant):
        struct = getattr(params, name)
        if isinstance(struct, GruParams):
            views[name] = GruParams(
                fwd=lift_direction(struct.fwd, f"{name}.fwd"),
                bwd=lift_direction(struct.bwd, f"{name}.bwd"),
            )
        else:
            t = ad.parameter(struct.weight)
            order.append((f"{name}.weight", t))
            views[name] = LinearParams(weight=t)
    log_temperature = ad.parameter(np.float64(params.temperature.log_value))
    order.append(("log_temperature", log_temperature))
    return TapeModel(views=views, log_temperature=log_temperature, order=order)


def tape_to_model(tape: TapeModel, variant) -> ModelParams:
    params = ModelParams()
    for name, struct in tape.views.items():
        if isinstance(struct, GruParams):
            plain = GruParams(
                fwd=GruDirection(**{n: t.value.copy() for n, t in
                                    ((f.name, getattr(struct.fwd, f.name)) for f in fields(GruDirection))}),
                bwd=GruDirection(**{n: t.value.copy() for n, t in
                                    ((f.name, getattr(struct.bwd, f.name)) for f in fields(GruDirection))}),
            )
        else:
            plain = LinearParams(weight=struct.weight.value.copy())
        setattr(params, name, plain)
    params.temperature = Temperature(log_value=float(tape.log_temperature.value))
    return params


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


@dataclass
class MetricsRecord:
    step: int
    loss: float
    temperature: float
    evals: dict | None = None


@dataclass
class MetricsLog:
    name: str = ""
    records: list = field(default_factory=list)

    def append(self, record: MetricsRecord):
        if self.records and record.step <= self.records[-1].step:
            raise ValueError("metrics steps must be strictly increasing")
        self.records.append(record)

    def losses(self):
        return np.array([r.loss for r in self.records])

    def eval_records(self):
        return [r for r in self.records if r.evals]

    def series_names(self):
        names = []
        for r in self.eval_records():
            for k in r.evals:
                if k not in names:
                    names.append(k)
        return names


def write_metrics_csv(log: MetricsLog, path):
    series = log.series_names()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(["step", "loss", "temperature"] + series) + "\n")
        for r in log.records:
            cells = [str(r.step), repr(r.loss), repr(r.temperature)]
            for name in series:
                value = (r.evals or {}).get(name)
                cells.append("" if value is None else repr(value))
            fh.write(",".join(cells) + "\n")


# ---------------------------------------------------------------------------
# the loss of one batch (shared by the trainer and the gradient checker)
# ---------------------------------------------------------------------------


def batch_views_tape(tape: TapeModel, variant, padded: PaddedBatch, *, postprocess=True,
                     power_iters=5, power_tol=1e-8, seed=0, step=0, directions=None):
    """Training-time representations per view. `directions`, when given, maps
    view names to fixed removal directions instead of estimating them from
    the batch (used by the gradient checker, which must hold them constant)."""
    views = {}
    for name in required_views(variant):
        struct = tape.views[name]
        if isinstance(struct, GruParams):
            views[name] = bigru_final_states_tape(padded, struct.fwd, struct.bwd)
        else:
            views[name] = linear_means_tape(padded, struct.weight)
    if postprocess:
        for index, name in enumerate(views):
            if directions is not None:
                views[name] = remove_and_normalize_tape(views[name], directions[name])
            else:
                views[name] = postprocess_batch_tape(
                    views[name], max_iters=power_iters, tol=power_tol,
                    seed=[seed, 271828, step, index],
                )
    return views


def batch_loss(tape: TapeModel, variant, padded: PaddedBatch, cfg: TrainConfig, step=0,
               directions=None):
    views = batch_views_tape(
        tape, variant, padded,
        postprocess=cfg.postprocess_training,
        power_iters=cfg.train_power_iters, power_tol=cfg.power_tol,
        seed=cfg.seed, step=step, directions=directions,
    )
    scores = agreement_matrix_tape(variant, views)
    return contrastive_loss(scores, tape.log_temperature, cfg.context,
                            include_diagonal=diagonal_included(variant),
                            average=cfg.loss_average)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = "twoview-checkpoint"
CHECKPOINT_VERSION = 1
_BINARY_MARK = b"binary-begin\n"


@dataclass
class Checkpoint:
    config: TrainConfig
    params: ModelParams
    adam: AdamState
    step: int
    metrics_ref: str = ""
    version: int = CHECKPOINT_VERSION


def save_checkpoint(ckpt: Checkpoint, path):
    named = model_arrays(ckpt.params, ckpt.config.variant)
    arrays = [a for _, a in named]
    arrays += list(ckpt.adam.m) + list(ckpt.adam.v)
    header = [
        f"{CHECKPOINT_MAGIC} {ckpt.version}",
        f"step = {ckpt.step}",
        f"adam_step = {ckpt.adam.step}",
        f"metrics = {ckpt.metrics_ref}",
        "config-begin",
        format_config(ckpt.config).rstrip("\n"),
        "config-end",
        f"arrays = {len(arrays)}",
    ]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("utf-8"))
        fh.write(_BINARY_MARK)
        for a in arrays:
            flat = np.ascontiguousarray(np.asarray(a, dtype=np.float64)).reshape(-1)
            fh.write(struct.pack("<Q", flat.size))
            fh.write(flat.astype("<f8").tobytes())


def _expected_shapes(cfg: TrainConfig):
    template = init_model_params(cfg)
    return [(n, np.asarray(a).shape) for n, a in model_arrays(template, cfg.variant)]


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    mark = blob.find(_BINARY_MARK)
    if mark < 0:
        raise DataError(f"{path}: missing binary section")
    header = blob[:mark].decode("utf-8").splitlines()
    body = blob[mark + len(_BINARY_MARK):]
    if not header or not header[0].startswith(CHECKPOINT_MAGIC):
        raise DataError(f"{path}: not a checkpoint file")
    version = header[0][len(CHECKPOINT_MAGIC):].strip()
    if version != str(CHECKPOINT_VERSION):
        raise ConfigError(f"{path}: unsupported checkpoint version {version}, "
                          f"expected {CHECKPOINT_VERSION}")

    def header_value(prefix, lines):
        for line in lines:
            if line.startswith(prefix + " = "):
                return line[len(prefix) + 3:]
        raise DataError(f"{path}: missing header field '{prefix}'")

    step = int(header_value("step", header))
    adam_steps = int(header_value("adam_step", header))
    metrics_ref = header_value("metrics", header)
    try:
        begin = header.index("config-begin")
        end = header.index("config-end")
    except ValueError:
        raise DataError(f"{path}: missing config section")
    cfg = parse_config("\n".join(header[begin + 1:end]))
    declared = int(header_value("arrays", header))

    expected = _expected_shapes(cfg)
    if declared != 3 * len(expected):
        raise DataError(f"{path}: header declares {declared} arrays, "
                        f"variant {cfg.variant} needs {3 * len(expected)}")
    values = []
    offset = 0
    for i in range(declared):
        name = expected[i % len(expected)][0]
        if offset + 8 > len(body):
            raise DataError(f"{path}: truncated before array {i} ('{name}')")
        (count,) = struct.unpack_from("<Q", body, offset)
        offset += 8
        nbytes = count * 8
        if offset + nbytes > len(body):
            raise DataError(f"{path}: array {i} ('{name}') truncated")
        values.append(np.frombuffer(body, dtype="<f8", count=count, offset=offset).astype(np.float64))
        offset += nbytes
    if offset != len(body):
        raise DataError(f"{path}: {len(body) - offset} trailing bytes after arrays")

    def shaped(block_index):
        out = []
        for i, (name, shape) in enumerate(expected):
            flat = values[block_index * len(expected) + i]
            if flat.size != int(np.prod(shape, dtype=np.int64)):
                raise DataError(f"{path}: array '{name}' has {flat.size} values, "
                                f"expected shape {shape}")
            out.append(flat.reshape(shape))
        return out

    params_flat = shaped(0)
    adam_m = shaped(1)
    adam_v = shaped(2)

    params = init_model_params(cfg)
    index = 0
    for name in required_views(cfg.variant):
        struct = getattr(params, name)
        if isinstance(struct, GruParams):
            for direction in (struct.fwd, struct.bwd):
                for f in fields(GruDirection):
                    setattr(direction, f.name, params_flat[index])
                    index += 1
        else:
            struct.weight = params_flat[index]
            index += 1
    params.temperature = Temperature(log_value=float(params_flat[index]))

    adam = AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, epsilon=cfg.epsilon,
                     step=adam_steps, m=adam_m, v=adam_v)
    return Checkpoint(config=cfg, params=params, adam=adam, step=step, metrics_ref=metrics_ref)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def _total_steps(cfg: TrainConfig, steps_per_epoch):
    if cfg.max_steps > 0:
        return cfg.max_steps
    return cfg.epochs * steps_per_epoch


def _check_resume_compatible(cfg: TrainConfig, ckpt: Checkpoint):
    for f in fields(TrainConfig):
        if f.name in _RESUME_FREE_FIELDS:
            continue
        if getattr(cfg, f.name) != getattr(ckpt.config, f.name):
            raise ConfigError(
                f"resume config changes '{f.name}' "
                f"({getattr(ckpt.config, f.name)!r} -> {getattr(cfg, f.name)!r})"
            )


def train(cfg: TrainConfig, resume: Checkpoint | None = None, eval_hook=None):
    """Run the step loop and return (Checkpoint, MetricsLog).

    `eval_hook(params, cfg, step) -> dict` may supply extra metric series at
    the configured cadence; the built-in evaluations (see evalsuite) are wired
    in by the CLI and the ablation runner.
    """
    cfg.validate()
    corpus = load_corpus(cfg.corpus)
    table = load_word_vectors(cfg.vectors)
    if table.dim != cfg.dim:
        raise ConfigError(f"config dim {cfg.dim} != word-vector dim {table.dim}")

    if resume is not None:
        _check_resume_compatible(cfg, resume)
        params = resume.params
        start_step = resume.step
    else:
        params = init_model_params(cfg)
        start_step = 0

    tape = build_tape_model(params, cfg.variant)
    if resume is not None:
        adam = resume.adam
    else:
        adam = AdamState.for_params(tape.values(), lr=cfg.lr, beta1=cfg.beta1,
                                    beta2=cfg.beta2, epsilon=cfg.epsilon)

    epoch_batches = make_batches(corpus, cfg.batch_size, [cfg.seed, 0], table)
    steps_per_epoch = len(epoch_batches)
    cached_epoch = 0
    total = max(_total_steps(cfg, steps_per_epoch), start_step)

    metrics = MetricsLog(name=f"{cfg.variant}-seed{cfg.seed}")
    vector_snapshot = {t: table.lookup(t).copy() for t in list(table.tokens())[:8]}

    for step in range(start_step, total):
        epoch, position = divmod(step, steps_per_epoch)
        if epoch != cached_epoch:
            epoch_batches = make_batches(corpus, cfg.batch_size, [cfg.seed, epoch], table)
            cached_epoch = epoch
        batch = epoch_batches[position]
        padded = pad_batch(batch.embedded)
        tape.zero_grads()
        try:
            loss = batch_loss(tape, cfg.variant, padded, cfg, step=step)
        except CollapseError as e:
            e.step = step
            raise
        if not np.isfinite(loss.value):
            raise NumericalError(f"non-finite loss at step {step}")
        loss.backward()
        grads = clip_global_norm(tape.grads(), cfg.clip_norm)
        for (_, tensor), updated in zip(tape.order, adam_step(tape.values(), grads, adam)):
            tensor.value = updated

        evals = None
        if eval_hook is not None and cfg.eval_every > 0 and (step + 1) % cfg.eval_every == 0:
            evals = eval_hook(tape_to_model(tape, cfg.variant), cfg, step)
        metrics.append(MetricsRecord(
            step=step, loss=float(loss.value),
            temperature=Temperature(float(tape.log_temperature.value)).read(),
            evals=evals,
        ))

    for token, before in vector_snapshot.items():
        if not np.array_equal(table.lookup(token), before):
            raise NumericalError(f"word vector for '{token}' changed during training")

    ckpt = Checkpoint(config=cfg, params=tape_to_model(tape, cfg.variant), adam=adam,
                      step=total, metrics_ref=metrics.name)
    return ckpt, metrics


# ---------------------------------------------------------------------------
# corpus encoding
# ---------------------------------------------------------------------------


def encode_sentences(params: ModelParams, variant, sentences, table: EmbeddingTable,
                     regime, seed=0, power_iters=100, power_tol=1e-8):
    """Per-sentence testing-phase vectors for every view plus the ensemble.

    Postprocessing is fitted on the given sentence set, per view. Ensemble is
    the element-wise average in the unsupervised regime and concatenation in
    the supervised one; a single-view model's ensemble is the view itself.
    """
    if not sentences:
        raise DataError("cannot encode an empty sentence set")
    views = required_views(variant)
    reps = {}
    for index, name in enumerate(views):
        struct = getattr(params, name)
        rows = []
        for tokens in sentences:
            x = embed_sentence(tokens, table)
            if isinstance(struct, GruParams):
                rows.append(compose_test_representation(bigru_forward(x, struct), RNN_VIEW, regime))
            else:
                rows.append(compose_test_representation(linear_encode(x, struct), LINEAR_VIEW, regime))
        stacked = np.vstack(rows)
        reps[name] = postprocess_batch(stacked, max_iters=power_iters, tol=power_tol,
                                       seed=[seed, 314159, index])
    if len(views) == 1:
        reps["ensemble"] = reps[views[0]]
    elif regime == UNSUPERVISED:
        reps["ensemble"] = 0.5 * (reps[views[0]] + reps[views[1]])
    elif regime == SUPERVISED:
        reps["ensemble"] = np.concatenate([reps[views[0]], reps[views[1]]], axis=1)
    else:
        raise ValueError(f"unknown regime '{regime}'")
    return reps


def encode_corpus(ckpt: Checkpoint, corpus_path, regime):
    """Encode every sentence of a corpus file with a trained checkpoint."""
    corpus = load_corpus(corpus_path)
    if len(corpus) == 0:
        raise DataError(f"{corpus_path}: empty corpus")
    table = load_word_vectors(ckpt.config.vectors)
    return encode_sentences(ckpt.params, ckpt.config.variant, corpus.sentences, table,
                            regime, seed=ckpt.config.seed, power_tol=ckpt.config.power_tol)


def write_encoded(matrix, path, header=True):
    """One line per sentence, space-separated decimal floats."""
    matrix = np.asarray(matrix, dtype=np.float64)
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            fh.write(f"{matrix.shape[0]} {matrix.shape[1]}\n")
        for row in matrix:
            fh.write(" ".join(np.format_float_positional(x, unique=True, trim="0") for x in row))
            fh.write("\n")
