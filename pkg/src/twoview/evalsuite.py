"""Downstream evaluation: similarity scoring against gold judgements, linear
probes on frozen representations, adjacent-sentence retrieval, the variant
ablation runner, and learning-curve export.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError, NumericalError
from .numcore import AdamState, adam_step, cosine, l2_normalize_rows
from .objective import ObjectiveVariant, required_views
from .pipeline import (
    Checkpoint,
    MetricsLog,
    ModelParams,
    TrainConfig,
    encode_sentences,
    train,
)
from .encoders import SUPERVISED, UNSUPERVISED
from .textio import Corpus, load_corpus, load_word_vectors, tokenize


def pearson(x, y) -> float:
    """Sample Pearson correlation; rejects zero-variance inputs."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ValueError(f"pearson needs two equal-length vectors of >= 2 values, "
                         f"got {x.shape} and {y.shape}")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = np.sqrt(np.sum(dx * dx))
    sy = np.sqrt(np.sum(dy * dy))
    if sx == 0.0 or sy == 0.0:
        raise NumericalError("pearson of a zero-variance sequence")
    return float(np.sum(dx * dy) / (sx * sy))


# ---------------------------------------------------------------------------
# similarity pairs
# ---------------------------------------------------------------------------


@dataclass
class StsPair:
    sentence_a: list
    sentence_b: list
    gold: float


def read_sts_tsv(path, scale=(0.0, 5.0)):
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            parts = raw.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise DataError(f"{path}: line {lineno}: expected 3 tab-separated fields")
            a, b = tokenize(parts[0]), tokenize(parts[1])
            if not a or not b:
                raise DataError(f"{path}: line {lineno}: empty sentence")
            try:
                gold = float(parts[2])
            except ValueError:
                raise DataError(f"{path}: line {lineno}: unparseable score '{parts[2]}'")
            if not (scale[0] <= gold <= scale[1]):
                raise DataError(f"{path}: line {lineno}: score {gold} outside {scale}")
            pairs.append(StsPair(sentence_a=a, sentence_b=b, gold=gold))
    if not pairs:
        raise DataError(f"{path}: no pairs found")
    return pairs


def sts_scores(params: ModelParams, variant, pairs, table, seed=0):
    """Pearson per view and for the ensemble. Postprocessing is fitted on the
    union of all sentences in the pair set."""
    sentences = []
    for p in pairs:
        sentences.append(p.sentence_a)
        sentences.append(p.sentence_b)
    reps = encode_sentences(params, variant, sentences, table, UNSUPERVISED, seed=seed)
    gold = [p.gold for p in pairs]
    out = {}
    for name, mat in reps.items():
        predicted = [cosine(mat[2 * k], mat[2 * k + 1]) for k in range(len(pairs))]
        out[name] = pearson(predicted, gold)
    return out


def eval_sts(ckpt: Checkpoint, pairs) -> float:
    """Ensemble Pearson between predicted cosine similarity and gold scores."""
    table = load_word_vectors(ckpt.config.vectors)
    return sts_scores(ckpt.params, ckpt.config.variant, pairs, table,
                      seed=ckpt.config.seed)["ensemble"]


# ---------------------------------------------------------------------------
# linear probes
# ---------------------------------------------------------------------------


@dataclass
class LabeledSentence:
    label: int
    sentence: list


def read_labeled_tsv(path, label_ids=None):
    """"label<TAB>sentence" rows; labels map to ids in first-seen order.

    Pass the mapping returned for the training split when reading the test
    split so ids agree.
    """
    if label_ids is None:
        label_ids = {}
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            parts = raw.rstrip("\n").split("\t")
            if len(parts) != 2:
                raise DataError(f"{path}: line {lineno}: expected 'label<TAB>sentence'")
            tokens = tokenize(parts[1])
            if not tokens:
                raise DataError(f"{path}: line {lineno}: empty sentence")
            if parts[0] not in label_ids:
                label_ids[parts[0]] = len(label_ids)
            rows.append(LabeledSentence(label=label_ids[parts[0]], sentence=tokens))
    if not rows:
        raise DataError(f"{path}: no rows found")
    return rows, label_ids


@dataclass
class ProbeModel:
    weights: np.ndarray  # (features, classes)
    bias: np.ndarray     # (classes,)

    def logits(self, features):
        return np.asarray(features, dtype=np.float64) @ self.weights + self.bias


def _softmax_rows(z):
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def train_probe(features, labels, dev_fraction=0.2, seed=0, epochs=300, lr=0.05) -> ProbeModel:
    """Multinomial logistic regression by full-batch Adam; returns the
    parameters with the best held-out accuracy."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if not np.isfinite(features).all():
        raise NumericalError("probe features contain non-finite values")
    classes = int(labels.max()) + 1
    if classes < 2 or np.unique(labels).size < 2:
        raise ValueError("probe needs at least two classes")
    n = features.shape[0]
    order = np.random.default_rng([seed, 7]).permutation(n)
    n_dev = int(round(dev_fraction * n)) if dev_fraction > 0 else 0
    dev_idx, train_idx = order[:n_dev], order[n_dev:]
    if train_idx.size == 0:
        raise ValueError("dev split leaves no training rows")
    if n_dev == 0:
        dev_idx = train_idx  # select on the training set when no dev is held out

    x_tr, y_tr = features[train_idx], labels[train_idx]
    x_dev, y_dev = features[dev_idx], labels[dev_idx]
    onehot = np.zeros((y_tr.size, classes))
    onehot[np.arange(y_tr.size), y_tr] = 1.0

    weights = np.zeros((features.shape[1], classes))
    bias = np.zeros(classes)
    state = AdamState.for_params([weights, bias], lr=lr)
    best = (-1.0, weights.copy(), bias.copy())
    for _ in range(epochs):
        probs = _softmax_rows(x_tr @ weights + bias)
        delta = (probs - onehot) / y_tr.size
        weights, bias = adam_step([weights, bias], [x_tr.T @ delta, delta.sum(axis=0)], state)
        acc = eval_probe(ProbeModel(weights, bias), x_dev, y_dev)
        if acc > best[0]:
            best = (acc, weights.copy(), bias.copy())
    return ProbeModel(weights=best[1], bias=best[2])


def eval_probe(model: ProbeModel, features, labels) -> float:
    """Argmax accuracy; ties resolve to the lowest class id."""
    predicted = np.argmax(model.logits(features), axis=1)
    return float(np.mean(predicted == np.asarray(labels, dtype=np.int64)))


def probe_scores(params, variant, train_rows, test_rows, table, seed=0):
    """Train/test a probe per view and for the concatenated ensemble.

    Postprocessing is fitted transductively on the union of both splits so
    train and test features live in one space.
    """
    sentences = [r.sentence for r in train_rows] + [r.sentence for r in test_rows]
    reps = encode_sentences(params, variant, sentences, table, SUPERVISED, seed=seed)
    y_train = np.array([r.label for r in train_rows])
    y_test = np.array([r.label for r in test_rows])
    split = len(train_rows)
    out = {}
    for name, mat in reps.items():
        model = train_probe(mat[:split], y_train, seed=seed)
        out[name] = eval_probe(model, mat[split:], y_test)
    return out


# ---------------------------------------------------------------------------
# adjacent-sentence retrieval
# ---------------------------------------------------------------------------


def adjacent_retrieval_recall(reps, document_ids) -> float:
    """Fraction of sentences whose cosine nearest neighbour is the previous or
    next sentence of the same document."""
    reps = l2_normalize_rows(np.asarray(reps, dtype=np.float64))
    document_ids = np.asarray(document_ids)
    n = reps.shape[0]
    if n < 3:
        raise ValueError("retrieval needs at least three sentences")
    sim = reps @ reps.T
    np.fill_diagonal(sim, -np.inf)
    nearest = np.argmax(sim, axis=1)
    hits = 0
    for i, j in enumerate(nearest):
        if abs(int(j) - i) == 1 and document_ids[i] == document_ids[j]:
            hits += 1
    return hits / n


def retrieval_scores(params, variant, corpus: Corpus, table, seed=0):
    reps = encode_sentences(params, variant, corpus.sentences, table, UNSUPERVISED, seed=seed)
    ids = corpus.document_ids()
    return {name: adjacent_retrieval_recall(mat, ids) for name, mat in reps.items()}


def cross_view_alignment_gap(rep_a, rep_b, document_ids, n_random=2000, seed=0):
    """Mean cross-view cosine over adjacent same-document pairs minus the mean
    over random pairs. Positive means adjacency is reflected across views."""
    rep_a = np.asarray(rep_a, dtype=np.float64)
    rep_b = np.asarray(rep_b, dtype=np.float64)
    ids = np.asarray(document_ids)
    n = rep_a.shape[0]
    adjacent = []
    for i in range(n - 1):
        if ids[i] == ids[i + 1]:
            adjacent.append(0.5 * (cosine(rep_a[i], rep_b[i + 1]) + cosine(rep_b[i], rep_a[i + 1])))
    rng = np.random.default_rng([seed, 99])
    random_pairs = []
    while len(random_pairs) < n_random:
        i, j = rng.integers(0, n, size=2)
        if abs(int(i) - int(j)) <= 1:
            continue
        random_pairs.append(0.5 * (cosine(rep_a[i], rep_b[j]) + cosine(rep_b[i], rep_a[j])))
    return float(np.mean(adjacent)), float(np.mean(random_pairs))


# ---------------------------------------------------------------------------
# ablation over objective variants
# ---------------------------------------------------------------------------

ALL_VARIANTS = [v.value for v in ObjectiveVariant]
_BASELINE = ObjectiveVariant.MULTI_VIEW_FG.value


def _role(view_name):
    if view_name == "ensemble":
        return "ensemble"
    return "rnn" if view_name.startswith("rnn") else "linear"


@dataclass
class AblationRow:
    variant: str
    steps: int = 0
    seconds: float = 0.0
    # scores[view][metric] -> float
    scores: dict = field(default_factory=dict)
    error: str | None = None


@dataclass
class AblationReport:
    rows: list = field(default_factory=list)
    metrics: list = field(default_factory=list)

    def row(self, variant):
        for r in self.rows:
            if r.variant == variant:
                return r
        return None

    def delta(self, row: AblationRow, view, metric):
        """Difference against the corresponding two-view baseline cell."""
        base = self.row(_BASELINE)
        if base is None or base.error or row.variant == _BASELINE:
            return None
        role = _role(view)
        for base_view, base_scores in base.scores.items():
            if _role(base_view) == role and metric in base_scores:
                return row.scores[view][metric] - base_scores[metric]
        return None


def _variant_metric_scores(params, variant, assets, seed):
    scores = {}

    def merge(metric, per_view):
        for view, value in per_view.items():
            scores.setdefault(view, {})[metric] = value

    if "retrieval" in assets:
        corpus, table = assets["retrieval"]
        merge("retrieval", retrieval_scores(params, variant, corpus, table, seed=seed))
    if "sts" in assets:
        pairs, table = assets["sts"]
        merge("sts", sts_scores(params, variant, pairs, table, seed=seed))
    if "cls" in assets:
        train_rows, test_rows, table = assets["cls"]
        merge("cls", probe_scores(params, variant, train_rows, test_rows, table, seed=seed))
    return scores


def _load_assets(cfg: TrainConfig):
    assets = {}
    table = load_word_vectors(cfg.vectors)
    if cfg.eval_corpus:
        assets["retrieval"] = (load_corpus(cfg.eval_corpus), table)
    if cfg.eval_pairs:
        assets["sts"] = (read_sts_tsv(cfg.eval_pairs), table)
    if cfg.cls_train and cfg.cls_test:
        train_rows, ids = read_labeled_tsv(cfg.cls_train)
        test_rows, _ = read_labeled_tsv(cfg.cls_test, ids)
        assets["cls"] = (train_rows, test_rows, table)
    if not assets:
        raise DataError("no evaluation assets configured "
                        "(need eval_corpus, eval_pairs, or cls_train + cls_test)")
    return assets


def run_ablation(base_cfg: TrainConfig, variants=None) -> AblationReport:
    """Train every variant with identical seeds and budgets, score each view
    and its ensemble on all configured assets, and report deltas against the
    two-view cross-architecture baseline. A failing variant annotates its row
    and the run continues."""
    variants = list(variants) if variants is not None else list(ALL_VARIANTS)
    assets = _load_assets(base_cfg)
    report = AblationReport()
    single_reps = {}
    for variant in variants:
        cfg = replace(base_cfg, variant=variant)
        row = AblationRow(variant=variant)
        started = time.perf_counter()
        try:
            ckpt, _ = train(cfg)
            row.steps = ckpt.step
            row.scores = _variant_metric_scores(ckpt.params, variant, assets, cfg.seed)
            if variant in (ObjectiveVariant.SINGLE_VIEW_F.value, ObjectiveVariant.SINGLE_VIEW_G.value):
                single_reps[variant] = ckpt.params
        except Exception as e:  # keep going; the row records what went wrong
            row.error = f"{type(e).__name__}: {e}"
        row.seconds = time.perf_counter() - started
        report.rows.append(row)

    # ensemble of the two independently trained single-view models
    f_key = ObjectiveVariant.SINGLE_VIEW_F.value
    g_key = ObjectiveVariant.SINGLE_VIEW_G.value
    if f_key in single_reps and g_key in single_reps:
        row = AblationRow(variant=f"{f_key}+{g_key}")
        started = time.perf_counter()
        try:
            combined = ModelParams(rnn=single_reps[f_key].rnn, linear=single_reps[g_key].linear)
            row.scores = _variant_metric_scores(
                combined, ObjectiveVariant.MULTI_VIEW_FG.value, assets, base_cfg.seed)
            row.scores = {"ensemble": row.scores["ensemble"]}
        except Exception as e:
            row.error = f"{type(e).__name__}: {e}"
        row.seconds = time.perf_counter() - started
        report.rows.append(row)

    report.metrics = sorted(assets.keys())
    return report


def format_ablation_report(report: AblationReport) -> str:
    lines = []
    header = f"{'variant':<28} {'view':<10} {'steps':>6} {'secs':>8}"
    for metric in report.metrics:
        header += f" {metric:>12} {'delta':>9}"
    lines.append(header)
    lines.append("-" * len(header))
    for row in report.rows:
        if row.error:
            lines.append(f"{row.variant:<28} ERROR: {row.error}")
            continue
        for view in row.scores:
            cells = f"{row.variant:<28} {view:<10} {row.steps:>6} {row.seconds:>8.1f}"
            for metric in report.metrics:
                value = row.scores[view].get(metric)
                delta = report.delta(row, view, metric)
                cells += f" {value:>12.4f}" if value is not None else " " * 13
                cells += f" {delta:>+9.4f}" if delta is not None else " " * 10
            lines.append(cells)
    return "\n".join(lines) + "\n"


def write_ablation_report(report: AblationReport, directory):
    """Aligned text table plus a machine-readable comma-separated twin."""
    import os

    os.makedirs(directory, exist_ok=True)
    text_path = os.path.join(directory, "ablation.txt")
    csv_path = os.path.join(directory, "ablation.csv")
    with open(text_path, "w", encoding="utf-8") as fh:
        fh.write(format_ablation_report(report))
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("variant,view,metric,score,delta,steps,seconds,error\n")
        for row in report.rows:
            if row.error:
                fh.write(f"{row.variant},,,,,{row.steps},{repr(row.seconds)},{row.error}\n")
                continue
            for view in row.scores:
                for metric in report.metrics:
                    value = row.scores[view].get(metric)
                    if value is None:
                        continue
                    delta = report.delta(row, view, metric)
                    fh.write(f"{row.variant},{view},{metric},{repr(value)},"
                             f"{'' if delta is None else repr(delta)},"
                             f"{row.steps},{repr(row.seconds)},\n")
    return text_path, csv_path


# ---------------------------------------------------------------------------
# learning curves
# ---------------------------------------------------------------------------


def learning_curve_export(logs, path):
    """Comma-separated table: step, then one column per (run, series) pair."""
    logs = list(logs)
    if not logs:
        raise DataError("no metrics logs given")
    for log in logs:
        if not log.eval_records():
            raise DataError(f"no eval cadence configured for run '{log.name}'")
    columns = []
    for log in logs:
        for series in log.series_names():
            columns.append((log.name, series))
    steps = sorted({r.step for log in logs for r in log.eval_records()})
    by_step = {}
    for log in logs:
        for r in log.eval_records():
            for series, value in r.evals.items():
                by_step[(r.step, log.name, series)] = value
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(["step"] + [f"{run}/{series}" for run, series in columns]) + "\n")
        for step in steps:
            cells = [str(step)]
            for run, series in columns:
                value = by_step.get((step, run, series))
                cells.append("" if value is None else repr(value))
            fh.write(",".join(cells) + "\n")
    return path
