"""Finite-difference verification of every backward rule in the training
graph: the GRU cell, the bi-directional encoder with its final-state readout,
the linear encoder, all agreement variants, the contrastive loss including
the temperature, component removal with a frozen direction, and the complete
per-variant training loss.
"""

from __future__ import annotations

from dataclasses import fields, replace

import numpy as np

from . import autodiff as ad
from .encoders import (
    GruDirection,
    _direction_final_state_tape,
    bigru_final_states_tape,
    init_gru_params,
    init_linear_params,
    pad_batch,
)
from .numcore import GradCheckReport, finite_diff_check
from .objective import (
    ObjectiveVariant,
    agreement_matrix_tape,
    contrastive_loss,
    diagonal_included,
    required_views,
)
from .pipeline import TrainConfig, batch_views_tape, batch_loss, build_tape_model, init_model_params
from .postproc import power_iteration_top, remove_and_normalize_tape

BOUND = 1e-4


def _scalarized(build):
    """Adapt a tape builder into the (value, gradient) signature the
    finite-difference harness expects."""

    def fn(point):
        leaf = ad.parameter(point)
        out = build(leaf)
        out.backward()
        grad = leaf.grad if leaf.grad is not None else np.zeros_like(point)
        return float(out.value), grad

    return fn


def _merge(name, reports):
    return GradCheckReport(
        name=name,
        max_rel_error=max(r.max_rel_error for r in reports),
        probes=sum(r.probes for r in reports),
    )


def _lift_direction(direction, replace_field=None, leaf=None):
    values = {}
    for f in fields(GruDirection):
        values[f.name] = leaf if f.name == replace_field else ad.astensor(getattr(direction, f.name))
    return GruDirection(**values)


def check_gru_cell(probes=10, step=1e-5, seed=0):
    """One recurrence step from a random nonzero previous state."""
    rng = np.random.default_rng([seed, 1])
    dim, hidden = 5, 4
    direction = init_gru_params(dim, hidden, rng).fwd
    x = rng.standard_normal((1, dim))
    h_prev = rng.uniform(-0.5, 0.5, size=(1, hidden))
    probe_vec = rng.standard_normal((1, hidden))
    mask = np.ones((1, 1, 1))
    reports = []
    for f in fields(GruDirection):
        def build(leaf, field_name=f.name):
            lifted = _lift_direction(direction, field_name, leaf)
            h = _direction_final_state_tape(x, mask, 1, 1, lifted, h0=h_prev)
            return (h * probe_vec).sum()

        reports.append(finite_diff_check(_scalarized(build), getattr(direction, f.name),
                                         step=step, probes=probes, seed=seed, name=f.name))
    return _merge("gru_cell", reports)


def check_bigru_last_state(probes=10, step=1e-5, seed=0):
    """Both directions over a padded variable-length batch."""
    rng = np.random.default_rng([seed, 2])
    dim, hidden = 5, 4
    params = init_gru_params(dim, hidden, rng)
    embedded = [rng.standard_normal((m, dim)) for m in (3, 5, 2)]
    padded = pad_batch(embedded)
    probe_vec = rng.standard_normal((3, 2 * hidden))
    reports = []
    for direction_name in ("fwd", "bwd"):
        plain = getattr(params, direction_name)
        for f in fields(GruDirection):
            def build(leaf, dn=direction_name, field_name=f.name):
                lifted_fwd = _lift_direction(params.fwd, field_name if dn == "fwd" else None, leaf)
                lifted_bwd = _lift_direction(params.bwd, field_name if dn == "bwd" else None, leaf)
                states = bigru_final_states_tape(padded, lifted_fwd, lifted_bwd)
                return (states * probe_vec).sum()

            reports.append(finite_diff_check(
                _scalarized(build), getattr(plain, f.name),
                step=step, probes=probes, seed=seed, name=f"{direction_name}.{f.name}"))
    return _merge("bigru_last_state", reports)


def check_linear_encoder(probes=10, step=1e-5, seed=0):
    rng = np.random.default_rng([seed, 3])
    dim, hidden = 5, 4
    weight = init_linear_params(dim, hidden, rng).weight
    means = rng.standard_normal((3, dim))
    probe_vec = rng.standard_normal((3, 2 * hidden))

    def build(leaf):
        return ((ad.astensor(means) @ leaf) * probe_vec).sum()

    report = finite_diff_check(_scalarized(build), weight, step=step, probes=probes,
                               seed=seed, name="weight")
    return _merge("linear_encoder", [report])


def check_agreement(variant, probes=10, step=1e-5, seed=0):
    """Gradient of a weighted sum of agreement entries with respect to each
    view's representation matrix."""
    rng = np.random.default_rng([seed, 4])
    n, d = 5, 6
    views = required_views(variant)
    base = {name: rng.standard_normal((n, d)) for name in views}
    weights = rng.standard_normal((n, n))
    reports = []
    for name in views:
        def build(leaf, probed=name):
            reps = {v: (leaf if v == probed else ad.astensor(base[v])) for v in views}
            return (agreement_matrix_tape(variant, reps) * weights).sum()

        reports.append(finite_diff_check(_scalarized(build), base[name], step=step,
                                         probes=probes, seed=seed, name=name))
    return _merge(f"agreement/{ObjectiveVariant(variant).value}", reports)


def check_contrastive_loss(probes=10, step=1e-5, seed=0):
    rng = np.random.default_rng([seed, 5])
    n, context = 6, 2
    scores = rng.uniform(-1.5, 1.5, size=(n, n))
    log_tau = rng.uniform(-0.5, 0.5)

    def build_scores(leaf):
        return contrastive_loss(leaf, log_tau, context)

    def build_tau(leaf):
        return contrastive_loss(scores, leaf, context)

    return [
        _merge("contrastive_loss/scores",
               [finite_diff_check(_scalarized(build_scores), scores, step=step,
                                  probes=probes, seed=seed, name="scores")]),
        _merge("contrastive_loss/log_temperature",
               [finite_diff_check(_scalarized(build_tau), np.float64(log_tau), step=step,
                                  probes=probes, seed=seed, name="log_temperature")]),
    ]


def check_postprocess_frozen(probes=10, step=1e-5, seed=0):
    """Removal plus normalization; the direction is estimated once from the
    base point and reused by both the analytic and numeric sides."""
    rng = np.random.default_rng([seed, 6])
    x = rng.standard_normal((8, 6))
    direction = power_iteration_top(x, seed=seed).direction
    weights = rng.standard_normal((8, 6))

    def build(leaf):
        return (remove_and_normalize_tape(leaf, direction) * weights).sum()

    report = finite_diff_check(_scalarized(build), x, step=step, probes=probes,
                               seed=seed, name="batch")
    return _merge("postprocess/frozen_direction", [report])


def check_training_loss(variant, probes=6, step=1e-5, seed=0):
    """The complete per-batch loss differentiated with respect to every
    parameter array, with postprocessing directions frozen at the base point."""
    rng = np.random.default_rng([seed, 8])
    cfg = TrainConfig(variant=ObjectiveVariant(variant).value, batch_size=4, context=1,
                      dim=5, hidden=4, train_power_iters=25, seed=seed).validate()
    params = init_model_params(cfg)
    params.temperature.log_value = float(rng.uniform(-0.3, 0.3))
    tape = build_tape_model(params, cfg.variant)
    embedded = [rng.standard_normal((m, cfg.dim)) for m in (3, 4, 2, 5)]
    padded = pad_batch(embedded)

    raw_views = batch_views_tape(tape, cfg.variant, padded, postprocess=False)
    directions = {name: power_iteration_top(t.value, max_iters=50, seed=seed).direction
                  for name, t in raw_views.items()}

    reports = []
    for name, tensor in tape.order:
        base_value = tensor.value.copy()

        def fn(point, target=tensor):
            target.value = np.asarray(point, dtype=np.float64)
            tape.zero_grads()
            loss = batch_loss(tape, cfg.variant, padded, cfg, directions=directions)
            loss.backward()
            grad = target.grad if target.grad is not None else np.zeros_like(target.value)
            return float(loss.value), grad

        reports.append(finite_diff_check(fn, base_value, step=step, probes=probes,
                                         seed=seed, name=name))
        tensor.value = base_value
    return _merge(f"training_loss/{ObjectiveVariant(variant).value}", reports)


def run_all_checks(probes=10, step=1e-5, seed=0):
    reports = [
        check_gru_cell(probes, step, seed),
        check_bigru_last_state(probes, step, seed),
        check_linear_encoder(probes, step, seed),
    ]
    for variant in ObjectiveVariant:
        reports.append(check_agreement(variant, probes, step, seed))
    reports.extend(check_contrastive_loss(probes, step, seed))
    reports.append(check_postprocess_frozen(probes, step, seed))
    for variant in ObjectiveVariant:
        reports.append(check_training_loss(variant, probes=max(4, probes // 2), step=step, seed=seed))
    return reports


def format_reports(reports, bound=BOUND):
    lines = [f"{'check':<36} {'max rel err':>12} {'probes':>7}  result"]
    for r in reports:
        verdict = "PASS" if r.ok(bound) else "FAIL"
        lines.append(f"{r.name:<36} {r.max_rel_error:>12.3e} {r.probes:>7}  {verdict}")
    return "\n".join(lines)
