"""Greedy layer removal driven by perturbation importance, plus ablations.

``full_pip`` re-scores the current model after every removal. The other
modes are comparison baselines: score once and cut (``no_iteration``),
score by plain gradient magnitude (``no_perturbation``) or by hidden-state
similarity (``block_influence``).
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from . import autograd as ag
from .clock import WallClock
from .importance import (
    GradientFn,
    ImportanceReport,
    LayerImportance,
    NormKind,
    aggregate,
    apply_consistency_filter,
    block_influence_baseline,
    pert_import,
)
from .model import TransformerModel, encode, forward, remove_layer, sft_gradients
from .perturb import PerturbationSpec, perturbed_views

log = logging.getLogger(__name__)

MODES = ("full_pip", "no_iteration", "no_perturbation", "block_influence")
MANIFEST_SCHEMA = "pertprune.run/1"
EXHAUSTIVE_CAP = 8


class NoPerturbationEffect(ValueError):
    """Every layer scored exactly zero, so the perturbation carries no signal."""


@dataclass(frozen=True)
class PruneConfig:
    layers_to_prune: int = 0
    rho: float | None = None
    norm: NormKind = NormKind.L2
    perturbation: PerturbationSpec = field(default_factory=PerturbationSpec)
    mode: str = "full_pip"
    seed: int = 0
    filter_mode: str = "draws"

    def __post_init__(self):
        object.__setattr__(self, "norm", NormKind.parse(self.norm))
        if self.layers_to_prune < 0:
            raise ValueError("layers_to_prune must be >= 0")
        if self.rho is not None and not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if self.mode not in MODES:
            raise ValueError(f"unknown prune mode {self.mode!r}; choose from {MODES}")

    def to_dict(self) -> dict:
        return {
            "layers_to_prune": self.layers_to_prune,
            "rho": "auto" if self.rho is None else ("inf" if math.isinf(self.rho) else self.rho),
            "norm": self.norm.value,
            "perturbation": self.perturbation.to_dict(),
            "mode": self.mode,
            "seed": self.seed,
            "filter_mode": self.filter_mode,
        }


@dataclass
class IterationRecord:
    iteration: int
    evaluated: list[int]
    report: ImportanceReport
    chosen: list[int]
    seconds: float
    surgery_seconds: float = 0.0

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "evaluated": list(self.evaluated),
            "chosen": list(self.chosen),
            "report": self.report.to_dict(),
        }


@dataclass
class PruneRun:
    pruned_original_indices: list[int]
    per_iteration: list[IterationRecord]
    final_model: TransformerModel
    config: PruneConfig
    warnings: list[str] = field(default_factory=list)

    def manifest(self, timestamp: str | None = None) -> dict:
        """Run manifest; every clock-dependent value lives under ``timing``."""
        return {
            "schema": MANIFEST_SCHEMA,
            "mode": self.config.mode,
            "config": self.config.to_dict(),
            "pruned_layers": list(self.pruned_original_indices),
            "remaining_layers": self.final_model.original_indices,
            "iterations": [r.to_dict() for r in self.per_iteration],
            "warnings": list(self.warnings),
            "timing": {
                "timestamp": timestamp,
                "iteration_seconds": [r.seconds for r in self.per_iteration],
                "surgery_seconds": [r.surgery_seconds for r in self.per_iteration],
            },
        }

    def save_manifest(self, path: str | Path, timestamp: str | None = None) -> None:
        Path(path).write_text(json.dumps(self.manifest(timestamp), indent=2) + "\n", encoding="utf-8")


def load_manifest(path: str | Path) -> dict:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    if d.get("schema") != MANIFEST_SCHEMA:
        raise ValueError(f"{path}: unsupported manifest schema {d.get('schema')!r}")
    return d


def _check_budget(model: TransformerModel, calib: Sequence[str], config: PruneConfig) -> None:
    if not calib:
        raise ValueError("calibration set is empty")
    if config.layers_to_prune >= len(model.layers):
        raise ValueError(
            f"cannot prune {config.layers_to_prune} of {len(model.layers)} layers; at least one must remain"
        )


def _remove_many(model: TransformerModel, original: Sequence[int]) -> TransformerModel:
    positions = sorted((model.original_indices.index(i) for i in original), reverse=True)
    for pos in positions:
        model = remove_layer(model, pos)
    return model


def _pick(report: ImportanceReport, count: int, warnings: list[str], iteration: int) -> list[int]:
    """The ``count`` lowest final scores; falls back to raw means past the filter."""
    finite = [i for i in report.ranking() if not math.isinf(report.final_pi[i])]
    if len(finite) >= count:
        return finite[:count]
    msg = (f"iteration {iteration}: only {len(finite)} of {len(report.layers)} layers passed the "
           f"consistency filter (rho={report.rho:g}); ranking the rest by unfiltered means")
    log.warning(msg)
    warnings.append(msg)
    report.warnings.append(msg)
    rest = [i for i in report.ranking(use_means=True) if i not in finite]
    return finite + rest[: count - len(finite)]


def _pert_report(model, calib, views, config, gradient_fn, clock) -> ImportanceReport:
    matrix = pert_import(model, calib, norm=config.norm, perturbed=views,
                         gradient_fn=gradient_fn, clock=clock)
    if not np.any(matrix.per_sample):
        raise NoPerturbationEffect("perturbation has no effect: every layer scored exactly 0")
    return apply_consistency_filter(matrix, config.rho, mode=config.filter_mode)


def _views(calib, config, perturbed):
    if perturbed is not None:
        return [list(v) for v in perturbed]
    return perturbed_views(calib, config.perturbation)


def pip_prune(
    model: TransformerModel,
    calib: Sequence[str],
    config: PruneConfig,
    *,
    perturbed: Sequence[Sequence[str]] | None = None,
    gradient_fn: GradientFn | None = None,
    clock=None,
) -> PruneRun:
    """Iteratively remove the layer with the lowest filtered importance.

    The same calibration texts and perturbed views are reused in every
    iteration; only the gradients are recomputed on the shrunken model.
    Indices in the result refer to the original model.
    """
    _check_budget(model, calib, config)
    clock = clock or WallClock()
    views = _views(calib, config, perturbed)
    current = model.copy()
    pruned: list[int] = []
    records: list[IterationRecord] = []
    warnings: list[str] = []
    for it in range(1, config.layers_to_prune + 1):
        t0 = clock.now()
        evaluated = current.original_indices
        report = _pert_report(current, calib, views, config, gradient_fn, clock)
        (chosen,) = _pick(report, 1, warnings, it)
        t1 = clock.now()
        s0 = time.perf_counter()
        current = remove_layer(current, current.original_indices.index(chosen))
        surgery = time.perf_counter() - s0
        pruned.append(chosen)
        records.append(IterationRecord(it, evaluated, report, [chosen], t1 - t0, surgery))
        log.info("iteration %d: removed layer %d (score %.6g)", it, chosen, report.final_pi[chosen])
    return PruneRun(pruned, records, current, config, warnings)


def prune_one_shot(
    model: TransformerModel,
    calib: Sequence[str],
    config: PruneConfig,
    *,
    perturbed: Sequence[Sequence[str]] | None = None,
    gradient_fn: GradientFn | None = None,
    clock=None,
) -> PruneRun:
    """Score the base model once and remove the L lowest-scoring layers together."""
    _check_budget(model, calib, config)
    clock = clock or WallClock()
    if config.layers_to_prune == 0:
        return PruneRun([], [], model.copy(), config)
    views = _views(calib, config, perturbed)
    warnings: list[str] = []
    t0 = clock.now()
    report = _pert_report(model, calib, views, config, gradient_fn, clock)
    chosen = _pick(report, config.layers_to_prune, warnings, 1)
    t1 = clock.now()
    final = _remove_many(model.copy(), chosen)
    rec = IterationRecord(1, model.original_indices, report, chosen, t1 - t0)
    return PruneRun(chosen, [rec], final, config, warnings)


def gradient_magnitudes(
    model: TransformerModel,
    calib: Sequence[str],
    norm: NormKind | str = NormKind.L2,
    *,
    gradient_fn: GradientFn | None = None,
    clock=None,
) -> dict[int, float]:
    """Mean over samples of the aggregated unperturbed gradient, per layer."""
    gradient_fn = gradient_fn or sft_gradients
    idx = model.original_indices
    sums = np.zeros(len(idx))
    for s in calib:
        grads = gradient_fn(model, encode(s) if isinstance(s, str) else np.asarray(s))
        if clock is not None:
            clock.charge(len(model.layers))
        sums += [aggregate(grads[i], norm) for i in idx]
    return {i: float(v) / len(calib) for i, v in zip(idx, sums)}


def _plain_report(scores: dict[int, float]) -> ImportanceReport:
    layers = [LayerImportance(i, [v], v, 0.0, False, v) for i, v in scores.items()]
    return ImportanceReport(layers, math.inf, "none")


def prune_no_perturbation(
    model: TransformerModel,
    calib: Sequence[str],
    config: PruneConfig,
    *,
    gradient_fn: GradientFn | None = None,
    clock=None,
    **_ignored,
) -> PruneRun:
    """Iterative removal scored by unperturbed gradient magnitude."""
    _check_budget(model, calib, config)
    clock = clock or WallClock()
    current = model.copy()
    pruned, records = [], []
    for it in range(1, config.layers_to_prune + 1):
        t0 = clock.now()
        evaluated = current.original_indices
        report = _plain_report(gradient_magnitudes(current, calib, config.norm,
                                                   gradient_fn=gradient_fn, clock=clock))
        chosen = report.argmin()
        t1 = clock.now()
        current = remove_layer(current, current.original_indices.index(chosen))
        pruned.append(chosen)
        records.append(IterationRecord(it, evaluated, report, [chosen], t1 - t0))
    return PruneRun(pruned, records, current, config)


def prune_block_influence(
    model: TransformerModel,
    calib: Sequence[str],
    config: PruneConfig,
    *,
    clock=None,
    **_ignored,
) -> PruneRun:
    """One-shot removal of the layers whose output is most similar to their input."""
    _check_budget(model, calib, config)
    clock = clock or WallClock()
    if config.layers_to_prune == 0:
        return PruneRun([], [], model.copy(), config)
    t0 = clock.now()
    report = _plain_report(block_influence_baseline(model, calib))
    chosen = report.ranking()[: config.layers_to_prune]
    t1 = clock.now()
    rec = IterationRecord(1, model.original_indices, report, chosen, t1 - t0)
    return PruneRun(chosen, [rec], _remove_many(model.copy(), chosen), config)


_DISPATCH = {
    "full_pip": pip_prune,
    "no_iteration": prune_one_shot,
    "no_perturbation": prune_no_perturbation,
    "block_influence": prune_block_influence,
}


def prune(model: TransformerModel, calib: Sequence[str], config: PruneConfig, **kwargs) -> PruneRun:
    """Run the pruning strategy named by ``config.mode``."""
    return _DISPATCH[config.mode](model, calib, config, **kwargs)


@dataclass
class Theorem1Report:
    layers: list[int]
    pert_import: list[float]
    discrepancy: list[float]
    spearman: float
    argmin_layer: int
    argmax_layer: int

    @property
    def delta_at_argmin(self) -> float:
        return self.discrepancy[self.layers.index(self.argmin_layer)]

    @property
    def delta_at_argmax(self) -> float:
        return self.discrepancy[self.layers.index(self.argmax_layer)]

    @property
    def holds(self) -> bool:
        """Removing the least sensitive layer keeps at least as much discrimination."""
        return self.delta_at_argmin >= self.delta_at_argmax


def output_discrepancy(model: TransformerModel, pairs: Sequence[tuple[str, str]]) -> float:
    """Mean L2 distance between final-position logits of original and perturbed text."""
    total = 0.0
    with ag.no_grad():
        for s, sp in pairs:
            a = forward(model, encode(s)).data[-1]
            b = forward(model, encode(sp)).data[-1]
            total += float(np.linalg.norm(b - a))
    return total / len(pairs)


def theorem1_oracle(
    model: TransformerModel,
    calib: Sequence[str],
    spec: PerturbationSpec | None = None,
    norm: NormKind | str = NormKind.L2,
    *,
    perturbed: Sequence[Sequence[str]] | None = None,
    max_layers: int = EXHAUSTIVE_CAP,
) -> Theorem1Report:
    """Exhaustive single-layer removal compared against importance scores.

    For every layer: its mean importance on the full model, and the output
    discrepancy between original and perturbed text after removing only
    that layer.
    """
    n = len(model.layers)
    if n > max_layers:
        raise ValueError(f"exhaustive removal capped at {max_layers} layers, model has {n}")
    views = [list(v) for v in perturbed] if perturbed is not None else perturbed_views(calib, spec)
    matrix = pert_import(model, calib, norm=norm, perturbed=views)
    pi = matrix.per_draw.mean(axis=1)
    pairs = [(s, view[j]) for view in views for j, s in enumerate(calib)]
    deltas = [output_discrepancy(remove_layer(model, pos), pairs) for pos in range(n)]
    idx = model.original_indices
    order = sorted(range(n), key=lambda r: (pi[r], idx[r]))
    if np.ptp(pi) > 0 and np.ptp(deltas) > 0:
        rho = float(stats.spearmanr(pi, deltas).statistic)
    else:
        rho = float("nan")
    return Theorem1Report(idx, [float(v) for v in pi], deltas, rho, idx[order[0]], idx[order[-1]])
