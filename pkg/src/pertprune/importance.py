"""Layer importance from gradient differences between original and perturbed text.

For layer ``i`` and sample ``s`` the per-sample score is
``|g(grad_i L(s')) - g(grad_i L(s))|`` where ``g`` is a vector norm and ``s'``
the perturbed sample. Averaging over the calibration set gives one value per
perturbation draw; the spread of those values across draws drives the
consistency filter.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import autograd as ag
from .model import TransformerModel, encode, forward, sft_gradients
from .perturb import PerturbationSpec, perturbed_views

REPORT_SCHEMA = "pertprune.importance/1"
COSINE_EPS = 1e-12
RHO_MEDIAN_FACTOR = 5.0

GradientFn = Callable[[TransformerModel, np.ndarray], Mapping[int, np.ndarray]]


class NormKind(str, Enum):
    L1 = "L1"
    L2 = "L2"
    LINF = "Linf"

    @classmethod
    def parse(cls, value: "NormKind | str") -> "NormKind":
        if isinstance(value, cls):
            return value
        for kind in cls:
            if kind.value.lower() == str(value).lower():
                return kind
        raise ValueError(f"unknown norm {value!r}; choose from {[k.value for k in cls]}")


def aggregate(grad, norm: NormKind | str = NormKind.L2) -> float:
    """Collapse a gradient vector into one non-negative number."""
    x = np.asarray(grad, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("cannot aggregate an empty gradient")
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("gradient contains NaN or Inf")
    norm = NormKind.parse(norm)
    if norm is NormKind.L1:
        return float(np.abs(x).sum())
    if norm is NormKind.L2:
        return float(np.sqrt(np.dot(x, x)))
    return float(np.abs(x).max())


def _tokens(sample) -> np.ndarray:
    return encode(sample) if isinstance(sample, str) else np.asarray(sample, dtype=np.int64)


def _layer_norms(model, sample, norm, gradient_fn, clock) -> dict[int, float]:
    grads = gradient_fn(model, _tokens(sample))
    if clock is not None:
        clock.charge(len(model.layers))
    return {i: aggregate(grads[i], norm) for i in model.original_indices}


def pert_import_single(
    model: TransformerModel,
    sample,
    perturbed,
    norm: NormKind | str = NormKind.L2,
    *,
    gradient_fn: GradientFn | None = None,
    clock=None,
) -> dict[int, float]:
    """Per-layer |g(grad on perturbed) - g(grad on original)| for one sample."""
    gradient_fn = gradient_fn or sft_gradients
    orig = _layer_norms(model, sample, norm, gradient_fn, clock)
    pert = _layer_norms(model, perturbed, norm, gradient_fn, clock)
    return {i: abs(pert[i] - orig[i]) for i in model.original_indices}


@dataclass
class ImportanceMatrix:
    """Per-sample scores indexed [layer, draw, sample]."""

    layer_indices: list[int]
    per_sample: np.ndarray

    @property
    def per_draw(self) -> np.ndarray:
        """Mean over samples, shape [layers, draws]."""
        return self.per_sample.mean(axis=2)

    def as_dict(self) -> dict[int, np.ndarray]:
        return {i: self.per_draw[r] for r, i in enumerate(self.layer_indices)}


def pert_import(
    model: TransformerModel,
    calib: Sequence[str],
    spec: PerturbationSpec | None = None,
    norm: NormKind | str = NormKind.L2,
    *,
    perturbed: Sequence[Sequence[str]] | None = None,
    gradient_fn: GradientFn | None = None,
    clock=None,
) -> ImportanceMatrix:
    """Score every layer for every perturbation draw.

    ``perturbed[k][j]`` is draw ``k`` of calibration sample ``j``; when
    omitted it is generated from ``spec``. Both views are re-evaluated for
    each draw and results are reduced in sample order.
    """
    if not calib:
        raise ValueError("calibration set is empty")
    if perturbed is None:
        if spec is None:
            raise ValueError("pass either a PerturbationSpec or precomputed perturbed views")
        perturbed = perturbed_views(calib, spec)
    for k, view in enumerate(perturbed):
        if len(view) != len(calib):
            raise ValueError(f"draw {k} has {len(view)} samples, calibration has {len(calib)}")
    idx = model.original_indices
    out = np.zeros((len(idx), len(perturbed), len(calib)))
    for k, view in enumerate(perturbed):
        for j, (s, sp) in enumerate(zip(calib, view)):
            vals = pert_import_single(model, s, sp, norm, gradient_fn=gradient_fn, clock=clock)
            out[:, k, j] = [vals[i] for i in idx]
    return ImportanceMatrix(list(idx), out)


@dataclass
class LayerImportance:
    original_index: int
    per_draw_values: list[float]
    mean_value: float
    std_dev: float
    filtered: bool
    final_pi: float

    def to_dict(self) -> dict:
        return {
            "layer": self.original_index,
            "per_draw": list(self.per_draw_values),
            "mean": self.mean_value,
            "std": self.std_dev,
            "filtered": self.filtered,
            "final_pi": "inf" if math.isinf(self.final_pi) else self.final_pi,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LayerImportance":
        pi = d["final_pi"]
        return cls(
            int(d["layer"]), [float(v) for v in d["per_draw"]], float(d["mean"]),
            float(d["std"]), bool(d["filtered"]), math.inf if pi == "inf" else float(pi),
        )


@dataclass
class ImportanceReport:
    layers: list[LayerImportance]
    rho: float
    mode: str = "draws"
    warnings: list[str] = field(default_factory=list)

    @property
    def final_pi(self) -> dict[int, float]:
        return {l.original_index: l.final_pi for l in self.layers}

    @property
    def means(self) -> dict[int, float]:
        return {l.original_index: l.mean_value for l in self.layers}

    def ranking(self, use_means: bool = False) -> list[int]:
        """Original indices ordered by score, ties to the lowest index."""
        key = self.means if use_means else self.final_pi
        return sorted(key, key=lambda i: (key[i], i))

    def argmin(self) -> int:
        return self.ranking()[0]

    def all_filtered(self) -> bool:
        return all(l.filtered for l in self.layers)

    def to_dict(self) -> dict:
        return {
            "schema": REPORT_SCHEMA,
            "rho": "inf" if math.isinf(self.rho) else self.rho,
            "mode": self.mode,
            "layers": [l.to_dict() for l in self.layers],
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ImportanceReport":
        if d.get("schema") != REPORT_SCHEMA:
            raise ValueError(f"unsupported importance report schema {d.get('schema')!r}")
        rho = math.inf if d["rho"] == "inf" else float(d["rho"])
        return cls([LayerImportance.from_dict(x) for x in d["layers"]], rho, d["mode"], list(d["warnings"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ImportanceReport":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def auto_rho(spreads: Sequence[float], factor: float = RHO_MEDIAN_FACTOR) -> float:
    """``factor`` times the median spread; +inf when that is zero."""
    med = float(np.median(np.asarray(spreads, dtype=np.float64)))
    return factor * med if med > 0 else math.inf


def apply_consistency_filter(
    matrix: ImportanceMatrix | Mapping[int, Sequence[float]],
    rho: float | None = None,
    mode: str = "draws",
) -> ImportanceReport:
    """Mark layers whose score varies by at least ``rho`` as unprunable.

    ``mode="draws"`` takes the population std of the per-draw means;
    ``mode="samples"`` takes it over every (draw, sample) score and needs an
    :class:`ImportanceMatrix`. A single value has std 0. ``rho=None`` picks
    :func:`auto_rho` over the layer spreads.
    """
    if mode not in ("draws", "samples"):
        raise ValueError(f"unknown filter mode {mode!r}")
    if isinstance(matrix, ImportanceMatrix):
        idx = matrix.layer_indices
        per_draw = [matrix.per_draw[r] for r in range(len(idx))]
        spread_src = per_draw if mode == "draws" else [matrix.per_sample[r].ravel() for r in range(len(idx))]
    else:
        if mode == "samples":
            raise ValueError("mode='samples' needs an ImportanceMatrix with per-sample values")
        idx = list(matrix)
        per_draw = [np.asarray(matrix[i], dtype=np.float64) for i in idx]
        spread_src = per_draw
    for vals in per_draw:
        if vals.size == 0:
            raise ValueError("each layer needs at least one draw")
        if np.any(vals < 0):
            raise ValueError("scores must be non-negative")
    spreads = [float(np.std(v)) for v in spread_src]
    if rho is None:
        rho = auto_rho(spreads)
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")
    layers = []
    for i, vals, sd in zip(idx, per_draw, spreads):
        mean = float(np.mean(vals))
        filtered = sd >= rho
        layers.append(LayerImportance(int(i), [float(v) for v in vals], mean, sd, filtered,
                                      math.inf if filtered else mean))
    return ImportanceReport(layers, float(rho), mode)


def block_influence_baseline(model: TransformerModel, calib: Sequence[str]) -> dict[int, float]:
    """1 - mean cosine similarity between each layer's input and output states.

    The mean runs over every token position of every calibration sample.
    Lower means the layer changes its input less.
    """
    if not calib:
        raise ValueError("calibration set is empty")
    sums = np.zeros(len(model.layers))
    count = 0
    with ag.no_grad():
        for s in calib:
            _, hidden = forward(model, _tokens(s), return_hidden=True)
            for j in range(len(model.layers)):
                a, b = hidden[j], hidden[j + 1]
                denom = np.maximum(np.linalg.norm(a, axis=-1) * np.linalg.norm(b, axis=-1), COSINE_EPS)
                sums[j] += float(((a * b).sum(axis=-1) / denom).sum())
            count += hidden[0].shape[0]
    return {i: float(1.0 - sums[j] / count) for j, i in enumerate(model.original_indices)}
