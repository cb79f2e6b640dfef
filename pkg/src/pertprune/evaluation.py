"""Perplexity, model statistics, pruning-time curves and ablation grids."""
from __future__ import annotations

import json
import math
import statistics
import time
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autograd as ag
from .clock import WallClock
from .model import TransformerModel, base_param_count, encode, forward
from .perturb import PerturbationSpec
from .pruner import PruneConfig, pip_prune, prune

BYTES_PER_PARAM = {"float64": 8, "float32": 4, "float16": 2, "bfloat16": 2}
TPOT_TOKENS = 128
TPOT_RUNS = 5


@dataclass
class EvalResult:
    ppl: float
    token_count: int
    nll_sum: float
    corpus_id: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def perplexity(model: TransformerModel, corpus, stride: int | None = None, corpus_id: str = "") -> EvalResult:
    """exp(mean next-token NLL), each token after the first scored exactly once.

    Windows hold at most ``max_seq_len`` input tokens and start every
    ``stride`` tokens (default: non-overlapping). With overlap, tokens
    already scored only serve as context.
    """
    ids = encode(corpus) if isinstance(corpus, str) else np.asarray(corpus, dtype=np.int64)
    n = ids.size
    if n < 2:
        raise ValueError("corpus must tokenize to at least 2 tokens")
    width = model.config.max_seq_len
    stride = width if stride is None else stride
    if not 1 <= stride <= width:
        raise ValueError(f"stride must be in [1, {width}], got {stride}")
    nll = 0.0
    scored = 0
    next_target = 1
    begin = 0
    with ag.no_grad():
        while next_target <= n - 1:
            end = min(begin + width, n - 1)
            logits = forward(model, ids[begin:end]).data
            logp = ag.log_softmax_np(logits)
            first = max(next_target, begin + 1)
            targets = np.arange(first, end + 1)
            nll -= float(logp[targets - 1 - begin, ids[targets]].sum())
            scored += targets.size
            next_target = end + 1
            begin += stride
    return EvalResult(math.exp(nll / scored), scored, nll, corpus_id)


def greedy_generate(model: TransformerModel, prompt, n_tokens: int) -> np.ndarray:
    ids = list(encode(prompt) if isinstance(prompt, str) else np.asarray(prompt, dtype=np.int64))
    width = model.config.max_seq_len
    with ag.no_grad():
        for _ in range(n_tokens):
            logits = forward(model, np.asarray(ids[-width:])).data
            ids.append(int(np.argmax(logits[-1, :256])))
    return np.asarray(ids, dtype=np.int64)


def measure_tpot(model: TransformerModel, prompt="The", n_tokens: int = TPOT_TOKENS, runs: int = TPOT_RUNS) -> float:
    """Median milliseconds per generated token over ``runs`` greedy decodes."""
    times = []
    for _ in range(runs):
        t0 = time.perf_counter()
        greedy_generate(model, prompt, n_tokens)
        times.append((time.perf_counter() - t0) / n_tokens * 1e3)
    return statistics.median(times)


@dataclass
class ModelStats:
    param_count: int
    est_memory_bytes: int
    tpot_ms: float | None
    pruning_ratio: float
    base_param_count: int
    precision: str

    def to_dict(self) -> dict:
        return asdict(self)


def model_stats(
    model: TransformerModel,
    measured_tpot: bool = False,
    *,
    base_params: int | None = None,
    precision: str = "float64",
    tpot_tokens: int = TPOT_TOKENS,
    tpot_runs: int = TPOT_RUNS,
) -> ModelStats:
    """Parameter count, memory estimate and pruning ratio; TPOT on request.

    The ratio is (base - current) / base in exact integer counts, with the
    base taken from the model's config unless ``base_params`` is given.
    """
    if precision not in BYTES_PER_PARAM:
        raise ValueError(f"unknown precision {precision!r}; choose from {sorted(BYTES_PER_PARAM)}")
    params = model.num_params()
    base = base_param_count(model.config) if base_params is None else int(base_params)
    tpot = measure_tpot(model, n_tokens=tpot_tokens, runs=tpot_runs) if measured_tpot else None
    return ModelStats(
        param_count=params,
        est_memory_bytes=params * BYTES_PER_PARAM[precision],
        tpot_ms=tpot,
        pruning_ratio=(base - params) / base,
        base_param_count=base,
        precision=precision,
    )


def second_differences(values: Sequence[float]) -> list[float]:
    v = list(values)
    return [v[i + 2] - 2 * v[i + 1] + v[i] for i in range(len(v) - 2)]


def quadratic_fit(x: Sequence[float], y: Sequence[float]) -> tuple[tuple[float, float, float], float]:
    """Least-squares ``y = a x^2 + b x + c`` and its R^2.

    Solved in exact rational arithmetic, so exactly quadratic data gives
    R^2 == 1.0 with no rounding residue.
    """
    if len(x) != len(y) or len(x) < 3:
        raise ValueError("need at least 3 matched points for a quadratic fit")
    X = [Fraction(v) for v in x]
    Y = [Fraction(v) for v in y]
    s = [sum(xi**k for xi in X) for k in range(5)]
    t = [sum(yi * xi**k for xi, yi in zip(X, Y)) for k in range(3)]
    # normal equations for (c, b, a)
    A = [[s[0], s[1], s[2]], [s[1], s[2], s[3]], [s[2], s[3], s[4]]]
    rhs = t[:]
    for col in range(3):
        piv = next(r for r in range(col, 3) if A[r][col] != 0)
        A[col], A[piv] = A[piv], A[col]
        rhs[col], rhs[piv] = rhs[piv], rhs[col]
        for r in range(3):
            if r != col and A[r][col] != 0:
                f = A[r][col] / A[col][col]
                A[r] = [ar - f * ac for ar, ac in zip(A[r], A[col])]
                rhs[r] -= f * rhs[col]
    c, b, a = (rhs[i] / A[i][i] for i in range(3))
    mean = sum(Y) / len(Y)
    ss_tot = sum((yi - mean) ** 2 for yi in Y)
    ss_res = sum((yi - (a * xi * xi + b * xi + c)) ** 2 for xi, yi in zip(X, Y))
    r2 = Fraction(1) if ss_tot == 0 else 1 - ss_res / ss_tot
    return (float(a), float(b), float(c)), float(r2)


@dataclass
class TimingCurve:
    points: list[tuple[int, float]]
    second_differences: list[float]
    quad_fit: tuple[float, float, float]
    r_squared: float
    unit: str = "seconds"
    surgery_seconds: float = 0.0

    @classmethod
    def from_points(cls, points: Sequence[tuple[int, float]], unit: str = "seconds", surgery: float = 0.0):
        if len(points) < 3:
            raise ValueError("need at least 3 points for second differences")
        ms = [m for m, _ in points]
        pts = [pt for _, pt in points]
        fit, r2 = quadratic_fit(ms, pts)
        return cls([(int(m), float(p)) for m, p in points], second_differences(pts), fit, r2, unit, surgery)

    def to_dict(self) -> dict:
        return {
            "points": [list(p) for p in self.points],
            "second_differences": self.second_differences,
            "quad_fit": list(self.quad_fit),
            "r_squared": self.r_squared,
            "unit": self.unit,
            "surgery_seconds": self.surgery_seconds,
        }

    def write_plot_data(self, path: str | Path) -> None:
        """Two whitespace-separated columns: layers pruned, cumulative time."""
        lines = [f"# m PT(m) [{self.unit}]"] + [f"{m} {pt!r}" for m, pt in self.points]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_plot_data(path: str | Path) -> list[tuple[int, float]]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("#") or not line.strip():
            continue
        m, pt = line.split()
        out.append((int(m), float(pt)))
    return out


def timing_curve(
    model: TransformerModel,
    calib: Sequence[str],
    spec: PerturbationSpec,
    m_max: int,
    *,
    clock=None,
    config: PruneConfig | None = None,
    perturbed=None,
    gradient_fn=None,
) -> TimingCurve:
    """Cumulative pruning time PT(m) for m = 1..m_max.

    One iterative run with L = m_max is recorded; its first m iterations
    are exactly the run with L = m, so PT(m) is the running sum of the
    per-iteration times. Layer-removal surgery is excluded from PT and
    reported separately.
    """
    if m_max < 3:
        raise ValueError("m_max must be >= 3 to form second differences")
    if m_max >= len(model.layers):
        raise ValueError(f"m_max={m_max} must be below the layer count {len(model.layers)}")
    clock = clock or WallClock()
    base = config or PruneConfig(perturbation=spec)
    cfg = PruneConfig(
        layers_to_prune=m_max, rho=base.rho, norm=base.norm, perturbation=spec,
        mode="full_pip", seed=base.seed, filter_mode=base.filter_mode,
    )
    run = pip_prune(model, calib, cfg, perturbed=perturbed, gradient_fn=gradient_fn, clock=clock)
    cumulative, points = 0.0, []
    for rec in run.per_iteration:
        cumulative += rec.seconds
        points.append((rec.iteration, cumulative))
    unit = "seconds" if isinstance(clock, WallClock) else "layer-evaluations"
    return TimingCurve.from_points(points, unit, sum(r.surgery_seconds for r in run.per_iteration))


@dataclass
class AblationTable:
    ratios: list[float]
    modes: list[str]
    layers_pruned: list[int]
    ppl: list[list[float]]
    pruned_sets: list[list[list[int]]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_text(self) -> str:
        head = "ratio  layers  " + "  ".join(f"{m:>16}" for m in self.modes)
        rows = [head]
        for r, n, row in zip(self.ratios, self.layers_pruned, self.ppl):
            rows.append(f"{r:5.3f}  {n:6d}  " + "  ".join(f"{v:16.4f}" for v in row))
        return "\n".join(rows) + "\n"


def ablation_table(
    model: TransformerModel,
    calib: Sequence[str],
    configs: Sequence[PruneConfig],
    ratios: Sequence[float],
    eval_corpus,
    *,
    stride: int | None = None,
    perturbed=None,
) -> AblationTable:
    """PPL of every mode at every layer-pruning ratio.

    Ratio ``r`` prunes ``round(r * N)`` of the model's ``N`` layers.
    """
    n = len(model.layers)
    dense = perplexity(model, eval_corpus, stride).ppl
    counts, grid, sets = [], [], []
    for r in ratios:
        if not 0 <= r < 1:
            raise ValueError(f"ratio must be in [0, 1), got {r}")
        L = int(round(r * n))
        counts.append(L)
        row, row_sets = [], []
        for cfg in configs:
            if L == 0:
                row.append(dense)
                row_sets.append([])
                continue
            c = PruneConfig(L, cfg.rho, cfg.norm, cfg.perturbation, cfg.mode, cfg.seed, cfg.filter_mode)
            kwargs = {"perturbed": perturbed} if perturbed is not None and cfg.mode in ("full_pip", "no_iteration") else {}
            run = prune(model, calib, c, **kwargs)
            row.append(perplexity(run.final_model, eval_corpus, stride).ppl)
            row_sets.append(run.pruned_original_indices)
        grid.append(row)
        sets.append(row_sets)
    return AblationTable(list(ratios), [c.mode for c in configs], counts, grid, sets)


def save_json(obj, path: str | Path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")
