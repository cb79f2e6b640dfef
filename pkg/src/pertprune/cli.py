"""Command-line entry point: train, prune, eval, time, report, perturb.

Exit codes: 0 success, 1 internal error, 2 bad user input (missing files,
invalid configuration, corrupt checkpoints). Outputs land under the
``[output] dir`` of the config, overridable with ``$PERTPRUNE_OUT``::

    <out>/config.ini            resolved configuration echo
    <out>/checkpoints/          base.ckpt, pruned-<mode>.ckpt
    <out>/logs/train.log
    <out>/manifests/            prune-<mode>.json
    <out>/reports/              eval-<name>.json, timing.json
    <out>/plots/timing.dat
"""
from __future__ import annotations

import argparse
import configparser
import io
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .clock import LayerEvalClock, WallClock
from .corpus import calibration_samples, default_corpus, read_corpus, read_samples, split_corpus
from .evaluation import model_stats, perplexity, save_json, timing_curve
from .importance import NormKind
from .model import ModelConfig, init_model, train_toy
from .perturb import PerturbationSpec, load_lexicon, perturb_corpus
from .pruner import MODES, PruneConfig, load_manifest, prune

log = logging.getLogger("pertprune")

OUT_ENV = "PERTPRUNE_OUT"
REPORT_SCHEMA = "pertprune.eval/1"
TIMING_SCHEMA = "pertprune.timing/1"
BUILTIN = "builtin"

DEFAULTS = {
    "model": {
        "n_layers": "6", "d_model": "32", "n_heads": "4", "d_ff": "64",
        "max_seq_len": "64", "seed": "0",
    },
    "train": {
        "corpus": BUILTIN, "holdout": "0.1", "steps": "2000", "learning_rate": "0.1",
        "batch_size": "8", "momentum": "0.9",
    },
    "perturbation": {
        "method": "swap", "words_per_sample": "1", "seed": "0", "draws": "4", "lexicon": "none",
    },
    "prune": {
        "layers_to_prune": "2", "rho": "auto", "norm": "L2", "mode": "full_pip",
        "filter_mode": "draws", "calibration": BUILTIN, "calibration_samples": "4",
        "calibration_chars": "60", "calibration_seed": "0",
    },
    "eval": {"corpus": BUILTIN, "max_chars": "6000", "stride": "0"},
    "time": {"m_max": "3", "clock": "wall"},
    "output": {"dir": "runs/default"},
}


class UserError(Exception):
    """Invalid input supplied by the caller; maps to exit code 2."""


def default_config() -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    cp.read_dict(DEFAULTS)
    return cp


def load_config(path: str | None) -> configparser.ConfigParser:
    cp = default_config()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise UserError(f"config file not found: {p}")
        cp.read(p, encoding="utf-8")
    unknown = set(cp.sections()) - set(DEFAULTS)
    if unknown:
        raise UserError(f"unknown config sections: {sorted(unknown)}")
    return cp


def config_text(cp: configparser.ConfigParser) -> str:
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def output_dir(cp: configparser.ConfigParser) -> Path:
    root = Path(os.environ.get(OUT_ENV) or cp["output"]["dir"])
    for sub in ("checkpoints", "logs", "manifests", "reports", "plots"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    (root / "config.ini").write_text(config_text(cp), encoding="utf-8")
    return root


def model_config(cp) -> ModelConfig:
    m = cp["model"]
    return ModelConfig(
        n_layers=m.getint("n_layers"), d_model=m.getint("d_model"), n_heads=m.getint("n_heads"),
        d_ff=m.getint("d_ff"), max_seq_len=m.getint("max_seq_len"), seed=m.getint("seed"),
    )


def perturbation_spec(cp) -> PerturbationSpec:
    p = cp["perturbation"]
    lex = p["lexicon"]
    lexicon = None if lex == "none" else load_lexicon(None if lex == BUILTIN else _existing(lex))
    return PerturbationSpec(
        method=p["method"], words_per_sample=p.getint("words_per_sample"),
        seed=p.getint("seed"), draws=p.getint("draws"), lexicon=lexicon,
    )


def prune_config(cp, mode: str | None = None) -> PruneConfig:
    p = cp["prune"]
    rho = None if p["rho"] == "auto" else float(p["rho"])
    return PruneConfig(
        layers_to_prune=p.getint("layers_to_prune"), rho=rho, norm=NormKind.parse(p["norm"]),
        perturbation=perturbation_spec(cp), mode=mode or p["mode"],
        seed=cp["model"].getint("seed"), filter_mode=p["filter_mode"],
    )


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UserError(f"file not found: {p}")
    return p


def _corpus(spec: str) -> str:
    return default_corpus() if spec == BUILTIN else read_corpus(_existing(spec))


def training_text(cp) -> tuple[str, str]:
    return split_corpus(_corpus(cp["train"]["corpus"]), cp["train"].getfloat("holdout"))


def calibration(cp) -> list[str]:
    p = cp["prune"]
    if p["calibration"] != BUILTIN:
        samples = read_samples(_existing(p["calibration"]))
        if not samples:
            raise UserError(f"calibration file {p['calibration']} has no samples")
        return samples
    train, _ = training_text(cp)
    return calibration_samples(
        train, n=p.getint("calibration_samples"), max_chars=p.getint("calibration_chars"),
        seed=p.getint("calibration_seed"),
    )


def eval_text(cp) -> str:
    e = cp["eval"]
    if e["corpus"] == BUILTIN:
        _, held = training_text(cp)
    else:
        held = read_corpus(_existing(e["corpus"]))
    limit = e.getint("max_chars")
    return held[:limit] if limit > 0 else held


def _stride(cp) -> int | None:
    s = cp["eval"].getint("stride")
    return s if s > 0 else None


def cmd_train(args, cp) -> int:
    out = output_dir(cp)
    train, _ = training_text(cp)
    t = cp["train"]
    steps = t.getint("steps")
    log_path = out / "logs" / "train.log"
    with log_path.open("w", encoding="utf-8") as fh:
        def record(step, loss):
            fh.write(f"step {step} loss {loss:.6f}\n")

        model = train_toy(
            init_model(model_config(cp)), train, steps, t.getfloat("learning_rate"),
            batch_size=t.getint("batch_size"), momentum=t.getfloat("momentum"), callback=record,
        )
    ckpt = out / "checkpoints" / "base.ckpt"
    save_checkpoint(model, ckpt)
    print(f"trained {steps} steps -> {ckpt}")
    return 0


def _base_checkpoint(args, cp, out: Path) -> Path:
    return Path(args.checkpoint) if args.checkpoint else out / "checkpoints" / "base.ckpt"


def cmd_prune(args, cp) -> int:
    out = output_dir(cp)
    ckpt = _existing(str(_base_checkpoint(args, cp, out)))
    model = load_checkpoint(ckpt)
    expected = model_config(cp)
    if model.config != expected:
        raise UserError(f"checkpoint {ckpt} was built with {model.config}, config says {expected}")
    config = prune_config(cp, args.mode)
    if config.layers_to_prune >= len(model.layers):
        raise UserError(f"layers_to_prune={config.layers_to_prune} must be below the layer count {len(model.layers)}")
    run = prune(model, calibration(cp), config)
    stamp = datetime.now(timezone.utc).isoformat()
    manifest = out / "manifests" / f"prune-{config.mode}.json"
    run.save_manifest(manifest, timestamp=stamp)
    pruned = out / "checkpoints" / f"pruned-{config.mode}.ckpt"
    save_checkpoint(run.final_model, pruned)
    print(f"mode={config.mode} pruned layers {run.pruned_original_indices} -> {pruned}")
    for w in run.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return 0


def cmd_eval(args, cp) -> int:
    out = output_dir(cp)
    model = load_checkpoint(_existing(args.checkpoint))
    text = read_corpus(_existing(args.corpus)) if args.corpus else eval_text(cp)
    corpus_id = args.corpus or f"{cp['train']['corpus']}:heldout"
    result = perplexity(model, text, _stride(cp), corpus_id)
    stats = model_stats(model)
    report = {
        "schema": REPORT_SCHEMA,
        "checkpoint": str(args.checkpoint),
        "eval": result.to_dict(),
        "stats": stats.to_dict(),
    }
    if args.dense:
        dense = perplexity(load_checkpoint(_existing(args.dense)), text, _stride(cp), corpus_id)
        report["dense_ppl"] = dense.ppl
        report["ppl_ratio"] = result.ppl / dense.ppl
    name = args.name or Path(args.checkpoint).stem
    path = out / "reports" / f"eval-{name}.json"
    save_json(report, path)
    line = f"ppl={result.ppl:.4f} tokens={result.token_count}"
    if args.dense:
        line += f" dense_ppl={report['dense_ppl']:.4f} ratio={report['ppl_ratio']:.4f}"
    print(line)
    return 0


def cmd_time(args, cp) -> int:
    out = output_dir(cp)
    model = load_checkpoint(_existing(str(_base_checkpoint(args, cp, out))))
    clock = LayerEvalClock() if cp["time"]["clock"] == "layer-evals" else WallClock()
    curve = timing_curve(model, calibration(cp), perturbation_spec(cp), cp["time"].getint("m_max"),
                         clock=clock, config=prune_config(cp))
    save_json({"schema": TIMING_SCHEMA, **curve.to_dict()}, out / "reports" / "timing.json")
    curve.write_plot_data(out / "plots" / "timing.dat")
    a, b, c = curve.quad_fit
    print(f"PT(m) = {a:.6g} m^2 + {b:.6g} m + {c:.6g}  (R^2={curve.r_squared:.6f}, {curve.unit})")
    return 0


def summarize(run_dir: Path) -> str:
    manifests = sorted((run_dir / "manifests").glob("prune-*.json")) if (run_dir / "manifests").is_dir() else []
    if not manifests:
        raise UserError(f"no run manifest found under {run_dir / 'manifests'}")
    lines = [f"run directory: {run_dir}"]
    for path in manifests:
        m = load_manifest(path)
        lines.append(f"[{m['mode']}] pruned {m['pruned_layers']} remaining {m['remaining_layers']}")
        for it in m["iterations"]:
            scores = ", ".join(
                f"{l['layer']}:{l['final_pi'] if isinstance(l['final_pi'], str) else format(l['final_pi'], '.4g')}"
                for l in it["report"]["layers"]
            )
            lines.append(f"  iter {it['iteration']}: chose {it['chosen']}  scores {scores}")
        secs = m["timing"]["iteration_seconds"]
        if secs:
            lines.append(f"  pruning time {sum(secs):.3f}s over {len(secs)} iteration(s)")
        for w in m["warnings"]:
            lines.append(f"  warning: {w}")
    for path in sorted((run_dir / "reports").glob("eval-*.json")):
        r = json.loads(path.read_text(encoding="utf-8"))
        s = r["stats"]
        extra = f" ratio-to-dense={r['ppl_ratio']:.4f}" if "ppl_ratio" in r else ""
        lines.append(
            f"eval {path.stem[5:]}: ppl={r['eval']['ppl']:.4f} params={s['param_count']} "
            f"pruning_ratio={s['pruning_ratio']:.4f}{extra}"
        )
    timing = run_dir / "reports" / "timing.json"
    if timing.is_file():
        t = json.loads(timing.read_text(encoding="utf-8"))
        lines.append(f"timing: a={t['quad_fit'][0]:.6g} R^2={t['r_squared']:.6f} ({t['unit']})")
    return "\n".join(lines) + "\n"


def cmd_report(args, cp) -> int:
    run_dir = Path(args.run_dir)
    if not run_dir.is_dir():
        raise UserError(f"run directory not found: {run_dir}")
    text = summarize(run_dir)
    sys.stdout.write(text)
    return 0


def cmd_perturb(args, cp) -> int:
    samples = read_samples(_existing(args.input)) if args.input else calibration(cp)
    spec = perturbation_spec(cp)
    sink = open(args.output, "w", encoding="utf-8") if args.output else sys.stdout
    try:
        for k in range(spec.draws) if args.draw is None else [args.draw]:
            for pair in perturb_corpus(samples, spec, k):
                sink.write(json.dumps({"draw": k, **pair.to_dict()}) + "\n")
    finally:
        if sink is not sys.stdout:
            sink.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pertprune", description=__doc__.splitlines()[0])
    parser.add_argument("--print-config", action="store_true", help="print the default configuration and exit")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command")

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="INI configuration file (defaults apply to missing keys)")
        p.set_defaults(func=fn)
        return p

    add("train", cmd_train, "train the toy model")
    p = add("prune", cmd_prune, "prune a checkpoint")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--checkpoint", help="base checkpoint (default <out>/checkpoints/base.ckpt)")
    p = add("eval", cmd_eval, "perplexity of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", help="UTF-8 text file (default: held-out slice of the training corpus)")
    p.add_argument("--dense", help="dense checkpoint for the PPL ratio")
    p.add_argument("--name", help="report name (default: checkpoint stem)")
    p = add("time", cmd_time, "pruning-time curve")
    p.add_argument("--checkpoint")
    p = add("report", cmd_report, "summarize a run directory")
    p.add_argument("run_dir")
    p = add("perturb", cmd_perturb, "emit perturbed pairs as JSON lines")
    p.add_argument("--input", help="samples file, one per line (default: calibration set)")
    p.add_argument("--draw", type=int)
    p.add_argument("--output")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    if args.print_config:
        sys.stdout.write(config_text(default_config()))
        return 0
    if not args.command:
        parser.print_usage(sys.stderr)
        return 2
    try:
        cp = load_config(args.config)
        return args.func(args, cp)
    except (UserError, CheckpointError, FileNotFoundError, configparser.Error, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
