import configparser
import json

import pytest

from pertprune.checkpoint import load_checkpoint
from pertprune.cli import DEFAULTS, main
from pertprune.corpus import generate_corpus

TINY = """
[model]
n_layers = 5
d_model = 16
n_heads = 2
d_ff = 16
max_seq_len = 48
[train]
corpus = {corpus}
steps = 12
batch_size = 4
[perturbation]
draws = 2
[prune]
layers_to_prune = 1
calibration_samples = 2
calibration_chars = 40
[eval]
max_chars = 400
[time]
clock = layer-evals
[output]
dir = {out}
"""


@pytest.fixture
def corpus_file(tmp_path):
    path = tmp_path / "corpus.txt"
    path.write_text(generate_corpus(20_000, seed=3), encoding="utf-8")
    return path


def write_config(tmp_path, corpus, out, **overrides):
    cp = configparser.ConfigParser()
    cp.read_string(TINY.format(corpus=corpus, out=out))
    for key, value in overrides.items():
        section, name = key.split("__")
        cp[section][name] = str(value)
    path = tmp_path / f"cfg-{len(list(tmp_path.glob('cfg-*')))}.ini"
    with path.open("w") as fh:
        cp.write(fh)
    return str(path)


@pytest.fixture
def trained(tmp_path, corpus_file, monkeypatch):
    monkeypatch.delenv("PERTPRUNE_OUT", raising=False)
    out = tmp_path / "run"
    cfg = write_config(tmp_path, corpus_file, out)
    assert main(["train", "--config", cfg]) == 0
    return cfg, out


def test_print_config_lists_every_section(capsys):
    assert main(["--print-config"]) == 0
    text = capsys.readouterr().out
    for section in DEFAULTS:
        assert f"[{section}]" in text


def test_no_command_is_user_error():
    assert main([]) == 2


def test_missing_corpus_exit_2(tmp_path, capsys):
    missing = tmp_path / "nowhere.txt"
    cfg = write_config(tmp_path, missing, tmp_path / "out")
    assert main(["train", "--config", cfg]) == 2
    assert str(missing) in capsys.readouterr().err


def test_missing_config_exit_2(tmp_path):
    assert main(["train", "--config", str(tmp_path / "none.ini")]) == 2


def test_invalid_value_exit_2(tmp_path, corpus_file):
    cfg = write_config(tmp_path, corpus_file, tmp_path / "out", model__n_heads=3)
    assert main(["train", "--config", cfg]) == 2


def test_internal_error_exit_1(trained, monkeypatch):
    cfg, _ = trained

    def boom(*a, **k):
        raise RuntimeError("kaput")

    monkeypatch.setattr("pertprune.cli.prune", boom)
    assert main(["prune", "--config", cfg]) == 1


def test_train_log_and_determinism(trained, tmp_path, corpus_file):
    cfg, out = trained
    steps = [int(line.split()[1]) for line in (out / "logs" / "train.log").read_text().splitlines()]
    assert steps == list(range(1, 13))
    other = tmp_path / "again"
    assert main(["train", "--config", write_config(tmp_path, corpus_file, other)]) == 0
    a = (out / "checkpoints" / "base.ckpt").read_bytes()
    assert a == (other / "checkpoints" / "base.ckpt").read_bytes()
    assert (out / "config.ini").is_file()


def test_prune_zero_layers_keeps_base(trained, tmp_path, corpus_file):
    _, out = trained
    cfg = write_config(tmp_path, corpus_file, out, prune__layers_to_prune=0)
    assert main(["prune", "--config", cfg]) == 0
    m = json.loads((out / "manifests" / "prune-full_pip.json").read_text())
    assert m["pruned_layers"] == []
    base = load_checkpoint(out / "checkpoints" / "base.ckpt")
    pruned = load_checkpoint(out / "checkpoints" / "pruned-full_pip.ckpt")
    assert all(a.data.tobytes() == b.data.tobytes() for a, b in zip(base.parameters(), pruned.parameters()))


def test_prune_manifest_repeatable(trained):
    cfg, out = trained
    path = out / "manifests" / "prune-full_pip.json"
    assert main(["prune", "--config", cfg]) == 0
    first = json.loads(path.read_text())
    assert main(["prune", "--config", cfg]) == 0
    second = json.loads(path.read_text())
    assert first.pop("timing")["timestamp"] and second.pop("timing")
    assert first == second
    assert len(first["pruned_layers"]) == 1


def test_prune_block_influence_tagged(trained):
    cfg, out = trained
    assert main(["prune", "--config", cfg, "--mode", "block_influence"]) == 0
    m = json.loads((out / "manifests" / "prune-block_influence.json").read_text())
    assert m["mode"] == "block_influence" and m["config"]["mode"] == "block_influence"


def test_prune_config_mismatch(trained, tmp_path, corpus_file):
    _, out = trained
    cfg = write_config(tmp_path, corpus_file, out, model__d_ff=32)
    assert main(["prune", "--config", cfg]) == 2


def test_eval_ratio_and_report(trained, capsys):
    cfg, out = trained
    assert main(["prune", "--config", cfg]) == 0
    base = str(out / "checkpoints" / "base.ckpt")
    pruned = str(out / "checkpoints" / "pruned-full_pip.ckpt")
    assert main(["eval", "--config", cfg, "--checkpoint", pruned, "--dense", base]) == 0
    r = json.loads((out / "reports" / "eval-pruned-full_pip.json").read_text())
    assert r["ppl_ratio"] == r["eval"]["ppl"] / r["dense_ppl"]
    assert r["stats"]["pruning_ratio"] > 0
    capsys.readouterr()
    assert main(["report", str(out)]) == 0
    text = capsys.readouterr().out
    assert "[full_pip]" in text and "ratio-to-dense" in text


def test_time_layer_evals(trained):
    cfg, out = trained
    assert main(["time", "--config", cfg]) == 0
    t = json.loads((out / "reports" / "timing.json").read_text())
    assert t["r_squared"] == 1.0 and t["unit"] == "layer-evaluations"
    assert (out / "plots" / "timing.dat").is_file()


def test_report_without_manifest(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    assert main(["report", str(tmp_path / "empty")]) == 2
    assert "manifest" in capsys.readouterr().err


def test_perturb_emits_json_lines(tmp_path, corpus_file, capsys):
    samples = tmp_path / "s.txt"
    samples.write_text("The meeting will start later.\nThe host left early.\n")
    cfg = write_config(tmp_path, corpus_file, tmp_path / "out")
    assert main(["perturb", "--config", cfg, "--input", str(samples), "--draw", "1"]) == 0
    rows = [json.loads(l) for l in capsys.readouterr().out.splitlines()]
    assert len(rows) == 2 and all(r["draw"] == 1 for r in rows)
    assert rows[0]["original"] == "The meeting will start later."


def test_output_env_override(tmp_path, corpus_file, monkeypatch):
    monkeypatch.setenv("PERTPRUNE_OUT", str(tmp_path / "env"))
    cfg = write_config(tmp_path, corpus_file, tmp_path / "ignored")
    assert main(["train", "--config", cfg]) == 0
    assert (tmp_path / "env" / "checkpoints" / "base.ckpt").is_file()
    assert not (tmp_path / "ignored").exists()
