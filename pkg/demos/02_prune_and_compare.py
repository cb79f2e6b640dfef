# Iterative pruning against the baselines
#
# Remove two of six layers four different ways and compare held-out
# perplexity. full_pip re-scores after each removal, no_iteration scores once,
# no_perturbation ranks layers by plain gradient size and block_influence by
# how little a layer changes its input.
#
# Run with:  python demos/02_prune_and_compare.py [steps]

# %%
import sys

from pertprune import (
    ModelConfig,
    PerturbationSpec,
    PruneConfig,
    calibration_samples,
    default_corpus,
    init_model,
    model_stats,
    perplexity,
    prune,
    split_corpus,
    train_toy,
)

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 600
train, held = split_corpus(default_corpus())
model = train_toy(init_model(ModelConfig(max_seq_len=64)), train, steps, 0.1, seq_len=64)
calib = calibration_samples(train, n=4, max_chars=60, seed=0)
text = held[:6000]

dense = perplexity(model, text).ppl
print(f"dense: ppl {dense:.3f}, {model.num_params()} params")

# %%
# Same calibration set and perturbation draws for every mode.

spec = PerturbationSpec(method="swap", draws=4, seed=0)
for mode in ("full_pip", "no_iteration", "no_perturbation", "block_influence"):
    run = prune(model, calib, PruneConfig(layers_to_prune=2, mode=mode, perturbation=spec))
    ppl = perplexity(run.final_model, text).ppl
    stats = model_stats(run.final_model, base_params=model.num_params())
    print(f"{mode:>16}: removed {run.pruned_original_indices}  ppl {ppl:.3f}  "
          f"ratio to dense {ppl / dense:.3f}  pruned {stats.pruning_ratio:.1%} of params")

# %%
# The iteration records keep every report, so one can see how the ranking
# shifts once a layer is gone.

run = prune(model, calib, PruneConfig(layers_to_prune=2, perturbation=spec))
for rec in run.per_iteration:
    scores = {i: round(v, 4) for i, v in rec.report.final_pi.items()}
    print(f"iteration {rec.iteration}: {scores} -> remove {rec.chosen}")
