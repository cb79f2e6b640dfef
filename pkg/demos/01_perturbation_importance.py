# Perturbation importance on a toy model
#
# A small byte-level transformer is trained for a few hundred steps on the
# bundled corpus. We then perturb a handful of calibration sentences with a
# one-character edit and look at how much each layer's gradient norm moves.
# Layers whose gradients barely react to the edit are the pruning candidates.
#
# Run with:  python demos/01_perturbation_importance.py [steps]

# %%
import sys

import numpy as np

from pertprune import (
    ModelConfig,
    PerturbationSpec,
    apply_consistency_filter,
    calibration_samples,
    default_corpus,
    init_model,
    pert_import,
    perturb_corpus,
    split_corpus,
    train_toy,
)

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 300
train, held = split_corpus(default_corpus())
model = train_toy(init_model(ModelConfig(max_seq_len=64)), train, steps, 0.1, seq_len=64)
print(f"trained {len(model.layers)} layers for {steps} steps")

# %%
# The calibration set is tiny on purpose: four sentences.

calib = calibration_samples(train, n=4, max_chars=60, seed=0)
spec = PerturbationSpec(method="swap", draws=4, seed=0)
for pair in perturb_corpus(calib, spec, 0):
    print(f"{pair.original!r}\n  -> {pair.perturbed!r}")

# %%
# Each draw re-perturbs every sample. The matrix below is [layer, draw]:
# the per-sample gradient-norm differences averaged over the calibration set.

matrix = pert_import(model, calib, spec)
np.set_printoptions(precision=4, suppress=True)
print(matrix.per_draw)

# %%
# The consistency filter looks at how much a layer's score moves between
# draws. Anything that swings by rho or more gets an infinite score and is
# never picked while a steadier layer is available.

report = apply_consistency_filter(matrix)
print(f"rho = {report.rho:.4g}")
for layer in report.layers:
    flag = "filtered" if layer.filtered else ""
    print(f"layer {layer.original_index}: mean {layer.mean_value:.4g} std {layer.std_dev:.4g} {flag}")
print("prune first:", report.argmin())
