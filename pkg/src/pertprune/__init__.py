"""Perturbation-guided iterative layer pruning for a toy byte-level transformer."""
from .autograd import Tensor, no_grad
from .checkpoint import load_checkpoint, save_checkpoint
from .clock import LayerEvalClock, WallClock
from .corpus import calibration_samples, default_corpus, split_corpus
from .evaluation import ablation_table, model_stats, perplexity, timing_curve
from .importance import (
    ImportanceReport,
    NormKind,
    aggregate,
    apply_consistency_filter,
    block_influence_baseline,
    pert_import,
    pert_import_single,
)
from .model import ModelConfig, TransformerModel, forward, init_model, remove_layer, sft_gradients, train_toy
from .perturb import PerturbationSpec, perturb_corpus, perturb_insert, perturb_replace, perturb_swap
from .pruner import PruneConfig, PruneRun, pip_prune, prune, theorem1_oracle

__version__ = "0.1.0"
