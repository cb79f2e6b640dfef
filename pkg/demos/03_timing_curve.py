# How pruning time grows with the number of removed layers
#
# Iteration l scores the N - l + 1 layers still present, so cumulative time is
# a sum of a shrinking arithmetic series: a downward-bending quadratic in m.
# A counting clock shows this exactly; the wall clock shows it approximately.
#
# Run with:  python demos/03_timing_curve.py

# %%
from pertprune import ModelConfig, PerturbationSpec, PruneConfig, calibration_samples, default_corpus, init_model
from pertprune.clock import LayerEvalClock, WallClock
from pertprune.evaluation import timing_curve

model = init_model(ModelConfig(n_layers=12, max_seq_len=64, seed=1))
calib = calibration_samples(default_corpus(), n=4, max_chars=60, seed=0)
spec = PerturbationSpec(draws=2)
config = PruneConfig(rho=float("inf"))

# %%
# Counting clock: one unit per layer per gradient pass. With |D|=4 and K=2 the
# second difference should be exactly -2*4*2 = -16.

exact = timing_curve(model, calib, spec, 8, clock=LayerEvalClock(), config=config)
print("PT(m):", [pt for _, pt in exact.points])
print("second differences:", exact.second_differences, "R^2 =", exact.r_squared)

# %%
# Wall clock on the same model. The fit is not exact, but the leading
# coefficient should still be negative.

wall = timing_curve(model, calib, spec, 8, clock=WallClock(), config=config)
a, b, c = wall.quad_fit
print(f"PT(m) ~ {a:.4f} m^2 + {b:.4f} m + {c:.4f}   R^2 = {wall.r_squared:.5f}")
print(f"layer surgery took {wall.surgery_seconds * 1e3:.2f} ms in total (not counted)")
