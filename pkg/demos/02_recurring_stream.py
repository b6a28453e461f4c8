"""
Forgetting on a recurring stream, with and without freezing
===========================================================

Two labelling concepts alternate every 20 chunks. A plain incremental ensemble
keeps rewriting every learner; the drift-aware variant freezes learners whose
AUC has dropped, so some of them still hold the previous concept when it
returns.

Usage: python demos/02_recurring_stream.py [IncCTR|MoE|AdaMoE]
"""

import sys

import numpy as np

from asys.harness import ExperimentConfig, compare_runs, post_drift_dip, run_experiment

strategy = sys.argv[1] if len(sys.argv) > 1 else "MoE"
cfg = ExperimentConfig({"ensemble.strategy": strategy, "seed": 0})

baseline = run_experiment(cfg.replace(asys__enabled=False), persist=False)
asys = run_experiment(cfg, persist=False)

# %%
# Overall AUC and the mean drop after each concept switch.
print(compare_runs([baseline, asys]).to_text())

# %%
# Windowed AUC (5 chunks per window) around the concept switches.
print("\nwindow  chunks    baseline  +ASYS")
for i, (a, b) in enumerate(zip(baseline.windowed.value, asys.windowed.value)):
    mark = " <- switch" if (i * 5) in baseline.drift_boundaries else ""
    print(f"{i:6d}  {i*5:3d}-{i*5+4:3d}   {a:.3f}     {b:.3f}{mark}")

# %%
# How often learners were frozen, per concept segment.
frozen = np.array([sum(not b for b in t.indicators) for t in asys.traces])
for start in range(0, len(frozen), 20):
    seg = frozen[start : start + 20]
    print(f"chunks {start:3d}-{start+19:3d} ({asys.traces[start].concept}): "
          f"mean frozen learners {seg.mean():.2f}")
