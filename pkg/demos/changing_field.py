"""Estimating a drifting external field versus assuming it constant.

Run with ``python3 demos/changing_field.py [runs]``.
"""
import sys

import numpy as np

from magfg.evaluation import StudySpec, run_study

runs = int(sys.argv[1]) if len(sys.argv) > 1 else 5
spec = StudySpec(runs=runs, magnitudes=(5000.0,), field_qs=(0.0, 10.0, 15.0),
                 estimators=("factor-graph", "factor-graph-fixed-field"))
result = run_study(spec)

for q in spec.field_qs:
    free = result.cell("factor-graph", field_q=q)
    fixed = result.cell("factor-graph-fixed-field", field_q=q)
    rmse = result.cell("factor-graph", field_q=q, metric="rmse_field")
    drift = result.cell("factor-graph", field_q=q, metric="drift_rms")
    print(f"q = {q:4.1f} nT/sqrt(hr): median eps_hi {np.median(free):.3f} (free) "
          f"vs {np.median(fixed):.3f} (fixed) nT; field rmse {rmse.mean():.3f}, "
          f"drift {drift.mean():.3f} nT")
