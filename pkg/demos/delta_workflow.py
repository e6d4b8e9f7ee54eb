"""Measure a hard-iron change between two collections, as with an added magnet.

Writes two CSV logs and runs the same comparison the ``magfg delta``
command does. Run with ``python3 demos/delta_workflow.py [outdir]``.
"""
import sys
from pathlib import Path

import numpy as np

from magfg.evaluation import DELTA_HI_REFERENCE, delta_hi_experiment, simulate_delta_pair
from magfg.logfile import ingest_csv, write_csv

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("delta-demo")
out.mkdir(parents=True, exist_ok=True)

# Same platform and field, hard iron shifted by the reference change.
tb, mb, ta, ma = simulate_delta_pair(DELTA_HI_REFERENCE, seed=11)
write_csv(out / "before.csv", mb)
write_csv(out / "after.csv", ma)

before = ingest_csv(out / "before.csv").to_measurements()
after = ingest_csv(out / "after.csv").to_measurements()
for method in ("factor-graph", "twostep", "tolles-lawson"):
    rep = delta_hi_experiment(before, after, DELTA_HI_REFERENCE, method)
    print(f"{method:14s} delta {np.round(rep.delta, 2)}  |epsilon| {rep.epsilon_norm:9.2f} nT")

print(f"\nsame result from the command line:\n  magfg delta {out}/before.csv {out}/after.csv "
      "--reference " + " ".join(f"{v}" for v in DELTA_HI_REFERENCE))
