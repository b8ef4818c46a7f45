"""
A two-layer Poisson deep exponential family on the bundled corpus
=================================================================

Runs the same short budget with BBVI and with the mixture proposal, writes
both traces, then compares their late-run estimator variance the same way
the command line ``compare`` subcommand does.

    python demos/def_topics.py [budget-seconds]
"""

import sys
import tempfile
from pathlib import Path

from odisvi.harness import compare, main

budget = sys.argv[1] if len(sys.argv) > 1 else "20"
out = Path(tempfile.mkdtemp(prefix="odisvi-def-"))

paths = []
for method in ("bbvi", "obbvi_mixture"):
    path = out / f"{method}.csv"
    code = main(["--model", "poisson_def", "--method", method, "--seed", "0",
                 "--budget-seconds", budget, "--out", str(path)])
    assert code == 0
    paths.append(path)
    print(method, (path.with_suffix(".json")).read_text())

report = compare(paths)
print("median avg_variance over the last quartile:", report["median_variance"])
print("verdict:", report["verdict"])
print("traces in", out)
