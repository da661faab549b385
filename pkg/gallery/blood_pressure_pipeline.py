"""From raw (age, diastolic, systolic) rows to conditional blood pressure densities.

Synthetic rows stand in for survey data.  Ages are binned, each bin becomes
a kernel density estimate on a shared grid, and a global model predicts the
joint pressure distribution at new ages through the CLI.
"""
import subprocess
import sys
from pathlib import Path

import numpy as np

from wassreg.io import write_observations

out = Path("gallery_out") / "bp"
out.mkdir(parents=True, exist_ok=True)
rng = np.random.default_rng(3)

age = rng.uniform(30, 75, 3000)
mean = np.column_stack([62 + 0.25 * age, 95 + 0.7 * age])
bp = mean + rng.multivariate_normal([0, 0], [[80, 60], [60, 200]], size=age.size)
obs = write_observations(out / "observations.csv", age, bp)


def wassreg(*args):
    subprocess.run([sys.executable, "-m", "wassreg.cli", *args], check=True)


wassreg("ingest", "--input", str(obs), "--bins", "20", "--grid", "31",
        "--box", "30", "130", "70", "210", "--range", "30", "75", "--out", str(out / "bins"))
wassreg("fit", "--manifest", str(out / "bins" / "manifest.csv"), "--lambda", "0.4", "--out", str(out / "model"))
wassreg("predict", "--model", str(out / "model"), "--x", "35", "55", "75", "--render", "--out", str(out / "pred"))
print("predictions and heatmaps in", out / "pred")
