"""Oil producers choosing quantities while the market price intercept drifts.

Compares terminal revenue of the regularised loop, repeated retraining and
repeated gradient descent across drift strengths on the bundled export data.
Run: python demos/cournot_market.py [trials]
"""

import sys

from perfgame.experiments import ExperimentSpec, run_experiment

trials = int(sys.argv[1]) if len(sys.argv) > 1 else 2
spec = ExperimentSpec("cournot", trials=trials, horizon=100, algorithms=("SIR2", "RR", "RGD"))
report = run_experiment(spec)

print(f"terminal revenue, mean over {trials} trial(s)")
print(f"{'mu':>6} " + " ".join(f"{a:>14}" for a in spec.algorithms))
for s in spec.sweep:
    print(f"{s:>6g} " + " ".join(f"{report.cell(s, a)['mean']:>14.4e}" for a in spec.algorithms))
