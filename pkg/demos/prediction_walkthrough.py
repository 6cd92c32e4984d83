"""Two regression platforms whose data reacts to the models they deploy.

Runs the sensitivity-regularised loop and plain repeated retraining side by
side on one game instance and prints how the summed RMSE and step sizes evolve.
Run: python demos/prediction_walkthrough.py
"""

import numpy as np

from perfgame.algorithms import AlgorithmConfig, run
from perfgame.experiments import build_prediction_game

game, maps = build_prediction_game(sigma_a_sq=5.0, seed=(0, 0))
print(f"game {game.name}: {len(game.players)} players, strong monotonicity {game.psi:.3f}")

traces = {}
for kind in ("SIR2", "RR"):
    cfg = AlgorithmConfig(kind, max_steps=30)
    traces[kind] = run(game, maps, cfg, seed=(0,))

print(f"{'t':>3} {'SIR2 rmse':>10} {'SIR2 step':>10} {'gamma':>9} {'RR rmse':>10} {'RR step':>10}")
for a, b in zip(traces["SIR2"].records, traces["RR"].records):
    if a.t in (1, 2, 3, 5, 10, 20, 30):
        print(f"{a.t:>3} {a.metric:>10.4f} {a.step_norm:>10.2e} {a.gamma:>9.2e} {b.metric:>10.4f} {b.step_norm:>10.2e}")

# the learned sensitivity estimate is a running max of observed shift / decision change
print("final sensitivity estimates:", np.round(traces["SIR2"].sensitivity.eps_hat, 3))
