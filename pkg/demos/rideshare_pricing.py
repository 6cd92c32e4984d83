"""Two ride-share companies adjusting prices at eleven locations.

Demand at each location is logistic in both companies' prices.  One run per
price interval for a single cross-sensitivity level; prints revenue and the
largest price adjustment each algorithm settles on.
Run: python demos/rideshare_pricing.py [mu_A]
"""

import sys

import numpy as np

from perfgame.algorithms import AlgorithmConfig, run
from perfgame.experiments import PRICE_INTERVALS, build_rideshare_game, load_market_data, resolve_data_path

mu_A = float(sys.argv[1]) if len(sys.argv) > 1 else 0.5
data = load_market_data(resolve_data_path("rideshare_boston_synthetic.csv"), "rideshare")

for k, p in enumerate(PRICE_INTERVALS):
    game, maps = build_rideshare_game(mu_A, data, seed=(0, 0, k), interval=k)
    parts = []
    for kind in ("SIR2", "RR", "RGD"):
        tr = run(game, maps, AlgorithmConfig(kind, max_steps=200), seed=(0, k))
        parts.append(f"{kind} {tr.final_metric:9.1f} (max |x| {np.max(np.abs(tr.final_X)):.2f})")
    print(f"base price {p:>4}: " + "  ".join(parts))
