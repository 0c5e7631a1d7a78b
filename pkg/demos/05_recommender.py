"""Movie-rating prediction over a similarity graph with random edges.

Builds the item graph from pairwise rating correlations (top edges kept,
runner-up edges addable), trains a rating predictor with hold-one-out
supervision, and compares a deterministic-graph baseline with the
stochastic-graph model on accuracy (RMSE) and recommendation diversity
(distinct items across all users' top-10 lists). Runtime: a few minutes.

Uses a synthetic ratings file with the MovieLens-100k layout; point
RATINGS_PATH at a real ``u.data`` to run on the actual dataset.
"""

import os
import tempfile

import numpy as np

from sgnn import rng as R
from sgnn.experiments import (
    RecsysConfig,
    _evaluate_recsys,
    build_recsys_task,
    load_movielens,
    write_synthetic_movielens,
)
from sgnn.model import Architecture, init_params
from sgnn.training import TrainConfig, train

RATINGS_PATH = os.environ.get("RATINGS_PATH")
if RATINGS_PATH is None:
    RATINGS_PATH = os.path.join(tempfile.gettempdir(), "sgnn_demo_u.data")
    if not os.path.exists(RATINGS_PATH):
        print("materializing a synthetic MovieLens-100k-shaped ratings file ...")
        write_synthetic_movielens(RATINGS_PATH, seed=0)

ratings = load_movielens(RATINGS_PATH)
print(f"loaded {np.count_nonzero(ratings)} ratings, {ratings.shape[0]} users x "
      f"{ratings.shape[1]} movies")

arch = Architecture((1, 8, 1), 4, activation="leaky_relu")
cfg = TrainConfig(max_iters=500, n_realizations=10, batch_size=32,
                  eta_primal=1e-2, eta_dual=0.02, loss="masked_mse",
                  grad_norm_tol=0.0, c_f=0.0, c_s=0.5, mode="unconstrained")

results = {}
for p in (0.0, 0.1):
    task = build_recsys_task(ratings, RecsysConfig(p=p, max_samples=4000))
    params0 = init_params(arch, R.derive(0, 2), n=task.graph.n)
    params, _, _ = train(params0, task.gres, task.dataset, cfg, R.derive(0, 3))
    draws = 20 if p > 0 else 1
    rmses, ads = _evaluate_recsys(params, task, draws, R.derive(0, 4), "per_filter")
    results[p] = (rmses, ads)
    ds = task.dataset
    base = float(np.sqrt(np.mean(
        [ds.labels[k, task.sample_items[k]] ** 2 for k in ds.splits["test"]])))
    label = "stochastic graph" if p > 0 else "deterministic graph"
    print(f"p={p} ({label}): RMSE {rmses.mean():.4f} +- {rmses.std():.4f} "
          f"(always-predict-the-mean baseline {base:.4f}), AD@10 {ads.mean():.1f}")

print("\nrandom edges during training diversify the recommendation lists while "
      "keeping the rating error comparable:")
print(f"  AD@10 p=0.1 vs p=0: {results[0.1][1].mean():.1f} vs {results[0.0][1].mean():.1f}")
