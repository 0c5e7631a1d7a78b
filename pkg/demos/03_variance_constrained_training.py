"""Variance-constrained training on the community-source task.

Runs one desk-scale cell of the source-localization experiment twice from
identical initializations and random streams: once with plain stochastic
descent on the expected cost, once with the primal-dual scheme that also
bounds the first/second output moments. When the moment bound binds, the
constrained model trades a sliver of expected accuracy for a smaller
spread across test-time graph realizations. Runtime: several minutes.
"""

from sgnn.experiments import (
    SOURCE_LOCALIZATION,
    ExperimentConfig,
    SourceLocConfig,
    run_source_cell,
)
from sgnn.model import Architecture
from sgnn.training import PRIMAL_DUAL, UNCONSTRAINED, TrainConfig

cfg = ExperimentConfig(
    task=SOURCE_LOCALIZATION,
    master_seed=2026,
    arch=Architecture((1, 4, 1), 4, activation="leaky_relu", readout=5),
    train=TrainConfig(max_iters=2000, n_realizations=10, batch_size=32,
                      eta_primal=1e-2, eta_dual=0.02, loss="cross_entropy",
                      grad_norm_tol=0.0, c_f=0.0, c_s=0.5),
    source=SourceLocConfig(desk_scale_factor=0.3, noise_std=0.005, standardize=True),
    eval_draws=200,
)

GRAPH_SEED, P = 1, 0.25
print(f"one sweep cell: graph seed {GRAPH_SEED}, edge-failure probability p={P}")
for mode in (UNCONSTRAINED, PRIMAL_DUAL):
    rows, trace, params, gamma = run_source_cell(cfg, GRAPH_SEED, P, mode)
    acc = next(r for r in rows if r["metric"] == "accuracy")
    cost = next(r for r in rows if r["metric"] == "cost")
    tail_var = trace.column("variance")[-100:].mean()
    tail_m2 = trace.column("second_moment")[-100:].mean()
    print(f"{mode:>13}: accuracy {acc['mean']:.3f} +- {acc['std']:.4f} over 200 test "
          f"realizations | smoothed cost {cost['mean']:.3f} | output variance "
          f"{tail_var:.5f} | second moment {tail_m2:.3f} | "
          f"duals ({gamma.gamma1:.3f}, {gamma.gamma2:.3f})")
print("the constrained run keeps the second moment near its budget (c_s = 0.5) and "
      "shrinks the accuracy spread; the duals report how hard the bounds pushed")
