"""Empirical federated stability shrinks like 1/n.

Replacing one record of a client moves its pure-local model by O(1/n_i);
the largest resulting change of the loss is the stability estimate.
"""

import numpy as np

from fedalt.algorithms import AlgorithmConfig, pure_local_training
from fedalt.evaluation import federated_stability_estimate
from fedalt.harness.experiments import loglog_slope
from fedalt.instance import generate_quadratic_instance

sizes = [25, 50, 100, 200]
means = []
for n in sizes:
    gammas = []
    for seed in range(10):
        inst, data = generate_quadratic_instance(5, n, 3, target_R2=1.0, seed=seed)
        trainer = lambda d: pure_local_training(inst.loss, d, AlgorithmConfig(exact=True))
        gammas.append(federated_stability_estimate(trainer, inst, data, 0, trials=20, probe_count=50, seed=seed))
    means.append(np.mean(gammas))
    print(f"n_i = {n:4d}  mean gamma {means[-1]:.4f}")

slope, se = loglog_slope(sizes, means)
print(f"log-log slope {slope:.3f} +/- {se:.3f}")
