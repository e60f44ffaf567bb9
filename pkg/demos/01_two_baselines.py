"""Two baselines on either side of the phase transition.

A quadratic problem with ten clients is generated at a low and a high
heterogeneity level.  FedAvg wins when the clients agree, pure local
training wins when they do not, and the dichotomous rule picks the winner
from the planted R^2 alone.
"""

import numpy as np

from fedalt.algorithms import dichotomous_strategy, dichotomy_threshold, fed_avg, pure_local_training
from fedalt.evaluation import risk_report
from fedalt.harness.config import AlgorithmSpec, algorithm_config
from fedalt.instance import generate_quadratic_instance

m, n, d = 10, 50, 3
N = m * n
spec = AlgorithmSpec("fedavg", rounds=10, local_epochs=1)

for level in (0.01, 100.0):
    R2 = level * m / N
    aer = {"fedavg": [], "plt": [], "dichotomous": []}
    for seed in range(10):
        inst, data = generate_quadratic_instance(m, n, d, target_R2=R2, rho=1.2, seed=seed)
        cfg = algorithm_config(spec, data.n_list)
        outs = {"fedavg": fed_avg(inst.loss, data, cfg, seed),
                "plt": pure_local_training(inst.loss, data, cfg, seed),
                "dichotomous": dichotomous_strategy(inst.loss, data, R2, cfg, cfg, seed)}
        for name, out in outs.items():
            aer[name].append(risk_report(inst, out, data.n_list).aer)
    print(f"R2 = {level:g} m/N")
    for name, vals in aer.items():
        print(f"  {name:12s} mean AER {np.mean(vals):.5f}")

print(f"dichotomy threshold for this problem: {dichotomy_threshold(inst.constants, N, m):.4f}")
