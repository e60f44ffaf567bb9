"""Excess-risk metrics, empirical federated stability and optimization error."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import expit

from .algorithms import TrainingOutput, soft_sharing_objective, soft_sharing_oracle_quadratic
from .exceptions import InputError
from .instance import AER, IER, FederatedDataset, ProblemInstance, heterogeneity_R2
from .rng import stream

SCHEMA_VERSION = 1
DEFAULT_BUDGET = 10_000


@dataclass(frozen=True)
class RiskEstimate:
    value: float
    stderr: float = 0.0

    def __float__(self):
        return self.value


def excess_risk_estimate(instance: ProblemInstance, i: int, w, budget: int = DEFAULT_BUDGET,
                         seed: int = 0) -> RiskEstimate:
    """Excess population risk of ``w`` on client ``i`` with its standard error.

    Quadratic: exact ``1/2 ||w - theta_i||^2``.  Logistic: Monte Carlo over
    ``budget`` fresh features, with the label averaged out in closed form and
    the same features used for ``w`` and the client optimum.
    """
    w = np.asarray(w, dtype=float)
    if w.shape != (instance.loss.dim,):
        raise InputError(f"model has shape {w.shape}, expected ({instance.loss.dim},)")
    w_star = instance.optima[i]
    if instance.family == "quadratic":
        diff = w - w_star
        return RiskEstimate(0.5 * float(diff @ diff), 0.0)
    if budget < 1:
        raise InputError("Monte Carlo budget must be positive for the logistic family")
    x, _ = instance.loss.sample(w_star, budget, stream(seed, "eval", i))
    a, a_star = x @ w, x @ w_star
    q = expit(a_star)
    # E_y log(1 + exp(-y a)) with P(y = 1) = q
    risk = q * np.logaddexp(0.0, -a) + (1.0 - q) * np.logaddexp(0.0, a)
    base = q * np.logaddexp(0.0, -a_star) + (1.0 - q) * np.logaddexp(0.0, a_star)
    diff = risk - base
    stderr = float(diff.std(ddof=1) / math.sqrt(budget)) if budget > 1 else math.inf
    return RiskEstimate(float(diff.mean()), stderr)


def population_excess_risk(instance: ProblemInstance, i: int, w, budget: int = DEFAULT_BUDGET,
                           seed: int = 0) -> float:
    return excess_risk_estimate(instance, i, w, budget, seed).value


@dataclass
class RiskReport:
    per_client_ier: list
    aer: float
    aer_p: float
    method: str
    fresh_samples: int = 0
    stderr: float = 0.0
    per_client_stderr: list = field(default_factory=list)

    @property
    def ier_max(self) -> float:
        return max(self.per_client_ier)

    def to_json(self) -> str:
        return json.dumps({"schema": "RiskReport", "version": SCHEMA_VERSION, **asdict(self)})

    @classmethod
    def from_json(cls, text: str) -> "RiskReport":
        obj = json.loads(text)
        if obj.pop("schema", None) != "RiskReport" or obj.pop("version", None) != SCHEMA_VERSION:
            raise InputError("not a RiskReport of a supported version")
        return cls(**obj)


def risk_report(instance: ProblemInstance, output, n_list, p=None, budget: int = DEFAULT_BUDGET,
                seed: int = 0) -> RiskReport:
    """IER of every client, the AER (weights ``n_i/N``) and the ``p``-AER."""
    models = output.local_models if isinstance(output, TrainingOutput) else np.asarray(output, dtype=float)
    m = instance.m
    if models.shape[0] != m:
        raise InputError(f"expected {m} local models, got {models.shape[0]}")
    n = np.asarray(n_list, dtype=float)
    p = instance.weights if p is None else np.asarray(p, dtype=float)
    est = [excess_risk_estimate(instance, i, models[i], budget, seed) for i in range(m)]
    ier = np.array([e.value for e in est])
    se = np.array([e.stderr for e in est])
    q = n / n.sum()
    exact = instance.family == "quadratic"
    return RiskReport(
        per_client_ier=ier.tolist(),
        aer=float(q @ ier),
        aer_p=float(p @ ier),
        method="exact" if exact else "montecarlo",
        fresh_samples=0 if exact else int(budget),
        stderr=float(math.sqrt(q ** 2 @ se ** 2)),
        per_client_stderr=se.tolist(),
    )


def heterogeneity_report(instance: ProblemInstance) -> dict:
    return {"R2_AER": instance.R2(AER), "R2_IER": instance.R2(IER)}


# ---------------------------------------------------------------------------
# Stability
# ---------------------------------------------------------------------------

Trainer = Callable[[FederatedDataset], object]


def _local_models(result) -> np.ndarray:
    return result.local_models if isinstance(result, TrainingOutput) else np.asarray(result, dtype=float)


def _point_losses(loss, w, x, y) -> np.ndarray:
    return loss.values(np.asarray(w, dtype=float), x, y)


def federated_stability_estimate(trainer: Trainer, instance: ProblemInstance, data: FederatedDataset, i: int,
                                 trials: int, probe_count: int, seed: int = 0) -> float:
    """Empirical ``gamma_i``: a lower bound on the federated uniform stability.

    Each trial replaces a uniformly chosen record of client ``i`` by a fresh
    draw from its distribution, retrains, and measures the largest change of
    client ``i``'s model loss over the probes (``probe_count`` fresh points,
    the client's own records and the replacement point).  Trials are drawn
    sequentially, so the first ``k`` trials of a ``2k``-trial run are the
    ``k``-trial run.  ``trainer`` must be deterministic.
    """
    S = data.clients[i]
    if S.n < 1:
        raise InputError("client has no records")
    if trials < 0 or probe_count < 0:
        raise InputError("trials and probe_count must be nonnegative")
    loss = instance.loss
    w = _local_models(trainer(data))[i]
    px, py = loss.sample(instance.optima[i], probe_count, stream(seed, "probe", i))
    px = np.concatenate([px, S.x])
    py = None if S.y is None else np.concatenate([py, S.y])
    base = _point_losses(loss, w, px, py)
    rng = stream(seed, "stability", i)
    gamma = 0.0
    for _ in range(trials):
        j = int(rng.integers(S.n))
        zx, zy = loss.sample(instance.optima[i], 1, rng)
        swapped = data.with_client(i, S.replace(j, zx[0], None if zy is None else zy[0]))
        w2 = _local_models(trainer(swapped))[i]
        delta = np.abs(_point_losses(loss, w2, px, py) - base)
        at_z = abs(_point_losses(loss, w2, zx, zy)[0] - _point_losses(loss, w, zx, zy)[0])
        gamma = max(gamma, float(delta.max(initial=0.0)), at_z)
    return gamma


@dataclass
class StabilityReport:
    per_client_gamma: list
    trials: int
    probe_points: int
    retrain_mode: str

    def to_json(self) -> str:
        return json.dumps({"schema": "StabilityReport", "version": SCHEMA_VERSION, **asdict(self)})

    @classmethod
    def from_json(cls, text: str) -> "StabilityReport":
        obj = json.loads(text)
        if obj.pop("schema", None) != "StabilityReport" or obj.pop("version", None) != SCHEMA_VERSION:
            raise InputError("not a StabilityReport of a supported version")
        return cls(**obj)


def stability_report(trainer: Trainer, instance: ProblemInstance, data: FederatedDataset, trials: int,
                     probe_count: int, seed: int = 0, retrain_mode: str = "exact",
                     clients: Optional[Sequence[int]] = None) -> StabilityReport:
    if retrain_mode not in ("exact", "sgd"):
        raise InputError("retrain_mode must be 'exact' or 'sgd'")
    clients = range(data.m) if clients is None else clients
    gammas = [federated_stability_estimate(trainer, instance, data, i, trials, probe_count, seed) for i in clients]
    return StabilityReport(gammas, int(trials), int(probe_count), retrain_mode)


# ---------------------------------------------------------------------------
# Optimization error
# ---------------------------------------------------------------------------

def optimization_error(loss, data: FederatedDataset, output: TrainingOutput, lam: float, p=None,
                       oracle=None) -> float:
    """Gap of the soft-sharing objective between ``output`` and its exact minimizer.

    ``oracle`` is a ``(w_glob, locals)`` minimizer; for the quadratic family
    it defaults to the closed form.  Rounding can make the gap slightly
    negative at the optimum, so it is clipped at zero.
    """
    if output.global_model is None:
        raise InputError("optimization error needs a global model")
    if oracle is None:
        if loss.kind != "quadratic":
            raise InputError("a reference minimizer is required outside the quadratic family")
        oracle = soft_sharing_oracle_quadratic(data, lam, p)
    og, ol = oracle
    gap = (soft_sharing_objective(loss, data, output.global_model, output.local_models, lam, p)
           - soft_sharing_objective(loss, data, og, ol, lam, p))
    return max(gap, 0.0)
