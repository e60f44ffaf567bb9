"""Experiment configuration.

Configs are JSON objects (the README documents every key).  Top-level keys:

``experiment_id`` (str), ``kind`` (``phase_transition`` | ``scaling`` |
``convergence`` | ``stability``), ``seeds`` (list of ints, or
``{"start": a, "count": k}``), ``budget`` (Monte Carlo samples per client),
``instance`` (dict), ``algorithms`` (list of dicts), and the kind-specific
sections ``scaling``, ``convergence`` and ``stability``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from ..algorithms import AlgorithmConfig
from ..exceptions import ConfigError

KINDS = ("phase_transition", "scaling", "convergence", "stability")
ALGORITHMS = ("fedavg", "plt", "sfa", "dichotomous", "selector")
FAMILIES = ("quadratic", "logistic")


@dataclass
class InstanceSpec:
    family: str = "quadratic"
    m: int = 10
    n: Optional[int] = 50
    n_list: Optional[list] = None
    d: int = 3
    rho: float = 1.0
    c_X: float = 1.0
    feature_dist: str = "uniform"
    mode: str = "AER"
    R2_grid: list = field(default_factory=lambda: [0.0])
    # "m/N": grid values are multiples of m/N; "absolute": used as given
    R2_scale: str = "m/N"
    domain_radius: Optional[float] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}")
        if self.mode not in ("AER", "IER"):
            raise ConfigError(f"unknown heterogeneity mode {self.mode!r}")
        if self.R2_scale not in ("m/N", "absolute"):
            raise ConfigError("R2_scale must be 'm/N' or 'absolute'")
        if not self.R2_grid:
            raise ConfigError("R2_grid must be nonempty")
        if any(r < 0 for r in self.R2_grid):
            raise ConfigError("R2_grid values must be nonnegative")
        if self.m < 1 or self.d < 1:
            raise ConfigError("m and d must be positive")
        if self.n_list is None:
            if self.n is None or self.n < 1:
                raise ConfigError("give a positive n or an n_list")
            self.n_list = [int(self.n)] * self.m
        if len(self.n_list) != self.m or min(self.n_list) < 1:
            raise ConfigError("n_list must hold m positive sizes")

    @property
    def N(self) -> int:
        return int(sum(self.n_list))

    def R2_values(self, n_list=None, m=None) -> list:
        n_list = self.n_list if n_list is None else n_list
        m = self.m if m is None else m
        if self.R2_scale == "absolute":
            return [float(r) for r in self.R2_grid]
        return [float(r) * m / sum(n_list) for r in self.R2_grid]


@dataclass
class AlgorithmSpec:
    """One algorithm of an experiment.

    ``name`` is one of fedavg, plt, sfa, dichotomous, selector.  ``lam`` may
    be ``"auto"`` (sfa: chosen by the lambda rule from the planted R2);
    ``rounds`` may be ``"required"`` (sfa: use the required round counts).
    ``local_epochs`` overrides ``local_steps`` with
    ``ceil(local_epochs * n_max / local_batch)`` steps per round.
    """

    name: str
    label: Optional[str] = None
    lam: object = 0.0
    rounds: object = 10
    local_steps: int = 5
    local_epochs: Optional[float] = None
    final_steps: int = 100
    client_batch: Optional[int] = None
    local_batch: Optional[int] = 1
    exact: bool = False
    aggregation_step: float = 1.0
    C1: float = 1.0
    C2: float = 1.0
    C3: float = 1.0
    holdout_fraction: float = 0.5

    def __post_init__(self):
        if self.name not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.name!r}")
        if self.label is None:
            self.label = self.name + ("-exact" if self.exact else "")
        if self.lam != "auto" and not (isinstance(self.lam, (int, float)) and self.lam >= 0):
            raise ConfigError("lam must be a nonnegative number or 'auto'")
        if self.rounds != "required" and not (isinstance(self.rounds, int) and self.rounds >= 0):
            raise ConfigError("rounds must be a nonnegative integer or 'required'")


@dataclass
class ExperimentConfig:
    experiment_id: str
    kind: str
    seeds: list
    instance: InstanceSpec
    algorithms: list
    budget: int = 10_000
    scaling: dict = field(default_factory=dict)
    convergence: dict = field(default_factory=dict)
    stability: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        if not self.seeds:
            raise ConfigError("seed list must be nonempty")
        if self.kind in ("phase_transition", "scaling") and not self.algorithms:
            raise ConfigError("at least one algorithm is required")
        if self.budget < 1:
            raise ConfigError("budget must be positive")


def _build(cls, obj, what):
    if not isinstance(obj, dict):
        raise ConfigError(f"{what} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(obj) - known
    if unknown:
        raise ConfigError(f"unknown {what} keys: {sorted(unknown)}")
    try:
        return cls(**obj)
    except TypeError as exc:
        raise ConfigError(f"bad {what}: {exc}") from exc


def _seeds(obj):
    if isinstance(obj, dict):
        return list(range(int(obj.get("start", 0)), int(obj.get("start", 0)) + int(obj["count"])))
    if isinstance(obj, list) and all(isinstance(s, int) and s >= 0 for s in obj):
        return list(obj)
    raise ConfigError("seeds must be a list of nonnegative integers or {start, count}")


def config_from_dict(obj: dict) -> ExperimentConfig:
    if not isinstance(obj, dict):
        raise ConfigError("config must be a JSON object")
    obj = dict(obj)
    try:
        obj["seeds"] = _seeds(obj.get("seeds", [0]))
        obj["instance"] = _build(InstanceSpec, obj.get("instance", {}), "instance")
        obj["algorithms"] = [_build(AlgorithmSpec, a, "algorithm") for a in obj.get("algorithms", [])]
    except KeyError as exc:
        raise ConfigError(f"missing key {exc}") from exc
    return _build(ExperimentConfig, obj, "experiment")


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return config_from_dict(obj)


def algorithm_config(spec: AlgorithmSpec, n_list, lam: float = 0.0, **extra) -> AlgorithmConfig:
    """Turn a spec into an :class:`AlgorithmConfig` for a concrete dataset."""
    K = spec.local_steps
    if spec.local_epochs is not None:
        b = max(n_list) if spec.local_batch is None else spec.local_batch
        K = max(1, -(-int(spec.local_epochs * max(n_list)) // b))
    rounds = 0 if spec.rounds == "required" else spec.rounds
    return AlgorithmConfig(lam=lam, rounds=rounds, local_steps=K, final_steps=spec.final_steps,
                           client_batch=spec.client_batch, local_batch=spec.local_batch, exact=spec.exact,
                           aggregation_step=spec.aggregation_step, C1=spec.C1, C2=spec.C2, C3=spec.C3, **extra)
