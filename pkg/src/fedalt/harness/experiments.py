"""Sweeps over heterogeneity and sample size, convergence diagnostics and
stability experiments.

Every task (grid point x seed) builds its own instance and data from the
seed, so tasks are independent and can run in a process pool; results are
always returned sorted by grid index, then seed, then algorithm order.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from ..algorithms import (AlgorithmConfig, config_from_requirements, dichotomous_strategy, fed_avg,
                          inner_rounds_for_outer_rate, optimization_error_bound, outer_loop_bound,
                          pure_local_training, required_rounds, select_lambda, soft_fed_avg,
                          soft_sharing_oracle_quadratic, test_error_selector)
from ..evaluation import federated_stability_estimate, optimization_error, risk_report
from ..exceptions import ConfigError
from ..instance import generate_logistic_instance, generate_quadratic_instance
from ..optim import inner_loop_bound, prox_local, prox_quadratic_closed_form
from ..rng import stream
from .config import AlgorithmSpec, ExperimentConfig, InstanceSpec, algorithm_config
from .results import ResultRow


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------

def make_instance(spec: InstanceSpec, R2: float, seed: int, n_list=None, m=None):
    m = spec.m if m is None else m
    n_list = spec.n_list if n_list is None else n_list
    if spec.family == "quadratic":
        return generate_quadratic_instance(m, n_list, spec.d, target_R2=R2, rho=spec.rho, mode=spec.mode,
                                           seed=seed, domain_radius=spec.domain_radius)
    return generate_logistic_instance(m, n_list, spec.d, c_X=spec.c_X, target_R2=R2, mode=spec.mode, seed=seed,
                                      domain_radius=spec.domain_radius, feature_dist=spec.feature_dist)


def run_algorithm(spec: AlgorithmSpec, inst, data, R2: float, seed: int, strict_rounds: bool = False,
                  mode: str = "AER"):
    """Train one algorithm; returns ``(output, lam, T, K_T)``."""
    n_list = list(data.n_list)
    if spec.name == "sfa":
        lam = spec.lam
        if lam == "auto":
            lam = select_lambda(R2, data.weights, n_list, inst.constants.mu, mode=mode,
                                D=inst.constants.D)
        if not lam > 0:
            raise ConfigError("sfa needs lam > 0")
        if spec.rounds == "required":
            req = required_rounds(lam, data.weights, n_list, spec.C1, spec.C2, spec.C3)
            base = algorithm_config(spec, n_list, lam)
            cfg = config_from_requirements(req, local_batch=base.local_batch, client_batch=base.client_batch,
                                           exact=spec.exact, C2=spec.C2, C3=spec.C3, strict_rounds=strict_rounds)
        else:
            cfg = algorithm_config(spec, n_list, lam, strict_rounds=strict_rounds)
        out = soft_fed_avg(inst.loss, data, cfg, seed)
        return out, float(lam), cfg.rounds, cfg.final_steps
    cfg = algorithm_config(spec, n_list)
    T = cfg.rounds
    if spec.name == "fedavg":
        out = fed_avg(inst.loss, data, cfg, seed)
    elif spec.name == "plt":
        out = pure_local_training(inst.loss, data, cfg, seed)
    elif spec.name == "dichotomous":
        out = dichotomous_strategy(inst.loss, data, R2, cfg, seed=seed)
    else:
        out = test_error_selector(inst.loss, data, spec.holdout_fraction, cfg, seed=seed)
    return out, 0.0, T, 0


def _row(config: ExperimentConfig, seed, inst, data, R2, spec, out, lam, T, K_T, wall_ms):
    rep = risk_report(inst, out, data.n_list, budget=config.budget, seed=seed)
    return ResultRow(config.experiment_id, int(seed), inst.family, inst.m, int(data.N), inst.loss.dim, float(R2),
                     config.instance.mode, spec.label, float(lam), int(T), int(K_T), rep.aer, rep.ier_max,
                     rep.stderr, wall_ms, rep.per_client_ier)


def _point_rows(config: ExperimentConfig, seed: int, R2: float, n_list, m, timing: bool, strict_rounds: bool):
    inst, data = make_instance(config.instance, R2, seed, n_list=n_list, m=m)
    rows = []
    for spec in config.algorithms:
        tic = time.perf_counter()
        out, lam, T, K_T = run_algorithm(spec, inst, data, R2, seed, strict_rounds,
                                           config.instance.mode)
        wall = 1e3 * (time.perf_counter() - tic) if timing else None
        rows.append(_row(config, seed, inst, data, R2, spec, out, lam, T, K_T, wall))
    return rows


def _task(args):
    return _point_rows(*args)


def _map(tasks, threads: int):
    if threads <= 1 or len(tasks) <= 1:
        return [_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_task, tasks, chunksize=max(1, len(tasks) // (4 * threads))))


def mean_by(rows, key):
    """Mean AER and its standard error grouped by ``key(row)`` and algorithm."""
    groups = {}
    for r in rows:
        groups.setdefault((key(r), r.algorithm), []).append(r.aer)
    out = {}
    for k, v in groups.items():
        v = np.asarray(v)
        se = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0
        out[k] = (float(v.mean()), se)
    return out


# ---------------------------------------------------------------------------
# phase transition
# ---------------------------------------------------------------------------

@dataclass
class Crossover:
    R2_cross: Optional[float]
    bracket: Optional[tuple]
    ratio: Optional[float]  # R2_cross / (m / N)


@dataclass
class SweepResult:
    rows: list
    grid: list
    means: dict
    crossover: Optional[Crossover] = None
    extra: dict = field(default_factory=dict)


def locate_crossover(grid, fa, plt, unit: float) -> Crossover:
    """First grid interval where mean FedAvg AER stops being below PLT's.

    The log-ratio ``log(fa/plt)`` is interpolated linearly in ``log R2``
    (linearly in ``R2`` when the left end is 0).
    """
    for k in range(len(grid) - 1):
        a0, a1 = fa[k] - plt[k], fa[k + 1] - plt[k + 1]
        if a0 < 0 <= a1:
            x0, x1 = grid[k], grid[k + 1]
            y0, y1 = math.log(fa[k] / plt[k]), math.log(fa[k + 1] / plt[k + 1])
            frac = y0 / (y0 - y1) if y1 != y0 else 1.0
            if x0 > 0:
                x = math.exp(math.log(x0) + frac * (math.log(x1) - math.log(x0)))
            else:
                x = x0 + frac * (x1 - x0)
            return Crossover(x, (x0, x1), x / unit)
    return Crossover(None, None, None)


def run_phase_transition_sweep(config: ExperimentConfig, threads: int = 1, timing: bool = True,
                               strict_rounds: bool = False) -> SweepResult:
    spec = config.instance
    grid = spec.R2_values()
    tasks = [(config, seed, R2, spec.n_list, spec.m, timing, strict_rounds) for R2 in grid for seed in config.seeds]
    rows = [r for chunk in _map(tasks, threads) for r in chunk]
    means = mean_by(rows, lambda r: r.R2_planted)
    labels = [a.label for a in config.algorithms]
    result = SweepResult(rows, grid, means)
    fa = next((a.label for a in config.algorithms if a.name == "fedavg"), None)
    pl = next((a.label for a in config.algorithms if a.name == "plt"), None)
    if fa and pl:
        result.crossover = locate_crossover(grid, [means[(g, fa)][0] for g in grid],
                                            [means[(g, pl)][0] for g in grid], spec.m / spec.N)
    result.extra["labels"] = labels
    return result


# ---------------------------------------------------------------------------
# scaling laws
# ---------------------------------------------------------------------------

@dataclass
class SlopeFit:
    algorithm: str
    x: list
    mean_aer: list
    slope: float
    stderr: float


def loglog_slope(x, y):
    """OLS slope of ``log y`` on ``log x`` with its standard error."""
    fit = stats.linregress(np.log(np.asarray(x, dtype=float)), np.log(np.asarray(y, dtype=float)))
    return float(fit.slope), float(fit.stderr)


def run_scaling_experiment(config: ExperimentConfig, axis: Optional[str] = None, threads: int = 1,
                           timing: bool = True, strict_rounds: bool = False) -> SweepResult:
    """Log-log slope of mean AER against ``N``, ``n_i`` or ``R2``.

    ``config.scaling``: ``axis``, ``grid`` (per-client sizes for N / n_i,
    heterogeneity levels for R2), ``fit`` (``all`` or ``upper_half``) and,
    for the size axes, ``R2`` (a multiple of ``m/N0`` with ``N0`` the
    smallest total size, or absolute when the instance uses ``absolute``).
    Along N and n_i the number of clients is fixed and every client gets
    the grid size, so the two axes differ only in the reported abscissa.
    """
    sc = config.scaling
    axis = axis or sc.get("axis")
    if axis not in ("N", "n_i", "R2"):
        raise ConfigError("scaling axis must be N, n_i or R2")
    grid = sc.get("grid", [])
    if len(grid) < 2:
        raise ConfigError("scaling grid needs at least two points")
    spec = config.instance
    m = spec.m
    tasks, xs = [], []
    if axis == "R2":
        for R2 in spec.R2_values(n_list=spec.n_list) if not grid else _scale_R2(spec, grid, spec.n_list):
            xs.append(R2)
            tasks += [(config, s, R2, spec.n_list, m, timing, strict_rounds) for s in config.seeds]
    else:
        N0 = m * min(grid)
        level = float(sc.get("R2", 0.0))
        R2 = level if spec.R2_scale == "absolute" else level * m / N0
        for n in grid:
            xs.append(m * n if axis == "N" else n)
            tasks += [(config, s, R2, [int(n)] * m, m, timing, strict_rounds) for s in config.seeds]
    chunks = _map(tasks, threads)
    rows = [r for c in chunks for r in c]
    per_point = len(config.seeds)
    means = {}
    fits = []
    for a in config.algorithms:
        ys = []
        for k in range(len(xs)):
            vals = [r.aer for c in chunks[k * per_point:(k + 1) * per_point] for r in c if r.algorithm == a.label]
            ys.append(float(np.mean(vals)))
            means[(xs[k], a.label)] = (ys[-1], float(np.std(vals, ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0)
        sel = range(len(xs)) if sc.get("fit", "all") == "all" else range(len(xs) // 2, len(xs))
        slope, se = loglog_slope([xs[k] for k in sel], [ys[k] for k in sel])
        fits.append(SlopeFit(a.label, list(xs), ys, slope, se))
    return SweepResult(rows, xs, means, extra={"axis": axis, "fits": fits})


def _scale_R2(spec, grid, n_list):
    if spec.R2_scale == "absolute":
        return [float(g) for g in grid]
    return [float(g) * spec.m / sum(n_list) for g in grid]


# ---------------------------------------------------------------------------
# convergence diagnostics
# ---------------------------------------------------------------------------

@dataclass
class DiagnosticRow:
    kind: str  # inner | outer | eopt
    index: int
    lam: float
    mean: float
    stderr: float
    bound: float

    @property
    def bound_satisfied(self) -> bool:
        return self.mean <= self.bound


DIAGNOSTIC_COLUMNS = ("kind", "index", "lambda", "mean", "stderr", "bound", "bound_satisfied")


def _mean_se(v):
    v = np.asarray(v, dtype=float)
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0


def _diagnostic_seed(config: ExperimentConfig, seed: int):
    spec = config.instance
    cv = config.convergence
    lam = float(cv.get("lam", 1.0))
    inst, data = make_instance(spec, spec.R2_values()[0], seed)
    c = inst.constants
    domain = inst.domain
    local_batch = cv.get("local_batch", 1)
    client_batch = cv.get("client_batch", 1)

    inner = {}
    S = data.clients[0]
    g = inst.optima[1 % inst.m]
    target = prox_quadratic_closed_form(S, g, lam, domain)
    for k in cv.get("inner_k", [8, 16, 32, 64, 128, 256, 512]):
        w = prox_local(inst.loss, S, domain, g, lam, int(k), local_batch, stream(seed, "local", 0, int(k)))
        inner[int(k)] = float(np.sum((w - target) ** 2))

    oracle = soft_sharing_oracle_quadratic(data, lam)
    K_rule = lambda tau: inner_rounds_for_outer_rate(tau, lam, c)  # noqa: E731
    t_grid = [int(t) for t in cv.get("outer_t", [4, 16, 64])]
    cfg = AlgorithmConfig(lam=lam, rounds=max(t_grid), local_steps=K_rule, final_steps=1,
                          client_batch=client_batch, local_batch=local_batch, record_trace=True)
    out = soft_fed_avg(inst.loss, data, cfg, seed, oracle=oracle)
    outer = {t: out.trace[t - 1].global_dist2 for t in t_grid}

    T, K_T = int(cv.get("T", 16)), int(cv.get("K_T", 64))
    cfg = AlgorithmConfig(lam=lam, rounds=T, local_steps=K_rule, final_steps=K_T, client_batch=client_batch,
                          local_batch=local_batch)
    out = soft_fed_avg(inst.loss, data, cfg, seed + 1)
    eopt = optimization_error(inst.loss, data, out, lam, oracle=oracle)
    bounds = {"outer": {t: outer_loop_bound(t, lam, data.weights, c) for t in t_grid},
              "eopt": optimization_error_bound(T, K_T, lam, data.weights, c),
              "inner": {k: inner_loop_bound(c, k) for k in inner}}
    return inner, outer, eopt, bounds


def _diag_task(args):
    return _diagnostic_seed(*args)


def run_convergence_diagnostics(config: ExperimentConfig, threads: int = 1) -> list:
    """Mean squared distances to the closed-form oracles next to their bounds.

    Bounds are evaluated per seed (they depend on the instance through ``D``
    and ``p``); the reported bound is the smallest over seeds, so a
    satisfied row holds for every instance in the batch.
    """
    if config.instance.family != "quadratic":
        raise ConfigError("convergence diagnostics need the quadratic family")
    lam = float(config.convergence.get("lam", 1.0))
    tasks = [(config, s) for s in config.seeds]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            res = list(pool.map(_diag_task, tasks))
    else:
        res = [_diag_task(t) for t in tasks]
    rows = []
    for k in res[0][0]:
        mean, se = _mean_se([r[0][k] for r in res])
        rows.append(DiagnosticRow("inner", k, lam, mean, se, min(r[3]["inner"][k] for r in res)))
    for t in res[0][1]:
        mean, se = _mean_se([r[1][t] for r in res])
        rows.append(DiagnosticRow("outer", t, lam, mean, se, min(r[3]["outer"][t] for r in res)))
    T = int(config.convergence.get("T", 16))
    mean, se = _mean_se([r[2] for r in res])
    rows.append(DiagnosticRow("eopt", T, lam, mean, se, min(r[3]["eopt"] for r in res)))
    return rows


# ---------------------------------------------------------------------------
# stability
# ---------------------------------------------------------------------------

@dataclass
class StabilityRow:
    n_i: int
    seed: int
    client: int
    trainer: str
    gamma: float


STABILITY_COLUMNS = ("n_i", "seed", "client", "trainer", "gamma")


class Trainer:
    """Picklable deterministic trainer returning local models."""

    def __init__(self, spec: AlgorithmSpec, loss, seed: int):
        self.spec, self.loss, self.seed = spec, loss, seed

    def __call__(self, data):
        cfg = algorithm_config(self.spec, list(data.n_list))
        if self.spec.name == "plt":
            return pure_local_training(self.loss, data, cfg, self.seed).local_models
        if self.spec.name == "fedavg":
            return fed_avg(self.loss, data, cfg, self.seed).local_models
        raise ConfigError("stability trainers are plt or fedavg")


def _stability_seed(config: ExperimentConfig, n: int, seed: int):
    st = config.stability
    spec = AlgorithmSpec(**st.get("trainer", {"name": "plt", "exact": True}))
    client = int(st.get("client", 0))
    n_list = [int(n)] * config.instance.m
    inst, data = make_instance(config.instance, config.instance.R2_values(n_list=n_list)[0], seed, n_list=n_list)
    gamma = federated_stability_estimate(Trainer(spec, inst.loss, seed), inst, data, client,
                                         int(st.get("trials", 20)), int(st.get("probe_count", 50)), seed)
    return StabilityRow(int(n), int(seed), client, spec.label, gamma)


def _stab_task(args):
    return _stability_seed(*args)


def run_stability_experiment(config: ExperimentConfig, threads: int = 1):
    """Empirical stability over a grid of client sizes and its log-log slope.

    Returns ``(rows, slope, stderr)``.
    """
    grid = config.stability.get("n_grid", [25, 50, 100, 200])
    if len(grid) < 2:
        raise ConfigError("stability n_grid needs at least two points")
    tasks = [(config, n, s) for n in grid for s in config.seeds]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_stab_task, tasks))
    else:
        rows = [_stab_task(t) for t in tasks]
    means = [float(np.mean([r.gamma for r in rows if r.n_i == n])) for n in grid]
    if min(means) > 0:
        slope, se = loglog_slope(grid, means)
    else:
        slope, se = float("nan"), float("nan")
    return rows, slope, se
