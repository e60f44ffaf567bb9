"""Loss models, federated datasets and problem-instance generators.

Two loss families are provided:

* :class:`LogisticLoss`: ``log(1 + exp(-y x.w))`` with labels drawn from
  the logistic link around a planted coefficient vector.
* :class:`QuadraticLoss`: ``1/2 ||w - z||^2`` with ``z`` uniform on a sphere
  of radius ``rho`` around the client's optimum.  Its minimizers, proximal
  maps and excess risks are all available in closed form, which makes it
  the oracle family for algorithm tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import expit

from .exceptions import InfeasibleInstanceError, InputError
from .optim import ProjectionDomain
from .rng import stream

AER = "AER"
IER = "IER"


@dataclass(frozen=True)
class Constants:
    """Regularity constants of a loss on a domain."""

    mu: float
    beta: float
    loss_sup: float
    sigma2: float
    D: float

    def __post_init__(self):
        if not (self.mu > 0 and self.beta > 0 and self.loss_sup > 0 and self.D > 0):
            raise InputError(f"invalid regularity constants {self}")
        if self.sigma2 < 0:
            raise InputError("sigma2 must be nonnegative")


def regularity_constants(d: int, c_X: float, D: float) -> Constants:
    """Constants of the logistic family with features bounded by ``c_X``.

    ``beta = sigma2 = c_X^2 d / 4``, ``loss_sup = c_X D sqrt(d)`` and
    ``mu = (exp(c_X D sqrt(d) / 2) + exp(-c_X D sqrt(d)))^-2``.  The last one
    is the curvature multiplier of the empirical second-moment matrix; the
    effective strong-convexity constant is ``mu`` times its smallest
    eigenvalue.
    """
    if d < 1 or not c_X > 0 or not D > 0:
        raise InputError("d, c_X and D must be positive")
    a = c_X * D * math.sqrt(d)
    beta = c_X ** 2 * d / 4.0
    mu0 = (math.exp(a / 2.0) + math.exp(-a)) ** -2
    return Constants(mu=mu0, beta=beta, loss_sup=a, sigma2=beta, D=D)


def quadratic_constants(rho: float, domain: ProjectionDomain, optima) -> Constants:
    """Constants of ``1/2 ||w - z||^2`` with ``||z - theta_i|| = rho``."""
    optima = np.atleast_2d(np.asarray(optima, dtype=float))
    reach = float(np.max(np.linalg.norm(optima - domain.center, axis=1)))
    loss_sup = 0.5 * (domain.radius + reach + rho) ** 2
    return Constants(mu=1.0, beta=1.0, loss_sup=loss_sup, sigma2=rho ** 2, D=domain.diameter)


# ---------------------------------------------------------------------------
# Loss models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LogisticLoss:
    c_X: float
    domain: ProjectionDomain
    constants: Constants
    feature_dist: str = "uniform"
    kind: str = field(default="logistic", init=False)

    @classmethod
    def build(cls, c_X: float, domain: ProjectionDomain, feature_dist: str = "uniform") -> "LogisticLoss":
        if feature_dist not in ("uniform", "rademacher"):
            raise InputError(f"unknown feature distribution {feature_dist!r}")
        consts = regularity_constants(domain.dim, c_X, domain.diameter)
        return cls(c_X=float(c_X), domain=domain, constants=consts, feature_dist=feature_dist)

    @property
    def dim(self) -> int:
        return self.domain.dim

    def values(self, w, x, y) -> np.ndarray:
        margins = y * (x @ w)
        return np.logaddexp(0.0, -margins)

    def mean_grad(self, w, x, y) -> np.ndarray:
        s = -y * expit(-y * (x @ w))
        return (s @ x) / x.shape[0]

    def hessian(self, w, x, y) -> np.ndarray:
        """Empirical Hessian ``(1/n) sum h(y x.w) x x^T``."""
        q = expit(y * (x @ w))
        h = q * (1.0 - q)
        return (x.T * h) @ x / x.shape[0]

    def sample(self, w_star, n: int, rng: np.random.Generator):
        d = self.dim
        if self.feature_dist == "uniform":
            x = rng.uniform(-self.c_X, self.c_X, size=(n, d))
        else:
            x = self.c_X * rng.choice(np.array([-1.0, 1.0]), size=(n, d))
        head = expit(x @ np.asarray(w_star, dtype=float))
        y = np.where(rng.random(n) < head, 1.0, -1.0)
        return x, y


@dataclass(frozen=True)
class QuadraticLoss:
    rho: float
    domain: ProjectionDomain
    constants: Constants
    kind: str = field(default="quadratic", init=False)

    @classmethod
    def build(cls, rho: float, domain: ProjectionDomain, optima) -> "QuadraticLoss":
        if rho < 0:
            raise InputError("rho must be nonnegative")
        return cls(rho=float(rho), domain=domain, constants=quadratic_constants(rho, domain, optima))

    @property
    def dim(self) -> int:
        return self.domain.dim

    def values(self, w, x, y=None) -> np.ndarray:
        diff = x - w
        return 0.5 * np.einsum("ij,ij->i", diff, diff)

    def mean_grad(self, w, x, y=None) -> np.ndarray:
        return w - x.sum(axis=0) / x.shape[0]

    def hessian(self, w, x, y=None) -> np.ndarray:
        return np.eye(self.dim)

    def sample(self, theta, n: int, rng: np.random.Generator):
        g = rng.standard_normal((n, self.dim))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        return np.asarray(theta, dtype=float) + self.rho * g, None


LossModel = Union[LogisticLoss, QuadraticLoss]


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClientDataset:
    """Local dataset ``S_i``: features ``x`` of shape ``(n, d)`` and, for
    labeled families, labels ``y`` in ``{-1, +1}``."""

    x: np.ndarray
    y: Optional[np.ndarray] = None
    client_id: int = 0

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        if x.shape[0] < 1:
            raise InputError("a client dataset needs at least one point")
        object.__setattr__(self, "x", x)
        if self.y is not None:
            y = np.asarray(self.y, dtype=float).reshape(-1)
            if y.shape[0] != x.shape[0]:
                raise InputError("labels and features disagree in length")
            if not np.all(np.abs(y) == 1.0):
                raise InputError("labels must be +1 or -1")
            object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def subset(self, idx) -> "ClientDataset":
        idx = np.asarray(idx)
        return ClientDataset(self.x[idx], None if self.y is None else self.y[idx], self.client_id)

    def replace(self, j: int, x_new, y_new=None) -> "ClientDataset":
        """Copy with record ``j`` replaced."""
        x = self.x.copy()
        x[j] = x_new
        y = None
        if self.y is not None:
            y = self.y.copy()
            y[j] = y_new
        return ClientDataset(x, y, self.client_id)


@dataclass(frozen=True)
class FederatedDataset:
    clients: tuple
    weights: np.ndarray

    def __post_init__(self):
        clients = tuple(self.clients)
        if not clients:
            raise InputError("a federated dataset needs at least one client")
        p = np.asarray(self.weights, dtype=float).reshape(-1)
        _check_weights(p, len(clients))
        object.__setattr__(self, "clients", clients)
        object.__setattr__(self, "weights", p)

    @classmethod
    def from_clients(cls, clients: Sequence[ClientDataset], weights=None) -> "FederatedDataset":
        if weights is None:
            n = np.array([c.n for c in clients], dtype=float)
            weights = n / n.sum()
        return cls(tuple(clients), np.asarray(weights, dtype=float))

    @property
    def m(self) -> int:
        return len(self.clients)

    @property
    def n_list(self) -> np.ndarray:
        return np.array([c.n for c in self.clients])

    @property
    def N(self) -> int:
        return int(self.n_list.sum())

    @property
    def dim(self) -> int:
        return self.clients[0].dim

    def with_client(self, i: int, S: ClientDataset) -> "FederatedDataset":
        clients = list(self.clients)
        clients[i] = S
        return FederatedDataset(tuple(clients), self.weights)


def _check_weights(p: np.ndarray, m: int) -> None:
    if p.shape != (m,):
        raise InputError(f"weight vector has shape {p.shape}, expected ({m},)")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise InputError("weights must be nonnegative and sum to one")


# ---------------------------------------------------------------------------
# Point-level operations
# ---------------------------------------------------------------------------

def _split_point(model, z):
    if model.kind == "logistic":
        x, y = z
        return np.atleast_2d(np.asarray(x, dtype=float)), np.atleast_1d(np.asarray(y, dtype=float))
    return np.atleast_2d(np.asarray(z, dtype=float)), None


def _check_dims(model, w, x):
    if w.shape != (model.dim,) or x.shape[1] != model.dim:
        raise InputError(f"dimension mismatch: model is {model.dim}-dimensional, got w{w.shape}, x{x.shape}")


def loss_value(model: LossModel, w, z) -> float:
    """Loss at a single point; ``z`` is ``(x, y)`` for logistic, a vector otherwise."""
    w = np.asarray(w, dtype=float)
    x, y = _split_point(model, z)
    _check_dims(model, w, x)
    return float(model.values(w, x, y)[0])


def loss_grad(model: LossModel, w, z) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    x, y = _split_point(model, z)
    _check_dims(model, w, x)
    return model.mean_grad(w, x, y)


def local_erm(model: LossModel, w, S: ClientDataset) -> float:
    """Empirical risk ``(1/n) sum_j loss(w, z_j)``."""
    w = np.asarray(w, dtype=float)
    _check_dims(model, w, S.x)
    return float(np.mean(model.values(w, S.x, S.y)))


def empirical_min_eigenvalue(S: ClientDataset) -> float:
    """Smallest eigenvalue of ``(1/n) sum_j x_j x_j^T``.

    Times ``mu`` of the logistic constants, this lower-bounds the smallest
    eigenvalue of the empirical Hessian anywhere in the domain.
    """
    return float(np.linalg.eigvalsh(S.x.T @ S.x / S.n)[0])


# ---------------------------------------------------------------------------
# Heterogeneity
# ---------------------------------------------------------------------------

def average_global_model(p, optima) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    optima = np.atleast_2d(np.asarray(optima, dtype=float))
    _check_weights(p, optima.shape[0])
    return p @ optima


def heterogeneity_R2(p, optima, mode: str = AER) -> float:
    """Weighted mean (``AER``) or max (``IER``) squared distance of the
    optima from their ``p``-weighted average."""
    optima = np.atleast_2d(np.asarray(optima, dtype=float))
    w_avg = average_global_model(p, optima)
    sq = np.sum((optima - w_avg) ** 2, axis=1)
    if mode == AER:
        return float(np.asarray(p, dtype=float) @ sq)
    if mode == IER:
        return float(sq.max())
    raise InputError(f"mode must be 'AER' or 'IER', got {mode!r}")


def _plant_optima(p, d, target_R2, mode, center, rng):
    m = p.shape[0]
    if target_R2 < 0:
        raise InputError("target_R2 must be nonnegative")
    if target_R2 == 0:
        return np.tile(center, (m, 1))
    for _ in range(64):
        u = rng.standard_normal((m, d))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        v = u - p @ u
        sq = np.sum(v ** 2, axis=1)
        scale2 = float(p @ sq) if mode == AER else float(sq.max())
        if scale2 > 1e-12:
            return center + v * math.sqrt(target_R2 / scale2)
    raise InfeasibleInstanceError(
        f"cannot plant heterogeneity R^2={target_R2} with m={m} and these weights")


def _resolve_domain(optima, center, target_R2, domain_radius, floor):
    reach = float(np.max(np.linalg.norm(optima - center, axis=1)))
    if domain_radius is None:
        domain_radius = reach + max(2.0 * math.sqrt(target_R2), floor)
    elif reach > domain_radius:
        raise InfeasibleInstanceError(
            f"planted optima reach {reach:.6g} from the center, beyond the domain radius {domain_radius}")
    return ProjectionDomain(np.asarray(center, dtype=float), float(domain_radius))


def _normalize_sizes(m, n_list):
    if np.isscalar(n_list):
        n_list = [int(n_list)] * m
    n_list = [int(n) for n in n_list]
    if len(n_list) != m:
        raise InputError(f"n_list has {len(n_list)} entries for m={m} clients")
    if m < 1 or min(n_list) < 1:
        raise InputError("need m >= 1 and every n_i >= 1")
    return n_list


def _weights(n_list, weights):
    if weights is None:
        n = np.asarray(n_list, dtype=float)
        return n / n.sum()
    return np.asarray(weights, dtype=float)


# ---------------------------------------------------------------------------
# Problem instances
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProblemInstance:
    """Loss model, planted client optima and importance weights.

    Client ``i`` draws from the family's distribution centered at
    ``optima[i]``, which is also its population risk minimizer.
    """

    loss: LossModel
    optima: np.ndarray
    weights: np.ndarray

    @property
    def m(self) -> int:
        return self.optima.shape[0]

    @property
    def domain(self) -> ProjectionDomain:
        return self.loss.domain

    @property
    def constants(self) -> Constants:
        return self.loss.constants

    @property
    def family(self) -> str:
        return self.loss.kind

    def sample_client(self, i: int, n: int, rng: np.random.Generator) -> ClientDataset:
        x, y = self.loss.sample(self.optima[i], n, rng)
        return ClientDataset(x, y, i)

    def sample_dataset(self, n_list, seed: int) -> FederatedDataset:
        n_list = _normalize_sizes(self.m, n_list)
        clients = [self.sample_client(i, n, stream(seed, "data", i)) for i, n in enumerate(n_list)]
        return FederatedDataset(tuple(clients), self.weights)

    def R2(self, mode: str = AER) -> float:
        return heterogeneity_R2(self.weights, self.optima, mode)


def generate_logistic_instance(m: int, n_list, d: int, c_X: float = 1.0, target_R2: float = 0.0,
                               mode: str = AER, seed: int = 0, *, center=None,
                               domain_radius: Optional[float] = None, feature_dist: str = "uniform",
                               weights=None):
    """Logistic-regression clients with planted heterogeneity ``target_R2``.

    Returns ``(instance, dataset)``.  The optima are
    ``center + s * (u_i - sum_j p_j u_j)`` for random unit vectors ``u_i``,
    with ``s`` chosen so that the requested heterogeneity measure is met
    exactly; their ``p``-weighted average is ``center``.
    """
    if d < 1:
        raise InputError("d must be positive")
    n_list = _normalize_sizes(m, n_list)
    p = _weights(n_list, weights)
    _check_weights(p, m)
    center = np.zeros(d) if center is None else np.asarray(center, dtype=float)
    optima = _plant_optima(p, d, float(target_R2), mode, center, stream(seed, "instance"))
    domain = _resolve_domain(optima, center, target_R2, domain_radius, floor=1.0)
    loss = LogisticLoss.build(c_X, domain, feature_dist)
    inst = ProblemInstance(loss, optima, p)
    return inst, inst.sample_dataset(n_list, seed)


def generate_quadratic_instance(m: int, n_list, d: int, target_R2: float = 0.0, rho: float = 1.0,
                                mode: str = AER, seed: int = 0, *, center=None,
                                domain_radius: Optional[float] = None, weights=None):
    """Quadratic clients: ``z ~ uniform sphere(theta_i, rho)``, loss ``1/2||w - z||^2``.

    The default domain radius leaves a margin of at least ``max(2R, rho, 1)``
    around the optima, so every sample mean is an interior point.
    """
    if d < 1:
        raise InputError("d must be positive")
    n_list = _normalize_sizes(m, n_list)
    p = _weights(n_list, weights)
    _check_weights(p, m)
    center = np.zeros(d) if center is None else np.asarray(center, dtype=float)
    optima = _plant_optima(p, d, float(target_R2), mode, center, stream(seed, "instance"))
    domain = _resolve_domain(optima, center, target_R2, domain_radius, floor=max(rho, 1.0))
    loss = QuadraticLoss.build(rho, domain, optima)
    inst = ProblemInstance(loss, optima, p)
    return inst, inst.sample_dataset(n_list, seed)


def generate_assouad_instance(m: int, n_list, d: int, delta_list, base: LossModel,
                              seed: int = 0) -> ProblemInstance:
    """Hard instance with ``w_i = delta_i * v_i`` and ``v_i`` uniform on ``{-1, +1}^d``.

    ``base`` fixes the family and the domain (which must contain every
    ``delta_i * v_i``).
    """
    n_list = _normalize_sizes(m, n_list)
    delta = np.asarray(delta_list, dtype=float).reshape(-1)
    if delta.shape != (m,) or np.any(delta < 0):
        raise InputError("delta_list must hold m nonnegative values")
    if base.dim != d:
        raise InputError("base loss dimension does not match d")
    rng = stream(seed, "instance")
    signs = rng.choice(np.array([-1.0, 1.0]), size=(m, d))
    optima = delta[:, None] * signs
    reach = np.linalg.norm(optima - base.domain.center, axis=1)
    if np.any(reach > base.domain.radius):
        raise InfeasibleInstanceError("delta_i * sqrt(d) exceeds the domain radius")
    loss = base
    if base.kind == "quadratic":
        loss = QuadraticLoss.build(base.rho, base.domain, optima)
    return ProblemInstance(loss, optima, _weights(n_list, None))
