"""Optimization primitives: ball projection, minibatch sampling, step-size
schedules, projected SGD and proximal-point solvers."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .exceptions import InputError


@dataclass(frozen=True)
class ProjectionDomain:
    """Euclidean ball ``{w : ||w - center|| <= radius}``."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        center = np.asarray(self.center, dtype=float).reshape(-1)
        object.__setattr__(self, "center", center)
        if not (np.isfinite(self.radius) and self.radius > 0):
            raise InputError(f"domain radius must be positive and finite, got {self.radius}")
        if not np.all(np.isfinite(center)):
            raise InputError("domain center must be finite")

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    @property
    def diameter(self) -> float:
        return 2.0 * self.radius

    def contains(self, w, tol: float = 1e-12) -> bool:
        diff = np.asarray(w, dtype=float) - self.center
        return math.sqrt(float(diff @ diff)) <= self.radius * (1.0 + tol)

    def project(self, w: np.ndarray) -> np.ndarray:
        diff = w - self.center
        nrm = math.sqrt(float(diff @ diff))
        if nrm <= self.radius:
            return w
        return self.center + diff * (self.radius / nrm)

    @classmethod
    def ball(cls, dim: int, radius: float, center=None) -> "ProjectionDomain":
        if center is None:
            center = np.zeros(dim)
        return cls(np.asarray(center, dtype=float), float(radius))


def project(domain: ProjectionDomain, w) -> np.ndarray:
    """Euclidean projection of ``w`` onto ``domain``."""
    w = np.asarray(w, dtype=float)
    if w.shape != domain.center.shape:
        raise InputError(f"dimension mismatch: w has shape {w.shape}, domain is {domain.dim}-dimensional")
    return domain.project(w)


# ---------------------------------------------------------------------------
# Minibatches
# ---------------------------------------------------------------------------

def minibatch_sample(n: int, B: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform ``B``-subset of ``range(n)`` without replacement, sorted.

    ``B == n`` returns every index and consumes no randomness.
    """
    _check_batch(n, B)
    if B == n:
        return np.arange(n)
    u = rng.random(n)
    return np.sort(np.argpartition(u, B - 1)[:B])


def minibatch_indices(n: int, B: int, K: int, rng: np.random.Generator) -> np.ndarray:
    """``K`` independent minibatches as a ``(K, B)`` array.

    Row ``k`` equals what the ``k``-th of ``K`` successive
    :func:`minibatch_sample` calls on the same generator would return.
    """
    _check_batch(n, B)
    if B == n:
        return np.broadcast_to(np.arange(n), (K, n))
    u = rng.random((K, n))
    return np.sort(np.argpartition(u, B - 1, axis=1)[:, :B], axis=1)


def _check_batch(n: int, B: int) -> None:
    if n < 1:
        raise InputError("cannot sample from an empty dataset")
    if not 1 <= B <= n:
        raise InputError(f"batch size must satisfy 1 <= B <= n, got B={B}, n={n}")


def minibatch_second_moment(x, B: int) -> float:
    """Closed form of ``E||mean of a random B-subset of x||^2``.

    ``x`` is an ``(n, d)`` array (or length-n vector of scalars).  For
    ``n == 1`` the finite-population correction vanishes.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    _check_batch(n, B)
    xbar = x.mean(axis=0)
    spread = float(np.sum((x - xbar) ** 2))
    corr = 0.0 if n == 1 else (n / B - 1.0) / (n * (n - 1))
    return corr * spread + float(xbar @ xbar)


# ---------------------------------------------------------------------------
# Step-size schedules
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InnerProx:
    """Local step ``1 / ((mu + lam)(k + 1))`` for the regularized inner problem."""

    mu: float
    lam: float

    def __post_init__(self):
        if self.mu + self.lam <= 0 or self.lam < 0:
            raise InputError("InnerProx needs lam >= 0 and mu + lam > 0")

    def value(self, t: int, k: int) -> float:
        return 1.0 / ((self.mu + self.lam) * (k + 1))

    def steps(self, K: int, start: int = 0) -> np.ndarray:
        return 1.0 / ((self.mu + self.lam) * np.arange(start + 1, start + K + 1))


@dataclass(frozen=True)
class Outer:
    """Server step ``2(mu + lam) / (lam * mu * (t + 1))``."""

    mu: float
    lam: float

    def __post_init__(self):
        if self.mu <= 0 or self.lam <= 0:
            raise InputError("Outer schedule needs mu > 0 and lam > 0")

    def value(self, t: int, k: int = 0) -> float:
        return 2.0 * (self.mu + self.lam) / (self.lam * self.mu * (t + 1))


@dataclass(frozen=True)
class PlainSC:
    """Strongly convex SGD step ``1 / (mu (k + 1))``."""

    mu: float

    def __post_init__(self):
        if self.mu <= 0:
            raise InputError("PlainSC needs mu > 0")

    def value(self, t: int, k: int) -> float:
        return 1.0 / (self.mu * (k + 1))

    def steps(self, K: int, start: int = 0) -> np.ndarray:
        return 1.0 / (self.mu * np.arange(start + 1, start + K + 1))


StepSchedule = Union[InnerProx, Outer, PlainSC]


def schedule_value(s: StepSchedule, t: int, k: int = 0) -> float:
    if t < 0 or k < 0:
        raise InputError("schedule counters must be nonnegative")
    return s.value(t, k)


# ---------------------------------------------------------------------------
# Projected SGD
# ---------------------------------------------------------------------------

_CHUNK = 4096


def _run_sgd(loss, S, domain, w0, schedule, K, B, rng, offset=0, lam=0.0, anchor=None):
    """``K`` projected SGD steps with step sizes ``schedule.value(0, offset + k)``.

    Minibatches are drawn in chunks; the stream is consumed exactly as by
    :func:`minibatch_indices` with ``K`` rows.  Returns ``(w, stop)`` where
    ``stop`` is the index of the full-batch step found to be a no-op (the run
    ends there) or ``None`` when all ``K`` steps were taken.
    """
    X, y = S.x, S.y
    n = X.shape[0]
    if B is None:
        B = n
    w = np.array(w0, dtype=float)
    if w.shape != domain.center.shape or X.shape[1] != w.shape[0]:
        raise InputError("dimension mismatch between model, data and domain")
    full = B == n
    k = 0
    while k < K:
        size = min(_CHUNK, K - k)
        batches = None if full else minibatch_indices(n, B, size, rng)
        for j in range(size):
            if full:
                g = loss.mean_grad(w, X, y)
            else:
                idx = batches[j]
                g = loss.mean_grad(w, X[idx], None if y is None else y[idx])
            if lam:
                g = g + lam * (w - anchor)
            x = w - schedule.value(0, offset + k + j) * g
            w_new = domain.project(x)
            # Full-batch gradients are deterministic and every schedule is
            # nonincreasing, so once a step leaves w bit-identical (before
            # and after projection) all later steps do too.
            if full and np.array_equal(x, w) and np.array_equal(w_new, w):
                return w, k + j
            w = w_new
        k += size
    return w, None


def sgd_erm(loss, S, domain: ProjectionDomain, schedule: StepSchedule, K: int,
            B: Optional[int], rng: np.random.Generator, w0=None, offset: int = 0) -> np.ndarray:
    """Run ``K`` projected minibatch SGD steps on the empirical risk of ``S``.

    ``offset`` shifts the step counter, so that ``K`` steps starting at
    ``offset`` use the schedule values ``offset, ..., offset + K - 1``.
    The last iterate is returned.
    """
    if K < 1:
        raise InputError("sgd_erm needs K >= 1")
    if w0 is None:
        w0 = domain.center
    return _run_sgd(loss, S, domain, w0, schedule, K, B, rng, offset=offset)[0]


def prox_local(loss, S, domain: ProjectionDomain, g, lam: float, K: int,
               B: Optional[int], rng: np.random.Generator, w0=None,
               schedule: Optional[StepSchedule] = None) -> np.ndarray:
    """Approximate ``argmin_w L(w, S) + lam/2 ||g - w||^2`` over the domain.

    Runs ``K`` projected SGD steps on the regularized objective, with the
    ``1/((mu + lam)(k + 1))`` schedule unless another one is given.
    """
    if not lam > 0:
        raise InputError("prox_local needs lam > 0; use sgd_erm for the unregularized problem")
    if K < 1:
        raise InputError("prox_local needs K >= 1")
    if schedule is None:
        schedule = InnerProx(loss.constants.mu, lam)
    if w0 is None:
        w0 = domain.center
    g = np.asarray(g, dtype=float)
    return _run_sgd(loss, S, domain, w0, schedule, K, B, rng, lam=lam, anchor=g)[0]


def prox_quadratic_closed_form(S, g, lam: float, domain: ProjectionDomain) -> np.ndarray:
    """Exact prox for the loss ``1/2 ||w - z||^2``: ``P((zbar + lam g) / (1 + lam))``.

    ``lam = 0`` gives the projected sample mean (the ERM solution).
    """
    if lam < 0:
        raise InputError("lam must be nonnegative")
    zbar = S.x.mean(axis=0)
    g = np.asarray(g, dtype=float)
    return domain.project((zbar + lam * g) / (1.0 + lam))


def moreau_grad(g, lam: float, prox_value) -> np.ndarray:
    """Gradient of the Moreau envelope at ``g``: ``lam (g - prox(g))``."""
    return lam * (np.asarray(g, dtype=float) - np.asarray(prox_value, dtype=float))


def moreau_grad_norm_bound(constants, lam: float) -> float:
    """``sqrt(min(beta^2 D^2, 2 lam ||l||_inf, lam^2 D^2))``."""
    return math.sqrt(_envelope_scale(constants, lam))


def _envelope_scale(c, lam: float) -> float:
    return min(c.beta ** 2 * c.D ** 2, 2.0 * lam * c.loss_sup, lam ** 2 * c.D ** 2)


def inner_loop_bound(constants, k: int) -> float:
    """Mean-square inner-loop error bound ``8 beta^2 D^2 / (mu^2 (k + 1))``."""
    c = constants
    return 8.0 * c.beta ** 2 * c.D ** 2 / (c.mu ** 2 * (k + 1))
