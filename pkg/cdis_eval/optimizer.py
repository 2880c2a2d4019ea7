"""
Bounded Nelder-Mead simplex minimizer.

Every candidate point is clipped coordinate-wise into the box before it is
evaluated, so the objective never sees an out-of-bounds point.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from pydantic import Field, model_validator

from cdis_volume.config import ConfigModel
from cdis_volume.errors import ObjectiveFaultError, ValidationError

logger = logging.getLogger(__name__)

TERMINATION_REASONS = ("x_tol", "f_tol", "max_iter")


class NmConfig(ConfigModel):
    alpha: float = Field(default=1.0, gt=0)
    gamma: float = Field(default=2.0, gt=1)
    beta: float = Field(default=0.5, gt=0, lt=1)
    sigma: float = Field(default=0.5, gt=0, lt=1)
    x_tol: float = Field(default=1e-4, gt=0)
    f_tol: float = Field(default=1e-4, gt=0)
    max_iter: int = Field(default=500, ge=1)
    init_step_rel: float = Field(default=0.05, gt=0)
    init_step_abs: float = Field(default=0.00025, gt=0)


@dataclass(frozen=True)
class Bounds:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=np.float64))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=np.float64))
        if lo.shape != hi.shape:
            raise ValidationError(f"Bounds lo and hi differ in shape ({lo.shape} vs {hi.shape})")
        if not np.all(lo < hi):
            raise ValidationError(f"Bounds need lo < hi in every dimension, got lo={lo.tolist()} hi={hi.tolist()}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def uniform(cls, lo: float, hi: float, dim: int) -> "Bounds":
        return cls(np.full(dim, float(lo)), np.full(dim, float(hi)))

    def for_dim(self, dim: int) -> "Bounds":
        """Broadcasts scalar bounds to `dim` coordinates."""
        if self.lo.size == dim:
            return self
        if self.lo.size == 1:
            return Bounds.uniform(self.lo[0], self.hi[0], dim)
        raise ValidationError(f"Bounds have {self.lo.size} dimensions, point has {dim}")

    def clip(self, x: np.ndarray) -> np.ndarray:
        return np.minimum(np.maximum(x, self.lo), self.hi)

    def contains(self, x: np.ndarray) -> bool:
        return bool(np.all(x >= self.lo) and np.all(x <= self.hi))


@dataclass(frozen=True)
class NmRecord:
    iteration: int
    best_f: float
    diameter: float
    n_evals: int


@dataclass
class NmTrace:
    records: list[NmRecord] = field(default_factory=list)
    termination: str = ""

    def to_csv_rows(self) -> list[list]:
        rows = [["iteration", "best_f", "diameter", "n_evals"]]
        rows.extend([r.iteration, repr(r.best_f), repr(r.diameter), r.n_evals] for r in self.records)
        return rows


class _BoundedObjective:
    """Clips, counts and checks evaluations, and remembers the best point seen."""

    def __init__(self, objective: Callable[[np.ndarray], float], bounds: Bounds):
        self.objective = objective
        self.bounds = bounds
        self.n_evals = 0
        self.best_x = None
        self.best_f = math.inf

    def __call__(self, x: np.ndarray) -> tuple[np.ndarray, float]:
        x = self.bounds.clip(x)
        value = self.objective(x.copy())
        self.n_evals += 1
        try:
            value = float(value)
        except (TypeError, ValueError):
            raise ObjectiveFaultError(f"Objective returned a non-numeric value {value!r} at {x.tolist()}")
        if not math.isfinite(value):
            raise ObjectiveFaultError(f"Objective returned {value} at {x.tolist()}")
        if value < self.best_f:
            self.best_f = value
            self.best_x = x.copy()
        return x, value


def _initial_simplex(x0: np.ndarray, bounds: Bounds, config: NmConfig) -> np.ndarray:
    dim = x0.size
    simplex = np.empty((dim + 1, dim))
    simplex[0] = x0
    for k in range(dim):
        step = config.init_step_rel * x0[k] if x0[k] != 0 else config.init_step_abs
        vertex = x0.copy()
        vertex[k] = x0[k] + step
        vertex = bounds.clip(vertex)
        if vertex[k] == x0[k]:
            # x0 sits on the bound the step points at; step inward instead
            vertex[k] = x0[k] - step
            vertex = bounds.clip(vertex)
        simplex[k + 1] = vertex
    return simplex


def _diameter(simplex: np.ndarray) -> float:
    return float(np.max(np.abs(simplex[1:] - simplex[0])))


def nelder_mead(
    objective: Callable[[np.ndarray], float],
    x0,
    bounds: Bounds,
    config: NmConfig | None = None,
) -> tuple[np.ndarray, float, NmTrace]:
    """
    Minimizes `objective` over the box `bounds`, starting from `x0`.

    The loop reflects, expands, contracts (outside or inside) and shrinks the
    simplex. It stops when the simplex diameter (largest coordinate distance
    from the best vertex) drops below x_tol, when the spread between best and
    worst objective values drops below f_tol, or after max_iter iterations.

    Returns:
        (x_best, f_best, trace), where x_best is the best point ever
        evaluated. The trace holds one record per iteration plus the initial
        simplex as iteration 0.

    Raises:
        ValidationError: x0 is empty or outside the bounds.
        ObjectiveFaultError: the objective returned a non-finite value.
    """
    config = config or NmConfig()
    x0 = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    if x0.ndim != 1 or x0.size == 0:
        raise ValidationError(f"x0 must be a non-empty point, got shape {x0.shape}")
    bounds = bounds.for_dim(x0.size)
    if not bounds.contains(x0):
        raise ValidationError(
            f"x0 {x0.tolist()} lies outside the bounds lo={bounds.lo.tolist()} hi={bounds.hi.tolist()}"
        )

    evaluate = _BoundedObjective(objective, bounds)
    simplex = _initial_simplex(x0, bounds, config)
    if _diameter(simplex) < config.x_tol:
        logger.warning(
            "Initial simplex diameter %.3g is already below x_tol %.3g; the search will stop at x0. "
            "Scale the problem or lower x_tol.",
            _diameter(simplex),
            config.x_tol,
        )
    values = np.empty(simplex.shape[0])
    for k in range(simplex.shape[0]):
        simplex[k], values[k] = evaluate(simplex[k])

    order = np.argsort(values, kind="stable")
    simplex, values = simplex[order], values[order]

    trace = NmTrace()
    trace.records.append(NmRecord(0, evaluate.best_f, _diameter(simplex), evaluate.n_evals))
    alpha, gamma, beta, sigma = config.alpha, config.gamma, config.beta, config.sigma

    iteration = 0
    while True:
        if _diameter(simplex) < config.x_tol:
            trace.termination = "x_tol"
            break
        if values[-1] - values[0] < config.f_tol:
            trace.termination = "f_tol"
            break
        if iteration >= config.max_iter:
            trace.termination = "max_iter"
            break
        iteration += 1

        centroid = simplex[:-1].mean(axis=0)
        direction = centroid - simplex[-1]
        shrink = False

        x_r, f_r = evaluate(centroid + alpha * direction)
        if f_r < values[0]:
            x_e, f_e = evaluate(centroid + alpha * gamma * direction)
            if f_e < f_r:
                simplex[-1], values[-1] = x_e, f_e
            else:
                simplex[-1], values[-1] = x_r, f_r
        elif f_r < values[-2]:
            simplex[-1], values[-1] = x_r, f_r
        elif f_r < values[-1]:
            x_c, f_c = evaluate(centroid + alpha * beta * direction)
            if f_c <= f_r:
                simplex[-1], values[-1] = x_c, f_c
            else:
                shrink = True
        else:
            x_cc, f_cc = evaluate(centroid - beta * direction)
            if f_cc < values[-1]:
                simplex[-1], values[-1] = x_cc, f_cc
            else:
                shrink = True

        if shrink:
            for k in range(1, simplex.shape[0]):
                simplex[k], values[k] = evaluate(simplex[0] + sigma * (simplex[k] - simplex[0]))

        order = np.argsort(values, kind="stable")
        simplex, values = simplex[order], values[order]

        record = NmRecord(iteration, evaluate.best_f, _diameter(simplex), evaluate.n_evals)
        trace.records.append(record)
        logger.debug(
            "Nelder-Mead iteration %d: best_f=%.6g diameter=%.3g evals=%d",
            record.iteration, record.best_f, record.diameter, record.n_evals,
        )

    logger.info(
        "Nelder-Mead stopped by %s after %d iterations (%d evaluations), best_f=%.6g",
        trace.termination, iteration, evaluate.n_evals, evaluate.best_f,
    )
    return evaluate.best_x, evaluate.best_f, trace
