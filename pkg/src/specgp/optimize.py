"""Deterministic hyperparameter optimization.

Objectives (training losses of the models) are minimized over a transformed
parameter vector: positivity-constrained entries (variances, lengthscales)
live in log space, unconstrained entries (basis shape parameters, inducing
coordinates) are raw.  Entries can be frozen; frozen values are bit-identical
before and after optimization.

The minimizer is a limited-memory quasi-Newton loop (two-loop recursion,
memory 10) with Armijo backtracking, chosen for reproducibility: identical
inputs yield identical iterates.  Gradients come from central finite
differences; factorization failures inside the objective are encoded as a
large penalty so line searches simply back off.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InputError, NotPositiveDefiniteError, SpecgpError

PENALTY = 1e30

LOG_TRANSFORM = "log"
NO_TRANSFORM = "none"


@dataclass(frozen=True)
class Param:
    """One named scalar parameter with its transform and frozen flag."""

    name: str
    value: float
    transform: str = LOG_TRANSFORM
    frozen: bool = False

    def __post_init__(self):
        if self.transform not in (LOG_TRANSFORM, NO_TRANSFORM):
            raise InputError(f"unknown transform {self.transform!r}")
        if self.transform == LOG_TRANSFORM and self.value <= 0:
            raise InputError(
                f"parameter {self.name!r} is positivity-constrained, got {self.value}"
            )


@dataclass(frozen=True)
class ParameterVector:
    """An ordered collection of named parameters.

    ``pack`` maps constrained values to the unconstrained optimization space;
    ``unpack`` is its exact inverse (unpack(pack()) reproduces every value,
    frozen ones bitwise).
    """

    params: tuple[Param, ...]

    def __post_init__(self):
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise InputError("duplicate parameter names")
        object.__setattr__(self, "params", tuple(self.params))

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.params]

    @property
    def frozen_mask(self) -> np.ndarray:
        return np.array([p.frozen for p in self.params], dtype=bool)

    def pack(self) -> np.ndarray:
        out = np.empty(len(self.params))
        for i, p in enumerate(self.params):
            out[i] = np.log(p.value) if p.transform == LOG_TRANSFORM else p.value
        return out

    def unpack(self, vector) -> "ParameterVector":
        vector = np.asarray(vector, dtype=float)
        if vector.shape != (len(self.params),):
            raise InputError(
                f"expected a vector of length {len(self.params)}, got {vector.shape}"
            )
        new = []
        for p, v in zip(self.params, vector):
            if p.frozen:
                new.append(p)  # frozen entries never change, bit-identical
            elif p.transform == LOG_TRANSFORM:
                new.append(replace(p, value=float(np.exp(v))))
            else:
                new.append(replace(p, value=float(v)))
        return ParameterVector(tuple(new))

    def values(self) -> dict[str, float]:
        return {p.name: p.value for p in self.params}

    def get(self, name: str) -> float:
        for p in self.params:
            if p.name == name:
                return p.value
        raise KeyError(name)

    def with_value(self, name: str, value: float) -> "ParameterVector":
        new = [replace(p, value=value) if p.name == name else p for p in self.params]
        if all(p.name != name for p in self.params):
            raise KeyError(name)
        return ParameterVector(tuple(new))


def penalized(fn):
    """Wrap an objective so numerical failures become a large finite penalty.

    Factorization failures and non-finite values map to ``PENALTY`` (1e30),
    keeping the optimizer total: line searches back off instead of crashing.
    """

    def wrapped(x):
        try:
            value = fn(x)
        except (NotPositiveDefiniteError, SpecgpError, np.linalg.LinAlgError, ValueError):
            return PENALTY
        if not np.isfinite(value):
            return PENALTY
        return float(value)

    return wrapped


def finite_diff_grad(f, x, frozen=None) -> np.ndarray:
    """Central-difference gradient, step ``1e-5 * max(1, |x_i|)`` per coordinate.

    Frozen coordinates get gradient exactly 0.
    """
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        if frozen is not None and frozen[i]:
            continue
        h = 1e-5 * max(1.0, abs(x[i]))
        xp = x.copy()
        xp[i] += h
        xm = x.copy()
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


@dataclass
class MinimizeResult:
    x: np.ndarray
    fun: float
    trace: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    message: str = ""


def minimize(
    f,
    x0,
    max_iter: int = 500,
    tol: float = 1e-6,
    frozen=None,
    memory: int = 10,
) -> MinimizeResult:
    """Deterministic limited-memory quasi-Newton descent.

    Terminates on gradient infinity-norm below ``tol``, relative objective
    improvement below 1e-9, a failed backtracking search, or ``max_iter``.
    The trace holds the objective at every accepted iterate and is
    non-increasing by the line-search contract.
    """
    x = np.array(x0, dtype=float)
    n = x.size
    frozen = np.zeros(n, dtype=bool) if frozen is None else np.asarray(frozen, dtype=bool)
    fx = f(x)
    if not np.isfinite(fx):
        raise InputError(f"objective not finite at the starting point ({fx})")
    trace = [float(fx)]
    g = finite_diff_grad(f, x, frozen)
    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    message = "max_iter reached"
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        gnorm = float(np.max(np.abs(g))) if n else 0.0
        if gnorm < tol:
            converged = True
            message = "gradient norm below tol"
            break
        # two-loop recursion for the quasi-Newton direction
        q = g.copy()
        alphas = []
        for s, yv in zip(reversed(s_hist), reversed(y_hist)):
            a = float(s @ q) / float(yv @ s)
            alphas.append(a)
            q -= a * yv
        if s_hist:
            q *= float(s_hist[-1] @ y_hist[-1]) / float(y_hist[-1] @ y_hist[-1])
        else:
            q /= max(1.0, gnorm)
        for (s, yv), a in zip(zip(s_hist, y_hist), reversed(alphas)):
            b = float(yv @ q) / float(yv @ s)
            q += (a - b) * s
        d = -q
        d[frozen] = 0.0
        gd = float(g @ d)
        if gd >= 0.0:  # not a descent direction; fall back to steepest descent
            d = -g.copy()
            d[frozen] = 0.0
            gd = float(g @ d)
            if gd >= 0.0:
                message = "no descent direction"
                break
        step = 1.0
        accepted = False
        for _ in range(40):
            xn = x + step * d
            fn = f(xn)
            if np.isfinite(fn) and fn <= fx + 1e-4 * step * gd:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            message = "line search failed"
            break
        gn = finite_diff_grad(f, xn, frozen)
        s = xn - x
        yv = gn - g
        sy = float(yv @ s)
        if sy > 1e-10 * float(np.linalg.norm(s)) * float(np.linalg.norm(yv)):
            s_hist.append(s)
            y_hist.append(yv)
            if len(s_hist) > memory:
                s_hist.pop(0)
                y_hist.pop(0)
        improvement = (fx - fn) / max(1.0, abs(fx))
        x, fx, g = xn, float(fn), gn
        trace.append(fx)
        if improvement < 1e-9:
            converged = True
            message = "objective improvement below tol"
            break
    return MinimizeResult(
        x=x, fun=fx, trace=trace, iterations=iterations,
        converged=converged, message=message,
    )


def multistart(f, starts, max_iter: int = 500, tol: float = 1e-6, frozen=None):
    """Run :func:`minimize` from every start; return (best result, all results).

    Starts where the objective is non-finite are skipped; ties keep the
    earliest start, making the outcome deterministic.
    """
    starts = list(starts)
    if not starts:
        raise InputError("multistart needs at least one starting point")
    best = None
    results = []
    for x0 in starts:
        try:
            res = minimize(f, x0, max_iter=max_iter, tol=tol, frozen=frozen)
        except InputError:
            results.append(None)
            continue
        results.append(res)
        if best is None or res.fun < best.fun:
            best = res
    if best is None:
        raise InputError("objective was non-finite at every start")
    return best, results
