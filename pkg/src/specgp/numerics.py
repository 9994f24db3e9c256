"""Dense linear-algebra primitives shared by every model.

All matrix inverses in the package are expressed through Cholesky factors and
triangular solves; nothing ever calls an explicit matrix inverse.  Near-singular
matrices are handled by a fixed jitter ladder whose applied value is recorded on
the returned factor (and optionally collected, see :func:`collect_jitter`).
"""

from __future__ import annotations

import contextlib
import contextvars
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import NotPositiveDefiniteError

# Relative jitter ladder, scaled by the mean diagonal of the matrix.
JITTER_LADDER = (0.0, 1e-8, 1e-6, 1e-4)

_jitter_log: contextvars.ContextVar[list | None] = contextvars.ContextVar(
    "jitter_log", default=None
)


@contextlib.contextmanager
def collect_jitter():
    """Collect nonzero jitter values applied inside the block.

    Yields a list that accumulates one float per factorization that needed
    jitter.  Used by the experiment runner to make runs auditable.
    """
    events: list[float] = []
    token = _jitter_log.set(events)
    try:
        yield events
    finally:
        _jitter_log.reset(token)


@dataclass(frozen=True)
class CholFactor:
    """Lower-triangular factor of a (possibly jittered) SPD matrix.

    ``L @ L.T == A + jitter * I`` for the matrix ``A`` that was factored.
    """

    L: np.ndarray
    jitter: float

    @property
    def n(self) -> int:
        return self.L.shape[0]


def jittered_cholesky(A: np.ndarray) -> CholFactor:
    """Cholesky factorization with a jitter ladder.

    The input is symmetrized as ``(A + A.T) / 2`` first.  Jitter values are
    ``JITTER_LADDER`` scaled by the mean absolute diagonal (or 1 when the
    diagonal is all zero) and the first successful level wins.

    Raises
    ------
    NotPositiveDefiniteError
        If every ladder level fails; carries the last attempted jitter.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise NotPositiveDefiniteError(f"expected a square matrix, got {A.shape}")
    A = 0.5 * (A + A.T)
    scale = float(np.mean(np.abs(np.diag(A))))
    if scale == 0.0 or not np.isfinite(scale):
        scale = 1.0
    eye = np.eye(A.shape[0])
    jitter = 0.0
    for level in JITTER_LADDER:
        jitter = level * scale
        try:
            L = np.linalg.cholesky(A + jitter * eye)
        except np.linalg.LinAlgError:
            continue
        if jitter > 0.0:
            events = _jitter_log.get()
            if events is not None:
                events.append(jitter)
        return CholFactor(L=L, jitter=jitter)
    raise NotPositiveDefiniteError(
        f"matrix of size {A.shape[0]} is not positive definite "
        f"(last jitter tried: {jitter:g})",
        jitter=jitter,
    )


def logdet(factor: CholFactor) -> float:
    """log-determinant of the factored matrix: ``2 * sum(log diag(L))``."""
    return 2.0 * float(np.sum(np.log(np.diag(factor.L))))


def chol_solve(factor: CholFactor, b: np.ndarray) -> np.ndarray:
    """Solve ``(L L^T) x = b`` by two triangular solves."""
    z = solve_triangular(factor.L, b, lower=True)
    return solve_triangular(factor.L.T, z, lower=False)


def tri_solve(factor: CholFactor, b: np.ndarray) -> np.ndarray:
    """Solve ``L z = b`` (forward substitution only)."""
    return solve_triangular(factor.L, b, lower=True)


@dataclass(frozen=True)
class LowRankCore:
    """Factored core of a low-rank-plus-noise system.

    Holds the Cholesky factor of ``M = noise * Gamma^-1 + Psi^T Psi`` together
    with the factor of the weight-prior covariance ``Gamma`` that produced it.
    Downstream mean / variance / likelihood computations consume this pair.
    """

    m_factor: CholFactor
    gamma_factor: CholFactor


def lowrank_core(Psi: np.ndarray, Gamma: np.ndarray, noise_variance: float) -> LowRankCore:
    """Factor ``M = noise * Gamma^-1 + Psi^T Psi``.

    ``Gamma^-1`` is obtained from triangular solves against the identity, so no
    explicit inverse is formed.  Factorization failures propagate as
    :class:`NotPositiveDefiniteError`.
    """
    Psi = np.asarray(Psi, dtype=float)
    return lowrank_core_from_products(Psi.T @ Psi, Gamma, noise_variance)


def lowrank_core_from_products(
    PsiTPsi: np.ndarray, Gamma: np.ndarray, noise_variance: float
) -> LowRankCore:
    """Same as :func:`lowrank_core` but from a precomputed ``Psi^T Psi``."""
    gamma_factor = jittered_cholesky(Gamma)
    gamma_inv = chol_solve(gamma_factor, np.eye(gamma_factor.n))
    M = noise_variance * gamma_inv + PsiTPsi
    return LowRankCore(m_factor=jittered_cholesky(M), gamma_factor=gamma_factor)
