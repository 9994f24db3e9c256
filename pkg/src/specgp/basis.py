"""Tunable local basis functions and the Laplace-eigenfunction basis.

The tunable family is a bump profile phi(u) centered on each of m equally
spaced knots.  Writing s = alpha * u and q = s^2, the profile is

    phi(u) = q exp(-q/2) / sqrt(2 exp(beta) chi(s) - (q + 1) exp(-q) + 1)
    chi(s) = 1 - exp(-q/2) (s sin s + cos s)

which is 0/0 at u = 0 with removable limit kappa(beta) = sqrt(2/(exp(beta)+1)),
the shared peak value of every basis function.  Evaluation here uses the
equivalent factored form

    phi = exp(-q/2) / sqrt(2 exp(beta) G(q) + H(q)),
    G(q) = chi(s)/q^2,   H(q) = (1 - (1 + q) exp(-q))/q^2,

whose factors are analytic and positive everywhere, removing the singularity
outright; G and H switch from a frozen power series to the direct quotient at
q = 0.0625, where both sides agree to ~1e-13 (the raw quotient loses all
precision only for much smaller q).

The second family solves the 1-D Dirichlet eigenproblem on an interval:
sines with eigenfrequencies pi*j/L, feeding spectral densities downstream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError

# Power series of G(q) = (1 - exp(-q/2)(s sin s + cos s))/q^2 around q = 0,
# exact rationals truncated at q^11; |next term| < 2e-13 at the switch point.
_G_SERIES = np.array([
    1.0 / 4.0,
    -1.0 / 9.0,
    13.0 / 480.0,
    -29.0 / 6300.0,
    131.0 / 217728.0,
    -2231.0 / 34927200.0,
    71063.0 / 12454041600.0,
    -323423.0 / 735566832000.0,
    13237457.0 / 444609285120000.0,
    -15030317.0 / 8363100653107200.0,
    3748521653.0 / 38318206628782080000.0,
    -25451905333.0 / 5251190900086010880000.0,
])

# Series of H(q) = (1 - (1 + q) exp(-q))/q^2: coefficients (-1)^j (j+1)/(j+2)!.
_H_SERIES = np.array([
    (-1.0) ** j * (j + 1.0) / math.factorial(j + 2) for j in range(12)
])

_SERIES_SWITCH_Q = 0.0625  # s = 0.25
_BETA_CLIP = 700.0  # exp() saturation guard; kappa(700) ~ 1e-152 is already 0


def kappa(beta: float) -> float:
    """Common peak value of the basis functions: ``sqrt(2 / (exp(beta) + 1))``."""
    return float(np.sqrt(2.0 / (np.exp(min(float(beta), _BETA_CLIP)) + 1.0)))


def _horner(coeffs: np.ndarray, q: np.ndarray) -> np.ndarray:
    acc = np.full_like(q, coeffs[-1])
    for c in coeffs[-2::-1]:
        acc = acc * q + c
    return acc


def phi_profile(u, alpha: float, beta: float) -> np.ndarray:
    """Basis profile phi(u) for offsets ``u`` from a knot (vectorized).

    Even in both ``u`` and ``alpha`` by construction (only ``|alpha * u|``
    enters).  ``alpha = 0`` collapses to the constant ``kappa(beta)``.
    """
    u = np.asarray(u, dtype=float)
    s = np.abs(alpha * u)
    q = s * s
    small = q < _SERIES_SWITCH_Q
    # Direct quotient; inputs masked to 1 where the series branch is taken.
    qd = np.where(small, 1.0, q)
    sd = np.where(small, 1.0, s)
    with np.errstate(over="ignore"):
        G = np.where(
            small,
            _horner(_G_SERIES, q),
            (1.0 - np.exp(-0.5 * qd) * (sd * np.sin(sd) + np.cos(sd))) / (qd * qd),
        )
        H = np.where(
            small,
            _horner(_H_SERIES, q),
            (1.0 - (1.0 + qd) * np.exp(-qd)) / (qd * qd),
        )
        den = 2.0 * np.exp(min(float(beta), _BETA_CLIP)) * G + H
        return np.exp(-0.5 * np.minimum(q, 1500.0)) / np.sqrt(den)


@dataclass(frozen=True)
class TunableBasisConfig:
    """A family of m tunable bumps on equally spaced knots over [lb, ub].

    ``alpha`` controls localization (width ~ 1/alpha), ``beta`` the shared
    peak height kappa(beta); both are unconstrained reals.
    """

    alpha: float
    beta: float
    m: int
    domain: tuple[float, float]

    def __post_init__(self):
        lb, ub = self.domain
        if not (np.isfinite(lb) and np.isfinite(ub) and lb < ub):
            raise InputError(f"domain must satisfy lb < ub, got {self.domain}")
        if int(self.m) != self.m or self.m < 2:
            raise InputError(f"m must be an integer >= 2, got {self.m}")
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "domain", (float(lb), float(ub)))
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "beta", float(self.beta))

    @property
    def spacing(self) -> float:
        lb, ub = self.domain
        return (ub - lb) / (self.m - 1)

    @property
    def knots(self) -> np.ndarray:
        """Knot locations t_j = lb + j * spacing, j = 0..m-1 (endpoints included)."""
        return self.domain[0] + self.spacing * np.arange(self.m)

    def with_shape(self, alpha: float, beta: float) -> "TunableBasisConfig":
        return TunableBasisConfig(alpha, beta, self.m, self.domain)


def eval_phi(cfg: TunableBasisConfig, j: int, x: float) -> float:
    """Value of the j-th basis function at a scalar input."""
    if not 0 <= j < cfg.m:
        raise InputError(f"knot index {j} out of range [0, {cfg.m})")
    return float(phi_profile(float(x) - cfg.knots[j], cfg.alpha, cfg.beta))


def feature_matrix(cfg: TunableBasisConfig, X) -> np.ndarray:
    """Feature matrix ``Psi[i, j] = phi_j(X_i)`` for 1-D inputs.

    Inputs outside the domain are legal; features decay toward zero there.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 2 and X.shape[1] == 1:
        X = X[:, 0]
    if X.ndim != 1:
        raise InputError(f"feature_matrix expects 1-D inputs, got shape {X.shape}")
    return phi_profile(X[:, None] - cfg.knots[None, :], cfg.alpha, cfg.beta)


def tensor_feature_matrix(cfgs, X) -> np.ndarray:
    """Tensor-product features for 2-D inputs.

    Row i enumerates ``phi_a(x_i1) * phi_b(x_i2)`` at flat index ``a + b * m1``
    (first-dimension index varies fastest).
    """
    cfgs = tuple(cfgs)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != len(cfgs):
        raise InputError(
            f"expected (N, {len(cfgs)}) inputs for {len(cfgs)} basis configs, "
            f"got shape {X.shape}"
        )
    if len(cfgs) == 1:
        return feature_matrix(cfgs[0], X[:, 0])
    if len(cfgs) != 2:
        raise InputError("tensor features support 1 or 2 input dimensions")
    F1 = feature_matrix(cfgs[0], X[:, 0])
    F2 = feature_matrix(cfgs[1], X[:, 1])
    n = X.shape[0]
    # (n, m1, m2) -> flat index a + b*m1
    return (F1[:, :, None] * F2[:, None, :]).reshape(n, -1, order="F")


def tensor_knot_grid(cfgs) -> np.ndarray:
    """Knot-pair grid matching :func:`tensor_feature_matrix` ordering."""
    cfgs = tuple(cfgs)
    if len(cfgs) == 1:
        return cfgs[0].knots[:, None]
    if len(cfgs) != 2:
        raise InputError("tensor knot grids support 1 or 2 dimensions")
    t1, t2 = cfgs[0].knots, cfgs[1].knots
    return np.column_stack([np.tile(t1, len(t2)), np.repeat(t2, len(t1))])


_SIMPSON_PANELS = 4096


def orthogonality_integral(cfg: TunableBasisConfig, i: int, j: int) -> float:
    """Overlap integral of phi_i and phi_j over the domain.

    Composite Simpson quadrature with 4096 panels, enough to resolve the
    near-delta regime at large alpha.
    """
    for idx in (i, j):
        if not 0 <= idx < cfg.m:
            raise InputError(f"knot index {idx} out of range [0, {cfg.m})")
    lb, ub = cfg.domain
    x = np.linspace(lb, ub, 2 * _SIMPSON_PANELS + 1)
    fi = phi_profile(x - cfg.knots[i], cfg.alpha, cfg.beta)
    fj = phi_profile(x - cfg.knots[j], cfg.alpha, cfg.beta)
    f = fi * fj
    h = (ub - lb) / (2 * _SIMPSON_PANELS)
    return float(h / 3.0 * (f[0] + f[-1] + 4.0 * f[1:-1:2].sum() + 2.0 * f[2:-1:2].sum()))


# ---------------------------------------------------------------------------
# Laplace eigenbasis on an interval (Dirichlet boundary)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HilbertBasisConfig:
    """First m Dirichlet-Laplacian eigenpairs on an interval [lb, ub]."""

    m: int
    domain: tuple[float, float]

    def __post_init__(self):
        lb, ub = self.domain
        if not (np.isfinite(lb) and np.isfinite(ub) and lb < ub):
            raise InputError(f"domain must satisfy lb < ub, got {self.domain}")
        if int(self.m) != self.m or self.m < 1:
            raise InputError(f"m must be an integer >= 1, got {self.m}")
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "domain", (float(lb), float(ub)))

    @property
    def eigenfrequencies(self) -> np.ndarray:
        """Square-root eigenvalues ``pi * j / L``, j = 1..m, L = ub - lb."""
        lb, ub = self.domain
        return np.pi * np.arange(1, self.m + 1) / (ub - lb)


def hilbert_features(cfg: HilbertBasisConfig, X) -> tuple[np.ndarray, np.ndarray]:
    """Eigenfunction matrix and eigenfrequencies for 1-D inputs.

    ``Phi[i, j] = sqrt(2/L) sin(pi (j+1) (x_i - lb) / L)``; the functions are
    orthonormal on the interval and vanish at both ends.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 2 and X.shape[1] == 1:
        X = X[:, 0]
    if X.ndim != 1:
        raise InputError(f"hilbert_features expects 1-D inputs, got shape {X.shape}")
    lb, ub = cfg.domain
    L = ub - lb
    lam = cfg.eigenfrequencies
    Phi = np.sqrt(2.0 / L) * np.sin(np.outer(X - lb, lam))
    return Phi, lam


def hilbert_tensor_features(cfgs, X) -> tuple[np.ndarray, np.ndarray]:
    """Tensor-product eigenfunctions for 2-D inputs.

    Returns the feature matrix (flat index ``a + b * m1``, matching
    :func:`tensor_feature_matrix`) and the (m1*m2, 2) array of per-dimension
    eigenfrequencies for each tensor basis function.
    """
    cfgs = tuple(cfgs)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != len(cfgs):
        raise InputError(
            f"expected (N, {len(cfgs)}) inputs for {len(cfgs)} basis configs, "
            f"got shape {X.shape}"
        )
    if len(cfgs) == 1:
        Phi, lam = hilbert_features(cfgs[0], X[:, 0])
        return Phi, lam[:, None]
    if len(cfgs) != 2:
        raise InputError("tensor features support 1 or 2 input dimensions")
    P1, lam1 = hilbert_features(cfgs[0], X[:, 0])
    P2, lam2 = hilbert_features(cfgs[1], X[:, 1])
    n = X.shape[0]
    Phi = (P1[:, :, None] * P2[:, None, :]).reshape(n, -1, order="F")
    lam_grid = np.column_stack([np.tile(lam1, len(lam2)), np.repeat(lam2, len(lam1))])
    return Phi, lam_grid
