"""The four regression schemes.

* exact GP regression (``fullgp_*``),
* a shared low-rank scheme backed by either the tunable local basis or the
  Laplace eigenbasis (``build_tl_model`` / ``build_hilbert_model`` +
  ``lowrank_*``), where the kernel matrix is replaced by ``Psi Gamma Psi^T``,
* its variational reading through an explicit weight-space posterior
  (``tl_variational_posterior`` / ``variational_predict``), and
* variationally optimal inducing-point regression (``vfe_*``).

Models are immutable value objects; every operation is a pure function of its
arguments, so independent evaluations may run concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from . import kernels as kern
from .basis import (
    HilbertBasisConfig,
    TunableBasisConfig,
    feature_matrix,
    hilbert_features,
    hilbert_tensor_features,
    tensor_feature_matrix,
    tensor_knot_grid,
)
from .errors import InputError, UnsupportedKernelError
from .numerics import (
    chol_solve,
    jittered_cholesky,
    logdet,
    lowrank_core_from_products,
    tri_solve,
)

# Relative floor applied to diagonal weight-prior entries so they stay
# invertible; the spectral density underflows far below it for smooth kernels.
DIAG_FLOOR = 1e-12

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class PredictiveDistribution:
    """Per-test-point posterior mean and variance."""

    mean: np.ndarray
    variance: np.ndarray
    includes_noise: bool

    def __post_init__(self):
        if self.mean.shape != self.variance.shape:
            raise InputError("mean and variance must have equal lengths")

    def band95(self) -> tuple[np.ndarray, np.ndarray]:
        """Symmetric 95% band: mean -/+ 1.96 * sqrt(variance)."""
        half = 1.96 * np.sqrt(self.variance)
        return self.mean - half, self.mean + half


@dataclass(frozen=True)
class InducingSet:
    """Inducing input locations, shape (M, D)."""

    z: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        if z.ndim != 2 or z.shape[0] < 1:
            raise InputError(f"inducing inputs must be (M, D) with M >= 1, got {z.shape}")
        object.__setattr__(self, "z", z)


@dataclass(frozen=True)
class VariationalPosterior:
    """Gaussian posterior over basis weights: mean and covariance."""

    mu: np.ndarray
    S: np.ndarray


@dataclass(frozen=True)
class TunableFeatures:
    """Feature source built from tunable local bases (one config per dim)."""

    configs: tuple[TunableBasisConfig, ...]

    def matrix(self, X) -> np.ndarray:
        if len(self.configs) == 1:
            return feature_matrix(self.configs[0], X)
        return tensor_feature_matrix(self.configs, X)

    @property
    def num_features(self) -> int:
        out = 1
        for c in self.configs:
            out *= c.m
        return out


@dataclass(frozen=True)
class HilbertFeatures:
    """Feature source built from interval Laplace eigenfunctions."""

    configs: tuple[HilbertBasisConfig, ...]

    def matrix(self, X) -> np.ndarray:
        if len(self.configs) == 1:
            return hilbert_features(self.configs[0], X)[0]
        return hilbert_tensor_features(self.configs, X)[0]

    @property
    def num_features(self) -> int:
        out = 1
        for c in self.configs:
            out *= c.m
        return out


@dataclass(frozen=True)
class LowRankModel:
    """Shared representation of the two basis-expansion schemes.

    Exactly one of ``gamma`` (dense weight-prior covariance over knots) or
    ``gamma_diag`` (diagonal spectral weights) is set.
    """

    features: TunableFeatures | HilbertFeatures
    kernel: kern.Kernel
    noise_variance: float
    gamma: np.ndarray | None = None
    gamma_diag: np.ndarray | None = None

    def __post_init__(self):
        if (self.gamma is None) == (self.gamma_diag is None):
            raise InputError("exactly one of gamma / gamma_diag must be given")
        if self.noise_variance <= 0:
            raise InputError("noise variance must be positive")

    @property
    def num_features(self) -> int:
        return self.features.num_features


# ---------------------------------------------------------------------------
# Exact GP
# ---------------------------------------------------------------------------


def _as_y(y) -> np.ndarray:
    y = np.asarray(y, dtype=float).ravel()
    if y.size < 1:
        raise InputError("y must have at least one element")
    return y


def dense_nll(K: np.ndarray, noise_variance: float, y) -> float:
    """Negative log marginal likelihood for an explicit covariance matrix.

    ``(N/2) log 2pi + (1/2) log|K + noise I| + (1/2) y^T (K + noise I)^-1 y``.
    """
    y = _as_y(y)
    n = y.size
    f = jittered_cholesky(K + noise_variance * np.eye(n))
    alpha = tri_solve(f, y)
    return 0.5 * n * LOG_2PI + 0.5 * logdet(f) + 0.5 * float(alpha @ alpha)


def dense_predict(
    K: np.ndarray,
    K_star_train: np.ndarray,
    k_star_diag: np.ndarray,
    noise_variance: float,
    y,
) -> PredictiveDistribution:
    """Posterior mean/variance for explicit covariance blocks (noise included)."""
    y = _as_y(y)
    f = jittered_cholesky(K + noise_variance * np.eye(y.size))
    alpha = tri_solve(f, y)
    V = tri_solve(f, K_star_train.T)
    mean = V.T @ alpha
    variance = k_star_diag + noise_variance - np.sum(V * V, axis=0)
    return PredictiveDistribution(mean=mean, variance=variance, includes_noise=True)


def zero_lag_variance(kernel: kern.Kernel, dim: int) -> float:
    """K(x, x) for a stationary kernel (constant in x)."""
    origin = np.zeros(dim)
    return kern.eval_kernel(kernel, origin, origin)


def fullgp_nll(kernel: kern.Kernel, noise_variance: float, X, y) -> float:
    """Exact-GP training objective."""
    return dense_nll(kern.gram(kernel, X), noise_variance, y)


def _as_X(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return X


def fullgp_predict(
    kernel: kern.Kernel, noise_variance: float, X, y, Xstar
) -> PredictiveDistribution:
    """Exact-GP posterior at test inputs (noise-inclusive variance)."""
    X2, Xs = _as_X(X), _as_X(Xstar)
    K = kern.gram(kernel, X2)
    Ks = kern.gram(kernel, Xs, X2)
    kss = np.full(Xs.shape[0], zero_lag_variance(kernel, X2.shape[1]))
    return dense_predict(K, Ks, kss, noise_variance, y)


# ---------------------------------------------------------------------------
# Low-rank models
# ---------------------------------------------------------------------------


def build_tl_model(
    kernel: kern.Kernel, basis_configs, noise_variance: float
) -> LowRankModel:
    """Low-rank model with tunable-basis features.

    The weight-prior covariance is the kernel Gram matrix over the knots (the
    knot-pair grid in 2-D, ordered like the tensor features).
    """
    if isinstance(basis_configs, TunableBasisConfig):
        basis_configs = (basis_configs,)
    basis_configs = tuple(basis_configs)
    knots = tensor_knot_grid(basis_configs)
    pinned = kernel.input_dim()
    if pinned is not None and pinned != knots.shape[1]:
        raise InputError(
            f"kernel pins dimension {pinned} but {knots.shape[1]} basis configs given"
        )
    Gamma = kern.gram(kernel, knots)
    return LowRankModel(
        features=TunableFeatures(basis_configs),
        kernel=kernel,
        noise_variance=noise_variance,
        gamma=Gamma,
    )


def _seard_like(kernel: kern.Kernel, dim: int) -> tuple[float, tuple[float, ...]] | None:
    """(variance, per-dim lengthscales) when the kernel factorizes per dim."""
    if isinstance(kernel, kern.SE):
        return kernel.variance, (kernel.lengthscale,) * dim
    if isinstance(kernel, kern.SEARD) and len(kernel.lengthscales) == dim:
        return kernel.variance, kernel.lengthscales
    return None


def build_hilbert_model(
    kernel: kern.Kernel, hilbert_configs, noise_variance: float
) -> LowRankModel:
    """Low-rank model with eigenfunction features and spectral-density weights.

    1-D accepts any kernel with a closed-form density (see
    :func:`specgp.kernels.spectral_density`); 2-D needs a per-dimension
    factorizing kernel (SE or SE-ARD).  The diagonal weights are floored at
    ``DIAG_FLOOR`` times their maximum so the prior stays invertible.
    """
    if isinstance(hilbert_configs, HilbertBasisConfig):
        hilbert_configs = (hilbert_configs,)
    hilbert_configs = tuple(hilbert_configs)
    dim = len(hilbert_configs)
    if dim == 1:
        lam = hilbert_configs[0].eigenfrequencies
        factorized = _seard_like(kernel, 1)
        if factorized is not None:
            var, (l0,) = factorized
            weights = kern.se_density_1d(lam, var, l0)
        else:
            weights = np.asarray(kern.spectral_density(kernel, lam), dtype=float)
    elif dim == 2:
        factorized = _seard_like(kernel, 2)
        if factorized is None:
            raise UnsupportedKernelError(
                "2-D eigenbasis models need a per-dimension factorizing kernel "
                "(se or se_ard); got " + type(kernel).__name__
            )
        var, lens = factorized
        lam1 = hilbert_configs[0].eigenfrequencies
        lam2 = hilbert_configs[1].eigenfrequencies
        d1 = kern.se_density_1d(lam1, 1.0, lens[0])
        d2 = kern.se_density_1d(lam2, 1.0, lens[1])
        weights = var * np.tile(d1, len(lam2)) * np.repeat(d2, len(lam1))
    else:
        raise InputError("eigenbasis models support 1 or 2 input dimensions")
    weights = np.maximum(weights, DIAG_FLOOR * float(weights.max()))
    return LowRankModel(
        features=HilbertFeatures(hilbert_configs),
        kernel=kernel,
        noise_variance=noise_variance,
        gamma_diag=weights,
    )


def _gamma_logdet_and_core(model: LowRankModel, PsiTPsi: np.ndarray):
    """(log|Gamma|, CholFactor of noise*Gamma^-1 + Psi^T Psi)."""
    noise = model.noise_variance
    if model.gamma is not None:
        core = lowrank_core_from_products(PsiTPsi, model.gamma, noise)
        return logdet(core.gamma_factor), core.m_factor
    lam = model.gamma_diag
    M = PsiTPsi + np.diag(noise / lam)
    return float(np.sum(np.log(lam))), jittered_cholesky(M)


def lowrank_nll_from_products(
    model: LowRankModel,
    PsiTPsi: np.ndarray,
    PsiTy: np.ndarray,
    yTy: float,
    n: int,
) -> float:
    """Training objective from precomputed feature cross-products.

    Compact rearrangement of the dense objective on ``Psi Gamma Psi^T``:

        (1/2)(N - m) log s2 + (1/2) log|Gamma| + (1/2) log|s2 Gamma^-1 + Psi^T Psi|
        + (N/2) log 2pi + (1/(2 s2)) [y^T y - y^T Psi (s2 Gamma^-1 + Psi^T Psi)^-1 Psi^T y]

    The split form lets fixed-feature fits reuse ``Psi^T Psi`` across kernel
    hyperparameter evaluations.
    """
    noise = model.noise_variance
    m = model.num_features
    gamma_ld, m_factor = _gamma_logdet_and_core(model, PsiTPsi)
    w = tri_solve(m_factor, PsiTy)
    quad = (yTy - float(w @ w)) / noise
    return (
        0.5 * (n - m) * math.log(noise)
        + 0.5 * gamma_ld
        + 0.5 * logdet(m_factor)
        + 0.5 * n * LOG_2PI
        + 0.5 * quad
    )


def lowrank_nll(model: LowRankModel, X, y) -> float:
    """Training objective of the low-rank model (builds features internally)."""
    y = _as_y(y)
    Psi = model.features.matrix(X)
    return lowrank_nll_from_products(
        model, Psi.T @ Psi, Psi.T @ y, float(y @ y), y.size
    )


def lowrank_predict(model: LowRankModel, X, y, Xstar) -> PredictiveDistribution:
    """Posterior at test inputs via the low-rank rearrangement.

    mean = Psi* (Psi^T Psi + s2 Gamma^-1)^-1 Psi^T y;
    variance = s2 * diag(Psi* (...)^-1 Psi*^T) + s2.
    """
    y = _as_y(y)
    Psi = model.features.matrix(X)
    Psis = model.features.matrix(Xstar)
    noise = model.noise_variance
    _, m_factor = _gamma_logdet_and_core(model, Psi.T @ Psi)
    mean = Psis @ chol_solve(m_factor, Psi.T @ y)
    V = tri_solve(m_factor, Psis.T)
    variance = noise * np.sum(V * V, axis=0) + noise
    return PredictiveDistribution(mean=mean, variance=variance, includes_noise=True)


def tl_variational_posterior(model: LowRankModel, X, y) -> VariationalPosterior:
    """Optimal Gaussian posterior over basis weights.

    ``S = (Gamma^-1 + Psi^T Psi / s2)^-1`` and ``mu = S Psi^T y / s2``,
    factored independently of :func:`lowrank_predict` so the two prediction
    routes cross-check each other.
    """
    y = _as_y(y)
    Psi = model.features.matrix(X)
    noise = model.noise_variance
    if model.gamma is not None:
        gamma_factor = jittered_cholesky(model.gamma)
        gamma_inv = chol_solve(gamma_factor, np.eye(model.num_features))
    else:
        gamma_inv = np.diag(1.0 / model.gamma_diag)
    A = gamma_inv + (Psi.T @ Psi) / noise
    a_factor = jittered_cholesky(A)
    S = chol_solve(a_factor, np.eye(model.num_features))
    S = 0.5 * (S + S.T)
    mu = chol_solve(a_factor, Psi.T @ y) / noise
    return VariationalPosterior(mu=mu, S=S)


def variational_predict(
    model: LowRankModel,
    posterior: VariationalPosterior,
    Xstar,
    include_noise: bool = True,
) -> PredictiveDistribution:
    """Posterior prediction from explicit weight-space moments.

    mean = Psi* mu; variance = diag(Psi* S Psi*^T) (+ noise when included).
    """
    Psis = model.features.matrix(Xstar)
    mean = Psis @ posterior.mu
    variance = np.sum((Psis @ posterior.S) * Psis, axis=1)
    if include_noise:
        variance = variance + model.noise_variance
    return PredictiveDistribution(
        mean=mean, variance=variance, includes_noise=include_noise
    )


# ---------------------------------------------------------------------------
# Variational inducing-point regression
# ---------------------------------------------------------------------------


def _vfe_common(kernel, noise_variance, Z: InducingSet, X, y):
    X = _as_X(X)
    y = _as_y(y)
    sigma = math.sqrt(noise_variance)
    Kuu = kern.gram(kernel, Z.z)
    Kuf = kern.gram(kernel, Z.z, X)
    luu = jittered_cholesky(Kuu)
    A = tri_solve(luu, Kuf) / sigma
    B = np.eye(Z.z.shape[0]) + A @ A.T
    lb = jittered_cholesky(B)
    c = tri_solve(lb, A @ y)
    return X, y, sigma, luu, A, lb, c


def vfe_elbo(kernel: kern.Kernel, noise_variance: float, Z: InducingSet, X, y) -> float:
    """Evidence lower bound of the inducing-point approximation.

    ``log N(y | 0, Q + s2 I) - tr(K - Q) / (2 s2)`` with
    ``Q = K_fu K_uu^-1 K_uf``, evaluated entirely in low-rank form.
    """
    X, y, sigma, luu, A, lb, c = _vfe_common(kernel, noise_variance, Z, X, y)
    n = y.size
    log_gauss = (
        -0.5 * n * LOG_2PI
        - 0.5 * (n * math.log(noise_variance) + logdet(lb))
        - 0.5 * (float(y @ y) - float(c @ c)) / noise_variance
    )
    kff_trace = n * zero_lag_variance(kernel, X.shape[1])
    q_trace = noise_variance * float(np.sum(A * A))
    return log_gauss - 0.5 * (kff_trace - q_trace) / noise_variance


def vfe_predict(
    kernel: kern.Kernel, noise_variance: float, Z: InducingSet, X, y, Xstar
) -> PredictiveDistribution:
    """Posterior of the optimal variational distribution at test inputs."""
    X, y, sigma, luu, A, lb, c = _vfe_common(kernel, noise_variance, Z, X, y)
    Xs = _as_X(Xstar)
    Kus = kern.gram(kernel, Z.z, Xs)
    w = tri_solve(luu, Kus)
    v = tri_solve(lb, w)
    mean = (v.T @ c) / sigma
    kss = zero_lag_variance(kernel, Xs.shape[1])
    variance = (
        kss
        - np.sum(w * w, axis=0)
        + np.sum(v * v, axis=0)
        + noise_variance
    )
    return PredictiveDistribution(mean=mean, variance=variance, includes_noise=True)


def quantile_inducing_points(X, num: int) -> InducingSet:
    """Deterministic inducing inputs: per-dimension quantile grid.

    1-D uses ``num`` equally spaced quantiles of the inputs (endpoints
    included).  2-D lays a ``ceil(sqrt(num)) x ceil(sqrt(num))`` quantile
    grid and keeps the first ``num`` points in tensor order.
    """
    X = _as_X(X)
    if num < 1:
        raise InputError("need at least one inducing point")
    if X.shape[1] == 1:
        qs = np.linspace(0.0, 1.0, num) if num > 1 else np.array([0.5])
        return InducingSet(np.quantile(X[:, 0], qs)[:, None])
    side = int(math.ceil(math.sqrt(num)))
    qs = np.linspace(0.0, 1.0, side) if side > 1 else np.array([0.5])
    g1 = np.quantile(X[:, 0], qs)
    g2 = np.quantile(X[:, 1], qs)
    grid = np.column_stack([np.tile(g1, side), np.repeat(g2, side)])
    return InducingSet(grid[:num])
