"""Stationary covariance families, their composition and spectral densities.

Four base families are provided (squared-exponential, its per-dimension ARD
variant, cosine and Matern-5/2) together with sum and product composition.
Kernels are immutable value objects; every operation here is a pure function,
so unrestricted concurrent reads are safe.

Spectral densities use the angular-frequency convention

    S(w) = integral K(r) exp(-i w r) dr

over the 1-D lag r.  Closed forms exist for the squared-exponential and
Matern-5/2 families, for sums of supported kernels, and for products with a
single cosine factor (whose density is a Dirac pair, so the convolution
collapses to a frequency shift).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import InputError, UnsupportedKernelError

# Largest exponent magnitude fed to exp() in kernel formulas; values beyond it
# are indistinguishable from the limit and would overflow intermediates.
_EXP_CLIP = 700.0


class Kernel:
    """Base class for stationary covariance functions."""

    def input_dim(self) -> int | None:
        """Pinned input dimension, or None if the kernel works in any."""
        return None

    def leaves(self) -> list["Kernel"]:
        """Base-family kernels in depth-first order."""
        return [self]


def _check_positive(name: str, value: float) -> float:
    value = float(value)
    if not np.isfinite(value) or value <= 0.0:
        raise InputError(f"{name} must be a positive finite real, got {value!r}")
    return value


@dataclass(frozen=True)
class SE(Kernel):
    """Squared-exponential: ``var * exp(-|x - x'|^2 / (2 len^2))``."""

    variance: float = 1.0
    lengthscale: float = 1.0

    def __post_init__(self):
        _check_positive("variance", self.variance)
        _check_positive("lengthscale", self.lengthscale)


@dataclass(frozen=True)
class SEARD(Kernel):
    """Squared-exponential with one lengthscale per input dimension."""

    variance: float = 1.0
    lengthscales: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        _check_positive("variance", self.variance)
        if len(self.lengthscales) == 0:
            raise InputError("SEARD needs at least one lengthscale")
        for l in self.lengthscales:
            _check_positive("lengthscale", l)
        object.__setattr__(self, "lengthscales", tuple(float(l) for l in self.lengthscales))

    def input_dim(self) -> int | None:
        return len(self.lengthscales)


@dataclass(frozen=True)
class Cosine(Kernel):
    """Cosine: ``var * cos(2 pi |x - x'| / period)``."""

    variance: float = 1.0
    period: float = 1.0

    def __post_init__(self):
        _check_positive("variance", self.variance)
        _check_positive("period", self.period)


@dataclass(frozen=True)
class Matern52(Kernel):
    """Matern-5/2: ``var * (1 + a + a^2/3) * exp(-a)`` with ``a = sqrt(5) r / len``."""

    variance: float = 1.0
    lengthscale: float = 1.0

    def __post_init__(self):
        _check_positive("variance", self.variance)
        _check_positive("lengthscale", self.lengthscale)


def _combined_dim(children: tuple[Kernel, ...], what: str) -> None:
    if len(children) == 0:
        raise InputError(f"{what} must have at least one child kernel")
    dims = {d for d in (c.input_dim() for c in children) if d is not None}
    if len(dims) > 1:
        raise InputError(f"{what} children pin conflicting input dimensions: {sorted(dims)}")


@dataclass(frozen=True)
class Sum(Kernel):
    """Sum of child kernels."""

    terms: tuple[Kernel, ...]

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        _combined_dim(self.terms, "Sum")

    def input_dim(self) -> int | None:
        for c in self.terms:
            if c.input_dim() is not None:
                return c.input_dim()
        return None

    def leaves(self) -> list[Kernel]:
        return [leaf for c in self.terms for leaf in c.leaves()]


@dataclass(frozen=True)
class Product(Kernel):
    """Product of child kernels."""

    factors: tuple[Kernel, ...]

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))
        _combined_dim(self.factors, "Product")

    def input_dim(self) -> int | None:
        for c in self.factors:
            if c.input_dim() is not None:
                return c.input_dim()
        return None

    def leaves(self) -> list[Kernel]:
        return [leaf for c in self.factors for leaf in c.leaves()]


# ---------------------------------------------------------------------------
# Gram evaluation
# ---------------------------------------------------------------------------


def _as_2d(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise InputError(f"inputs must be an (N, D) array, got shape {X.shape}")
    return X


class PairwiseCache:
    """Precomputed pairwise distances between two point sets.

    Kernel hyperparameters enter only through cheap elementwise maps of these
    matrices, so reusing a cache across objective evaluations removes the
    dominant cost inside optimization loops.
    """

    def __init__(self, X, X2=None):
        X = _as_2d(X)
        X2 = X if X2 is None else _as_2d(X2)
        if X.shape[1] != X2.shape[1]:
            raise InputError(
                f"input dimension mismatch: {X.shape[1]} vs {X2.shape[1]}"
            )
        self.dim = X.shape[1]
        self.sqdist_per_dim = [
            cdist(X[:, d : d + 1], X2[:, d : d + 1], "sqeuclidean")
            for d in range(self.dim)
        ]
        self.sqdist = sum(self.sqdist_per_dim)
        self.dist = np.sqrt(self.sqdist)

    def gram(self, kernel: Kernel) -> np.ndarray:
        return _gram_from_cache(kernel, self)


def _gram_from_cache(kernel: Kernel, cache: PairwiseCache) -> np.ndarray:
    if isinstance(kernel, SE):
        return kernel.variance * np.exp(
            -0.5 * np.minimum(cache.sqdist / kernel.lengthscale**2, 2 * _EXP_CLIP)
        )
    if isinstance(kernel, SEARD):
        if cache.dim != len(kernel.lengthscales):
            raise InputError(
                f"SEARD with {len(kernel.lengthscales)} lengthscales applied to "
                f"{cache.dim}-dimensional inputs"
            )
        arg = sum(
            d2 / (2.0 * l * l)
            for d2, l in zip(cache.sqdist_per_dim, kernel.lengthscales)
        )
        return kernel.variance * np.exp(-np.minimum(arg, _EXP_CLIP))
    if isinstance(kernel, Cosine):
        return kernel.variance * np.cos(2.0 * math.pi / kernel.period * cache.dist)
    if isinstance(kernel, Matern52):
        a = np.minimum(math.sqrt(5.0) / kernel.lengthscale * cache.dist, _EXP_CLIP)
        return kernel.variance * (1.0 + a + a * a / 3.0) * np.exp(-a)
    if isinstance(kernel, Sum):
        out = _gram_from_cache(kernel.terms[0], cache)
        for term in kernel.terms[1:]:
            out = out + _gram_from_cache(term, cache)
        return out
    if isinstance(kernel, Product):
        out = _gram_from_cache(kernel.factors[0], cache)
        for factor in kernel.factors[1:]:
            out = out * _gram_from_cache(factor, cache)
        return out
    raise InputError(f"unknown kernel type {type(kernel).__name__}")


def gram(kernel: Kernel, X, X2=None) -> np.ndarray:
    """Gram matrix ``K[i, j] = K(X_i, X2_j)``.

    ``gram(k, X)`` (no second argument) is exactly symmetric by construction.
    """
    X = _as_2d(X)
    pinned = kernel.input_dim()
    if pinned is not None and X.shape[1] != pinned:
        raise InputError(
            f"kernel pins input dimension {pinned}, got {X.shape[1]}-dimensional inputs"
        )
    return PairwiseCache(X, X2).gram(kernel)


def eval_kernel(kernel: Kernel, x, x2) -> float:
    """Kernel value for a single pair of points."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if x.shape != x2.shape:
        raise InputError(f"point dimension mismatch: {x.shape} vs {x2.shape}")
    return float(gram(kernel, x[None, :], x2[None, :])[0, 0])


# ---------------------------------------------------------------------------
# Spectral densities
# ---------------------------------------------------------------------------


def se_density_1d(omega, variance: float, lengthscale: float):
    """1-D squared-exponential density (one factor of the ARD product)."""
    omega = np.asarray(omega, dtype=float)
    arg = np.minimum(0.5 * (lengthscale * omega) ** 2, _EXP_CLIP)
    return variance * math.sqrt(2.0 * math.pi) * lengthscale * np.exp(-arg)


def _matern52_density_1d(omega, variance: float, lengthscale: float):
    omega = np.asarray(omega, dtype=float)
    l = lengthscale
    const = variance * 16.0 * 5.0**2.5 / (3.0 * l**5)
    return const * (5.0 / l**2 + omega * omega) ** -3.0


def spectral_density(kernel: Kernel, omega):
    """Fourier transform of a 1-D stationary kernel at angular frequency omega.

    Supported: SE, Matern-5/2, sums of supported kernels, and two-factor
    products where exactly one factor is a cosine (its Dirac-pair density
    turns the convolution into the shift
    ``var_cos * (S(|w - w0|) + S(w + w0)) / 2`` with ``w0 = 2 pi / period``).

    Raises
    ------
    UnsupportedKernelError
        For the cosine family alone, ARD kernels (handled per dimension by
        the caller), and compositions without a closed form.
    """
    omega = np.abs(np.asarray(omega, dtype=float))
    if isinstance(kernel, SE):
        return se_density_1d(omega, kernel.variance, kernel.lengthscale)
    if isinstance(kernel, Matern52):
        return _matern52_density_1d(omega, kernel.variance, kernel.lengthscale)
    if isinstance(kernel, Sum):
        return sum(spectral_density(t, omega) for t in kernel.terms)
    if isinstance(kernel, Product):
        cosines = [f for f in kernel.factors if isinstance(f, Cosine)]
        others = [f for f in kernel.factors if not isinstance(f, Cosine)]
        if len(cosines) == 1 and len(others) == 1:
            w0 = 2.0 * math.pi / cosines[0].period
            s = spectral_density(others[0], np.abs(omega - w0))
            s = s + spectral_density(others[0], omega + w0)
            return cosines[0].variance * 0.5 * s
        raise UnsupportedKernelError(
            "no closed-form spectral density for this product; only "
            "(kernel * cosine) with a single cosine factor is supported"
        )
    raise UnsupportedKernelError(
        f"no spectral density implemented for {type(kernel).__name__}"
    )


def has_spectral_density(kernel: Kernel) -> bool:
    """Whether :func:`spectral_density` accepts this kernel."""
    try:
        spectral_density(kernel, 0.0)
    except UnsupportedKernelError:
        return False
    return True


# ---------------------------------------------------------------------------
# Leaf-parameter access (used by hyperparameter optimization)
# ---------------------------------------------------------------------------


def leaf_parameters(kernel: Kernel) -> list[tuple[str, float]]:
    """Flatten the kernel tree into named positive parameters.

    Leaf ``i`` (depth-first order) contributes ``k{i}.var`` plus ``k{i}.len``
    (or ``k{i}.len{d}`` per dimension for ARD).  Cosine lengthscales are the
    periods.
    """
    params: list[tuple[str, float]] = []
    for i, leaf in enumerate(kernel.leaves()):
        prefix = f"k{i}"
        if isinstance(leaf, (SE, Matern52)):
            params.append((f"{prefix}.var", leaf.variance))
            params.append((f"{prefix}.len", leaf.lengthscale))
        elif isinstance(leaf, Cosine):
            params.append((f"{prefix}.var", leaf.variance))
            params.append((f"{prefix}.len", leaf.period))
        elif isinstance(leaf, SEARD):
            params.append((f"{prefix}.var", leaf.variance))
            for d, l in enumerate(leaf.lengthscales):
                params.append((f"{prefix}.len{d}", l))
        else:
            raise InputError(f"unexpected leaf kernel {type(leaf).__name__}")
    return params


def replace_leaf_parameters(kernel: Kernel, values: dict[str, float]) -> Kernel:
    """Rebuild the kernel tree with leaf parameters taken from ``values``."""
    counter = [0]

    def rebuild(node: Kernel) -> Kernel:
        if isinstance(node, Sum):
            return Sum(tuple(rebuild(t) for t in node.terms))
        if isinstance(node, Product):
            return Product(tuple(rebuild(f) for f in node.factors))
        i = counter[0]
        counter[0] += 1
        prefix = f"k{i}"
        if isinstance(node, SE):
            return SE(values[f"{prefix}.var"], values[f"{prefix}.len"])
        if isinstance(node, Matern52):
            return Matern52(values[f"{prefix}.var"], values[f"{prefix}.len"])
        if isinstance(node, Cosine):
            return Cosine(values[f"{prefix}.var"], values[f"{prefix}.len"])
        if isinstance(node, SEARD):
            lens = tuple(
                values[f"{prefix}.len{d}"] for d in range(len(node.lengthscales))
            )
            return SEARD(values[f"{prefix}.var"], lens)
        raise InputError(f"unexpected leaf kernel {type(node).__name__}")

    return rebuild(kernel)


# ---------------------------------------------------------------------------
# Expression parsing
# ---------------------------------------------------------------------------

_FAMILY_NAMES = {
    "se": SE,
    "se_ard": SEARD,
    "seard": SEARD,
    "cos": Cosine,
    "cosine": Cosine,
    "matern52": Matern52,
    "mat52": Matern52,
}

_TOKEN_RE = re.compile(r"\s*([A-Za-z_][A-Za-z_0-9]*|\(|\)|\[|\]|[+*,=]|[^\s()\[\]+*,=]+)")


def _tokenize(text: str) -> list[str]:
    tokens, pos = [], 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            if text[pos:].strip() == "":
                break
            raise InputError(f"kernel expression: cannot tokenize at position {pos}: {text[pos:]!r}")
        tokens.append(m.group(1))
        pos = m.end()
    return tokens


class _Parser:
    """Recursive-descent parser for ``name(params) [* name(params)] [+ ...]``."""

    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.pos = 0
        self.leaf_count = 0
        self.explicit: set[str] = set()

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self, expected=None):
        tok = self.peek()
        if tok is None:
            raise InputError(f"kernel expression ended early: {self.text!r}")
        if expected is not None and tok != expected:
            raise InputError(
                f"kernel expression: expected {expected!r}, got {tok!r} "
                f"(token {self.pos} of {self.text!r})"
            )
        self.pos += 1
        return tok

    def parse(self) -> Kernel:
        k = self.parse_sum()
        if self.peek() is not None:
            raise InputError(
                f"kernel expression: unexpected trailing token {self.peek()!r} in {self.text!r}"
            )
        return k

    def parse_sum(self) -> Kernel:
        terms = [self.parse_product()]
        while self.peek() == "+":
            self.take("+")
            terms.append(self.parse_product())
        return terms[0] if len(terms) == 1 else Sum(tuple(terms))

    def parse_product(self) -> Kernel:
        factors = [self.parse_atom()]
        while self.peek() == "*":
            self.take("*")
            factors.append(self.parse_atom())
        return factors[0] if len(factors) == 1 else Product(tuple(factors))

    def parse_atom(self) -> Kernel:
        name = self.take().lower()
        if name not in _FAMILY_NAMES:
            raise InputError(
                f"kernel expression: unknown family {name!r} "
                f"(known: {sorted(set(_FAMILY_NAMES))})"
            )
        self.take("(")
        params: dict[str, object] = {}
        while self.peek() != ")":
            key = self.take().lower()
            self.take("=")
            if self.peek() == "[":
                self.take("[")
                vals = [self._number()]
                while self.peek() == ",":
                    self.take(",")
                    vals.append(self._number())
                self.take("]")
                params[key] = vals
            else:
                params[key] = self._number()
            if self.peek() == ",":
                self.take(",")
        self.take(")")
        return self._build(name, params)

    def _number(self) -> float:
        tok = self.take()
        try:
            return float(tok)
        except ValueError:
            raise InputError(f"kernel expression: expected a number, got {tok!r}") from None

    def _build(self, name: str, params: dict) -> Kernel:
        family = _FAMILY_NAMES[name]
        known = {"var", "len"}
        unknown = set(params) - known
        if unknown:
            raise InputError(
                f"kernel expression: unknown parameter(s) {sorted(unknown)} for {name!r}"
            )
        var = params.get("var", 1.0)
        length = params.get("len", 1.0)
        if isinstance(var, list):
            raise InputError("kernel expression: 'var' must be a scalar")
        if family is SEARD:
            lens = tuple(length) if isinstance(length, list) else (float(length),)
            return SEARD(float(var), lens)
        if isinstance(length, list):
            raise InputError(f"kernel expression: {name!r} takes a scalar 'len'")
        return family(float(var), float(length))


def parse_kernel(text: str) -> Kernel:
    """Parse a kernel expression such as ``matern52(var=1,len=11)*cos(len=11)``.

    Grammar: ``kernel := atom | kernel "*" kernel | kernel "+" kernel`` with
    ``atom := family "(" [name "=" value {"," name "=" value}] ")"``; ``*``
    binds tighter than ``+``.  Families: se, se_ard, cos, matern52.  Values
    default to 1; ARD lengthscales accept a bracketed list ``len=[1,2]``.
    """
    if not isinstance(text, str) or text.strip() == "":
        raise InputError("kernel expression must be a non-empty string")
    return _Parser(text).parse()


def kernel_to_expression(kernel: Kernel) -> str:
    """Inverse of :func:`parse_kernel` (canonical form, full precision)."""
    if isinstance(kernel, Sum):
        return " + ".join(kernel_to_expression(t) for t in kernel.terms)
    if isinstance(kernel, Product):
        return " * ".join(kernel_to_expression(f) for f in kernel.factors)
    if isinstance(kernel, SE):
        return f"se(var={kernel.variance:.12g},len={kernel.lengthscale:.12g})"
    if isinstance(kernel, Matern52):
        return f"matern52(var={kernel.variance:.12g},len={kernel.lengthscale:.12g})"
    if isinstance(kernel, Cosine):
        return f"cos(var={kernel.variance:.12g},len={kernel.period:.12g})"
    if isinstance(kernel, SEARD):
        lens = ",".join(f"{l:.12g}" for l in kernel.lengthscales)
        return f"se_ard(var={kernel.variance:.12g},len=[{lens}])"
    raise InputError(f"unexpected kernel {type(kernel).__name__}")
