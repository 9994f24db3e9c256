"""Dataset loading, splitting, standardization and synthetic stand-ins.

Input files are UTF-8 comma-separated text with a header row naming the
columns; missing or non-finite cells are rejected with their row number.
Bundled series live in ``specgp/datafiles`` (see the provenance notes there).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import DataError, DatasetMissingError, InputError

SUNSPOT_TRAIN_COUNT = 131
SUNSPOT_TRAIN_YEARS = (1700.0, 1962.0)


@dataclass(frozen=True)
class Dataset:
    """Inputs (N, D), targets (N,) and an optional standardization record."""

    X: np.ndarray
    y: np.ndarray
    name: str = ""
    standardization: "Standardization | None" = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.y, dtype=float).ravel()
        if X.ndim != 2 or X.shape[1] not in (1, 2):
            raise InputError(f"inputs must be (N, 1) or (N, 2), got {X.shape}")
        if X.shape[0] != y.shape[0] or y.shape[0] < 1:
            raise InputError(
                f"inputs and targets disagree: {X.shape[0]} rows vs {y.shape[0]} targets"
            )
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise InputError("datasets must not contain non-finite values")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def take(self, indices, name_suffix: str = "") -> "Dataset":
        return Dataset(
            X=self.X[indices],
            y=self.y[indices],
            name=self.name + name_suffix,
            standardization=self.standardization,
        )


# ---------------------------------------------------------------------------
# Split rules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RandomFraction:
    """Uniform random split; ``fraction`` is the share of points in train."""

    fraction: float

    def __post_init__(self):
        if not 0.0 < self.fraction < 1.0:
            raise InputError(f"train fraction must be in (0, 1), got {self.fraction}")


@dataclass(frozen=True)
class IndexList:
    """Explicit test indices; everything else trains."""

    test_indices: tuple[int, ...]


@dataclass(frozen=True)
class Range:
    """Test points are those whose first input falls in any [a, b] interval."""

    test_intervals: tuple[tuple[float, float], ...]

    def __post_init__(self):
        for a, b in self.test_intervals:
            if not a < b:
                raise InputError(f"test interval must satisfy a < b, got ({a}, {b})")


@dataclass(frozen=True)
class SunspotRule:
    """The benchmark split for the yearly sunspot series.

    Restrict to ``year_range``, sample ``train_count`` of those points for
    training; the remaining in-range points (interpolation) plus everything
    after the range (extrapolation) form the test set.
    """

    train_count: int = SUNSPOT_TRAIN_COUNT
    year_range: tuple[float, float] = SUNSPOT_TRAIN_YEARS


Rule = RandomFraction | IndexList | Range | SunspotRule


@dataclass(frozen=True)
class Split:
    """Disjoint train/test pair whose union is the source dataset."""

    train: Dataset
    test: Dataset
    rule: Rule
    test_groups: dict[str, np.ndarray] | None = None


def split(ds: Dataset, rule: Rule, seed: int = 0) -> Split:
    """Split a dataset; deterministic for a given (rule, seed)."""
    n = ds.n
    if isinstance(rule, RandomFraction):
        n_train = int(round(rule.fraction * n))
        if not 1 <= n_train < n:
            raise InputError(
                f"train fraction {rule.fraction} leaves an empty side for n={n}"
            )
        rng = np.random.default_rng(seed)
        train_idx = np.sort(rng.choice(n, size=n_train, replace=False))
        test_idx = np.setdiff1d(np.arange(n), train_idx)
        groups = None
    elif isinstance(rule, IndexList):
        test_idx = np.unique(np.asarray(rule.test_indices, dtype=int))
        if test_idx.size and (test_idx.min() < 0 or test_idx.max() >= n):
            raise InputError("test indices out of range")
        if test_idx.size in (0, n):
            raise InputError("index split leaves an empty side")
        train_idx = np.setdiff1d(np.arange(n), test_idx)
        groups = None
    elif isinstance(rule, Range):
        x0 = ds.X[:, 0]
        in_test = np.zeros(n, dtype=bool)
        for a, b in rule.test_intervals:
            in_test |= (x0 >= a) & (x0 <= b)
        if not in_test.any() or in_test.all():
            raise InputError("range split leaves an empty side")
        test_idx = np.where(in_test)[0]
        train_idx = np.where(~in_test)[0]
        groups = None
    elif isinstance(rule, SunspotRule):
        x0 = ds.X[:, 0]
        lo, hi = rule.year_range
        in_range = np.where((x0 >= lo) & (x0 <= hi))[0]
        if in_range.size <= rule.train_count:
            raise InputError(
                f"need more than {rule.train_count} points in {rule.year_range} "
                f"to split, found {in_range.size}"
            )
        rng = np.random.default_rng(seed)
        train_idx = np.sort(rng.choice(in_range, size=rule.train_count, replace=False))
        interp_idx = np.setdiff1d(in_range, train_idx)
        extrap_idx = np.where(x0 > hi)[0]
        test_idx = np.concatenate([interp_idx, extrap_idx])
        order = np.argsort(ds.X[test_idx, 0], kind="stable")
        test_idx = test_idx[order]
        groups = {
            "interpolation": np.asarray(
                [i for i, t in enumerate(test_idx) if t in set(interp_idx)], dtype=int
            ),
            "extrapolation": np.asarray(
                [i for i, t in enumerate(test_idx) if t in set(extrap_idx)], dtype=int
            ),
        }
    else:
        raise InputError(f"unknown split rule {rule!r}")
    return Split(
        train=ds.take(train_idx, ":train"),
        test=ds.take(test_idx, ":test"),
        rule=rule,
        test_groups=groups,
    )


# ---------------------------------------------------------------------------
# Standardization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Standardization:
    """Record of the affine map applied to targets (and optionally inputs)."""

    y_mean: float
    y_scale: float
    x_means: tuple[float, ...] | None = None
    x_scales: tuple[float, ...] | None = None

    def forward_y(self, y):
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_scale

    def inverse_y(self, y):
        return np.asarray(y, dtype=float) * self.y_scale + self.y_mean

    def inverse_variance(self, v):
        return np.asarray(v, dtype=float) * self.y_scale**2


def standardize(ds: Dataset, with_inputs: bool = False) -> Dataset:
    """Center/scale targets to mean 0, sample std 1 (inputs optional).

    The applied record is stored on the returned dataset for inverting
    predictions.  Raises on zero variance.
    """
    if ds.n < 2:
        raise InputError("standardization needs at least two points")
    y_mean = float(np.mean(ds.y))
    y_scale = float(np.std(ds.y, ddof=1))
    if y_scale == 0.0:
        raise InputError("targets have zero variance; cannot standardize")
    X = ds.X
    x_means = x_scales = None
    if with_inputs:
        x_means = tuple(float(v) for v in X.mean(axis=0))
        x_scales = tuple(float(v) for v in X.std(axis=0, ddof=1))
        if any(s == 0.0 for s in x_scales):
            raise InputError("an input dimension has zero variance")
        X = (X - np.array(x_means)) / np.array(x_scales)
    record = Standardization(y_mean, y_scale, x_means, x_scales)
    return Dataset(
        X=X, y=(ds.y - y_mean) / y_scale, name=ds.name, standardization=record
    )


def augment_domain(X, fraction: float) -> list[tuple[float, float]]:
    """Per-dimension [lb, ub] grown by ``fraction`` of the span on each side."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if fraction < 0:
        raise InputError("augmentation fraction must be >= 0")
    out = []
    for d in range(X.shape[1]):
        lo, hi = float(X[:, d].min()), float(X[:, d].max())
        span = hi - lo
        if span == 0.0:
            raise InputError(f"input dimension {d} has zero range; cannot set a domain")
        out.append((lo - fraction * span, hi + fraction * span))
    return out


def default_test_windows(X, count: int = 3, cover: float = 0.2) -> tuple[tuple[float, float], ...]:
    """Evenly spaced test windows covering ``cover`` of the input span."""
    X = np.asarray(X, dtype=float)
    x0 = X[:, 0] if X.ndim == 2 else X
    lo, hi = float(x0.min()), float(x0.max())
    span = hi - lo
    if span == 0.0:
        raise InputError("inputs have zero range")
    width = cover * span / count
    centers = lo + span * (np.arange(1, count + 1)) / (count + 1)
    return tuple((float(c - width / 2), float(c + width / 2)) for c in centers)


# ---------------------------------------------------------------------------
# File loading
# ---------------------------------------------------------------------------


def load_table(path, x_columns, y_column: str, name: str = "") -> Dataset:
    """Load a dataset from a delimited text file.

    Comma-separated, UTF-8, header row naming the columns.  Errors name the
    offending row (1-based, counting the header as row 1) and column.
    """
    path = Path(path)
    if not path.exists():
        raise DatasetMissingError(f"dataset file not found: {path}")
    if isinstance(x_columns, str):
        x_columns = [x_columns]
    x_columns = list(x_columns)
    xs, ys = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in [*x_columns, y_column]:
            if col not in header:
                raise DataError(f"{path}: missing column {col!r} (header: {header})")
        for rownum, row in enumerate(reader, start=2):
            vals = []
            for col in [*x_columns, y_column]:
                raw = (row.get(col) or "").strip()
                try:
                    v = float(raw)
                except ValueError:
                    raise DataError(
                        f"{path}: row {rownum}, column {col!r}: "
                        f"cannot parse {raw!r} as a number"
                    ) from None
                if not math.isfinite(v):
                    raise DataError(
                        f"{path}: row {rownum}, column {col!r}: non-finite value {raw!r}"
                    )
                vals.append(v)
            xs.append(vals[:-1])
            ys.append(vals[-1])
    if not xs:
        raise DataError(f"{path}: no data rows")
    return Dataset(X=np.array(xs), y=np.array(ys), name=name or path.stem)


def bundled_path(filename: str) -> Path:
    """Path of a data file shipped inside the package."""
    return Path(resources.files("specgp").joinpath("datafiles", filename))


def load_sunspots() -> Dataset:
    """Bundled yearly sunspot activity series (see datafiles/PROVENANCE.md)."""
    return load_table(bundled_path("sunspots.csv"), ["year"], "activity", name="sunspots")


def load_solar() -> Dataset:
    """Bundled synthetic solar-irradiance-like annual series."""
    return load_table(
        bundled_path("solar_irradiance_synthetic.csv"), ["year"], "irradiance",
        name="solar",
    )


def load_precipitation(data_dir) -> Dataset:
    """Real 2-D precipitation table (lon, lat, precip), if the user fetched it.

    The file is not redistributable here; ``datafiles/PROVENANCE.md`` explains
    how to produce ``precipitation.csv``.  Raises when absent.
    """
    path = Path(data_dir) / "precipitation.csv"
    if not path.exists():
        raise DatasetMissingError(
            f"{path} not found; see datafiles/PROVENANCE.md for how to fetch it, "
            "or use the synthetic stand-in dataset 'precip_synth'"
        )
    return load_table(path, ["lon", "lat"], "precip", name="precipitation")


# ---------------------------------------------------------------------------
# Synthetic stand-ins
# ---------------------------------------------------------------------------


def synth_snelson_like(n: int = 200, seed: int = 0, noise_std: float = 0.3) -> Dataset:
    """1-D toy regression set over [0, 6].

    Generator: ``y = sin(2x) + 0.25 x^2 - 0.9 x + eps``, inputs uniform on
    [0, 6], ``eps ~ N(0, noise_std^2)``; deterministic per seed.
    """
    if n < 1:
        raise InputError("n must be >= 1")
    rng = np.random.default_rng(seed)
    x = np.sort(rng.uniform(0.0, 6.0, size=n))
    f = np.sin(2.0 * x) + 0.25 * x**2 - 0.9 * x
    y = f + noise_std * rng.standard_normal(n)
    return Dataset(X=x[:, None], y=y, name="snelson_synth")


def synth_field_2d(n: int = 1500, seed: int = 0, noise_std: float = 0.15) -> Dataset:
    """Smooth synthetic 2-D field over a [0, 10] x [0, 6] rectangle.

    Generator: ``y = sin(0.9 x1) cos(0.7 x2) + 0.5 cos(0.4 x1 x2 / 3)
    - 0.03 (x1 - 5)^2 + eps``; stands in for gridded precipitation data.
    """
    if n < 1:
        raise InputError("n must be >= 1")
    rng = np.random.default_rng(seed)
    x1 = rng.uniform(0.0, 10.0, size=n)
    x2 = rng.uniform(0.0, 6.0, size=n)
    f = (
        np.sin(0.9 * x1) * np.cos(0.7 * x2)
        + 0.5 * np.cos(0.4 * x1 * x2 / 3.0)
        - 0.03 * (x1 - 5.0) ** 2
    )
    y = f + noise_std * rng.standard_normal(n)
    return Dataset(X=np.column_stack([x1, x2]), y=y, name="precip_synth")
