"""Benchmark metrics and their serialized report record.

All three reported quantities follow the smaller-is-better convention:
normalized mean square error, mean negative log predictive probability, and
the training objective (negative log marginal likelihood, or negative
evidence bound for inducing-point models).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError, UndefinedMetricError


def nmse(pred_mean, y_test, train_mean: float) -> float:
    """Squared error normalized by the variance around the training mean.

    ``mean((y - mu)^2) / mean((y - ybar_train)^2)``; the trivial predictor
    ``mu = ybar_train`` scores exactly 1.
    """
    mu = np.asarray(pred_mean, dtype=float).ravel()
    y = np.asarray(y_test, dtype=float).ravel()
    if mu.shape != y.shape:
        raise InputError(f"length mismatch: {mu.shape} vs {y.shape}")
    denom = float(np.mean((y - train_mean) ** 2))
    if denom == 0.0:
        raise UndefinedMetricError(
            "test targets all equal the training mean; normalizer is zero"
        )
    return float(np.mean((y - mu) ** 2)) / denom


def mnlp(pred_mean, pred_variance, y_test) -> float:
    """Mean negative log probability under per-point Gaussian predictions.

    ``(1/n) sum 0.5 [ (y - mu)^2 / v + log v + log 2pi ]`` with ``v`` the
    noise-inclusive predictive variance.
    """
    mu = np.asarray(pred_mean, dtype=float).ravel()
    v = np.asarray(pred_variance, dtype=float).ravel()
    y = np.asarray(y_test, dtype=float).ravel()
    if not (mu.shape == v.shape == y.shape):
        raise InputError("mean, variance and targets must have equal lengths")
    if np.any(v <= 0):
        raise InputError("predictive variances must be positive")
    return float(np.mean(0.5 * ((y - mu) ** 2 / v + np.log(v) + np.log(2.0 * np.pi))))


@dataclass(frozen=True)
class MetricReport:
    """Metric triple for one fitted model on one split."""

    model: str
    nmse: float
    mnlp: float
    nll_or_neg_elbo: float
    n_test: int
    seed: int

    def __post_init__(self):
        if self.nmse < 0:
            raise InputError("nmse must be non-negative")
        if self.n_test < 1:
            raise InputError("n_test must be at least 1")


def format_record(report: MetricReport) -> str:
    """Serialize to the key = value text record written by the benchmark CLI.

    Floats are rendered with 12 significant digits so identical runs produce
    byte-identical records.
    """
    lines = [
        f"model = {report.model}",
        f"nmse = {report.nmse:.12g}",
        f"mnlp = {report.mnlp:.12g}",
        f"nll_or_neg_elbo = {report.nll_or_neg_elbo:.12g}",
        f"n_test = {report.n_test}",
        f"seed = {report.seed}",
    ]
    return "\n".join(lines) + "\n"


def parse_record(text: str) -> MetricReport:
    """Inverse of :func:`format_record`."""
    fields: dict[str, str] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        fields[key.strip()] = value.strip()
    try:
        return MetricReport(
            model=fields["model"],
            nmse=float(fields["nmse"]),
            mnlp=float(fields["mnlp"]),
            nll_or_neg_elbo=float(fields["nll_or_neg_elbo"]),
            n_test=int(fields["n_test"]),
            seed=int(fields["seed"]),
        )
    except KeyError as exc:
        raise InputError(f"metric record is missing field {exc}") from None
