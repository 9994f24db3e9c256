"""Declarative experiment descriptions and the fit/predict/score pipeline.

An :class:`ExperimentConfig` names a dataset, a split, a model, a kernel
expression and optimizer settings; :func:`run_experiment` turns it into
metric records, prediction tables and a manifest of everything that was
resolved or optimized along the way.  Metrics are always reported in the
original units of the targets, also when fitting happens on standardized
values (the objective is shifted by ``N log s``, predictions are mapped
back).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import data as data_mod
from . import kernels as kern
from . import models
from .basis import HilbertBasisConfig, TunableBasisConfig
from .errors import ConfigError, InputError
from .metrics import MetricReport, mnlp, nmse
from .numerics import collect_jitter
from .optimize import (
    LOG_TRANSFORM,
    NO_TRANSFORM,
    Param,
    ParameterVector,
    multistart,
    penalized,
)

MODEL_NAMES = ("full", "tl", "hilbert", "vfe")
REGIMES = ("all", "fixed_shape", "shape_only")
SPLIT_RULES = ("random", "range", "sunspot", "index")

DEFAULT_ALPHA = 5.0
DEFAULT_BETA = 0.0


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one fit/predict/score run."""

    dataset: str = "snelson_synth"
    x_columns: tuple[str, ...] = ()
    y_column: str = ""
    dataset_n: int = 200
    dataset_seed: int = 0

    split_rule: str = "random"
    split_seed: int = 0
    train_fraction: float = 0.5
    test_ranges: tuple[tuple[float, float], ...] = ()
    test_indices: tuple[int, ...] = ()

    model: str = "full"
    kernel: str = "se()"
    standardize: bool = True
    noise_variance: float | None = None

    m: tuple[int, ...] = (50,)
    domain: tuple[tuple[float, float], ...] = ()
    augment: float = 0.1
    alpha: tuple[float, ...] = ()
    beta: tuple[float, ...] = ()
    regime: str = "all"

    inducing_optimize: bool = True
    inducing_cap: int = 0

    max_iter: int = 500
    tol: float = 1e-6
    period_starts: tuple[float, ...] = ()
    alpha_starts: tuple[float, ...] = ()
    random_starts: int = 0
    start_seed: int = 0

    grid_points: int = 200
    out_dir: str = ""
    data_dir: str = ""


def validate_config(config: ExperimentConfig) -> None:
    """Raise :class:`ConfigError` on an inconsistent configuration."""
    if config.model not in MODEL_NAMES:
        raise ConfigError(f"model must be one of {MODEL_NAMES}, got {config.model!r}")
    if config.split_rule not in SPLIT_RULES:
        raise ConfigError(
            f"split.rule must be one of {SPLIT_RULES}, got {config.split_rule!r}"
        )
    if config.regime not in REGIMES:
        raise ConfigError(f"basis.regime must be one of {REGIMES}, got {config.regime!r}")
    try:
        kern.parse_kernel(config.kernel)
    except InputError as exc:
        raise ConfigError(f"kernel expression does not parse: {exc}") from exc
    if any(mi < 1 for mi in config.m):
        raise ConfigError(f"m entries must be positive, got {config.m}")
    if config.model == "tl" and any(mi < 2 for mi in config.m):
        raise ConfigError("tl needs m >= 2 per dimension")
    if config.max_iter < 1:
        raise ConfigError("optimizer.max_iter must be >= 1")
    if config.augment < 0:
        raise ConfigError("basis.augment must be >= 0")
    if config.random_starts < 0:
        raise ConfigError("optimizer.random_starts must be >= 0")
    for lo, hi in config.domain:
        if not lo < hi:
            raise ConfigError(f"domain bounds must satisfy lb < ub, got ({lo}, {hi})")


# ---------------------------------------------------------------------------
# Dataset resolution
# ---------------------------------------------------------------------------


def load_dataset(config: ExperimentConfig) -> data_mod.Dataset:
    """Resolve the dataset reference: bundled name, synthetic name, or path."""
    name = config.dataset
    if name == "sunspots":
        return data_mod.load_sunspots()
    if name == "solar":
        return data_mod.load_solar()
    if name == "snelson_synth":
        return data_mod.synth_snelson_like(config.dataset_n, config.dataset_seed)
    if name == "precip_synth":
        return data_mod.synth_field_2d(config.dataset_n, config.dataset_seed)
    if name == "precipitation":
        return data_mod.load_precipitation(config.data_dir or ".")
    if not config.x_columns or not config.y_column:
        raise ConfigError(
            f"dataset {name!r} is a file path; dataset.x and dataset.y must name columns"
        )
    return data_mod.load_table(name, list(config.x_columns), config.y_column)


def make_split(config: ExperimentConfig, ds: data_mod.Dataset) -> data_mod.Split:
    if config.split_rule == "random":
        rule: data_mod.Rule = data_mod.RandomFraction(config.train_fraction)
    elif config.split_rule == "range":
        intervals = config.test_ranges or data_mod.default_test_windows(ds.X)
        rule = data_mod.Range(tuple(intervals))
    elif config.split_rule == "sunspot":
        rule = data_mod.SunspotRule()
    elif config.split_rule == "index":
        rule = data_mod.IndexList(tuple(config.test_indices))
    else:
        raise ConfigError(f"unknown split rule {config.split_rule!r}")
    return data_mod.split(ds, rule, seed=config.split_seed)


def resolve_domains(
    config: ExperimentConfig, ds: data_mod.Dataset
) -> tuple[tuple[float, float], ...]:
    """Basis domain per dimension: explicit config bounds, else augmented span."""
    if config.domain:
        if len(config.domain) != ds.dim:
            raise ConfigError(
                f"{len(config.domain)} domain pairs for {ds.dim}-dimensional data"
            )
        return tuple(config.domain)
    return tuple(data_mod.augment_domain(ds.X, config.augment))


# ---------------------------------------------------------------------------
# Parameter vectors and objectives
# ---------------------------------------------------------------------------


def _variance_leaf_indices(kernel: kern.Kernel) -> tuple[set[int], int]:
    """Leaf indices whose variance stays free, and the number of top terms.

    Inside a product only the first factor keeps a free variance; the others
    are redundant with it and stay frozen at their configured values.
    """
    free: set[int] = set()
    counter = [0]

    def walk(node: kern.Kernel, first_in_product: bool):
        if isinstance(node, kern.Sum):
            for t in node.terms:
                walk(t, True)
            return
        if isinstance(node, kern.Product):
            for i, f in enumerate(node.factors):
                walk(f, first_in_product and i == 0)
            return
        if first_in_product:
            free.add(counter[0])
        counter[0] += 1

    top = len(kernel.terms) if isinstance(kernel, kern.Sum) else 1
    walk(kernel, True)
    return free, top


def initial_kernel(config: ExperimentConfig, train: data_mod.Dataset) -> tuple[kern.Kernel, set[str]]:
    """Parse the kernel expression and fill data-driven defaults.

    Parameters not written in the expression get the standard defaults:
    variance = var(y) split over top-level terms (free-variance leaves only),
    lengthscale (and cosine period) = span/10 per dimension.
    """
    kernel, explicit = kern.parse_kernel_with_flags(config.kernel)
    pinned = kernel.input_dim()
    if pinned is not None and pinned != train.dim:
        raise ConfigError(
            f"kernel pins input dimension {pinned}, data has dimension {train.dim}"
        )
    spans = train.X.max(axis=0) - train.X.min(axis=0)
    mean_span = float(np.mean(spans))
    var_y = float(np.var(train.y, ddof=1)) if train.n > 1 else 1.0
    free_vars, n_terms = _variance_leaf_indices(kernel)
    values = dict(kern.leaf_parameters(kernel))
    for i, leaf in enumerate(kernel.leaves()):
        prefix = f"k{i}"
        if f"{prefix}.var" not in explicit and i in free_vars:
            values[f"{prefix}.var"] = var_y / n_terms
        if isinstance(leaf, kern.SEARD):
            for d in range(len(leaf.lengthscales)):
                if f"{prefix}.len{d}" not in explicit:
                    values[f"{prefix}.len{d}"] = float(spans[d]) / 10.0
        else:
            if f"{prefix}.len" not in explicit:
                values[f"{prefix}.len"] = mean_span / 10.0
    return kern.replace_leaf_parameters(kernel, values), explicit


@dataclass
class ModelSetup:
    """Initial parameters plus the closures that evaluate and fit a model."""

    pv0: ParameterVector
    nll_of: "callable"
    fit: "callable"
    extras: dict = field(default_factory=dict)


def _kernel_params(kernel: kern.Kernel, free_vars: set[int], freeze_all: bool) -> list[Param]:
    params = []
    for name, value in kern.leaf_parameters(kernel):
        leaf_idx = int(name.split(".")[0][1:])
        frozen = freeze_all or (name.endswith(".var") and leaf_idx not in free_vars)
        params.append(Param(name, value, LOG_TRANSFORM, frozen))
    return params


def _kernel_from_pv(template: kern.Kernel, pv: ParameterVector) -> kern.Kernel:
    values = {
        p.name: p.value for p in pv.params if p.name.startswith("k")
    }
    return kern.replace_leaf_parameters(template, values)


def build_setup(config: ExperimentConfig, train: data_mod.Dataset,
                source: data_mod.Dataset | None = None) -> ModelSetup:
    """Assemble the parameter vector and objective closures for one model.

    ``source`` (the unsplit dataset) only feeds domain resolution, so basis
    domains cover test inputs as well; it defaults to the training set.
    """
    validate_config(config)
    domain_base = source if source is not None else train
    kernel0, _ = initial_kernel(config, train)
    free_vars, _ = _variance_leaf_indices(kernel0)
    var_y = float(np.var(train.y, ddof=1)) if train.n > 1 else 1.0
    noise0 = config.noise_variance if config.noise_variance else 0.1 * var_y
    freeze_kernel = config.model == "tl" and config.regime == "shape_only"
    params = _kernel_params(kernel0, free_vars, freeze_kernel)
    params.append(Param("noise.var", noise0, LOG_TRANSFORM, freeze_kernel))
    X, y = train.X, train.y
    n = train.n

    if config.model == "full":
        pv0 = ParameterVector(tuple(params))

        def nll_of(pv: ParameterVector) -> float:
            kernel = _kernel_from_pv(kernel0, pv)
            return models.fullgp_nll(kernel, pv.get("noise.var"), X, y)

        def fit(pv: ParameterVector):
            kernel = _kernel_from_pv(kernel0, pv)
            noise = pv.get("noise.var")
            return lambda Xs: models.fullgp_predict(kernel, noise, X, y, Xs)

        return ModelSetup(pv0, nll_of, fit)

    if config.model in ("tl", "hilbert"):
        domains = resolve_domains(config, domain_base)
        ms = config.m if len(config.m) == train.dim else config.m * train.dim
        if len(ms) != train.dim:
            raise ConfigError(f"m={config.m} incompatible with {train.dim}-D data")

        if config.model == "hilbert":
            configs = tuple(
                HilbertBasisConfig(mi, dom) for mi, dom in zip(ms, domains)
            )
            feats = models.HilbertFeatures(configs)
            Phi = feats.matrix(X)
            PhiTPhi, PhiTy, yTy = Phi.T @ Phi, Phi.T @ y, float(y @ y)
            pv0 = ParameterVector(tuple(params))

            def nll_of(pv: ParameterVector) -> float:
                kernel = _kernel_from_pv(kernel0, pv)
                model = models.build_hilbert_model(kernel, configs, pv.get("noise.var"))
                return models.lowrank_nll_from_products(model, PhiTPhi, PhiTy, yTy, n)

            def fit(pv: ParameterVector):
                kernel = _kernel_from_pv(kernel0, pv)
                model = models.build_hilbert_model(kernel, configs, pv.get("noise.var"))
                return lambda Xs: models.lowrank_predict(model, X, y, Xs)

            return ModelSetup(pv0, nll_of, fit, extras={"configs": configs})

        alphas = config.alpha if config.alpha else (DEFAULT_ALPHA,) * train.dim
        betas = config.beta if config.beta else (DEFAULT_BETA,) * train.dim
        if len(alphas) != train.dim or len(betas) != train.dim:
            raise ConfigError("need one alpha and beta per input dimension")
        shape_frozen = config.regime == "fixed_shape"
        for d in range(train.dim):
            params.append(Param(f"basis.alpha{d}", float(alphas[d]), NO_TRANSFORM, shape_frozen))
            params.append(Param(f"basis.beta{d}", float(betas[d]), NO_TRANSFORM, shape_frozen))
        pv0 = ParameterVector(tuple(params))

        def tl_configs(pv: ParameterVector) -> tuple[TunableBasisConfig, ...]:
            return tuple(
                TunableBasisConfig(
                    pv.get(f"basis.alpha{d}"), pv.get(f"basis.beta{d}"), ms[d], domains[d]
                )
                for d in range(train.dim)
            )

        # Feature cross-products depend only on (alpha, beta); memoize the
        # last few so coordinate-wise finite differencing reuses them.
        cache: dict[tuple, tuple] = {}

        def products(cfgs):
            key = tuple((c.alpha, c.beta) for c in cfgs)
            hit = cache.get(key)
            if hit is None:
                Psi = models.TunableFeatures(cfgs).matrix(X)
                hit = (Psi.T @ Psi, Psi.T @ y)
                if len(cache) > 8:
                    cache.clear()
                cache[key] = hit
            return hit

        yTy = float(y @ y)

        def nll_of(pv: ParameterVector) -> float:
            kernel = _kernel_from_pv(kernel0, pv)
            cfgs = tl_configs(pv)
            model = models.build_tl_model(kernel, cfgs, pv.get("noise.var"))
            PsiTPsi, PsiTy = products(cfgs)
            return models.lowrank_nll_from_products(model, PsiTPsi, PsiTy, yTy, n)

        def fit(pv: ParameterVector):
            kernel = _kernel_from_pv(kernel0, pv)
            model = models.build_tl_model(kernel, tl_configs(pv), pv.get("noise.var"))
            return lambda Xs: models.lowrank_predict(model, X, y, Xs)

        return ModelSetup(pv0, nll_of, fit, extras={"domains": domains, "ms": ms})

    # vfe
    num = int(np.prod(config.m)) if train.dim > 1 else config.m[0]
    if config.inducing_cap:
        num = min(num, config.inducing_cap)
    num = min(num, n)
    z0 = models.quantile_inducing_points(X, num).z
    for i in range(z0.shape[0]):
        if train.dim == 1:
            params.append(
                Param(f"z.{i}", float(z0[i, 0]), NO_TRANSFORM, not config.inducing_optimize)
            )
        else:
            for d in range(train.dim):
                params.append(
                    Param(
                        f"z.{i}.{d}", float(z0[i, d]), NO_TRANSFORM,
                        not config.inducing_optimize,
                    )
                )
    pv0 = ParameterVector(tuple(params))

    def inducing_from(pv: ParameterVector) -> models.InducingSet:
        vals = pv.values()
        if train.dim == 1:
            z = np.array([vals[f"z.{i}"] for i in range(num)])[:, None]
        else:
            z = np.array(
                [[vals[f"z.{i}.{d}"] for d in range(train.dim)] for i in range(num)]
            )
        return models.InducingSet(z)

    def nll_of(pv: ParameterVector) -> float:
        kernel = _kernel_from_pv(kernel0, pv)
        return -models.vfe_elbo(kernel, pv.get("noise.var"), inducing_from(pv), X, y)

    def fit(pv: ParameterVector):
        kernel = _kernel_from_pv(kernel0, pv)
        noise = pv.get("noise.var")
        Z = inducing_from(pv)
        return lambda Xs: models.vfe_predict(kernel, noise, Z, X, y, Xs)

    return ModelSetup(pv0, nll_of, fit, extras={"num_inducing": num})


def objective_value(config: ExperimentConfig, train: data_mod.Dataset,
                    pv: ParameterVector | None = None) -> float:
    """Objective (NLL or negative evidence bound) at the given parameters.

    Numerical failures come back as the optimizer's large penalty value.
    """
    setup = build_setup(config, train)
    pv = pv if pv is not None else setup.pv0
    return penalized(lambda x: setup.nll_of(pv.unpack(x)))(pv.pack())


def _starting_points(config: ExperimentConfig, setup: ModelSetup,
                     kernel0: kern.Kernel) -> list[np.ndarray]:
    """Multistart inits: cosine-period grid x alpha grid + random perturbations."""
    base = setup.pv0
    cosine_names = [
        f"k{i}.len"
        for i, leaf in enumerate(kernel0.leaves())
        if isinstance(leaf, kern.Cosine)
    ]
    variants = [base]
    if config.period_starts and cosine_names:
        variants = []
        combos = [()]
        for _ in cosine_names:
            combos = [c + (p,) for c in combos for p in config.period_starts]
        for combo in combos:
            pv = base
            for name, period in zip(cosine_names, combo):
                pv = pv.with_value(name, float(period))
            variants.append(pv)
    if config.alpha_starts and any(p.name.startswith("basis.alpha") for p in base.params):
        alpha_names = [p.name for p in base.params if p.name.startswith("basis.alpha")]
        widened = []
        for pv in variants:
            for a in config.alpha_starts:
                pw = pv
                for name in alpha_names:
                    pw = pw.with_value(name, float(a))
                widened.append(pw)
        variants = widened
    starts = [pv.pack() for pv in variants]
    if config.random_starts:
        rng = np.random.default_rng(config.start_seed)
        free = ~base.frozen_mask
        for _ in range(config.random_starts):
            x = base.pack()
            x[free] = x[free] + 0.5 * rng.standard_normal(free.sum())
            starts.append(x)
    return starts


# ---------------------------------------------------------------------------
# Running one experiment
# ---------------------------------------------------------------------------


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    report: MetricReport
    test_table: np.ndarray
    grid_table: np.ndarray
    manifest: dict


def _prediction_grid(config: ExperimentConfig, ds: data_mod.Dataset,
                     domains) -> np.ndarray:
    if ds.dim == 1:
        lo, hi = domains[0]
        return np.linspace(lo, hi, max(2, config.grid_points))[:, None]
    per_dim = max(2, min(60, int(round(math.sqrt(config.grid_points) * 3))))
    axes = [np.linspace(lo, hi, per_dim) for lo, hi in domains]
    g1, g2 = np.meshgrid(axes[0], axes[1], indexing="ij")
    return np.column_stack([g1.ravel(), g2.ravel()])


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Load, split, fit, predict and score one configured experiment."""
    validate_config(config)
    t_start = time.perf_counter()
    source = load_dataset(config)
    split_ = make_split(config, source)
    train_raw, test_raw = split_.train, split_.test
    train = data_mod.standardize(train_raw) if config.standardize else train_raw
    record = train.standardization
    y_scale = record.y_scale if record is not None else 1.0

    setup = build_setup(config, train, source=source)
    kernel0, _ = initial_kernel(config, train)
    starts = _starting_points(config, setup, kernel0)
    objective = penalized(lambda x: setup.nll_of(setup.pv0.unpack(x)))
    best, all_results = multistart(
        objective,
        starts,
        max_iter=config.max_iter,
        tol=config.tol,
        frozen=setup.pv0.frozen_mask,
    )
    pv_best = setup.pv0.unpack(best.x)

    with collect_jitter() as jitter_events:
        predictor = setup.fit(pv_best)
        pred_test = predictor(test_raw.X)
        domains = (
            setup.extras.get("domains")
            or (tuple(config.domain) if config.domain else resolve_domains(config, source))
        )
        grid = _prediction_grid(config, source, domains)
        pred_grid = predictor(grid)

    if record is not None:
        mean_test = record.inverse_y(pred_test.mean)
        var_test = record.inverse_variance(pred_test.variance)
        mean_grid = record.inverse_y(pred_grid.mean)
        var_grid = record.inverse_variance(pred_grid.variance)
        objective_orig = best.fun + train.n * math.log(y_scale)
    else:
        mean_test, var_test = pred_test.mean, pred_test.variance
        mean_grid, var_grid = pred_grid.mean, pred_grid.variance
        objective_orig = best.fun

    train_mean = float(np.mean(train_raw.y))
    report = MetricReport(
        model=config.model,
        nmse=nmse(mean_test, test_raw.y, train_mean),
        mnlp=mnlp(mean_test, var_test, test_raw.y),
        nll_or_neg_elbo=objective_orig,
        n_test=test_raw.n,
        seed=config.split_seed,
    )

    half_test = 1.96 * np.sqrt(var_test)
    test_table = np.column_stack(
        [test_raw.X, mean_test, mean_test - half_test, mean_test + half_test]
    )
    half_grid = 1.96 * np.sqrt(var_grid)
    grid_table = np.column_stack(
        [grid, mean_grid, mean_grid - half_grid, mean_grid + half_grid]
    )

    manifest = {
        "model": config.model,
        "kernel_expression": config.kernel,
        "dataset": source.name,
        "n_train": train_raw.n,
        "n_test": test_raw.n,
        "standardize": config.standardize,
        "y_scale": y_scale,
        "objective_standardized": best.fun,
        "objective_original_units": objective_orig,
        "optimizer_iterations": best.iterations,
        "optimizer_converged": best.converged,
        "optimizer_message": best.message,
        "n_starts": len(starts),
        "start_objectives": [
            (None if r is None else r.fun) for r in all_results
        ],
        "jitter_events": list(jitter_events),
        "wall_time_seconds": time.perf_counter() - t_start,
        "optimized_parameters": pv_best.values(),
        "frozen_parameters": [p.name for p in pv_best.params if p.frozen],
    }
    if split_.test_groups is not None:
        manifest["test_groups"] = {
            k: int(v.size) for k, v in split_.test_groups.items()
        }
    return ExperimentResult(
        config=config,
        report=report,
        test_table=test_table,
        grid_table=grid_table,
        manifest=manifest,
    )


def run_sweep(config: ExperimentConfig, m_values, include_full: bool = True):
    """Re-run the experiment per basis size; optionally add the exact-GP row.

    Returns a list of (label, m, MetricReport | error message) rows.
    """
    rows = []
    if include_full:
        try:
            res = run_experiment(replace(config, model="full"))
            rows.append(("full", None, res.report))
        except Exception as exc:  # noqa: BLE001 - partial results are flagged
            rows.append(("full", None, f"error: {type(exc).__name__}: {exc}"))
    for m in m_values:
        cfg = replace(config, m=(int(m),))
        try:
            res = run_experiment(cfg)
            rows.append((config.model, int(m), res.report))
        except Exception as exc:  # noqa: BLE001
            rows.append((config.model, int(m), f"error: {type(exc).__name__}: {exc}"))
    return rows


def run_compare(configs) -> list[tuple[str, MetricReport]]:
    """Run several configs on the identical dataset/split and collect reports."""
    configs = list(configs)
    if len(configs) < 2:
        raise ConfigError("compare needs at least two configurations")
    ref = configs[0]
    for cfg in configs[1:]:
        same = (
            cfg.dataset == ref.dataset
            and cfg.dataset_n == ref.dataset_n
            and cfg.dataset_seed == ref.dataset_seed
            and cfg.split_rule == ref.split_rule
            and cfg.split_seed == ref.split_seed
            and cfg.train_fraction == ref.train_fraction
            and cfg.test_ranges == ref.test_ranges
            and cfg.test_indices == ref.test_indices
        )
        if not same:
            raise ConfigError(
                "compared configurations must share dataset and split settings "
                f"(mismatch between {ref.model} and {cfg.model} configs)"
            )
    out = []
    for cfg in configs:
        res = run_experiment(cfg)
        out.append((cfg.model, res.report))
    return out
