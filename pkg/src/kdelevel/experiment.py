"""Monte Carlo harness for the degenerate limits of plug-in level-set errors.

Level mode (``theorem``) checks that ``sqrt(n h^k) * lambda_g(L_n(t) ^ L(t))``
approaches ``sqrt(2 t Ktilde / pi) * int_{f = t} g / |grad f| dH``.
Probability mode (``corollary``) checks that
``sqrt(n h^k) * beta_n / sqrt(t_n) * lambda(L_n(t_n) ^ L(t^(p)))`` approaches
``sqrt(2 Ktilde / pi)``.

Every replication is a pure function of the config, ``n`` and the
replication index, so results do not depend on the worker count.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import kde
from .field_geometry import GridSpec, ScalarField, boundary_integral_band, symmetric_difference_measure, threshold
from .kernels import (COROLLARY, THEOREM, BandwidthSchedule, Kernel, get_kernel,
                      kernel_l2_norm, violated_condition)
from .levelset import EmptyBandError, beta_n, quantile_level
from .models import DensityModel, make_model

log = logging.getLogger(__name__)

Weight = Any  # "one", "f", a constant, or a callable on (m, k) points


class ConfigError(ValueError):
    """Experiment configuration violates a precondition."""


class ReplicationError(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    mode: str = THEOREM
    model: str = "gaussian2d"
    model_params: dict = field(default_factory=dict)
    kernel: str = "epanechnikov"
    schedule: BandwidthSchedule = field(default_factory=BandwidthSchedule)
    n_values: tuple[int, ...] = (2048, 8192, 32768)
    replications: int = 100
    t: float | None = None
    p: float | None = None
    alpha_c: float = 1.0
    alpha_gamma: float | None = None
    weight: Weight = "one"
    grid_factor: float = 0.25
    quantile_tol: float = 1e-6
    seed_base: int = 0
    use_oracle_field: bool = False

    def build_model(self) -> DensityModel:
        return make_model(self.model, **self.model_params)

    def build_kernel(self, k: int) -> Kernel:
        return get_kernel(self.kernel, k)

    def effective_alpha_gamma(self, k: int) -> float:
        if self.alpha_gamma is not None:
            return self.alpha_gamma
        return (1.0 - k * self.schedule.gamma) / 4.0

    def alpha_n(self, n: int, k: int) -> float:
        return self.alpha_c * float(n) ** (-self.effective_alpha_gamma(k))

    def validate(self) -> DensityModel:
        """Check every precondition; return the model on success."""
        if self.mode not in (THEOREM, COROLLARY):
            raise ConfigError(f"mode must be {THEOREM!r} or {COROLLARY!r}, got {self.mode!r}")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if not self.n_values or any(n < 2 for n in self.n_values):
            raise ConfigError("n_values must be a nonempty list of sample sizes >= 2")
        if not self.grid_factor > 0:
            raise ConfigError("grid_factor must be positive")
        try:
            model = self.build_model()
            kernel = self.build_kernel(model.k)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        k = model.k
        if self.mode == COROLLARY and k < 2:
            raise ConfigError(
                "probability mode needs k >= 2: in dimension one the bandwidth conditions "
                "of the level-t limit do not permit the fixed-probability result"
            )
        bad = violated_condition(self.schedule, k, self.mode)
        if bad:
            raise ConfigError(f"inadmissible bandwidth schedule: {bad}")
        if self.mode == THEOREM:
            if self.t is None:
                raise ConfigError("level mode needs a level t")
            try:
                model.check_theta(self.t)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
            constant = isinstance(self.weight, (int, float)) and self.weight >= 0
            if self.weight not in ("one", "f") and not callable(self.weight) and not constant:
                raise ConfigError(f"weight must be 'one', 'f', a nonnegative constant or a callable, got {self.weight!r}")
        else:
            if self.p is None or not 0.0 <= self.p <= 1.0:
                raise ConfigError(f"probability p must lie in [0, 1], got {self.p!r}")
            try:
                model.check_theta(model.quantile_level(self.p))
            except ValueError as exc:
                raise ConfigError(f"p={self.p}: {exc}") from exc
            if not self.alpha_c > 0:
                raise ConfigError("alpha_c must be positive")
            ga = self.effective_alpha_gamma(k)
            slack = (1.0 - k * self.schedule.gamma) / 2.0
            if not 0.0 < ga < slack:
                raise ConfigError(
                    f"alpha_n rule violates alpha_n -> 0 with alpha_n^2 n h^k / (log n)^2 -> inf: "
                    f"need 0 < gamma_alpha < {slack:.6g}, got {ga}"
                )
        if not kernel.support_radius > 0:
            raise ConfigError("kernel must be compactly supported")
        return model


@dataclass(frozen=True)
class ReplicationRecord:
    mode: str
    n: int
    rep: int
    seed: int
    h: float
    statistic: float
    t_n: float
    beta_n: float
    lambda_delta: float
    failure: str = ""

    @property
    def failed(self) -> bool:
        return bool(self.failure)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list[ReplicationRecord]
    theoretical_limit: float
    limit_source: str
    t_oracle: float

    def for_n(self, n: int, completed: bool = True) -> list[ReplicationRecord]:
        return [r for r in self.records if r.n == n and not (completed and r.failed)]

    def statistics(self, n: int) -> np.ndarray:
        return np.array([r.statistic for r in self.for_n(n)])

    def t_errors(self, n: int) -> np.ndarray:
        return np.array([r.t_n - self.t_oracle for r in self.for_n(n)])


def _boundary_integral(model: DensityModel, t: float, g: Weight, method: str) -> tuple[float, str]:
    # "band": coarea band derivative on the rasterized oracle density
    if method in ("auto", "oracle"):
        try:
            return model.boundary_integral(t, g), "oracle"
        except ValueError:
            if method == "oracle":
                raise
    lo, hi = model.bounding_box()
    grid = GridSpec.covering(lo, hi, 0.005)
    f = model.rasterize(grid)
    return boundary_integral_band(f, t, 0.01 * t, _weight_field(g, grid, f)), "band"


def theoretical_limit_theorem(model: DensityModel, t: float, g: Weight = "one",
                              kernel: Kernel | None = None, method: str = "auto") -> float:
    """``sqrt(2 t Ktilde / pi) * int_{f = t} g / |grad f| dH`` for ``t`` inside Theta."""
    return _theorem_limit(model, t, g, kernel, method)[0]


def _theorem_limit(model, t, g, kernel, method):
    model.check_theta(t)
    kernel = kernel or get_kernel("epanechnikov", model.k)
    bi, source = _boundary_integral(model, t, g, method)
    return math.sqrt(2.0 * t * kernel_l2_norm(kernel) / math.pi) * bi, source


def theoretical_limit_corollary(kernel: Kernel | None = None, l2_norm: float | None = None) -> float:
    """``sqrt(2 Ktilde / pi)``; pass ``l2_norm`` directly to skip quadrature."""
    if l2_norm is None:
        if kernel is None:
            raise ValueError("need a kernel or its L2 norm")
        l2_norm = kernel_l2_norm(kernel)
    return math.sqrt(2.0 * l2_norm / math.pi)


def _weight_field(g: Weight, grid: GridSpec, oracle: ScalarField) -> ScalarField | None:
    if g == "one":
        return None
    if g == "f":
        return oracle
    if callable(g):
        return ScalarField.from_function(grid, g)
    return ScalarField(grid, np.full(grid.size, float(g)))


def replicate(config: ExperimentConfig, n: int, rep: int) -> ReplicationRecord:
    """Run replication ``rep`` at sample size ``n``; pure in its arguments."""
    model = config.build_model()
    kernel = config.build_kernel(model.k)
    seed = config.seed_base + rep
    h = config.schedule(n)
    spec = kde.KdeSpec(kernel, h, model.sample(n, seed))
    lo, hi = model.bounding_box()
    grid = kde.grid_for(spec, config.grid_factor * h, lo, hi)
    oracle = model.rasterize(grid)
    fn = oracle if config.use_oracle_field else kde.evaluate_grid(spec, grid)
    scale = math.sqrt(n * h ** model.k)

    if config.mode == THEOREM:
        t = config.t
        lam = symmetric_difference_measure(threshold(fn, t), threshold(oracle, t),
                                           _weight_field(config.weight, grid, oracle))
        return ReplicationRecord(THEOREM, n, rep, seed, h, scale * lam, t, math.nan, lam)

    t_p = model.quantile_level(config.p)
    sol = quantile_level(fn, config.p, config.quantile_tol)
    lam = symmetric_difference_measure(threshold(fn, sol.t_n), threshold(oracle, t_p))
    try:
        beta = beta_n(fn, sol.t_n, config.alpha_n(n, model.k))
    except EmptyBandError as exc:
        return ReplicationRecord(COROLLARY, n, rep, seed, h, math.nan, sol.t_n, math.nan, lam, str(exc))
    stat = scale * beta / math.sqrt(sol.t_n) * lam if sol.t_n > 0 else math.nan
    failure = "" if sol.t_n > 0 else "t_n = 0"
    return ReplicationRecord(COROLLARY, n, rep, seed, h, stat, sol.t_n, beta, lam, failure)


def _replicate_job(args):
    config, n, rep = args
    try:
        return replicate(config, n, rep)
    except Exception as exc:  # re-raised with context in the parent
        return exc


def run(config: ExperimentConfig, workers: int = 1,
        progress: Callable[[int, int], None] | None = None) -> ExperimentResult:
    """Run every (n, replication) job and attach the theoretical limit."""
    model = config.validate()
    kernel = config.build_kernel(model.k)
    if config.mode == THEOREM:
        limit, source = _theorem_limit(model, config.t, config.weight, kernel, "auto")
        t_oracle = config.t
    else:
        limit, source = theoretical_limit_corollary(kernel), "closed form"
        t_oracle = model.quantile_level(config.p)

    jobs = [(config, n, r) for n in config.n_values for r in range(config.replications)]
    if workers > 1 and not callable(config.weight):
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_replicate_job, jobs, chunksize=max(1, len(jobs) // (8 * workers))))
    else:
        outcomes = []
        for i, job in enumerate(jobs):
            outcomes.append(_replicate_job(job))
            if progress:
                progress(i + 1, len(jobs))
    records = []
    for (_, n, r), out in zip(jobs, outcomes):
        if isinstance(out, Exception):
            raise ReplicationError(
                f"replication failed at n={n}, rep={r}, seed={config.seed_base + r}: {out}"
            ) from out
        if out.failed:
            log.warning("n=%d rep=%d excluded: %s", n, r, out.failure)
        records.append(out)
    return ExperimentResult(config, records, limit, source, t_oracle)


def run_theorem(config: ExperimentConfig, workers: int = 1) -> ExperimentResult:
    if config.mode != THEOREM:
        raise ConfigError("run_theorem needs mode='theorem'")
    return run(config, workers)


def run_corollary(config: ExperimentConfig, workers: int = 1) -> ExperimentResult:
    if config.mode != COROLLARY:
        raise ConfigError("run_corollary needs mode='corollary'")
    return run(config, workers)


@dataclass(frozen=True)
class SummaryRow:
    n: int
    h: float
    mean: float
    median: float
    std: float
    se: float
    limit: float
    ratio: float
    ratio_se: float
    failures: int
    t_error_std: float


def summarize(result: ExperimentResult) -> list[SummaryRow]:
    if not result.records:
        raise ValueError("cannot summarize an empty result")
    rows = []
    for n in result.config.n_values:
        all_n = [r for r in result.records if r.n == n]
        stats = result.statistics(n)
        if stats.size == 0:
            raise ValueError(f"no completed replications at n={n}")
        std = float(np.std(stats, ddof=1)) if stats.size > 1 else 0.0
        se = std / math.sqrt(stats.size)
        mean = float(np.mean(stats))
        lim = result.theoretical_limit
        ratio = mean / lim if lim > 0 else math.nan
        errs = result.t_errors(n)
        rows.append(SummaryRow(
            n=n, h=all_n[0].h, mean=mean, median=float(np.median(stats)), std=std, se=se,
            limit=lim, ratio=ratio, ratio_se=se / lim if lim > 0 else math.nan,
            failures=sum(r.failed for r in all_n),
            t_error_std=float(np.std(errs, ddof=1)) if errs.size > 1 else 0.0,
        ))
    return rows


def trend_holds(rows: list[SummaryRow], n_se: float = 2.0) -> bool:
    """True if ``|ratio - 1|`` never grows between consecutive n beyond ``n_se``
    standard errors of the difference."""
    for a, b in zip(rows, rows[1:]):
        slack = n_se * math.hypot(a.ratio_se, b.ratio_se)
        if abs(b.ratio - 1.0) > abs(a.ratio - 1.0) + slack:
            return False
    return True


REPLICATION_COLUMNS = ["mode", "n", "rep", "seed", "statistic", "t_n", "beta_n", "lambda_delta"]


def write_results(result: ExperimentResult, out_dir) -> dict[str, Path]:
    """Write per-replication, summary and plot-data CSV files into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "replications": out / "replications.csv",
        "summary": out / "summary.csv",
        "plot_data": out / "plot_data.csv",
    }
    with paths["replications"].open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPLICATION_COLUMNS + ["failure"])
        for r in result.records:
            w.writerow([r.mode, r.n, r.rep, r.seed, repr(r.statistic), repr(r.t_n),
                        repr(r.beta_n), repr(r.lambda_delta), r.failure])
    rows = summarize(result)
    with paths["summary"].open("w", newline="") as fh:
        w = csv.writer(fh)
        names = list(asdict(rows[0]))
        w.writerow(names)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in asdict(row).values()])
    with paths["plot_data"].open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "ratio", "ratio_err"])
        for row in rows:
            w.writerow([row.n, repr(row.ratio), repr(2.0 * row.ratio_se)])
    return paths
