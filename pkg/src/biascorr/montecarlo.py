"""Data-generating processes, replication engine and summary tables.

Replicate ``r`` draws its data from ``SeedSequence(master_seed, spawn_key=(r,))``
and its bootstrap counts from a seed derived from ``(master_seed, r, 1)``.
Replicates are processed in chunks of fixed size and the per-replicate
results are stored by index, so summaries do not depend on how chunks are
scheduled across worker processes.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from statistics import NormalDist
from typing import Optional, Union

import numpy as np

from . import corrections as cx
from .errors import ConfigError, ExcessFailures, ParseError, SchemaMismatch
from .estimate import OK, SolverOpts, fit_ok, solve_panel, solve_scalar
from .models import Dataset, PanelDataset, builtin_model

DGP_KINDS = (
    "sqrt-mean-normal",
    "neyman-scott",
    "panel-probit-serial",
    "panel-probit-iid",
    "ar1",
)
PANEL_KINDS = ("neyman-scott", "panel-probit-serial", "panel-probit-iid")

CROSS_ESTIMATORS = (
    "mle",
    "jackknife",
    "split",
    "bootstrap",
    "analytic-sample",
    "analytic-infoeq",
    "analytic-integral",
    "ar1-analytic",
)
PANEL_ESTIMATORS = ("mle", "jackknife", "split")

CSV_COLUMNS = ("estimator", "bias", "sd", "mean_se", "se_sd_ratio", "mse", "rej_10", "rej_05", "failures")
MAX_FAILURE_SHARE = 0.02
BOOTSTRAP_FAILURE_SHARE = 0.01

_DGP_ALIASES = {
    "sqrtmeannormal": "sqrt-mean-normal",
    "smn": "sqrt-mean-normal",
    "neymanscott": "neyman-scott",
    "ns": "neyman-scott",
    "panelprobitserial": "panel-probit-serial",
    "panelprobitserialx": "panel-probit-serial",
    "probit": "panel-probit-serial",
    "panelprobitiid": "panel-probit-iid",
    "panelprobitiidx": "panel-probit-iid",
    "ar1": "ar1",
}


def canonical_dgp(name: str) -> str:
    key = name.lower().replace("-", "").replace("_", "")
    if key not in _DGP_ALIASES:
        raise ConfigError(f"unknown dgp {name!r}; choose from {', '.join(DGP_KINDS)}")
    return _DGP_ALIASES[key]


@dataclass(frozen=True)
class DgpSpec:
    """A data-generating process.

    ``T`` is the number of periods for panels and the series length for
    ``ar1``; it is ignored by ``sqrt-mean-normal``.  ``u_width`` is the width
    of the uniform shock in the serially correlated probit regressor; zero
    gives the deterministic recursion.
    """

    kind: str
    theta: float
    n: int = 1
    T: int = 1
    sigma: float = 1.0
    u_width: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", canonical_dgp(self.kind))
        if self.kind == "ar1":
            if self.T < 2:
                raise ConfigError("ar1 needs T >= 2")
            if not abs(self.theta) < 1.0:
                raise ConfigError("ar1 needs |theta| < 1 for a stationary start")
            if self.sigma <= 0:
                raise ConfigError("sigma must be positive")
        elif self.n < 1:
            raise ConfigError("n must be at least 1")
        if self.kind in PANEL_KINDS and self.T < 2:
            raise ConfigError("panel designs need T >= 2")
        if self.kind in ("sqrt-mean-normal", "neyman-scott") and not self.theta > 0:
            raise ConfigError(f"{self.kind} needs theta > 0")
        if self.u_width < 0:
            raise ConfigError("u_width must be non-negative")

    @property
    def is_panel(self) -> bool:
        return self.kind in PANEL_KINDS

    @property
    def size(self) -> int:
        """Number of observations that scale the bias (n, or T for panels and ar1)."""
        return self.T if self.is_panel or self.kind == "ar1" else self.n

    def model(self):
        if self.kind == "sqrt-mean-normal":
            return builtin_model("SqrtMeanNormal")
        if self.kind == "neyman-scott":
            return builtin_model("NeymanScott")
        if self.kind == "ar1":
            return builtin_model("AR1", sigma=self.sigma)
        return builtin_model("Probit")


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def _draw(dgp: DgpSpec, rng: np.random.Generator) -> np.ndarray:
    n, T, theta = dgp.n, dgp.T, dgp.theta
    if dgp.kind == "sqrt-mean-normal":
        return (math.sqrt(theta) + rng.standard_normal(n))[:, None]
    if dgp.kind == "ar1":
        y = np.empty(T + 1)
        y[0] = rng.standard_normal() * dgp.sigma / math.sqrt(1.0 - theta * theta)
        eps = dgp.sigma * rng.standard_normal(T)
        for t in range(T):
            y[t + 1] = theta * y[t] + eps[t]
        return np.column_stack([y[:-1], y[1:]])
    alpha = rng.standard_normal(n)
    if dgp.kind == "neyman-scott":
        z = alpha[:, None] + math.sqrt(theta) * rng.standard_normal((n, T))
        return z[..., None]
    if dgp.kind == "panel-probit-iid":
        x = rng.uniform(-1.0, 1.0, (n, T))
    else:
        u = dgp.u_width * (rng.random((n, T + 1)) - 0.5)
        x = np.empty((n, T + 1))
        x[:, 0] = u[:, 0]
        for t in range(1, T + 1):
            x[:, t] = t / 10.0 + x[:, t - 1] / 2.0 + u[:, t]
        x = x[:, 1:]
    eps = rng.standard_normal((n, T))
    y = (theta * x + alpha[:, None] + eps > 0).astype(float)
    return np.stack([y, x], axis=-1)


def generate(dgp: DgpSpec, replicate_seed) -> Union[Dataset, PanelDataset]:
    """Draw one sample; identical seeds give identical data."""
    raw = _draw(dgp, _rng(replicate_seed))
    return PanelDataset(raw) if dgp.is_panel else Dataset(raw)


def replicate_seed(master_seed: int, r: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(master_seed, spawn_key=(r,))


def bootstrap_seed(master_seed: int, r: int) -> int:
    state = np.random.SeedSequence(master_seed, spawn_key=(r, 1)).generate_state(2, np.uint32)
    return int(state[0]) << 32 | int(state[1])


@dataclass(frozen=True)
class SimulationConfig:
    dgp: DgpSpec
    estimators: tuple[str, ...] = ("mle", "jackknife", "split")
    replications: int = 1000
    master_seed: int = 0
    bootstrap_B: int = 1000
    bootstrap_control: bool = False
    test_levels: tuple[float, ...] = (0.10, 0.05)
    null_value: Optional[float] = None
    workers: int = 1
    chunk_size: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "estimators", tuple(self.estimators))
        object.__setattr__(self, "test_levels", tuple(float(a) for a in self.test_levels))
        if self.replications < 1:
            raise ConfigError("replications must be at least 1")
        if self.master_seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.bootstrap_B < 1:
            raise ConfigError("bootstrap_B must be at least 1")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if any(not 0.0 < a < 1.0 for a in self.test_levels):
            raise ConfigError("test levels must lie in (0, 1)")
        allowed = PANEL_ESTIMATORS if self.dgp.is_panel else CROSS_ESTIMATORS
        for name in self.estimators:
            if name not in allowed:
                raise ConfigError(f"estimator {name!r} not available for {self.dgp.kind}")
        if "ar1-analytic" in self.estimators and self.dgp.kind != "ar1":
            raise ConfigError("ar1-analytic needs the ar1 design")
        if "analytic-integral" in self.estimators and self.dgp.model().expectations is None:
            raise ConfigError(f"analytic-integral needs closed-form expectations, unavailable for {self.dgp.kind}")
        if len(set(self.estimators)) != len(self.estimators):
            raise ConfigError("duplicate estimator names")

    @property
    def null(self) -> float:
        return self.dgp.theta if self.null_value is None else float(self.null_value)

    @property
    def chunk(self) -> int:
        if self.chunk_size is not None:
            return max(1, int(self.chunk_size))
        if self.dgp.kind.startswith("panel-probit"):
            return 25
        if self.dgp.is_panel:
            return 500
        return 2000


@dataclass
class ReplicateTable:
    """Per-replicate results, indexed by replicate number.

    ``theta`` holds corrected estimates, ``bias`` the bias estimates on the
    ``size`` scale (zero for ``mle``), ``se`` the full-sample standard error
    and ``ok`` whether the replicate succeeded for that estimator.
    """

    theta: dict
    bias: dict
    ok: dict
    se: np.ndarray
    theta_hat: np.ndarray


# ---------------------------------------------------------------------------
# chunk workers
# ---------------------------------------------------------------------------


def _stack(dgp: DgpSpec, master_seed: int, start: int, stop: int) -> np.ndarray:
    return np.stack([_draw(dgp, _rng(replicate_seed(master_seed, r))) for r in range(start, stop)])


def _cross_chunk(config: SimulationConfig, start: int, stop: int, opts: SolverOpts):
    dgp = config.dgp
    model = dgp.model()
    obs = _stack(dgp, config.master_seed, start, stop)
    C, n, _ = obs.shape
    size = n
    init = np.array([model.init(o) for o in obs])
    inside = np.array([model.domain.contains(t) for t in init])
    init = np.where(inside, init, 1.0)
    if model.sufficient is not None:
        means = model.sufficient.compute(obs).mean(axis=1)[:, None, :]
        theta, status, _, _, hess = solve_scalar(model, init[:, None], opts, means=means)
    else:
        weights = np.full((1, 1, n), 1.0 / n)
        theta, status, _, _, hess = solve_scalar(model, init[:, None], opts, obs=obs, weights=weights)
    theta, status, hess = theta[:, 0], status[:, 0], hess[:, 0]
    ok_full = inside & (status == OK) & (hess < 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        se = np.where(ok_full, 1.0 / np.sqrt(-n * np.where(hess < 0, hess, -1.0)), np.nan)
    theta_safe = np.where(ok_full, theta, init)

    bias, ok = {}, {}
    for name in config.estimators:
        if name == "mle":
            b, good = np.zeros(C), np.ones(C, dtype=bool)
        elif name in ("jackknife", "split"):
            kind = "loo" if name == "jackknife" else "split"
            sub, st = cx.refit_scalar(model, obs, kind, theta_safe, opts)
            value = cx.jackknife_value if name == "jackknife" else cx.split_value
            b, good = value(sub, theta_safe, size), fit_ok(st).all(axis=1)
        elif name == "bootstrap":
            b, good = _bootstrap_chunk(config, model, obs, theta_safe, start, opts)
        elif name in ("analytic-sample", "analytic-infoeq"):
            m = cx.sample_moments(model, obs, theta_safe)
            fn = cx.analytic_sample_value if name == "analytic-sample" else cx.analytic_infoeq_value
            with np.errstate(invalid="ignore", divide="ignore"):
                b = fn(m)
            good = np.abs(m["d2"]) >= 1e-12
        elif name == "analytic-integral":
            e = model.expectations
            with np.errstate(invalid="ignore", divide="ignore"):
                b = cx.analytic_infoeq_value(
                    {"d2": e.d2(theta_safe), "d3": e.d3(theta_safe), "score_d2": e.score_d2(theta_safe)}
                )
            good = np.isfinite(b)
        else:  # ar1-analytic
            b, good = -2.0 * theta_safe, np.ones(C, dtype=bool)
        b = np.asarray(b, dtype=float)
        good = ok_full & good & np.isfinite(b)
        bias[name] = np.where(good, b, np.nan)
        ok[name] = good
    return theta, se, ok_full, bias, ok, size


def _bootstrap_chunk(config, model, obs, theta, start, opts):
    C, n, _ = obs.shape
    B = config.bootstrap_B
    group = max(1, 2_000_000 // (B * n))
    values = np.empty(C)
    good = np.empty(C, dtype=bool)
    for lo in range(0, C, group):
        hi = min(C, lo + group)
        seeds = [bootstrap_seed(config.master_seed, start + r) for r in range(lo, hi)]
        v, failures, _ = cx.bootstrap_bias_batch(
            model, obs[lo:hi], theta[lo:hi], B, seeds, opts, control=config.bootstrap_control
        )
        values[lo:hi] = v
        good[lo:hi] = failures <= BOOTSTRAP_FAILURE_SHARE * B
    return values, good


def _panel_chunk(config: SimulationConfig, start: int, stop: int, opts: SolverOpts):
    dgp = config.dgp
    model = dgp.model()
    cells = _stack(dgp, config.master_seed, start, stop)
    C, n, T, _ = cells.shape
    full_mask = np.ones((1, T), dtype=bool)
    theta0 = model.init_theta(cells, full_mask[0])
    out = solve_panel(model, cells, full_mask, np.asarray(theta0, dtype=float)[:, None], opts)
    theta, status, hess = out["theta"][:, 0], out["status"][:, 0], out["hessian"][:, 0]
    alpha = out["alpha"][:, 0]
    ok_full = (status == OK) & (hess < 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        se = np.where(ok_full, 1.0 / np.sqrt(-np.where(hess < 0, hess, -1.0)), np.nan)
    theta_safe = np.where(ok_full, theta, np.asarray(theta0, dtype=float))

    bias, ok = {}, {}
    for name in config.estimators:
        if name == "mle":
            b, good = np.zeros(C), np.ones(C, dtype=bool)
        else:
            kind = "loo" if name == "jackknife" else "split"
            sub, st = cx.refit_panel(model, cells, kind, theta_safe, alpha, opts)
            value = cx.jackknife_value if name == "jackknife" else cx.split_value
            b, good = value(sub, theta_safe, T), fit_ok(st).all(axis=1)
        good = ok_full & good & np.isfinite(b)
        bias[name] = np.where(good, b, np.nan)
        ok[name] = good
    return theta, se, ok_full, bias, ok, T


def _run_chunk(args):
    config, start, stop = args
    opts = SolverOpts()
    worker = _panel_chunk if config.dgp.is_panel else _cross_chunk
    theta, se, ok_full, bias, ok, size = worker(config, start, stop, opts)
    corrected = {name: theta - bias[name] / size for name in config.estimators}
    return start, theta, se, corrected, bias, ok


def simulate_replicates(config: SimulationConfig) -> ReplicateTable:
    """Run every replicate and return the per-replicate results."""
    R, C = config.replications, config.chunk
    jobs = [(config, lo, min(R, lo + C)) for lo in range(0, R, C)]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(config.workers, len(jobs))) as pool:
            results = list(pool.map(_run_chunk, jobs))
    else:
        results = [_run_chunk(j) for j in jobs]

    theta_hat = np.full(R, np.nan)
    se = np.full(R, np.nan)
    corrected = {k: np.full(R, np.nan) for k in config.estimators}
    bias = {k: np.full(R, np.nan) for k in config.estimators}
    ok = {k: np.zeros(R, dtype=bool) for k in config.estimators}
    for start, th, s, corr, b, good in results:
        sl = slice(start, start + th.shape[0])
        theta_hat[sl], se[sl] = th, s
        for k in config.estimators:
            corrected[k][sl] = corr[k]
            bias[k][sl] = b[k]
            ok[k][sl] = good[k]
    return ReplicateTable(theta=corrected, bias=bias, ok=ok, se=se, theta_hat=theta_hat)


# ---------------------------------------------------------------------------
# summaries
# ---------------------------------------------------------------------------


def _level_key(level: float) -> str:
    return f"rej_{round(level * 100):02d}"


@dataclass(frozen=True)
class EstimatorSummary:
    estimator: str
    bias: float
    sd: float
    mean_se: float
    se_sd_ratio: float
    mse: float
    rejections: dict = field(default_factory=dict)
    failures: int = 0


@dataclass(frozen=True)
class SimulationSummary:
    rows: tuple[EstimatorSummary, ...]
    test_levels: tuple[float, ...] = (0.10, 0.05)
    replications: int = 0

    def row(self, estimator: str) -> EstimatorSummary:
        for r in self.rows:
            if r.estimator == estimator:
                return r
        raise KeyError(estimator)

    @property
    def columns(self) -> tuple[str, ...]:
        return CSV_COLUMNS[:6] + tuple(_level_key(a) for a in self.test_levels) + ("failures",)


def _fmean(x: np.ndarray) -> float:
    return math.fsum(x.tolist()) / x.size if x.size else math.nan


def summarize_values(
    name: str, values: np.ndarray, se: np.ndarray, truth: float, null: float, levels, failures: int
) -> EstimatorSummary:
    """Bias, spread and Wald rejection rates over successful replicates."""
    m = values.size
    if m == 0:
        nan = math.nan
        return EstimatorSummary(name, nan, nan, nan, nan, nan, {a: nan for a in levels}, failures)
    mean = _fmean(values)
    dev = values - mean
    sd = math.sqrt(math.fsum((dev * dev).tolist()) / (m - 1)) if m > 1 else 0.0
    err = values - truth
    mse = math.fsum((err * err).tolist()) / m
    mean_se = _fmean(se)
    ratio = mean_se / sd if sd > 0 else math.nan
    wald = np.abs(values - null) / se
    rej = {a: int(np.count_nonzero(wald > NormalDist().inv_cdf(1.0 - a / 2.0))) / m for a in levels}
    return EstimatorSummary(name, mean - truth, sd, mean_se, ratio, mse, rej, failures)


def summarize(table: ReplicateTable, config: SimulationConfig) -> SimulationSummary:
    rows = []
    for name in config.estimators:
        good = table.ok[name]
        rows.append(
            summarize_values(
                name,
                table.theta[name][good],
                table.se[good],
                config.dgp.theta,
                config.null,
                config.test_levels,
                int(np.count_nonzero(~good)),
            )
        )
    return SimulationSummary(tuple(rows), config.test_levels, config.replications)


def run_experiment(config: SimulationConfig) -> SimulationSummary:
    """Simulate, correct and summarise.

    Raises
    ------
    ExcessFailures
        If any estimator fails on more than 2% of replicates; the summary is
        attached to the exception.
    """
    summary = summarize(simulate_replicates(config), config)
    worst = max((r.failures for r in summary.rows), default=0)
    if worst > MAX_FAILURE_SHARE * config.replications:
        raise ExcessFailures(
            f"{worst} of {config.replications} replicates failed (limit {MAX_FAILURE_SHARE:.0%})",
            summary,
        )
    return summary


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

_DISPLAY = {
    "mle": "MLE",
    "jackknife": "Jackknife",
    "split": "Split-sample",
    "bootstrap": "Bootstrap",
    "analytic-sample": "Analytic (sample)",
    "analytic-infoeq": "Analytic (info. eq.)",
    "analytic-integral": "Analytic (integral)",
    "ar1-analytic": "AR(1) analytic",
}


def display_name(estimator: str) -> str:
    return _DISPLAY.get(estimator, estimator)


def markdown_header(levels) -> list[str]:
    return ["Estimator", "Bias", "SE/SD", "MSE"] + [f"{round(a * 100)}%" for a in levels]


def markdown_cells(row: EstimatorSummary, levels) -> list[str]:
    vals = [row.bias, row.se_sd_ratio, row.mse] + [row.rejections[a] for a in levels]
    return [display_name(row.estimator)] + [f"{v:.3f}" for v in vals]


def _md_table(header: list[str], body: list[list[str]]) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(r) + " |" for r in body]
    return "\n".join(lines) + "\n"


def render_summary(summary: SimulationSummary, fmt: str = "markdown") -> str:
    """Render as a markdown table (3 decimals) or CSV (full precision)."""
    levels = summary.test_levels
    if fmt in ("markdown", "md"):
        return _md_table(markdown_header(levels), [markdown_cells(r, levels) for r in summary.rows])
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(summary.columns)
    for r in summary.rows:
        nums = [r.bias, r.sd, r.mean_se, r.se_sd_ratio, r.mse] + [r.rejections[a] for a in levels]
        w.writerow([r.estimator] + [repr(float(v)) for v in nums] + [r.failures])
    return buf.getvalue()


def _level_from_key(key: str) -> float:
    if not key.startswith("rej_"):
        raise SchemaMismatch(f"unexpected column {key!r}")
    return int(key[4:]) / 100.0


def parse_summary_csv(text: str) -> SimulationSummary:
    """Inverse of ``render_summary(..., "csv")``; ``#`` lines are ignored."""
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise ParseError("empty summary file")
    reader = csv.reader(lines)
    header = tuple(next(reader))
    if header[:6] != CSV_COLUMNS[:6] or header[-1] != "failures" or len(header) < 7:
        raise SchemaMismatch(f"unexpected columns {header}")
    levels = tuple(_level_from_key(k) for k in header[6:-1])
    rows = []
    for rec in reader:
        if len(rec) != len(header):
            raise ParseError(f"row has {len(rec)} fields, expected {len(header)}")
        try:
            nums = [float(v) for v in rec[1:-1]]
            failures = int(rec[-1])
        except ValueError as exc:
            raise ParseError(str(exc)) from None
        rows.append(
            EstimatorSummary(
                rec[0], *nums[:5], rejections=dict(zip(levels, nums[5:])), failures=failures
            )
        )
    return SimulationSummary(tuple(rows), levels)


def default_workers() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def with_workers(config: SimulationConfig, workers: int) -> SimulationConfig:
    return replace(config, workers=workers)
