"""Bias estimates for maximum-likelihood estimators and their application.

Every estimate ``b`` is stored on the scaled axis: the corrected estimator is
``theta_hat - b / n`` for a cross-section and ``theta_hat - b / T`` for a
panel.

Each resampling correction has a batched twin (``*_batch``) that works on a
stack of ``R`` samples at once; the Monte Carlo engine uses those.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .errors import MissingExpectations, ScaleMismatch, SingularInformation, SubfitFailure
from .estimate import (
    Estimate,
    fit_ok,
    PanelEstimate,
    SolverOpts,
    solve_panel,
    solve_scalar,
)
from .models import Dataset, PanelDataset, PanelModel, ScalarModel

CROSS_SECTION = "cross-section"
PANEL = "panel"
BOOTSTRAP_BLOCK = 64
DEFAULT_BOOTSTRAP_B = 1000


class Method(enum.Enum):
    JackknifeLOO = "jackknife"
    SplitSample = "split"
    Bootstrap = "bootstrap"
    AnalyticSample = "analytic-sample"
    AnalyticInfoEq = "analytic-infoeq"
    AnalyticIntegral = "analytic-integral"
    PanelJackknifeLOO = "panel-jackknife"
    PanelSplitSample = "panel-split"
    AR1Analytic = "ar1-analytic"


@dataclass(frozen=True)
class BiasEstimate:
    """Estimate of the scaled higher-order bias.

    Attributes
    ----------
    value : float
        ``b``; the corrected estimate is ``theta_hat - value / scale``.
    method : Method
    setting : str
        ``"cross-section"`` (scale ``n``) or ``"panel"`` (scale ``T``).
    replicate_values : ndarray, optional
        Subsample estimates behind ``value`` (diagnostics only).
    failures : int
        Bootstrap resamples that failed to fit and were dropped.
    """

    value: float
    method: Method
    setting: str = CROSS_SECTION
    replicate_values: Optional[np.ndarray] = None
    failures: int = 0


AnyEstimate = Union[Estimate, PanelEstimate]


def apply_correction(full: AnyEstimate, b: BiasEstimate) -> AnyEstimate:
    """Return ``full`` with ``theta_hat`` replaced by ``theta_hat - b / scale``.

    The standard error is carried over unchanged.
    """
    if isinstance(full, PanelEstimate):
        if b.setting != PANEL:
            raise ScaleMismatch("cross-section bias estimate applied to a panel fit")
        scale = full.T
    else:
        if b.setting != CROSS_SECTION:
            raise ScaleMismatch("panel bias estimate applied to a cross-section fit")
        scale = full.n
    return dataclasses.replace(full, theta_hat=full.theta_hat - b.value / scale)


# ---------------------------------------------------------------------------
# cross-section resampling
# ---------------------------------------------------------------------------


def split_point(size: int) -> int:
    """Length of the first block; the first block takes the odd element."""
    return (size + 1) // 2


def _subsample_means(stats: np.ndarray, kind: str) -> np.ndarray:
    """Sufficient-statistic averages for each subsample, ``(R, S, p)``."""
    n = stats.shape[-2]
    if kind == "loo":
        total = stats.sum(axis=-2, keepdims=True)
        return (total - stats) / (n - 1)
    if kind == "split":
        m = split_point(n)
        first = stats[..., :m, :].mean(axis=-2)
        second = stats[..., m:, :].mean(axis=-2)
        return np.stack([first, second], axis=-2)
    raise ValueError(kind)


def _subsample_weights(n: int, kind: str) -> np.ndarray:
    if kind == "loo":
        w = np.full((n, n), 1.0 / (n - 1))
        np.fill_diagonal(w, 0.0)
        return w[None]
    if kind == "split":
        m = split_point(n)
        w = np.zeros((2, n))
        w[0, :m] = 1.0 / m
        w[1, m:] = 1.0 / (n - m)
        return w[None]
    raise ValueError(kind)


def refit_scalar(
    model: ScalarModel,
    obs: np.ndarray,
    kind: str,
    theta_full: np.ndarray,
    opts: SolverOpts,
    counts: Optional[np.ndarray] = None,
):
    """Refit subsamples of ``R`` stacked samples ``obs`` ``(R, n, k)``.

    ``kind`` is ``"loo"``, ``"split"`` or ``"counts"`` (bootstrap counts
    ``(R, B, n)``).  Warm-started at ``theta_full``.  Returns ``(theta,
    status)`` of shape ``(R, S)``.
    """
    R, n, _ = obs.shape
    start = np.asarray(theta_full, dtype=float).reshape(R, 1)
    if model.sufficient is not None:
        stats = model.sufficient.compute(obs)
        if kind == "counts":
            means = np.einsum("rbn,rnp->rbp", counts, stats) / n
        else:
            means = _subsample_means(stats, kind)
        theta, status, *_ = solve_scalar(model, start, opts, means=means)
    else:
        weights = counts / n if kind == "counts" else _subsample_weights(n, kind)
        theta, status, *_ = solve_scalar(model, start, opts, obs=obs, weights=weights)
    return theta, status


def jackknife_value(sub: np.ndarray, full: np.ndarray, size: int) -> np.ndarray:
    return size * (size - 1) * (sub.mean(axis=-1) - full)


def split_value(sub: np.ndarray, full: np.ndarray, size: int) -> np.ndarray:
    return size * (sub.mean(axis=-1) - full)


def _first_failure(status: np.ndarray) -> int:
    return int(np.flatnonzero(~fit_ok(status))[0])


def jackknife_bias(data: Dataset, model: ScalarModel, full: Estimate, opts: Optional[SolverOpts] = None) -> BiasEstimate:
    """Leave-one-out jackknife: ``b = n (n - 1) (mean theta_(i) - theta_hat)``.

    Raises
    ------
    SubfitFailure
        If any leave-one-out refit fails; ``index`` is the left-out observation.
    """
    n = data.n
    if n < 2:
        raise ValueError("jackknife needs n >= 2")
    sub, status = refit_scalar(model, data.observations[None], "loo", full.theta_hat, opts or SolverOpts())
    if not np.all(fit_ok(status)):
        raise SubfitFailure(_first_failure(status[0]), Method.JackknifeLOO.value)
    value = float(jackknife_value(sub[0], full.theta_hat, n))
    return BiasEstimate(value, Method.JackknifeLOO, CROSS_SECTION, sub[0])


def split_sample_bias(data: Dataset, model: ScalarModel, full: Estimate, opts: Optional[SolverOpts] = None) -> BiasEstimate:
    """Half-sample correction: ``b = n (mean of half-sample fits - theta_hat)``.

    The halves are the first ``ceil(n/2)`` and last ``floor(n/2)``
    observations in the given order, so the result depends on data order.
    """
    n = data.n
    if n < 2:
        raise ValueError("split-sample correction needs n >= 2")
    sub, status = refit_scalar(model, data.observations[None], "split", full.theta_hat, opts or SolverOpts())
    if not np.all(fit_ok(status)):
        raise SubfitFailure(_first_failure(status[0]), Method.SplitSample.value)
    value = float(split_value(sub[0], full.theta_hat, n))
    return BiasEstimate(value, Method.SplitSample, CROSS_SECTION, sub[0])


# ---------------------------------------------------------------------------
# bootstrap
# ---------------------------------------------------------------------------


def bootstrap_counts(n: int, B: int, seed: int) -> np.ndarray:
    """Resample counts ``(B, n)``.

    Replicates are generated in blocks of 64, each block from its own stream
    keyed by ``(seed, block)``, so replicate ``b`` does not depend on ``B``.
    """
    blocks = -(-B // BOOTSTRAP_BLOCK)
    out = np.empty((blocks * BOOTSTRAP_BLOCK, n))
    offsets = (np.arange(BOOTSTRAP_BLOCK) * n)[:, None]
    for blk in range(blocks):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(blk,)))
        idx = rng.integers(0, n, size=(BOOTSTRAP_BLOCK, n))
        flat = np.bincount((idx + offsets).ravel(), minlength=BOOTSTRAP_BLOCK * n)
        out[blk * BOOTSTRAP_BLOCK : (blk + 1) * BOOTSTRAP_BLOCK] = flat.reshape(BOOTSTRAP_BLOCK, n)
    return out[:B]


def _canonical_order(obs: np.ndarray) -> np.ndarray:
    return obs[np.lexsort(obs.T[::-1])]


def _expansion_control(model: ScalarModel, obs, theta, counts):
    """Second-order expansion of ``theta* - theta_hat`` in the resampling weights.

    Returns the per-resample expansion ``(R, B)`` and its exact expectation
    under resampling, ``(R,)``, on the unscaled axis.
    """
    th = np.asarray(theta, dtype=float)[:, None]
    n = obs.shape[-2]
    sc = model.score(obs, th)
    d2 = model.d2(obs, th)
    d3 = model.d3(obs, th)
    info = -d2.mean(-1)
    q1 = d3.mean(-1)
    w = counts / n
    u_star = np.einsum("rbn,rn->rb", w, sc) - sc.mean(-1)[:, None]
    v_star = np.einsum("rbn,rn->rb", w, d2) + info[:, None]
    i1, q = info[:, None], q1[:, None]
    expansion = u_star / i1 + u_star * v_star / i1**2 + 0.5 * q * u_star**2 / i1**3
    sc_c = sc - sc.mean(-1, keepdims=True)
    mean_uv = (sc_c * d2).mean(-1)
    mean_uu = (sc_c * sc_c).mean(-1)
    expected = (mean_uv / info**2 + 0.5 * q1 * mean_uu / info**3) / n
    return expansion, expected


def bootstrap_bias_batch(model, obs, theta_full, B, seeds, opts, control=False):
    """Bootstrap bias for ``R`` stacked samples; returns ``(value, failures)``."""
    R, n, _ = obs.shape
    obs = np.stack([_canonical_order(o) for o in obs])
    counts = np.stack([bootstrap_counts(n, B, int(s)) for s in seeds])
    sub, status = refit_scalar(model, obs, "counts", theta_full, opts, counts=counts)
    ok = fit_ok(status)
    dev = sub - np.asarray(theta_full, dtype=float)[:, None]
    offset = np.zeros(R)
    if control:
        expansion, expected = _expansion_control(model, obs, theta_full, counts)
        dev = dev - expansion
        offset = expected
    dev = np.where(ok, dev, 0.0)
    used = ok.sum(axis=-1)
    mean_dev = dev.sum(axis=-1) / np.maximum(used, 1)
    value = n * (mean_dev + offset)
    value = np.where(used > 0, value, np.nan)
    return value, B - used, np.where(ok, sub, np.nan)


def bootstrap_bias(
    data: Dataset,
    model: ScalarModel,
    full: Estimate,
    B: int = DEFAULT_BOOTSTRAP_B,
    seed: int = 0,
    opts: Optional[SolverOpts] = None,
    control: bool = False,
) -> BiasEstimate:
    """Nonparametric bootstrap: ``b = n (mean_b theta*_b - theta_hat)``.

    Observations are put in a canonical (sorted) order before resampling, so
    the result does not depend on input order.  Failed resamples are dropped;
    more than 1% failures raises :class:`SubfitFailure`.

    With ``control=True`` the second-order expansion of each resample's
    deviation is subtracted and its exact resampling mean added back.  This
    targets the same quantity with far less simulation noise.
    """
    if B < 1:
        raise ValueError("B must be at least 1")
    value, failed, sub = bootstrap_bias_batch(
        model, data.observations[None], np.array([full.theta_hat]), B, [seed], opts or SolverOpts(), control
    )
    nfail = int(failed[0])
    if nfail > 0.01 * B:
        first = int(np.flatnonzero(np.isnan(sub[0]))[0])
        raise SubfitFailure(first, Method.Bootstrap.value, f"{nfail} of {B} resamples failed")
    return BiasEstimate(float(value[0]), Method.Bootstrap, CROSS_SECTION, sub[0], nfail)


# ---------------------------------------------------------------------------
# analytic corrections
# ---------------------------------------------------------------------------


def sample_moments(model: ScalarModel, obs: np.ndarray, theta) -> dict:
    """Averages over observations of the score-derivative products at ``theta``.

    ``obs`` may be ``(n, k)`` or stacked ``(R, n, k)`` with ``theta`` ``(R,)``.
    """
    th = np.asarray(theta, dtype=float)[..., None]
    sc = model.score(obs, th)
    d2 = model.d2(obs, th)
    d3 = model.d3(obs, th)
    return {
        "d2": d2.mean(-1),
        "d3": d3.mean(-1),
        "score_sq": (sc * sc).mean(-1),
        "score_d2": (sc * d2).mean(-1),
    }


def _check_information(d2):
    if np.any(np.abs(d2) < 1e-12):
        raise SingularInformation("mean second derivative is numerically zero")


def analytic_sample_value(m: dict):
    d2 = m["d2"]
    return -m["d3"] * m["score_sq"] / (2.0 * d2**3) + m["score_d2"] / d2**2


def analytic_infoeq_value(m: dict):
    d2 = m["d2"]
    return m["d3"] / (2.0 * d2**2) + m["score_d2"] / d2**2


def analytic_bias_sample(data: Dataset, model: ScalarModel, full: Estimate) -> BiasEstimate:
    """Plug-in bias formula that does not rely on the information equality."""
    m = sample_moments(model, data.observations, full.theta_hat)
    _check_information(m["d2"])
    return BiasEstimate(float(analytic_sample_value(m)), Method.AnalyticSample)


def analytic_bias_infoeq(data: Dataset, model: ScalarModel, full: Estimate) -> BiasEstimate:
    """Plug-in bias formula that uses the information equality."""
    m = sample_moments(model, data.observations, full.theta_hat)
    _check_information(m["d2"])
    return BiasEstimate(float(analytic_infoeq_value(m)), Method.AnalyticInfoEq)


def analytic_bias_integral(model, theta_hat: float) -> BiasEstimate:
    """Bias formula with population expectations evaluated at ``theta_hat``.

    Raises
    ------
    MissingExpectations
        For panel models and for scalar models without closed forms.
    """
    if isinstance(model, PanelModel) or getattr(model, "expectations", None) is None:
        raise MissingExpectations(f"{getattr(model, 'name', model)!r} has no closed-form expectations")
    e = model.expectations
    m = {"d2": e.d2(theta_hat), "d3": e.d3(theta_hat), "score_d2": e.score_d2(theta_hat)}
    _check_information(m["d2"])
    return BiasEstimate(float(analytic_infoeq_value(m)), Method.AnalyticIntegral)


def ar1_analytic_bias(estimate: Estimate) -> BiasEstimate:
    """Autoregressive bias estimate ``-2 theta_hat`` on the ``T`` scale."""
    return BiasEstimate(-2.0 * estimate.theta_hat, Method.AR1Analytic)


def ar1_analytic_correct(estimate: Estimate, T: Optional[int] = None) -> Estimate:
    """``theta_hat (1 + 2 / T)``; ``T`` defaults to the number of lag pairs."""
    T = estimate.n if T is None else T
    return dataclasses.replace(estimate, theta_hat=estimate.theta_hat * (1.0 + 2.0 / T))


# ---------------------------------------------------------------------------
# panel resampling
# ---------------------------------------------------------------------------


def period_masks(T: int, kind: str) -> np.ndarray:
    """Boolean ``(S, T)`` masks of retained periods."""
    if kind == "loo":
        if T < 2:
            raise ValueError("panel jackknife needs T >= 2")
        return ~np.eye(T, dtype=bool)
    if kind == "split":
        m = split_point(T)
        masks = np.zeros((2, T), dtype=bool)
        masks[0, :m] = True
        masks[1, m:] = True
        return masks
    raise ValueError(kind)


def refit_panel(model, cells, kind, theta_full, alpha_full, opts):
    """Refit period subsamples of ``R`` stacked panels, warm-started."""
    T = cells.shape[-2]
    masks = period_masks(T, kind)
    alpha0 = np.asarray(alpha_full, dtype=float)[:, None, :]
    if np.isnan(alpha0).any():
        init = model.init_alpha(cells[:, None], masks[None, :, None, :], np.asarray(theta_full)[:, None])
        alpha0 = np.where(np.isnan(alpha0), init, alpha0)
    out = solve_panel(model, cells, masks, np.asarray(theta_full, dtype=float)[:, None], opts, alpha0)
    return out["theta"], out["status"]


def panel_jackknife_bias(
    panel: PanelDataset, model: PanelModel, full: PanelEstimate, opts: Optional[SolverOpts] = None
) -> BiasEstimate:
    """Delete-one-period jackknife: ``b = T (T - 1) (mean theta_(t) - theta_hat)``."""
    T = panel.T
    sub, status = refit_panel(
        model, panel.cells[None], "loo", np.array([full.theta_hat]), full.alpha_hat[None], opts or SolverOpts()
    )
    if not np.all(fit_ok(status)):
        raise SubfitFailure(_first_failure(status[0]), Method.PanelJackknifeLOO.value)
    value = float(jackknife_value(sub[0], full.theta_hat, T))
    return BiasEstimate(value, Method.PanelJackknifeLOO, PANEL, sub[0])


def panel_split_sample_bias(
    panel: PanelDataset, model: PanelModel, full: PanelEstimate, opts: Optional[SolverOpts] = None
) -> BiasEstimate:
    """Half-panel correction over periods ``1..ceil(T/2)`` and the rest."""
    T = panel.T
    sub, status = refit_panel(
        model, panel.cells[None], "split", np.array([full.theta_hat]), full.alpha_hat[None], opts or SolverOpts()
    )
    if not np.all(fit_ok(status)):
        raise SubfitFailure(_first_failure(status[0]), Method.PanelSplitSample.value)
    value = float(split_value(sub[0], full.theta_hat, T))
    return BiasEstimate(value, Method.PanelSplitSample, PANEL, sub[0])
