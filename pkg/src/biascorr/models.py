"""Likelihood models with hand-coded derivatives.

Two model families are supported:

* :class:`ScalarModel` -- one scalar parameter ``theta`` and i.i.d.
  observations.  Supplies the score and its first two derivatives.
* :class:`PanelModel` -- a common parameter ``theta`` plus one fixed effect
  ``alpha_i`` per unit, with the mixed partials needed by the panel
  higher-order variance formula.

All derivative callables are vectorised: the observation argument ``z`` is an
array whose last axis holds the fields of one observation (``(z,)``,
``(y, x)`` or ``(y_prev, y)``) and ``theta``/``alpha`` broadcast against
``z[..., 0]``.

Models may optionally carry a sufficient-statistic fast path.  When present,
the solvers reduce a (weighted) sample to a handful of averages before
iterating, which keeps Monte Carlo runs with 10^5 replications cheap.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy import special

from .errors import ParseError

Array = np.ndarray
_LOG_2PI = math.log(2.0 * math.pi)
_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class Interval:
    """Open interval ``(lower, upper)``; infinite ends are allowed.

    ``closed_lower`` marks a lower end that is itself a valid parameter value
    even though derivatives are singular there.  Resampled fits may then end
    on it as a constrained maximiser.
    """

    lower: float = -math.inf
    upper: float = math.inf
    closed_lower: bool = False

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        return (x > self.lower) & (x < self.upper) & np.isfinite(x)

    def distance(self, x):
        """Distance from ``x`` to the nearest finite end point."""
        x = np.asarray(x, dtype=float)
        return np.minimum(x - self.lower, self.upper - x)


# ---------------------------------------------------------------------------
# scalar models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Expectations:
    """Population expectations under ``f(., theta)``, as functions of theta."""

    d2: Callable[[float], float]
    d3: Callable[[float], float]
    score_d2: Callable[[float], float]
    score_sq: Callable[[float], float]


@dataclass(frozen=True)
class SufficientStats:
    """Fast path: per-observation statistics whose averages determine the fit.

    ``compute(z)`` maps observations ``(..., n, k)`` to ``(..., n, p)``.
    ``evaluate(means, theta)`` maps the (weighted) averages ``(..., p)`` to the
    averages of ``(loglik, score, d2)``.
    """

    compute: Callable[[Array], Array]
    evaluate: Callable[[Array, Array], tuple[Array, Array, Array]]


@dataclass(frozen=True)
class ScalarModel:
    """Log-likelihood of a scalar parameter with derivatives up to order 3.

    Attributes
    ----------
    name : str
    loglik, score, d2, d3 : callable ``(z, theta) -> array``
        Log density and its first three derivatives in ``theta``.
    domain : Interval
        Open parameter domain.
    init : callable ``(observations) -> float``
        Method-of-moments starting value.
    expectations : Expectations, optional
        Closed forms used by the integral analytic correction.
    sufficient : SufficientStats, optional
    """

    name: str
    loglik: Callable[[Array, Array], Array]
    score: Callable[[Array, Array], Array]
    d2: Callable[[Array, Array], Array]
    d3: Callable[[Array, Array], Array]
    domain: Interval
    init: Callable[[Array], float]
    expectations: Optional[Expectations] = None
    sufficient: Optional[SufficientStats] = field(default=None, repr=False)

    def pieces(self, z: Array, theta) -> tuple[Array, Array, Array]:
        """Per-observation ``(loglik, score, d2)``."""
        return self.loglik(z, theta), self.score(z, theta), self.d2(z, theta)


# ---------------------------------------------------------------------------
# panel models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PanelExpectations:
    """Per-cell population moments at the truth, as functions of theta.

    Used to evaluate the panel higher-order variance in closed form.
    """

    v_sq: Callable[[float], float]
    u_v: Callable[[float], float]
    u_alpha2: Callable[[float], float]
    v_u_alpha: Callable[[float], float]
    u_alpha_sq: Callable[[float], float]
    u_sq: Callable[[float], float]


@dataclass(frozen=True)
class PanelSufficientStats:
    """Fast path for panel models.

    ``compute(cells)`` maps ``(..., n, T, k)`` to per-cell statistics
    ``(..., n, T, p)``.  ``evaluate(sums, theta, alpha)`` maps per-unit sums
    ``(..., n, p)`` to per-unit sums of ``loglik, u, v, u_theta, u_alpha,
    v_alpha`` (a dict of ``(..., n)`` arrays).  An optional fourth argument
    ``keys`` restricts the output to the listed entries.
    """

    compute: Callable[[Array], Array]
    evaluate: Callable[[Array, Array, Array], dict]


@dataclass(frozen=True)
class PanelModel:
    """Per-cell log-likelihood in ``(theta, alpha_i)``.

    Attributes
    ----------
    loglik : callable ``(z, theta, alpha)``
    u : d loglik / d theta
    v : d loglik / d alpha
    u_theta : d u / d theta (needed for the Hessian-based standard error)
    u_alpha, u_alpha2 : first and second alpha-derivatives of ``u``
    v_alpha, v_alpha2 : first and second alpha-derivatives of ``v``
    domain : Interval for theta
    init_theta : callable ``(cells, mask) -> array`` of shape ``cells.shape[:-3]``
    init_alpha : callable ``(cells, mask, theta) -> array`` of shape ``(..., n)``
    degenerate : callable ``(cells, mask) -> bool array (..., n)``, optional
        Units without an interior fixed-effect maximiser (stayers).
    cell_terms : callable ``(z, theta, alpha, keys) -> dict``, optional
        Evaluates several of the per-cell functions above in one pass.
    """

    name: str
    loglik: Callable
    u: Callable
    v: Callable
    u_theta: Callable
    u_alpha: Callable
    u_alpha2: Callable
    v_alpha: Callable
    v_alpha2: Callable
    domain: Interval
    init_theta: Callable
    init_alpha: Callable
    degenerate: Optional[Callable] = None
    cell_terms: Optional[Callable] = None
    expectations: Optional[PanelExpectations] = None
    sufficient: Optional[PanelSufficientStats] = field(default=None, repr=False)


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Dataset:
    """Cross-section sample; ``observations`` has shape ``(n, k)``."""

    observations: Array

    def __post_init__(self):
        obs = np.array(self.observations, dtype=float)
        if obs.ndim == 1:
            obs = obs[:, None]
        if obs.ndim != 2 or obs.shape[0] == 0:
            raise ValueError("dataset must be a nonempty (n, k) array")
        if not np.all(np.isfinite(obs)):
            raise ValueError("dataset contains non-finite values")
        obs.setflags(write=False)
        object.__setattr__(self, "observations", obs)

    @property
    def n(self) -> int:
        return self.observations.shape[0]

    @classmethod
    def lagged(cls, series) -> "Dataset":
        """Pairs ``(y_{t-1}, y_t)`` for an autoregressive series."""
        y = np.asarray(series, dtype=float).ravel()
        if y.size < 2:
            raise ValueError("series needs at least two points")
        return cls(np.column_stack([y[:-1], y[1:]]))

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        header, rows = _read_numeric_csv(path)
        return cls(rows)


@dataclass(frozen=True)
class PanelDataset:
    """Balanced panel; ``cells`` has shape ``(n, T, k)``."""

    cells: Array

    def __post_init__(self):
        cells = np.array(self.cells, dtype=float)
        if cells.ndim == 2:
            cells = cells[:, :, None]
        if cells.ndim != 3:
            raise ValueError("panel cells must have shape (n, T, k)")
        if cells.shape[0] < 1 or cells.shape[1] < 2:
            raise ValueError("panel needs T >= 2")
        if not np.all(np.isfinite(cells)):
            raise ValueError("panel contains non-finite values")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)

    @property
    def n(self) -> int:
        return self.cells.shape[0]

    @property
    def T(self) -> int:
        return self.cells.shape[1]

    @classmethod
    def from_csv(cls, path) -> "PanelDataset":
        """Read ``unit, period, y, x`` or ``unit, period, z`` rows."""
        header, rows = _read_numeric_csv(path)
        if len(header) < 3 or [h.lower() for h in header[:2]] != ["unit", "period"]:
            raise ParseError("panel CSV must start with columns unit, period")
        units = rows[:, 0]
        periods = rows[:, 1]
        if np.any(periods != np.round(periods)):
            raise ParseError("periods must be integers")
        labels, unit_idx = np.unique(units, return_inverse=True)
        T = int(periods.max())
        n = labels.size
        if rows.shape[0] != n * T:
            raise ParseError("panel is not rectangular")
        cells = np.full((n, T, rows.shape[1] - 2), np.nan)
        seen = np.zeros((n, T), dtype=bool)
        for row, i in zip(rows, unit_idx):
            t = int(row[1]) - 1
            if t < 0 or seen[i, t]:
                raise ParseError(f"bad or repeated period {int(row[1])} for unit {row[0]:g}")
            seen[i, t] = True
            cells[i, t] = row[2:]
        if not seen.all():
            raise ParseError("every unit needs periods 1..T")
        return cls(cells)


def _read_numeric_csv(path) -> tuple[list[str], Array]:
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(row for row in fh if row.strip() and not row.startswith("#"))
            first = next(reader)
            try:
                rows = [[float(v) for v in first]]
                header = [f"x{j}" for j in range(len(first))]
            except ValueError:
                rows, header = [], first
            rows += [[float(v) for v in row] for row in reader]
    except FileNotFoundError as exc:
        raise ParseError(f"no such file: {path}") from exc
    except StopIteration as exc:
        raise ParseError(f"empty file: {path}") from exc
    except ValueError as exc:
        raise ParseError(f"non-numeric value in {path}: {exc}") from exc
    if not rows:
        raise ParseError(f"no data rows in {path}")
    if any(len(r) != len(header) for r in rows):
        raise ParseError(f"ragged rows in {path}")
    arr = np.asarray(rows, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ParseError(f"non-finite value in {path}")
    return [h.strip() for h in header], arr


# ---------------------------------------------------------------------------
# normal CDF helpers
# ---------------------------------------------------------------------------


def log_norm_cdf(w):
    """``log Phi(w)`` without overflow or underflow in either tail."""
    w = np.asarray(w, dtype=float)
    neg = w < 0
    wn = np.where(neg, w, 0.0)
    wp = np.where(neg, 0.0, w)
    left = np.log(0.5 * special.erfcx(-wn / math.sqrt(2.0))) - 0.5 * wn * wn
    right = np.log1p(-0.5 * special.erfc(wp / math.sqrt(2.0)))
    return np.where(neg, left, right)


def inverse_mills(w):
    """``lambda(w) = phi(w) / Phi(w)``."""
    w = np.asarray(w, dtype=float)
    neg = w < 0
    wn = np.where(neg, w, 0.0)
    wp = np.where(neg, 0.0, w)
    left = _SQRT_2_OVER_PI / special.erfcx(-wn / math.sqrt(2.0))
    right = np.exp(-0.5 * wp * wp - 0.5 * _LOG_2PI - log_norm_cdf(wp))
    return np.where(neg, left, right)


_ASYMPTOTIC_CUT = -8.0
# (2k-1)!! with alternating signs, k = 1..20
_MILLS_COEF = np.array(
    [(-1.0) ** (k + 1) * float(np.prod(np.arange(1, 2 * k, 2))) for k in range(1, 21)]
)


def _mills_gap(w):
    """``w + lambda(w)``; an asymptotic series avoids cancellation for w < -8."""
    w = np.asarray(w, dtype=float)
    far = w < _ASYMPTOTIC_CUT
    out = w + inverse_mills(np.where(far, 0.0, w))
    if np.any(far):
        x = -w[far]
        inv_x2 = 1.0 / (x * x)
        s = np.zeros_like(x)
        for c in _MILLS_COEF[::-1]:
            s = (s + c) * inv_x2  # Horner: s = sum_k c_k x^(-2k) = 1 - x R(x)
        ratio = (1.0 - s) / x
        out[far] = s / ratio
    return out


def probit_link_derivs(w):
    """Derivatives of ``log Phi`` at ``w``: value and orders 1, 2 and 3."""
    lam = inverse_mills(w)
    gap = _mills_gap(w)
    d1 = lam
    d2 = -lam * gap
    d3 = lam * (gap * gap + lam * gap - 1.0)
    return log_norm_cdf(w), d1, d2, d3


# ---------------------------------------------------------------------------
# sqrt-mean normal: Z ~ N(sqrt(theta), 1)
# ---------------------------------------------------------------------------


def _smn_loglik(z, theta):
    e = z[..., 0] - np.sqrt(theta)
    return -0.5 * _LOG_2PI - 0.5 * e * e


def _smn_score(z, theta):
    r = np.sqrt(theta)
    return (z[..., 0] - r) / (2.0 * r)


def _smn_d2(z, theta):
    return -z[..., 0] / (4.0 * np.asarray(theta, dtype=float) ** 1.5)


def _smn_d3(z, theta):
    return 3.0 * z[..., 0] / (8.0 * np.asarray(theta, dtype=float) ** 2.5)


def _smn_stats(z):
    x = z[..., 0]
    return np.stack([x, x * x], axis=-1)


def _smn_eval(m, theta):
    theta = np.asarray(theta, dtype=float)
    r = np.sqrt(theta)
    m1, m2 = m[..., 0], m[..., 1]
    ll = -0.5 * _LOG_2PI - 0.5 * (m2 - 2.0 * r * m1 + theta)
    return ll, m1 / (2.0 * r) - 0.5, -m1 / (4.0 * theta**1.5)


def _smn_init(obs):
    return float(np.mean(obs[:, 0])) ** 2


def sqrt_mean_normal() -> ScalarModel:
    return ScalarModel(
        name="SqrtMeanNormal",
        loglik=_smn_loglik,
        score=_smn_score,
        d2=_smn_d2,
        d3=_smn_d3,
        domain=Interval(0.0, math.inf, closed_lower=True),
        init=_smn_init,
        expectations=Expectations(
            d2=lambda t: -1.0 / (4.0 * t),
            d3=lambda t: 3.0 / (8.0 * t * t),
            score_d2=lambda t: -1.0 / (8.0 * t * t),
            score_sq=lambda t: 1.0 / (4.0 * t),
        ),
        sufficient=SufficientStats(_smn_stats, _smn_eval),
    )


# ---------------------------------------------------------------------------
# Gaussian AR(1), conditional on the first value; z = (y_prev, y)
# ---------------------------------------------------------------------------


def ar1(sigma: float = 1.0) -> ScalarModel:
    s2 = float(sigma) ** 2
    const = -0.5 * (_LOG_2PI + math.log(s2))

    def loglik(z, theta):
        e = z[..., 1] - theta * z[..., 0]
        return const - 0.5 * e * e / s2

    def score(z, theta):
        return z[..., 0] * (z[..., 1] - theta * z[..., 0]) / s2

    def d2(z, theta):
        return -z[..., 0] ** 2 / s2 + 0.0 * np.asarray(theta)

    def d3(z, theta):
        return np.zeros(np.broadcast_shapes(z[..., 0].shape, np.shape(theta)))

    def stats(z):
        x, y = z[..., 0], z[..., 1]
        return np.stack([x * x, x * y, y * y], axis=-1)

    def evaluate(m, theta):
        theta = np.asarray(theta, dtype=float)
        xx, xy, yy = m[..., 0], m[..., 1], m[..., 2]
        ll = const - 0.5 * (yy - 2.0 * theta * xy + theta * theta * xx) / s2
        return ll, (xy - theta * xx) / s2, -xx / s2 + 0.0 * theta

    def init(obs):
        xx = float(np.dot(obs[:, 0], obs[:, 0]))
        return float(np.dot(obs[:, 0], obs[:, 1])) / xx if xx > 0 else 0.0

    return ScalarModel(
        name="AR1",
        loglik=loglik,
        score=score,
        d2=d2,
        d3=d3,
        domain=Interval(),
        init=init,
        sufficient=SufficientStats(stats, evaluate),
    )


# ---------------------------------------------------------------------------
# probit without fixed effects; z = (y, x)
# ---------------------------------------------------------------------------


def _signed_index(z, theta, alpha=0.0):
    q = 2.0 * z[..., 0] - 1.0
    return q, q * (theta * z[..., 1] + alpha)


def pooled_probit() -> ScalarModel:
    """``P(y = 1 | x) = Phi(theta x)``; used for solver checks."""

    def loglik(z, theta):
        return log_norm_cdf(_signed_index(z, theta)[1])

    def score(z, theta):
        q, w = _signed_index(z, theta)
        return z[..., 1] * q * inverse_mills(w)

    def d2(z, theta):
        q, w = _signed_index(z, theta)
        return z[..., 1] ** 2 * probit_link_derivs(w)[2]

    def d3(z, theta):
        q, w = _signed_index(z, theta)
        return z[..., 1] ** 3 * q * probit_link_derivs(w)[3]

    return ScalarModel(
        name="PooledProbit",
        loglik=loglik,
        score=score,
        d2=d2,
        d3=d3,
        domain=Interval(),
        init=lambda obs: 0.0,
    )


# ---------------------------------------------------------------------------
# panel probit: P(y_it = 1) = Phi(theta x_it + alpha_i); z = (y, x)
# ---------------------------------------------------------------------------


def _pp_parts(z, theta, alpha):
    q, w = _signed_index(z, np.asarray(theta)[..., None, None], np.asarray(alpha)[..., None])
    return q, probit_link_derivs(w)


def _masked_field(cells, mask, col):
    vals, m = np.broadcast_arrays(cells[..., col], mask)
    return vals, m


def _pp_degenerate(cells, mask):
    y, m = _masked_field(cells, mask, 0)
    ones = np.any(m & (y > 0.5), axis=-1)
    zeros = np.any(m & (y < 0.5), axis=-1)
    return ~(ones & zeros)


def _pp_init_alpha(cells, mask, theta):
    y, m = _masked_field(cells, mask, 0)
    x, _ = _masked_field(cells, mask, 1)
    cnt = np.maximum(m.sum(axis=-1), 1)
    share = np.clip(np.where(m, y, 0.0).sum(axis=-1) / cnt, 0.05, 0.95)
    xbar = np.where(m, x, 0.0).sum(axis=-1) / cnt
    return special.ndtri(share) - np.asarray(theta)[..., None] * xbar


def _pp_cell_terms(z, theta, alpha, keys):
    q, (ll, d1, d2, _) = _pp_parts_no_third(z, theta, alpha)
    x = z[..., 1]
    table = {
        "loglik": lambda: ll,
        "u": lambda: x * q * d1,
        "v": lambda: q * d1,
        "u_theta": lambda: x * x * d2,
        "u_alpha": lambda: x * d2,
        "v_alpha": lambda: d2,
        "u_alpha2": lambda: x * q * _pp_parts(z, theta, alpha)[1][3],
        "v_alpha2": lambda: q * _pp_parts(z, theta, alpha)[1][3],
    }
    return {k: table[k]() for k in keys}


def _pp_parts_no_third(z, theta, alpha):
    q, w = _signed_index(z, np.asarray(theta)[..., None, None], np.asarray(alpha)[..., None])
    lam = inverse_mills(w)
    d2 = -lam * _mills_gap(w)
    return q, (log_norm_cdf(w), lam, d2, None)


def panel_probit() -> PanelModel:
    def loglik(z, theta, alpha):
        return _pp_parts(z, theta, alpha)[1][0]

    def u(z, theta, alpha):
        q, d = _pp_parts(z, theta, alpha)
        return z[..., 1] * q * d[1]

    def v(z, theta, alpha):
        q, d = _pp_parts(z, theta, alpha)
        return q * d[1]

    def u_theta(z, theta, alpha):
        return z[..., 1] ** 2 * _pp_parts(z, theta, alpha)[1][2]

    def u_alpha(z, theta, alpha):
        return z[..., 1] * _pp_parts(z, theta, alpha)[1][2]

    def u_alpha2(z, theta, alpha):
        q, d = _pp_parts(z, theta, alpha)
        return z[..., 1] * q * d[3]

    def v_alpha(z, theta, alpha):
        return _pp_parts(z, theta, alpha)[1][2]

    def v_alpha2(z, theta, alpha):
        q, d = _pp_parts(z, theta, alpha)
        return q * d[3]

    return PanelModel(
        name="Probit",
        loglik=loglik,
        u=u,
        v=v,
        u_theta=u_theta,
        u_alpha=u_alpha,
        u_alpha2=u_alpha2,
        v_alpha=v_alpha,
        v_alpha2=v_alpha2,
        domain=Interval(),
        init_theta=lambda cells, mask: np.zeros(cells.shape[:-3]),
        init_alpha=_pp_init_alpha,
        degenerate=_pp_degenerate,
        cell_terms=_pp_cell_terms,
    )


# ---------------------------------------------------------------------------
# Neyman-Scott: z_it ~ N(alpha_i, theta), theta the variance
# ---------------------------------------------------------------------------


def _ns_args(z, theta, alpha):
    theta = np.asarray(theta, dtype=float)[..., None, None]
    e = z[..., 0] - np.asarray(alpha, dtype=float)[..., None]
    return e, theta


def _ns_unit_moments(cells, mask):
    z, m = _masked_field(cells, mask, 0)
    m = m.astype(float)
    m0 = m.sum(axis=-1)
    m1 = (m * z).sum(axis=-1)
    m2 = (m * z * z).sum(axis=-1)
    return m0, m1, m2


def _ns_init_alpha(cells, mask, theta):
    m0, m1, _ = _ns_unit_moments(cells, mask)
    return m1 / np.maximum(m0, 1.0)


def _ns_init_theta(cells, mask):
    m0, m1, m2 = _ns_unit_moments(cells, mask)
    within = m2 - m1 * m1 / np.maximum(m0, 1.0)
    return np.maximum(within, 0.0).sum(axis=-1) / m0.sum(axis=-1)


def _ns_stats(cells):
    z = cells[..., 0]
    return np.stack([np.ones_like(z), z, z * z], axis=-1)


def _ns_eval(sums, theta, alpha, keys=None):
    theta = np.asarray(theta, dtype=float)[..., None]
    m0, m1, m2 = sums[..., 0], sums[..., 1], sums[..., 2]
    lin = m1 - alpha * m0
    table = {
        "loglik": lambda q: -0.5 * m0 * (_LOG_2PI + np.log(theta)) - q / (2.0 * theta),
        "u": lambda q: -m0 / (2.0 * theta) + q / (2.0 * theta**2),
        "v": lambda q: lin / theta,
        "u_theta": lambda q: m0 / (2.0 * theta**2) - q / theta**3,
        "u_alpha": lambda q: -lin / theta**2,
        "v_alpha": lambda q: -m0 / theta,
    }
    quad = m2 - 2.0 * alpha * m1 + alpha * alpha * m0
    return {k: table[k](quad) for k in (keys or table)}


def neyman_scott() -> PanelModel:
    def loglik(z, theta, alpha):
        e, th = _ns_args(z, theta, alpha)
        return -0.5 * (_LOG_2PI + np.log(th)) - e * e / (2.0 * th)

    def u(z, theta, alpha):
        e, th = _ns_args(z, theta, alpha)
        return -1.0 / (2.0 * th) + e * e / (2.0 * th * th)

    def v(z, theta, alpha):
        e, th = _ns_args(z, theta, alpha)
        return e / th

    def u_theta(z, theta, alpha):
        e, th = _ns_args(z, theta, alpha)
        return 1.0 / (2.0 * th * th) - e * e / th**3

    def u_alpha(z, theta, alpha):
        e, th = _ns_args(z, theta, alpha)
        return -e / (th * th)

    def u_alpha2(z, theta, alpha):
        e, th = _ns_args(z, theta, alpha)
        return np.ones_like(e) / (th * th)

    def v_alpha(z, theta, alpha):
        e, th = _ns_args(z, theta, alpha)
        return -np.ones_like(e) / th

    def v_alpha2(z, theta, alpha):
        e, th = _ns_args(z, theta, alpha)
        return np.zeros_like(e + th)

    return PanelModel(
        name="NeymanScott",
        loglik=loglik,
        u=u,
        v=v,
        u_theta=u_theta,
        u_alpha=u_alpha,
        u_alpha2=u_alpha2,
        v_alpha=v_alpha,
        v_alpha2=v_alpha2,
        domain=Interval(0.0, math.inf),
        init_theta=_ns_init_theta,
        init_alpha=_ns_init_alpha,
        expectations=PanelExpectations(
            v_sq=lambda t: 1.0 / t,
            u_v=lambda t: 0.0,
            u_alpha2=lambda t: 1.0 / t**2,
            v_u_alpha=lambda t: -1.0 / t**2,
            u_alpha_sq=lambda t: 1.0 / t**3,
            u_sq=lambda t: 1.0 / (2.0 * t * t),
        ),
        sufficient=PanelSufficientStats(_ns_stats, _ns_eval),
    )


_BUILTINS = {
    "sqrtmeannormal": sqrt_mean_normal,
    "neymanscott": neyman_scott,
    "probit": panel_probit,
    "ar1": ar1,
}


def builtin_model(name: str, **kwargs):
    """Return one of the shipped models by name.

    Names are matched case-insensitively and ignoring ``-`` and ``_``, so
    ``"sqrt-mean-normal"`` and ``"SqrtMeanNormal"`` are the same model.
    ``AR1`` accepts a ``sigma`` keyword (default 1).
    """
    key = name.replace("-", "").replace("_", "").lower()
    try:
        factory = _BUILTINS[key]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(_BUILTINS)}") from None
    return factory(**kwargs)
