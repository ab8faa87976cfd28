"""Higher-order variance of bias-corrected estimators.

For a cross-section the corrected estimators share the asymptotic variance
``1 / I`` and differ at order ``1/n``:

* jackknife, bootstrap and analytic corrections: ``1/I + upsilon / n``
* split-sample correction: ``1/I + 2 upsilon / n``

For panels the jackknife term is ``upsilon / (T - 1)`` and the split term is
``2 upsilon / T``, where ``upsilon`` is built from per-unit time averages of
the efficient score and its derivatives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateUnit, SingularInformation
from .estimate import PanelEstimate
from .models import Dataset, PanelDataset, PanelModel, ScalarModel

CROSS_SECTION = "cross-section"
PANEL = "panel"


@dataclass(frozen=True)
class HigherOrderVariance:
    """Leading variance ``1/I`` and the order-one correction ``upsilon``."""

    leading: float
    upsilon: float
    setting: str = CROSS_SECTION

    def combined(self, size: float, factor: float = 1.0) -> float:
        """``leading + factor * upsilon / size``."""
        return self.leading + factor * self.upsilon / size

    def jackknife(self, size: int) -> float:
        """Higher-order variance of the leave-one-out jackknife estimator."""
        if self.setting == PANEL:
            return self.combined(size - 1)
        return self.combined(size)

    def split(self, size: int) -> float:
        """Higher-order variance of the split-sample estimator."""
        return self.combined(size, 2.0)


def upsilon_from_moments(info, q1, score, dev):
    """Plug sample arrays into ``E[X^2] E[Y^2] + E[XY]^2``.

    ``X = score / info`` and ``Y = q1 score / (2 info^2) + dev / info``.
    Works along the last axis.
    """
    x = score / info[..., None]
    y = 0.5 * q1[..., None] * score / info[..., None] ** 2 + dev / info[..., None]
    return (x * x).mean(-1) * (y * y).mean(-1) + (x * y).mean(-1) ** 2


def estimate_upsilon_cross(data: Dataset, model: ScalarModel, theta_hat: float) -> HigherOrderVariance:
    """Sample estimate of the cross-section higher-order variance term.

    Raises
    ------
    SingularInformation
        If the average second derivative is numerically zero.
    """
    obs = data.observations
    sc = model.score(obs, theta_hat)
    d2 = model.d2(obs, theta_hat)
    d3 = model.d3(obs, theta_hat)
    info = -float(np.mean(d2))
    if abs(info) < 1e-12:
        raise SingularInformation("sample information is numerically zero")
    upsilon = upsilon_from_moments(np.asarray(info), np.asarray(np.mean(d3)), sc, d2 + info)
    return HigherOrderVariance(leading=1.0 / info, upsilon=float(upsilon))


def _unit_terms(v_sq, v_u_alpha, u_alpha_sq, u_alpha2):
    return 0.5 * u_alpha2**2 + 2.0 * u_alpha2 * v_u_alpha + v_sq * u_alpha_sq + v_u_alpha**2


def estimate_hovar_panel(panel: PanelDataset, model: PanelModel, fit: PanelEstimate) -> HigherOrderVariance:
    """Sample estimate of the panel higher-order variance at the MLE.

    Per-unit expectations are replaced by time averages over the retained
    (non-stayer) units, and the efficient score uses a per-unit projection
    coefficient ``mean(u v) / mean(v^2)``.

    Raises
    ------
    DegenerateUnit
        If any retained unit has ``mean(v^2) < 1e-12``.
    """
    keep = np.ones(panel.n, dtype=bool)
    keep[list(fit.dropped_units)] = False
    z = panel.cells[keep]
    alpha = fit.alpha_hat[keep]
    theta = fit.theta_hat

    def cell(fn):
        return fn(z, theta, alpha)

    u, v = cell(model.u), cell(model.v)
    u_a, u_aa = cell(model.u_alpha), cell(model.u_alpha2)
    v_a, v_aa = cell(model.v_alpha), cell(model.v_alpha2)

    v_sq = (v * v).mean(-1)
    if np.any(v_sq < 1e-12):
        bad = int(np.flatnonzero(keep)[np.argmax(v_sq < 1e-12)])
        raise DegenerateUnit(f"unit {bad} has no fixed-effect score variation")
    delta = (u * v).mean(-1) / v_sq
    d = delta[:, None]
    eff = u - d * v
    eff_a = u_a - d * v_a
    eff_aa = u_aa - d * v_aa

    info = math.fsum((eff * eff).mean(-1)) / z.shape[0]
    terms = _unit_terms(v_sq, (v * eff_a).mean(-1), (eff_a * eff_a).mean(-1), eff_aa.mean(-1)) / v_sq**2
    upsilon = math.fsum(terms) / z.shape[0] / info**2
    return HigherOrderVariance(leading=1.0 / info, upsilon=upsilon, setting=PANEL)


def population_hovar_panel(model: PanelModel, theta: float) -> HigherOrderVariance:
    """Closed-form panel higher-order variance from the model's expectations.

    Assumes the per-cell moments do not depend on the fixed effect and that
    ``u`` is already orthogonal to ``v`` (as in the Neyman-Scott model).
    """
    e = model.expectations
    if e is None:
        raise ValueError(f"{model.name} has no closed-form expectations")
    delta = e.u_v(theta) / e.v_sq(theta)
    if delta != 0.0:
        raise ValueError("closed form requires an orthogonal score")
    info = e.u_sq(theta)
    term = _unit_terms(e.v_sq(theta), e.v_u_alpha(theta), e.u_alpha_sq(theta), e.u_alpha2(theta))
    return HigherOrderVariance(1.0 / info, term / e.v_sq(theta) ** 2 / info**2, PANEL)

