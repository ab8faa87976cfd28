"""Newton maximum-likelihood solvers.

The public entry points :func:`fit_mle` and :func:`fit_panel_mle` fit one
sample.  Internally both are thin wrappers around batched solvers that fit
many weighted subsamples at once (leave-one-out refits, split halves,
bootstrap resamples, Monte Carlo replicates).  Batch members are frozen as
soon as they converge.

Convergence is declared once ``|mean score| <= score_tol`` or
``|step| <= step_tol``, but the Newton step computed at that point is always
applied first.  This matters for the jackknife, which multiplies solver error
by ``n**2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DomainExit, NonConvergence
from .models import Dataset, Interval, PanelDataset, PanelModel, ScalarModel

OK, NONCONVERGED, DOMAIN, EMPTY, BOUNDARY = 0, 1, 2, 3, 4
_STATUS_TEXT = {
    NONCONVERGED: "no convergence",
    DOMAIN: "left the parameter domain",
    EMPTY: "no informative units",
    BOUNDARY: "maximum on the boundary of the parameter domain",
}


def fit_ok(status) -> np.ndarray:
    """Statuses usable as subsample estimates (interior or closed-boundary)."""
    status = np.asarray(status)
    return (status == OK) | (status == BOUNDARY)


@dataclass(frozen=True)
class SolverOpts:
    score_tol: float = 1e-10
    step_tol: float = 1e-12
    max_iter: int = 100
    max_halvings: int = 40


@dataclass(frozen=True)
class Estimate:
    """Cross-section fit.  ``se`` is ``(-n * mean d2)^(-1/2)`` at the optimum."""

    theta_hat: float
    se: float
    loglik_at_max: float
    iterations: int
    converged: bool
    n: int


@dataclass(frozen=True)
class PanelEstimate:
    """Panel fixed-effects fit.

    ``alpha_hat`` holds NaN for dropped (stayer) units.  ``se`` is the
    theta-theta element of the inverse observed Hessian in ``(theta, alpha)``.
    """

    theta_hat: float
    alpha_hat: np.ndarray
    se: float
    dropped_units: tuple[int, ...]
    converged: bool
    n: int
    T: int
    iterations: int = 0
    loglik_at_max: float = float("nan")


def status_error(code: int, what: str = "fit"):
    """Exception instance matching a solver status code."""
    if code in (DOMAIN, BOUNDARY):
        return DomainExit(f"{what}: {_STATUS_TEXT[code]}")
    return NonConvergence(f"{what}: {_STATUS_TEXT.get(code, 'failed')}")


# ---------------------------------------------------------------------------
# scalar core
# ---------------------------------------------------------------------------


def _near_edge(domain: Interval, theta: np.ndarray) -> np.ndarray:
    gap = domain.distance(theta)
    return gap <= 1e-9 * np.maximum(1.0, np.abs(theta))


def newton_1d(
    evaluate: Callable[[np.ndarray, np.ndarray], tuple],
    theta0: np.ndarray,
    domain: Interval,
    opts: SolverOpts,
):
    """Batched one-dimensional Newton ascent with step halving.

    Parameters
    ----------
    evaluate : callable
        ``evaluate(theta, idx)`` returns ``(objective, gradient, hessian)`` for
        the batch members ``idx`` at the points ``theta``.
    theta0 : ndarray
        Starting values, one per batch member.

    Returns
    -------
    theta, status, iterations, objective, hessian : ndarray
    """
    theta = np.array(theta0, dtype=float).ravel()
    size = theta.size
    status = np.full(size, NONCONVERGED)
    iters = np.zeros(size, dtype=int)
    obj = np.full(size, np.nan)
    hess = np.full(size, np.nan)
    grad = np.full(size, np.nan)

    inside = domain.contains(theta)
    status[~inside] = DOMAIN
    if domain.closed_lower:
        status[theta == domain.lower] = BOUNDARY
    active = np.flatnonzero(inside)
    if active.size:
        obj[active], grad[active], hess[active] = evaluate(theta[active], active)

    for it in range(1, opts.max_iter + 1):
        if active.size == 0:
            break
        g = grad[active]
        h = hess[active]
        newton = h < 0
        step = np.where(newton, -g / np.where(newton, h, -1.0), g)
        base = theta[active]
        base_obj = obj[active]
        tol = 1e-13 * (1.0 + np.abs(base_obj))

        accepted = np.zeros(active.size, dtype=bool)
        ever_inside = np.zeros(active.size, dtype=bool)
        new_theta = base.copy()
        scale = 1.0
        pending = np.arange(active.size)
        for _ in range(opts.max_halvings + 1):
            cand = base[pending] + scale * step[pending]
            ok = domain.contains(cand)
            ever_inside[pending[ok]] = True
            if ok.any():
                sel = pending[ok]
                o, gg, hh = evaluate(cand[ok], active[sel])
                good = np.isfinite(o) & (o >= base_obj[sel] - tol[sel])
                win = sel[good]
                accepted[win] = True
                new_theta[win] = cand[ok][good]
                obj[active[win]] = o[good]
                grad[active[win]] = gg[good]
                hess[active[win]] = hh[good]
            pending = np.flatnonzero(~accepted)
            if pending.size == 0:
                break
            scale *= 0.5

        members = active
        iters[members] = it
        delta = np.abs(new_theta - base)
        theta[members] = new_theta
        stalled = ~accepted & ever_inside
        lost = ~accepted & ~ever_inside
        if domain.closed_lower:
            # ascent direction points at an attainable lower end
            to_edge = lost & (step < 0)
            theta[members[to_edge]] = domain.lower
            status[members[to_edge]] = BOUNDARY
            lost &= ~to_edge
            done_edge = to_edge
        else:
            done_edge = np.zeros_like(lost)
        status[members[lost]] = DOMAIN
        done = accepted & ((np.abs(g) <= opts.score_tol) | (delta <= opts.step_tol))
        done |= stalled
        status[members[done]] = OK
        active = members[~(done | lost | done_edge)]

    _settle_edges(domain, theta, status)
    return theta, status, iters, obj, hess


def _settle_edges(domain: Interval, theta: np.ndarray, status: np.ndarray) -> None:
    """Reclassify fits that collapsed onto the edge of the domain."""
    edge = (status != EMPTY) & domain.contains(theta) & _near_edge(domain, theta)
    if domain.closed_lower:
        low = edge & (theta - domain.lower <= domain.upper - theta)
        theta[low] = domain.lower
        status[low] = BOUNDARY
        edge &= ~low
    status[edge] = DOMAIN


def _chunk_index(idx: np.ndarray, groups: int) -> tuple[np.ndarray, np.ndarray]:
    return idx // groups, idx % groups


def solve_scalar(
    model: ScalarModel,
    theta0: np.ndarray,
    opts: SolverOpts,
    *,
    means: Optional[np.ndarray] = None,
    obs: Optional[np.ndarray] = None,
    weights: Optional[np.ndarray] = None,
):
    """Fit a batch of weighted samples.

    Either ``means`` (sufficient-statistic averages, shape ``(R, S, p)``) or
    ``obs`` ``(R, n, k)`` with ``weights`` ``(R or 1, S, n)`` summing to one
    over the last axis.  Returns arrays of shape ``(R, S)``.
    """
    theta0 = np.asarray(theta0, dtype=float)
    if means is not None:
        shape = means.shape[:-1]
        flat = means.reshape(-1, means.shape[-1])
        ev = model.sufficient.evaluate

        def evaluate(theta, idx):
            return ev(flat[idx], theta)

    else:
        R, n, _ = obs.shape
        S = weights.shape[-2]
        shape = (R, S)
        wr = weights.shape[0]

        def evaluate(theta, idx):
            r, s = _chunk_index(idx, S)
            z = obs[r]
            w = weights[r if wr > 1 else np.zeros_like(r), s]
            th = theta[:, None]
            ll, sc, d2 = model.pieces(z, th)
            return (w * ll).sum(-1), (w * sc).sum(-1), (w * d2).sum(-1)

    start = np.broadcast_to(theta0, shape).ravel()
    theta, status, iters, obj, hess = newton_1d(evaluate, start, model.domain, opts)
    return (
        theta.reshape(shape),
        status.reshape(shape),
        iters.reshape(shape),
        obj.reshape(shape),
        hess.reshape(shape),
    )


def fit_mle(
    data: Dataset,
    model: ScalarModel,
    init: Optional[float] = None,
    opts: Optional[SolverOpts] = None,
) -> Estimate:
    """Maximum-likelihood estimate for a scalar model.

    Raises
    ------
    NonConvergence
        No convergence within ``opts.max_iter`` iterations.
    DomainExit
        ``init`` is outside the domain, or the maximiser lies on its boundary.
    """
    opts = opts or SolverOpts()
    obs = data.observations
    n = obs.shape[0]
    start = model.init(obs) if init is None else float(init)
    if not model.domain.contains(start):
        raise DomainExit(f"initial value {start!r} outside the parameter domain")
    weights = np.full((1, 1, n), 1.0 / n)
    theta, status, iters, obj, hess = solve_scalar(
        model, start, opts, obs=obs[None], weights=weights
    )
    if status[0, 0] != OK:
        raise status_error(int(status[0, 0]), f"{model.name} fit")
    h = float(hess[0, 0])
    se = 1.0 / math.sqrt(-n * h) if h < 0 else math.nan
    return Estimate(
        theta_hat=float(theta[0, 0]),
        se=se,
        loglik_at_max=float(obj[0, 0]) * n,
        iterations=int(iters[0, 0]),
        converged=True,
        n=n,
    )


# ---------------------------------------------------------------------------
# panel core
# ---------------------------------------------------------------------------

_INNER_KEYS = ("loglik", "v", "v_alpha")
_OUTER_KEYS = ("loglik", "u", "u_theta", "u_alpha", "v_alpha")


@dataclass
class _PanelBatch:
    """Evaluator for a flattened batch of masked panels."""

    model: PanelModel
    cells: np.ndarray  # (R, n, T, k)
    masks: np.ndarray  # (S, T) bool
    keep: np.ndarray  # (R*S, n) bool
    sums: Optional[np.ndarray] = field(default=None)  # (p, R*S, n)

    def __post_init__(self):
        self.all_kept = bool(self.keep.all())

    @property
    def groups(self) -> int:
        return self.masks.shape[0]

    def unit_sums(self, idx, theta, alpha, keys):
        keep = self.keep[idx]
        if self.sums is not None:
            # stat-major storage keeps each statistic contiguous
            sub = self.sums if idx.size == self.sums.shape[1] else self.sums[:, idx]
            out = self.model.sufficient.evaluate(np.moveaxis(sub, 0, -1), theta, alpha, keys)
            if self.all_kept:
                return out
            return {k: np.where(keep, out[k], 0.0) for k in keys}
        r, s = _chunk_index(idx, self.groups)
        z = self.cells[r]
        mask = keep[:, :, None] & self.masks[s][:, None, :]
        safe_alpha = np.where(keep, alpha, 0.0)
        if self.model.cell_terms is not None:
            vals = self.model.cell_terms(z, theta, safe_alpha, keys)
        else:
            vals = {k: getattr(self.model, k)(z, theta, safe_alpha) for k in keys}
        return {k: np.where(mask, vals[k], 0.0).sum(-1) for k in keys}


def _solve_alpha(batch: _PanelBatch, idx, theta, alpha0, opts: SolverOpts):
    """Per-unit Newton for the fixed effects at fixed theta.

    Returns ``(alpha, ok)``; ``ok`` flags batch members whose units all
    converged.
    """
    alpha = np.array(alpha0, dtype=float)
    done = ~batch.keep[idx]
    cur = batch.unit_sums(idx, theta, alpha, _INNER_KEYS)
    for _ in range(opts.max_iter):
        if done.all():
            break
        g, h, ll = cur["v"], cur["v_alpha"], cur["loglik"]
        newton = h < 0
        step = np.where(newton, -g / np.where(newton, h, -1.0), np.sign(g))
        step = np.where(done, 0.0, step)
        tol = 1e-13 * (1.0 + np.abs(ll))
        scale = np.ones_like(alpha)
        accepted = done.copy()
        new = cur
        new_alpha = alpha.copy()
        for _ in range(opts.max_halvings + 1):
            cand = np.where(accepted, new_alpha, alpha + scale * step)
            trial = batch.unit_sums(idx, theta, cand, _INNER_KEYS)
            good = ~accepted & np.isfinite(trial["loglik"]) & (trial["loglik"] >= ll - tol)
            new_alpha = np.where(good, cand, new_alpha)
            new = {k: np.where(good, trial[k], new[k]) for k in _INNER_KEYS}
            accepted |= good
            if accepted.all():
                break
            scale = np.where(accepted, scale, 0.5 * scale)
        delta = np.abs(new_alpha - alpha)
        alpha = new_alpha
        cur = new
        small = 1e-2 * opts.score_tol
        finished = (np.abs(g) <= small) | (np.abs(cur["v"]) <= small)
        finished |= delta <= opts.step_tol * (1.0 + np.abs(alpha))
        done |= finished & accepted
        done |= ~accepted  # stalled at machine resolution
    ok = done.all(axis=-1)
    return alpha, ok


def _profile(batch: _PanelBatch, idx, theta, alpha, opts):
    alpha, ok = _solve_alpha(batch, idx, theta, alpha, opts)
    s = batch.unit_sums(idx, theta, alpha, _OUTER_KEYS)
    va = np.where(batch.keep[idx], s["v_alpha"], -1.0)
    score = s["u"].sum(-1)
    hess = (s["u_theta"] - s["u_alpha"] ** 2 / va).sum(-1)
    ll = s["loglik"].sum(-1)
    ll = np.where(ok, ll, np.nan)
    return alpha, score, hess, ll


def solve_panel(
    model: PanelModel,
    cells: np.ndarray,
    masks: np.ndarray,
    theta0,
    opts: SolverOpts,
    alpha0: Optional[np.ndarray] = None,
):
    """Fit a batch of period-masked panels.

    Parameters
    ----------
    cells : ndarray ``(R, n, T, k)``
    masks : bool ndarray ``(S, T)``; periods kept in each subsample
    theta0 : array broadcastable to ``(R, S)``
    alpha0 : array broadcastable to ``(R, S, n)``, optional warm start

    Returns
    -------
    dict with ``theta``, ``status``, ``iterations``, ``hessian``, ``loglik``
    (shape ``(R, S)``) and ``alpha``, ``keep`` (shape ``(R, S, n)``).
    """
    cells = np.asarray(cells, dtype=float)
    masks = np.asarray(masks, dtype=bool)
    R, n, T, _ = cells.shape
    S = masks.shape[0]
    shape = (R, S)
    cell_masks = masks[None, :, None, :]  # (1, S, 1, T)
    if model.degenerate is not None:
        drop = model.degenerate(cells[:, None], cell_masks)
    else:
        drop = np.zeros((R, S, n), dtype=bool)
    keep = ~np.broadcast_to(drop, (R, S, n)).reshape(R * S, n)

    sums = None
    if model.sufficient is not None:
        stats = model.sufficient.compute(cells)  # (R, n, T, p)
        sums = np.einsum("rntp,st->prsn", stats, masks.astype(float))
        sums = np.ascontiguousarray(sums.reshape(-1, R * S, n))
    batch = _PanelBatch(model, cells, masks, keep, sums)

    theta = np.array(np.broadcast_to(np.asarray(theta0, dtype=float), shape)).ravel()
    if alpha0 is None:
        alpha = model.init_alpha(cells[:, None], cell_masks, theta.reshape(shape))
        alpha = np.broadcast_to(alpha, (R, S, n)).reshape(R * S, n)
    else:
        alpha = np.broadcast_to(np.asarray(alpha0, dtype=float), (R, S, n)).reshape(R * S, n)
    alpha = np.where(keep, alpha, 0.0).astype(float)

    size = R * S
    status = np.full(size, NONCONVERGED)
    iters = np.zeros(size, dtype=int)
    hess = np.full(size, np.nan)
    obj = np.full(size, np.nan)
    score = np.full(size, np.nan)
    nobs = (keep[:, :, None] & np.tile(masks, (R, 1))[:, None, :]).sum(axis=(1, 2))

    empty = ~keep.any(axis=-1)
    status[empty] = EMPTY
    inside = model.domain.contains(theta)
    status[~inside & ~empty] = DOMAIN
    active = np.flatnonzero(inside & ~empty)
    if active.size:
        a, sc, hs, ll = _profile(batch, active, theta[active], alpha[active], opts)
        alpha[active], score[active], hess[active], obj[active] = a, sc, hs, ll
        bad = ~np.isfinite(ll)
        status[active[bad]] = NONCONVERGED
        active = active[~bad]

    for it in range(1, opts.max_iter + 1):
        if active.size == 0:
            break
        g = score[active]
        h = hess[active]
        newton = h < 0
        step = np.where(newton, -g / np.where(newton, h, -1.0), g / nobs[active])
        base = theta[active]
        base_obj = obj[active]
        tol = 1e-13 * (1.0 + np.abs(base_obj))
        accepted = np.zeros(active.size, dtype=bool)
        ever_inside = np.zeros(active.size, dtype=bool)
        new_theta = base.copy()
        scale = 1.0
        pending = np.arange(active.size)
        for _ in range(opts.max_halvings + 1):
            cand = base[pending] + scale * step[pending]
            ok = model.domain.contains(cand)
            ever_inside[pending[ok]] = True
            if ok.any():
                sel = pending[ok]
                members = active[sel]
                a, sc, hs, ll = _profile(batch, members, cand[ok], alpha[members], opts)
                good = np.isfinite(ll) & (ll >= base_obj[sel] - tol[sel])
                win = members[good]
                accepted[sel[good]] = True
                new_theta[sel[good]] = cand[ok][good]
                alpha[win], score[win], hess[win], obj[win] = a[good], sc[good], hs[good], ll[good]
            pending = np.flatnonzero(~accepted)
            if pending.size == 0:
                break
            scale *= 0.5
        iters[active] = it
        delta = np.abs(new_theta - base)
        theta[active] = new_theta
        lost = ~accepted & ~ever_inside
        stalled = ~accepted & ever_inside
        status[active[lost]] = DOMAIN
        done = accepted & ((np.abs(g) / nobs[active] <= opts.score_tol) | (delta <= opts.step_tol))
        done |= stalled
        status[active[done]] = OK
        active = active[~(done | lost)]

    _settle_edges(model.domain, theta, status)
    alpha = np.where(keep, alpha, np.nan)
    return {
        "theta": theta.reshape(shape),
        "status": status.reshape(shape),
        "iterations": iters.reshape(shape),
        "hessian": hess.reshape(shape),
        "loglik": obj.reshape(shape),
        "alpha": alpha.reshape(R, S, n),
        "keep": keep.reshape(R, S, n),
    }


def fit_panel_mle(
    panel: PanelDataset,
    model: PanelModel,
    init: Optional[float] = None,
    opts: Optional[SolverOpts] = None,
) -> PanelEstimate:
    """Fixed-effects MLE with the individual effects profiled out.

    Units without an interior fixed-effect maximiser (probit stayers) are
    dropped and listed in ``dropped_units``.
    """
    opts = opts or SolverOpts()
    cells = panel.cells[None]
    masks = np.ones((1, panel.T), dtype=bool)
    if init is None:
        init = float(np.asarray(model.init_theta(cells[:, None], masks[None, :, None, :])).ravel()[0])
    if not model.domain.contains(init):
        raise DomainExit(f"initial value {init!r} outside the parameter domain")
    out = solve_panel(model, cells, masks, init, opts)
    code = int(out["status"][0, 0])
    if code != OK:
        raise status_error(code, f"{model.name} panel fit")
    return panel_estimate_from(out, 0, 0, panel.T)


def panel_estimate_from(out: dict, r: int, s: int, T: int) -> PanelEstimate:
    keep = out["keep"][r, s]
    h = float(out["hessian"][r, s])
    return PanelEstimate(
        theta_hat=float(out["theta"][r, s]),
        alpha_hat=np.array(out["alpha"][r, s]),
        se=1.0 / math.sqrt(-h) if h < 0 else math.nan,
        dropped_units=tuple(int(i) for i in np.flatnonzero(~keep)),
        converged=bool(out["status"][r, s] == OK),
        n=keep.size,
        T=T,
        iterations=int(out["iterations"][r, s]),
        loglik_at_max=float(out["loglik"][r, s]),
    )
