import itertools
import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from biascorr import corrections as cx
from biascorr.errors import MissingExpectations, ScaleMismatch, SubfitFailure
from biascorr.estimate import fit_mle, fit_panel_mle
from biascorr.models import Dataset, PanelDataset, builtin_model

SMN = builtin_model("SqrtMeanNormal")
NS = builtin_model("NeymanScott")

positive_samples = st.lists(st.floats(0.2, 4.0), min_size=3, max_size=25)


def _fit(z):
    data = Dataset(z)
    return data, fit_mle(data, SMN)


# ---------------------------------------------------------------------------
# oracles written from the definitions
# ---------------------------------------------------------------------------


def jackknife_oracle(z):
    z = np.asarray(z, dtype=float)
    n = z.size
    loo = [np.delete(z, i).mean() ** 2 for i in range(n)]
    return n * (n - 1) * (np.mean(loo) - z.mean() ** 2)


def split_oracle(z):
    z = np.asarray(z, dtype=float)
    n = z.size
    h = (n + 1) // 2
    return n * ((z[:h].mean() ** 2 + z[h:].mean() ** 2) / 2 - z.mean() ** 2)


def exact_bootstrap_oracle(z):
    """Average over all n^n equally likely resamples."""
    z = np.asarray(z, dtype=float)
    n = z.size
    vals = [np.mean(z[list(idx)]) ** 2 for idx in itertools.product(range(n), repeat=n)]
    return n * (math.fsum(vals) / len(vals) - z.mean() ** 2)


def test_two_point_worked_example():
    data, full = _fit([1.0, 3.0])
    jk = cx.jackknife_bias(data, SMN, full)
    ss = cx.split_sample_bias(data, SMN, full)
    assert_allclose(jk.value, 2.0, rtol=1e-10)
    assert_allclose(ss.value, 2.0, rtol=1e-10)
    assert_allclose(cx.apply_correction(full, jk).theta_hat, 3.0, rtol=1e-10)


@settings(max_examples=60, deadline=None)
@given(positive_samples)
def test_jackknife_and_split_match_definitions(z):
    data, full = _fit(z)
    assert_allclose(cx.jackknife_bias(data, SMN, full).value, jackknife_oracle(z), rtol=1e-7, atol=1e-9)
    assert_allclose(cx.split_sample_bias(data, SMN, full).value, split_oracle(z), rtol=1e-7, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(positive_samples, st.randoms(use_true_random=False))
def test_jackknife_and_bootstrap_ignore_order(z, rnd):
    perm = list(z)
    rnd.shuffle(perm)
    a_data, a_full = _fit(z)
    b_data, b_full = _fit(perm)
    assert_allclose(
        cx.jackknife_bias(a_data, SMN, a_full).value, cx.jackknife_bias(b_data, SMN, b_full).value, rtol=1e-8, atol=1e-9
    )
    a = cx.bootstrap_bias(a_data, SMN, a_full, B=64, seed=3).value
    b = cx.bootstrap_bias(b_data, SMN, b_full, B=64, seed=3).value
    assert_allclose(a, b, rtol=1e-8, atol=1e-10)


def test_bootstrap_converges_to_exact_resampling_mean():
    z = [0.4, 1.1, 2.0, 3.5, 0.9]
    data, full = _fit(z)
    exact = exact_bootstrap_oracle(z)
    B = 200_000
    b = cx.bootstrap_bias(data, SMN, full, B=B, seed=11)
    sd = np.nanstd(b.replicate_values) * len(z) / math.sqrt(B)
    assert abs(b.value - exact) < 4 * sd


def test_bootstrap_with_all_zero_resamples_uses_the_boundary():
    data, full = _fit([0.0, 1.0, 2.0])
    b = cx.bootstrap_bias(data, SMN, full, B=20_000, seed=1)
    assert b.failures == 0
    assert abs(b.value - exact_bootstrap_oracle([0.0, 1.0, 2.0])) < 0.03


def test_bootstrap_control_variate_is_exact_for_quadratic_estimator():
    # theta_hat = mean(z)^2, so the second-order expansion has no remainder
    data, full = _fit([0.0, 1.0, 2.0])
    b = cx.bootstrap_bias(data, SMN, full, B=64, seed=5, control=True)
    assert_allclose(b.value, 2.0 / 3.0, rtol=1e-9)
    assert_allclose(b.value, exact_bootstrap_oracle([0.0, 1.0, 2.0]), rtol=1e-9)


def test_bootstrap_counts_do_not_depend_on_B():
    small = cx.bootstrap_counts(7, 10, seed=4)
    large = cx.bootstrap_counts(7, 200, seed=4)
    assert np.array_equal(small, large[:10])
    assert np.all(large.sum(axis=1) == 7)


def test_bootstrap_failure_is_reported_with_index(monkeypatch):
    data, full = _fit([1.0, 2.0, 3.0])

    def failing(model, obs, theta_full, B, seeds, opts, control=False):
        sub = np.full((1, B), 1.0)
        sub[0, 5:] = np.nan
        return np.array([0.0]), np.array([B - 5]), sub

    monkeypatch.setattr(cx, "bootstrap_bias_batch", failing)
    with pytest.raises(SubfitFailure) as info:
        cx.bootstrap_bias(data, SMN, full, B=100)
    assert info.value.index == 5 and info.value.method == "bootstrap"


def test_jackknife_subfit_failure_names_the_observation(monkeypatch):
    data, full = _fit([1.0, 2.0, 3.0, 4.0])
    real = cx.refit_scalar

    def failing(*args, **kwargs):
        theta, status = real(*args, **kwargs)
        status = status.copy()
        status[0, 2] = 2
        return theta, status

    monkeypatch.setattr(cx, "refit_scalar", failing)
    with pytest.raises(SubfitFailure) as info:
        cx.jackknife_bias(data, SMN, full)
    assert info.value.index == 2 and info.value.method == "jackknife"


def test_jackknife_accepts_boundary_subfits():
    # dropping the positive value leaves a sample whose maximiser is theta = 0
    data = Dataset([-1.0, -1.0, 5.0])
    full = fit_mle(data, SMN)
    b = cx.jackknife_bias(data, SMN, full)
    assert b.replicate_values[2] == 0.0


# ---------------------------------------------------------------------------
# analytic corrections
# ---------------------------------------------------------------------------


def _symbolic_bias():
    z, t = sp.symbols("z theta", positive=True)
    ll = -sp.log(2 * sp.pi) / 2 - (z - sp.sqrt(t)) ** 2 / 2
    score, d2 = sp.diff(ll, t), sp.diff(ll, t, 2)
    d3 = sp.diff(ll, t, 3)
    x = sp.symbols("x", real=True)
    dens = sp.exp(-((x - sp.sqrt(t)) ** 2) / 2) / sp.sqrt(2 * sp.pi)

    def expect(expr):
        return sp.simplify(sp.integrate(expr.subs(z, x) * dens, (x, -sp.oo, sp.oo)))

    E2, E3, E12 = expect(d2), expect(d3), expect(score * d2)
    return sp.simplify(E3 / (2 * E2**2) + E12 / E2**2), t


def test_integral_correction_matches_symbolic_bias():
    expr, t = _symbolic_bias()
    for theta in (0.25, 1.0, 4.0):
        want = float(expr.subs(t, theta))
        got = cx.analytic_bias_integral(SMN, theta).value
        assert_allclose(got, want, atol=1e-8)
        assert_allclose(got, 1.0, atol=1e-8)


def test_integral_correction_needs_expectations():
    with pytest.raises(MissingExpectations):
        cx.analytic_bias_integral(builtin_model("AR1"), 0.5)
    with pytest.raises(MissingExpectations):
        cx.analytic_bias_integral(NS, 1.0)


def test_sample_analytic_corrections_match_hand_formulas():
    z = np.array([0.5, 1.5, 2.5, 1.0])
    data, full = _fit(z)
    t = full.theta_hat
    obs = z[:, None]
    sc, d2, d3 = SMN.score(obs, t), SMN.d2(obs, t), SMN.d3(obs, t)
    want_sample = -d3.mean() * (sc**2).mean() / (2 * d2.mean() ** 3) + (sc * d2).mean() / d2.mean() ** 2
    want_infoeq = d3.mean() / (2 * d2.mean() ** 2) + (sc * d2).mean() / d2.mean() ** 2
    assert_allclose(cx.analytic_bias_sample(data, SMN, full).value, want_sample, rtol=1e-12)
    assert_allclose(cx.analytic_bias_infoeq(data, SMN, full).value, want_infoeq, rtol=1e-12)


def test_ar1_correction():
    est = fit_mle(Dataset.lagged([0.0, 1.0, 0.5, 0.25]), builtin_model("AR1"))
    assert cx.ar1_analytic_bias(est).value == pytest.approx(-1.0)
    assert cx.ar1_analytic_correct(est).theta_hat == pytest.approx(0.5 * (1 + 2 / 3))
    assert cx.apply_correction(est, cx.ar1_analytic_bias(est)).theta_hat == pytest.approx(0.5 * (1 + 2 / 3))


# ---------------------------------------------------------------------------
# panels
# ---------------------------------------------------------------------------


def _ns_panel(seed, n=30, T=5):
    rng = np.random.default_rng(seed)
    return PanelDataset(rng.normal(size=(n, T)) + rng.normal(size=(n, 1)))


@pytest.mark.parametrize("T", [3, 4, 7])
def test_panel_jackknife_neyman_scott_is_unbiased_variance(T):
    panel = _ns_panel(T, T=T)
    full = fit_panel_mle(panel, NS)
    corrected = cx.apply_correction(full, cx.panel_jackknife_bias(panel, NS, full))
    z = panel.cells[..., 0]
    dev = z - z.mean(axis=1, keepdims=True)
    assert_allclose(corrected.theta_hat, (dev**2).sum() / (z.shape[0] * (T - 1)), rtol=1e-9)


def test_panel_split_matches_half_panel_fits():
    panel = _ns_panel(1, T=7)
    full = fit_panel_mle(panel, NS)
    b = cx.panel_split_sample_bias(panel, NS, full)
    z = panel.cells[..., 0]

    def within(block):
        dev = block - block.mean(axis=1, keepdims=True)
        return (dev**2).sum() / block.size

    want = 7 * ((within(z[:, :4]) + within(z[:, 4:])) / 2 - full.theta_hat)
    assert_allclose(b.value, want, rtol=1e-9)


def test_scale_mismatch():
    panel = _ns_panel(2)
    pfull = fit_panel_mle(panel, NS)
    data, full = _fit([1.0, 3.0])
    with pytest.raises(ScaleMismatch):
        cx.apply_correction(pfull, cx.jackknife_bias(data, SMN, full))
    with pytest.raises(ScaleMismatch):
        cx.apply_correction(full, cx.panel_jackknife_bias(panel, NS, pfull))


def test_panel_jackknife_failure_reports_period():
    z = np.random.default_rng(0).normal(size=(5, 2))
    panel = PanelDataset(z)
    full = fit_panel_mle(panel, NS)
    with pytest.raises(SubfitFailure) as info:
        cx.panel_jackknife_bias(panel, NS, full)
    assert info.value.method == "panel-jackknife"


def test_probit_panel_corrections_run():
    rng = np.random.default_rng(8)
    n, T = 60, 8
    x = rng.uniform(-1, 1, (n, T))
    y = (x + rng.normal(size=(n, 1)) + rng.normal(size=(n, T)) > 0).astype(float)
    panel = PanelDataset(np.stack([y, x], axis=-1))
    model = builtin_model("Probit")
    full = fit_panel_mle(panel, model)
    jk = cx.panel_jackknife_bias(panel, model, full)
    assert jk.replicate_values.shape == (T,)
    # incidental-parameter bias of the probit MLE is upward
    assert jk.value > 0
