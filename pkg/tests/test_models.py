import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy import special

from biascorr.errors import ParseError
from biascorr.models import (
    Dataset,
    PanelDataset,
    builtin_model,
    inverse_mills,
    log_norm_cdf,
    pooled_probit,
    probit_link_derivs,
)

finite = st.floats(-3.0, 3.0, allow_nan=False)
positive = st.floats(0.2, 5.0, allow_nan=False)


def central_diff(f, x, h=1e-5):
    return (f(x + h) - f(x - h)) / (2 * h)


# ---------------------------------------------------------------------------
# scalar derivatives against finite differences
# ---------------------------------------------------------------------------


@settings(max_examples=60, deadline=None)
@given(z=finite, theta=positive)
def test_sqrt_mean_normal_derivatives(z, theta):
    m = builtin_model("sqrt-mean-normal")
    obs = np.array([z])
    assert_allclose(m.score(obs, theta), central_diff(lambda t: m.loglik(obs, t), theta), rtol=1e-6, atol=1e-7)
    assert_allclose(m.d2(obs, theta), central_diff(lambda t: m.score(obs, t), theta), rtol=1e-6, atol=1e-7)
    assert_allclose(m.d3(obs, theta), central_diff(lambda t: m.d2(obs, t), theta), rtol=1e-5, atol=1e-6)


@settings(max_examples=60, deadline=None)
@given(x=finite, y=finite, theta=st.floats(-0.95, 0.95), sigma=st.floats(0.5, 2.0))
def test_ar1_derivatives(x, y, theta, sigma):
    m = builtin_model("AR1", sigma=sigma)
    obs = np.array([x, y])
    assert_allclose(m.score(obs, theta), central_diff(lambda t: m.loglik(obs, t), theta), rtol=1e-6, atol=1e-7)
    assert_allclose(m.d2(obs, theta), central_diff(lambda t: m.score(obs, t), theta), rtol=1e-6, atol=1e-7)
    assert m.d3(obs, theta) == 0.0


@settings(max_examples=60, deadline=None)
@given(y=st.sampled_from([0.0, 1.0]), x=finite, theta=finite)
def test_pooled_probit_derivatives(y, x, theta):
    m = pooled_probit()
    obs = np.array([y, x])
    assert_allclose(m.score(obs, theta), central_diff(lambda t: m.loglik(obs, t), theta), rtol=1e-5, atol=1e-6)
    assert_allclose(m.d2(obs, theta), central_diff(lambda t: m.score(obs, t), theta), rtol=1e-5, atol=1e-6)
    assert_allclose(m.d3(obs, theta), central_diff(lambda t: m.d2(obs, t), theta), rtol=1e-4, atol=1e-5)


def test_sufficient_statistics_match_pointwise_averages():
    rng = np.random.default_rng(3)
    for m, obs, theta in (
        (builtin_model("SqrtMeanNormal"), rng.normal(1.0, 1.0, (40, 1)), 1.3),
        (builtin_model("AR1", sigma=1.5), rng.normal(size=(40, 2)), 0.4),
    ):
        means = m.sufficient.compute(obs).mean(axis=0)
        got = m.sufficient.evaluate(means, theta)
        want = [piece.mean() for piece in m.pieces(obs, theta)]
        assert_allclose(got, want, rtol=1e-12)


def test_sqrt_mean_normal_expectations_match_simulation():
    m = builtin_model("SqrtMeanNormal")
    rng = np.random.default_rng(0)
    theta = 2.0
    z = (math.sqrt(theta) + rng.standard_normal(400_000))[:, None]
    e = m.expectations
    sc, d2 = m.score(z, theta), m.d2(z, theta)
    assert_allclose(d2.mean(), e.d2(theta), rtol=1e-2)
    assert_allclose(m.d3(z, theta).mean(), e.d3(theta), rtol=1e-2)
    assert_allclose((sc * sc).mean(), e.score_sq(theta), rtol=1e-2)
    assert_allclose((sc * d2).mean(), e.score_d2(theta), rtol=3e-2)


# ---------------------------------------------------------------------------
# panel derivatives
# ---------------------------------------------------------------------------

PANEL_PAIRS = (
    ("u", "loglik", "theta"),
    ("v", "loglik", "alpha"),
    ("u_theta", "u", "theta"),
    ("u_alpha", "u", "alpha"),
    ("u_alpha2", "u_alpha", "alpha"),
    ("v_alpha", "v", "alpha"),
    ("v_alpha2", "v_alpha", "alpha"),
)


@pytest.mark.parametrize("name", ["NeymanScott", "Probit"])
@settings(max_examples=40, deadline=None)
@given(a=finite, b=finite, theta=positive, alpha=finite)
def test_panel_derivatives(name, a, b, theta, alpha):
    m = builtin_model(name)
    z = np.array([[[a]]]) if name == "NeymanScott" else np.array([[[float(a > 0), b]]])
    al = np.array([alpha])
    for deriv, base, wrt in PANEL_PAIRS:
        f = getattr(m, base)
        if wrt == "theta":
            fd = central_diff(lambda t: f(z, t, al), theta)
        else:
            fd = central_diff(lambda s: f(z, theta, np.array([s])), alpha)
        assert_allclose(getattr(m, deriv)(z, theta, al), fd, rtol=1e-5, atol=1e-6, err_msg=deriv)


@settings(max_examples=40, deadline=None)
@given(y=st.sampled_from([0.0, 1.0]), x=finite, theta=finite, alpha=finite)
def test_probit_cell_terms_match_individual_functions(y, x, theta, alpha):
    m = builtin_model("Probit")
    z = np.array([[[y, x]]])
    al = np.array([alpha])
    keys = ("loglik", "u", "v", "u_theta", "u_alpha", "v_alpha", "u_alpha2", "v_alpha2")
    terms = m.cell_terms(z, theta, al, keys)
    for k in keys:
        assert_allclose(terms[k], getattr(m, k)(z, theta, al), rtol=1e-13, atol=1e-300)


def test_neyman_scott_expectations_match_simulation():
    m = builtin_model("NeymanScott")
    rng = np.random.default_rng(1)
    theta = 1.7
    z = (math.sqrt(theta) * rng.standard_normal(400_000)).reshape(1, -1, 1)
    al = np.zeros(1)
    e = m.expectations
    u, v = m.u(z, theta, al), m.v(z, theta, al)
    assert_allclose((v * v).mean(), e.v_sq(theta), rtol=1e-2)
    assert abs((u * v).mean()) < 5e-3
    assert_allclose((u * u).mean(), e.u_sq(theta), rtol=2e-2)
    assert_allclose((v * m.u_alpha(z, theta, al)).mean(), e.v_u_alpha(theta), rtol=1e-2)
    assert_allclose((m.u_alpha(z, theta, al) ** 2).mean(), e.u_alpha_sq(theta), rtol=1e-2)
    assert_allclose(m.u_alpha2(z, theta, al).mean(), e.u_alpha2(theta), rtol=1e-12)


# ---------------------------------------------------------------------------
# normal CDF helpers against independent references
# ---------------------------------------------------------------------------


def test_log_norm_cdf_matches_scipy():
    w = np.linspace(-60, 40, 2001)
    assert_allclose(log_norm_cdf(w), special.log_ndtr(w), rtol=1e-12, atol=1e-300)


@pytest.mark.parametrize("w", [-200.0, -40.0, -8.5, -8.0, -3.0, 0.0, 2.5, 9.0])
def test_probit_link_derivatives_match_high_precision(w):
    mpmath.mp.dps = 50
    phi = lambda t: mpmath.npdf(t)  # noqa: E731
    Phi = lambda t: mpmath.ncdf(t)  # noqa: E731
    lam = phi(w) / Phi(w)
    want_d2 = -lam * (w + lam)
    # third derivative of log Phi: d/dw of -lam (w + lam)
    want_d3 = mpmath.diff(lambda t: -(phi(t) / Phi(t)) * (t + phi(t) / Phi(t)), w)
    got = probit_link_derivs(np.array([w]))
    assert_allclose(got[1][0], float(lam), rtol=1e-12)
    assert_allclose(got[2][0], float(want_d2), rtol=1e-9)
    assert_allclose(got[3][0], float(want_d3), rtol=1e-6)


def test_inverse_mills_stays_finite_far_in_the_tail():
    w = np.array([-1e4, -1e3, -50.0])
    lam = inverse_mills(w)
    assert np.all(np.isfinite(lam))
    assert_allclose(lam, -w, rtol=1e-3)


# ---------------------------------------------------------------------------
# datasets and names
# ---------------------------------------------------------------------------


def test_dataset_copies_and_freezes():
    src = np.array([1.0, 2.0, 3.0])
    ds = Dataset(src)
    src[0] = 99.0
    assert ds.observations[0, 0] == 1.0
    with pytest.raises(ValueError):
        ds.observations[0, 0] = 5.0


def test_lagged_pairs():
    ds = Dataset.lagged([1.0, 2.0, 4.0])
    assert ds.observations.tolist() == [[1.0, 2.0], [2.0, 4.0]]


def test_csv_with_and_without_header(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("z\n1\n3\n")
    assert Dataset.from_csv(p).observations.ravel().tolist() == [1.0, 3.0]
    p.write_text("# comment\n1\n3\n")
    assert Dataset.from_csv(p).observations.ravel().tolist() == [1.0, 3.0]


@pytest.mark.parametrize(
    "text", ["", "z\n", "z\n1\nabc\n", "a,b\n1,2\n3\n", "z\nnan\n"]
)
def test_bad_csv_raises_parse_error(tmp_path, text):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(ParseError):
        Dataset.from_csv(p)


def test_missing_file_raises_parse_error(tmp_path):
    with pytest.raises(ParseError):
        Dataset.from_csv(tmp_path / "nope.csv")


def test_panel_csv_round_trip(tmp_path):
    p = tmp_path / "p.csv"
    p.write_text("unit,period,z\n2,2,4\n1,1,1\n1,2,2\n2,1,3\n")
    panel = PanelDataset.from_csv(p)
    assert panel.cells[..., 0].tolist() == [[1.0, 2.0], [3.0, 4.0]]


@pytest.mark.parametrize(
    "text",
    [
        "u,p,z\n1,1,1\n1,2,2\n",
        "unit,period,z\n1,1,1\n1,2,2\n2,1,3\n",
        "unit,period,z\n1,1,1\n1,1,2\n",
        "unit,period,z\n1,1.5,1\n1,2,2\n",
    ],
)
def test_bad_panel_csv(tmp_path, text):
    p = tmp_path / "p.csv"
    p.write_text(text)
    with pytest.raises(ParseError):
        PanelDataset.from_csv(p)


def test_builtin_model_names():
    assert builtin_model("sqrt_mean_normal").name == "SqrtMeanNormal"
    assert builtin_model("Neyman-Scott").name == "NeymanScott"
    with pytest.raises(ValueError):
        builtin_model("logit")
