import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from biascorr.errors import ConfigError, ExcessFailures, ParseError, SchemaMismatch
from biascorr.models import Dataset, PanelDataset
from biascorr import montecarlo as mc
from biascorr.montecarlo import (
    DgpSpec,
    EstimatorSummary,
    SimulationConfig,
    SimulationSummary,
    generate,
    parse_summary_csv,
    render_summary,
    run_experiment,
    simulate_replicates,
    summarize_values,
)


def test_generate_is_deterministic():
    dgp = DgpSpec("panel-probit-serial", 1.0, n=20, T=8)
    a, b = generate(dgp, 123), generate(dgp, 123)
    assert isinstance(a, PanelDataset)
    assert a.cells.tobytes() == b.cells.tobytes()
    assert generate(dgp, 124).cells.tobytes() != a.cells.tobytes()


def test_serial_regressor_recursion_without_shocks():
    dgp = DgpSpec("panel-probit-serial", 1.0, n=3, T=3, u_width=0.0)
    x = generate(dgp, 0).cells[..., 1]
    assert_allclose(x, np.tile([0.1, 0.25, 0.425], (3, 1)), rtol=1e-15)


def test_iid_regressor_range_and_binary_outcome():
    cells = generate(DgpSpec("panel-probit-iid", 1.0, n=200, T=5), 1).cells
    assert np.all(np.abs(cells[..., 1]) <= 1.0)
    assert set(np.unique(cells[..., 0])) <= {0.0, 1.0}


def test_sqrt_mean_normal_mean():
    data = generate(DgpSpec("sqrt-mean-normal", 1.0, n=1_000_000), 5)
    assert isinstance(data, Dataset)
    z = data.observations[:, 0]
    assert abs(z.mean() - 1.0) < 4 / math.sqrt(z.size)


def test_ar1_stationary_start():
    starts = np.array([generate(DgpSpec("ar1", 0.8, T=2), s).observations[0, 0] for s in range(20000)])
    assert_allclose(starts.var(), 1 / (1 - 0.64), rtol=0.05)


def test_neyman_scott_within_variance():
    cells = generate(DgpSpec("neyman-scott", 2.0, n=5000, T=4), 2).cells[..., 0]
    dev = cells - cells.mean(axis=1, keepdims=True)
    assert_allclose((dev**2).sum() / (cells.shape[0] * 3), 2.0, rtol=0.03)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(kind="sqrt-mean-normal", theta=-1.0, n=10),
        dict(kind="ar1", theta=1.0, T=10),
        dict(kind="neyman-scott", theta=1.0, n=10, T=1),
        dict(kind="bogus", theta=1.0),
    ],
)
def test_invalid_dgp(kwargs):
    with pytest.raises(ConfigError):
        DgpSpec(**kwargs)


def test_invalid_configs():
    smn = DgpSpec("smn", 1.0, n=10)
    with pytest.raises(ConfigError):
        SimulationConfig(smn, replications=0)
    with pytest.raises(ConfigError):
        SimulationConfig(smn, estimators=("ar1-analytic",))
    with pytest.raises(ConfigError):
        SimulationConfig(DgpSpec("ns", 1.0, n=5, T=3), estimators=("bootstrap",))
    with pytest.raises(ConfigError):
        SimulationConfig(DgpSpec("ar1", 0.5, T=10), estimators=("analytic-integral",))


# ---------------------------------------------------------------------------
# engine
# ---------------------------------------------------------------------------


def _small_config(**kw):
    base = dict(
        dgp=DgpSpec("sqrt-mean-normal", 1.0, n=20),
        estimators=("mle", "jackknife", "split", "bootstrap", "analytic-sample", "analytic-integral"),
        replications=300,
        master_seed=9,
        bootstrap_B=50,
        chunk_size=64,
    )
    base.update(kw)
    return SimulationConfig(**base)


def test_results_do_not_depend_on_workers():
    one = render_summary(run_experiment(_small_config(workers=1)), "csv")
    two = render_summary(run_experiment(_small_config(workers=2)), "csv")
    assert one == two


def test_replicate_matches_single_sample_api():
    from biascorr import corrections as cx
    from biascorr.estimate import fit_mle
    from biascorr.models import builtin_model

    config = _small_config(replications=5)
    table = simulate_replicates(config)
    r = 3
    data = generate(config.dgp, mc.replicate_seed(config.master_seed, r))
    model = builtin_model("SqrtMeanNormal")
    full = fit_mle(data, model)
    assert_allclose(table.theta_hat[r], full.theta_hat, rtol=1e-10)
    assert_allclose(table.se[r], full.se, rtol=1e-8)
    assert_allclose(table.bias["jackknife"][r], cx.jackknife_bias(data, model, full).value, rtol=1e-7)
    boot = cx.bootstrap_bias(data, model, full, B=50, seed=mc.bootstrap_seed(config.master_seed, r))
    assert_allclose(table.bias["bootstrap"][r], boot.value, rtol=1e-7)


def test_panel_replicate_matches_single_sample_api():
    from biascorr import corrections as cx
    from biascorr.estimate import fit_panel_mle
    from biascorr.models import builtin_model

    config = SimulationConfig(DgpSpec("panel-probit-iid", 1.0, n=30, T=6), replications=3, master_seed=4)
    table = simulate_replicates(config)
    model = builtin_model("Probit")
    for r in range(3):
        panel = generate(config.dgp, mc.replicate_seed(4, r))
        full = fit_panel_mle(panel, model)
        assert_allclose(table.theta_hat[r], full.theta_hat, rtol=1e-8)
        assert_allclose(table.se[r], full.se, rtol=1e-6)
        jk = cx.apply_correction(full, cx.panel_jackknife_bias(panel, model, full))
        assert_allclose(table.theta["jackknife"][r], jk.theta_hat, rtol=1e-7)


def test_excess_failures_abort_with_summary(monkeypatch):
    real = mc._run_chunk

    def broken(args):
        start, theta, se, corrected, bias, ok = real(args)
        ok = dict(ok)
        ok["jackknife"] = np.zeros_like(ok["jackknife"])
        return start, theta, se, corrected, bias, ok

    monkeypatch.setattr(mc, "_run_chunk", broken)
    with pytest.raises(ExcessFailures) as info:
        run_experiment(_small_config(estimators=("mle", "jackknife"), replications=50))
    assert info.value.summary.row("jackknife").failures == 50


# ---------------------------------------------------------------------------
# summaries
# ---------------------------------------------------------------------------


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(-5, 5, allow_nan=False), min_size=2, max_size=200),
    st.floats(0.1, 2.0),
    st.floats(-1, 1),
)
def test_summary_invariants(values, se, truth):
    v = np.array(values)
    s = summarize_values("x", v, np.full(v.size, se), truth, truth, (0.10, 0.05), 0)
    R = v.size
    assert_allclose(s.mse, s.bias**2 + s.sd**2 * (R - 1) / R, rtol=1e-10, atol=1e-10)
    assert all(0.0 <= r <= 1.0 for r in s.rejections.values())
    assert s.rejections[0.05] <= s.rejections[0.10]


def test_rejection_rule_uses_two_sided_normal_quantiles():
    s = summarize_values("x", np.array([1.7, 1.9, 2.0, -1.0]), np.ones(4), 0.0, 0.0, (0.10, 0.05), 0)
    # |t| > 1.645 for 10%, |t| > 1.960 for 5%
    assert s.rejections[0.10] == 0.75
    assert s.rejections[0.05] == 0.25


def _summary():
    rows = (
        EstimatorSummary("mle", 0.1 / 3, 0.2, 0.19, 0.95, 0.1, {0.10: 0.25, 0.05: 0.125}, 0),
        EstimatorSummary("jackknife", -1e-17, math.pi, 2.0, 1 / 7, 9.87654321, {0.10: 0.1, 0.05: 0.05}, 3),
    )
    return SimulationSummary(rows, (0.10, 0.05), 100)


def test_csv_round_trip_is_exact():
    s = _summary()
    back = parse_summary_csv(render_summary(s, "csv"))
    assert back.rows == s.rows


def test_csv_columns_and_markdown_layout():
    s = _summary()
    assert render_summary(s, "csv").splitlines()[0] == "estimator,bias,sd,mean_se,se_sd_ratio,mse,rej_10,rej_05,failures"
    md = render_summary(s, "markdown").splitlines()
    assert md[0] == "| Estimator | Bias | SE/SD | MSE | 10% | 5% |"
    assert md[2] == "| MLE | 0.033 | 0.950 | 0.100 | 0.250 | 0.125 |"
    assert len(md) == 4


def test_empty_estimator_list_renders_header_only():
    s = SimulationSummary((), (0.10, 0.05))
    assert len(render_summary(s, "markdown").splitlines()) == 2
    assert len(render_summary(s, "csv").splitlines()) == 1


def test_parse_errors():
    with pytest.raises(ParseError):
        parse_summary_csv("# only comments\n")
    with pytest.raises(SchemaMismatch):
        parse_summary_csv("estimator,bias\nmle,0.1\n")
    header = "estimator,bias,sd,mean_se,se_sd_ratio,mse,rej_10,rej_05,failures\n"
    with pytest.raises(ParseError):
        parse_summary_csv(header + "mle,0.1,x,0,0,0,0,0,0\n")


GOLDEN = Path(__file__).parent / "golden" / "probit_serial_n100_T8_R50_seed42.md"


def test_table_shaped_run_matches_golden_output():
    config = SimulationConfig(DgpSpec("panel-probit-serial", 1.0, n=100, T=8), replications=50, master_seed=42)
    assert render_summary(run_experiment(config), "markdown") == GOLDEN.read_text()
