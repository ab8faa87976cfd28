"""Command-line entry point: ``biascorr {simulate,correct,verify,report}``.

Exit codes: 0 success, 1 configuration or input error, 2 too many failed
simulation replicates, 3 verification failure.
"""

from __future__ import annotations

import argparse
import configparser
import math
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import corrections as cx
from . import vstat
from .errors import BiasCorrError, ConfigError, ExcessFailures, ParseError, SchemaMismatch, SubfitFailure
from .estimate import fit_mle, fit_panel_mle
from .hovar import estimate_hovar_panel, estimate_upsilon_cross
from .models import Dataset, PanelDataset, PanelModel, builtin_model
from .montecarlo import (
    DgpSpec,
    SimulationConfig,
    SimulationSummary,
    default_workers,
    display_name,
    markdown_cells,
    markdown_header,
    parse_summary_csv,
    render_summary,
    run_experiment,
)

EXIT_OK, EXIT_INPUT, EXIT_FAILURES, EXIT_VERIFY = 0, 1, 2, 3
SEED_ENV = "BIASCORR_SEED"

# key -> (type, default); also the schema of the [simulate] config section
SIMULATE_KEYS = {
    "dgp": (str, None),
    "n": (int, 100),
    "T": (int, 8),
    "theta": (float, 1.0),
    "sigma": (float, 1.0),
    "reps": (int, 1000),
    "seed": (int, 0),
    "estimators": (str, "mle,jackknife,split"),
    "bootstrap_B": (int, 1000),
    "bootstrap_control": (bool, False),
    "out_dir": (str, "."),
    "workers": (int, None),
    "format": (str, "md"),
}
# settings that do not change results and stay out of file headers
_RUN_ONLY = ("out_dir", "workers", "format")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _to_bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _convert(key: str, raw):
    kind = SIMULATE_KEYS[key][0]
    try:
        return _to_bool(raw) if kind is bool else kind(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def read_config_file(path: Optional[str]) -> dict:
    """Read the ``[simulate]`` section of a key-value config file."""
    if not path:
        return {}
    parser = configparser.ConfigParser()
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None
    if not parser.has_section("simulate"):
        return {}
    out = {}
    for key, raw in parser.items("simulate"):
        norm = key.replace("-", "_")
        if norm not in SIMULATE_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        out[norm] = _convert(norm, raw)
    return out


def resolve_settings(flags: dict, config_path: Optional[str], environ=os.environ) -> dict:
    """Defaults, then the config file, then ``BIASCORR_SEED``, then flags."""
    settings = {k: default for k, (_, default) in SIMULATE_KEYS.items()}
    settings.update(read_config_file(config_path))
    if flags.get("seed") is None and environ.get(SEED_ENV):
        settings["seed"] = _convert("seed", environ[SEED_ENV])
    settings.update({k: v for k, v in flags.items() if v is not None})
    if settings["dgp"] is None:
        raise ConfigError("no dgp given (use --dgp or the config file)")
    if settings["workers"] is None:
        settings["workers"] = default_workers()
    if settings["format"] not in ("csv", "md"):
        raise ConfigError("format must be csv or md")
    return settings


def build_config(settings: dict) -> SimulationConfig:
    dgp = DgpSpec(
        settings["dgp"], settings["theta"], n=settings["n"], T=settings["T"], sigma=settings["sigma"]
    )
    estimators = tuple(e.strip() for e in settings["estimators"].split(",") if e.strip())
    return SimulationConfig(
        dgp=dgp,
        estimators=estimators,
        replications=settings["reps"],
        master_seed=settings["seed"],
        bootstrap_B=settings["bootstrap_B"],
        bootstrap_control=settings["bootstrap_control"],
        workers=settings["workers"],
    )


def header_lines(settings: dict) -> list[str]:
    return [f"{k}: {settings[k]}" for k in SIMULATE_KEYS if k not in _RUN_ONLY]


def cmd_simulate(args) -> int:
    flags = {k: getattr(args, k, None) for k in SIMULATE_KEYS}
    settings = resolve_settings(flags, args.config)
    config = build_config(settings)
    status = EXIT_OK
    try:
        summary = run_experiment(config)
    except ExcessFailures as exc:
        summary = exc.summary
        print(f"error: {exc}", file=sys.stderr)
        status = EXIT_FAILURES
    out = Path(settings["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    head = header_lines(settings)
    csv_text = "".join(f"# {h}\n" for h in head) + render_summary(summary, "csv")
    md_text = "".join(f"<!-- {h} -->\n" for h in head) + render_summary(summary, "markdown")
    (out / "summary.csv").write_text(csv_text, encoding="utf-8")
    (out / "summary.md").write_text(md_text, encoding="utf-8")
    print(render_summary(summary, "csv" if settings["format"] == "csv" else "markdown"), end="")
    return status


# ---------------------------------------------------------------------------
# correct
# ---------------------------------------------------------------------------

CROSS_METHODS = (
    "jackknife",
    "split",
    "bootstrap",
    "analytic-sample",
    "analytic-infoeq",
    "analytic-integral",
    "ar1-analytic",
)
PANEL_METHODS = ("jackknife", "split")


def _load(path: str, model):
    if not Path(path).is_file():
        raise ParseError(f"no such file: {path}")
    if isinstance(model, PanelModel):
        return PanelDataset.from_csv(path)
    data = Dataset.from_csv(path)
    if model.name == "AR1" and data.observations.shape[1] == 1:
        data = Dataset.lagged(data.observations[:, 0])
    return data


def _cross_bias(method, data, model, full, args):
    if method == "jackknife":
        return cx.jackknife_bias(data, model, full)
    if method == "split":
        return cx.split_sample_bias(data, model, full)
    if method == "bootstrap":
        return cx.bootstrap_bias(data, model, full, B=args.bootstrap_B, seed=args.seed, control=args.bootstrap_control)
    if method == "analytic-sample":
        return cx.analytic_bias_sample(data, model, full)
    if method == "analytic-infoeq":
        return cx.analytic_bias_infoeq(data, model, full)
    if method == "analytic-integral":
        return cx.analytic_bias_integral(model, full.theta_hat)
    return cx.ar1_analytic_bias(full)


def cmd_correct(args) -> int:
    model = builtin_model(args.model)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    allowed = PANEL_METHODS if isinstance(model, PanelModel) else CROSS_METHODS
    for m in methods:
        if m not in allowed:
            raise ConfigError(f"method {m!r} not available for {model.name}")
    data = _load(args.data, model)
    panel = isinstance(model, PanelModel)
    full = fit_panel_mle(data, model) if panel else fit_mle(data, model)
    print(f"model: {model.name}")
    if panel:
        print(f"units: {full.n}  periods: {full.T}  dropped: {len(full.dropped_units)}")
    else:
        print(f"observations: {full.n}")
    print(f"theta_hat: {full.theta_hat:.10g}")
    print(f"se: {full.se:.10g}")
    for m in methods:
        try:
            if panel:
                fn = cx.panel_jackknife_bias if m == "jackknife" else cx.panel_split_sample_bias
                b = fn(data, model, full)
            else:
                b = _cross_bias(m, data, model, full, args)
        except SubfitFailure as exc:
            if exc.method:
                raise
            raise SubfitFailure(exc.index, m) from None
        corrected = cx.apply_correction(full, b)
        print(f"{m}: bias_estimate={b.value:.10g} corrected={corrected.theta_hat:.10g}")
    try:
        if panel:
            hov = estimate_hovar_panel(data, model, full)
            size = full.T
        else:
            hov = estimate_upsilon_cross(data, model, full.theta_hat)
            size = full.n
    except BiasCorrError:
        return EXIT_OK
    print(f"higher_order_variance: leading={hov.leading:.6g} upsilon={hov.upsilon:.6g}")
    print(f"  jackknife={hov.jackknife(size):.6g} split={hov.split(size):.6g}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


def _correction_checks(cases: int, seed: int, tol: float) -> list[vstat.IdentityResult]:
    """Resampling corrections against direct evaluations from their definitions."""
    rng = np.random.default_rng(seed)
    smn = builtin_model("SqrtMeanNormal")
    ns = builtin_model("NeymanScott")
    jk = vstat.IdentityResult("jackknife sqrt-mean-normal", cases, 0, 0.0)
    sp = vstat.IdentityResult("split sqrt-mean-normal", cases, 0, 0.0)
    pj = vstat.IdentityResult("panel jackknife neyman-scott", cases, 0, 0.0)
    for _ in range(cases):
        n = int(rng.integers(3, 30))
        z = 2.0 + rng.standard_normal(n)
        data = Dataset(z[:, None])
        full = fit_mle(data, smn)
        loo = [((z.sum() - zi) / (n - 1)) ** 2 for zi in z]
        h = (n + 1) // 2
        direct_j = n * (n - 1) * (math.fsum(loo) / n - full.theta_hat)
        direct_s = n * ((z[:h].mean() ** 2 + z[h:].mean() ** 2) / 2 - full.theta_hat)
        for res, got, want in (
            (jk, cx.jackknife_bias(data, smn, full).value, direct_j),
            (sp, cx.split_sample_bias(data, smn, full).value, direct_s),
        ):
            gap = abs(got - want) / max(1.0, abs(want))
            res.max_gap = max(res.max_gap, gap)
            res.passed += int(gap <= tol)

        units, T = int(rng.integers(2, 8)), int(rng.integers(3, 8))
        cells = rng.standard_normal((units, T, 1)) + rng.standard_normal((units, 1, 1))
        panel = PanelDataset(cells)
        pfull = fit_panel_mle(panel, ns)
        corrected = cx.apply_correction(pfull, cx.panel_jackknife_bias(panel, ns, pfull)).theta_hat
        dev = cells[..., 0] - cells[..., 0].mean(axis=1, keepdims=True)
        want = float((dev * dev).sum() / (units * (T - 1)))
        gap = abs(corrected - want) / max(1.0, want)
        pj.max_gap = max(pj.max_gap, gap)
        pj.passed += int(gap <= max(tol, 1e-8))
    return [jk, sp, pj]


def cmd_verify(args) -> int:
    if args.cases < 1:
        raise ConfigError("--cases must be at least 1")
    with vstat.perturbed(args.perturb):
        results = vstat.identity_suite(args.cases, args.seed, args.tol)
    results += _correction_checks(max(1, args.cases // 10), args.seed, 1e-9)
    for r in results:
        mark = "PASS" if r.ok else "FAIL"
        print(f"{mark} {r.name}: {r.passed}/{r.cases} (max relative gap {r.max_gap:.2e})")
    failed = sum(not r.ok for r in results)
    print(f"{len(results) - failed}/{len(results)} suites passed")
    return EXIT_OK if failed == 0 else EXIT_VERIFY


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def _read_summary(path: str) -> tuple[dict, SimulationSummary, tuple]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from None
    meta = {}
    for line in text.splitlines():
        if line.startswith("#") and ":" in line:
            k, v = line[1:].split(":", 1)
            meta[k.strip()] = v.strip()
    header = next((ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")), "")
    return meta, parse_summary_csv(text), tuple(header.split(","))


def merge_reports(paths: Sequence[str]) -> str:
    """Markdown with one row band per ``T`` and one column block per ``n``."""
    loaded = [(p, *_read_summary(p)) for p in paths]
    schema = loaded[0][3]
    for p, _, _, cols in loaded[1:]:
        if cols != schema:
            raise SchemaMismatch(f"{p} has columns {cols}, expected {schema}")
    levels = loaded[0][2].test_levels

    bands: dict = {}
    for p, meta, summary, _ in loaded:
        band = f"T = {meta['T']}" if "T" in meta else ""
        block = f"n = {meta['n']}" if "n" in meta else Path(p).stem
        bands.setdefault(band, []).append((block, summary))

    def key(label):
        digits = label.split("=")[-1].strip()
        return (0, int(digits)) if digits.isdigit() else (1, label)

    stats = markdown_header(levels)[1:]
    width = max(len(b) for b in bands.values())
    out = []
    for band in sorted(bands, key=key):
        blocks = sorted(bands[band], key=lambda b: key(b[0]))
        header = ["Estimator"]
        for label, _ in blocks:
            header += [f"{label}: {stats[0]}"] + stats[1:]
        header += [""] * (len(stats) * (width - len(blocks)))
        names: list[str] = []
        for _, s in blocks:
            names += [r.estimator for r in s.rows if r.estimator not in names]
        body = []
        for name in names:
            row = []
            for _, s in blocks:
                try:
                    row += markdown_cells(s.row(name), levels)[1:]
                except KeyError:
                    row += [""] * len(stats)
            body.append([display_name(name)] + row)
        if band:
            out.append(f"**{band}**\n")
        lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
        lines += ["| " + " | ".join(r + [""] * (len(header) - len(r))) + " |" for r in body]
        out.append("\n".join(lines) + "\n")
    return "\n".join(out)


def cmd_report(args) -> int:
    print(merge_reports(args.csv), end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="biascorr", description="Bias-corrected maximum likelihood toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sim = sub.add_parser("simulate", help="run a Monte Carlo experiment")
    sim.add_argument("--config", help="key-value config file with a [simulate] section")
    sim.add_argument("--dgp", help="sqrt-mean-normal, neyman-scott, panel-probit-serial, panel-probit-iid or ar1")
    sim.add_argument("--n", type=int)
    sim.add_argument("--T", type=int)
    sim.add_argument("--theta", type=float)
    sim.add_argument("--sigma", type=float)
    sim.add_argument("--reps", type=int)
    sim.add_argument("--seed", type=int, help=f"master seed (env {SEED_ENV} when absent)")
    sim.add_argument("--estimators", help="comma-separated list, e.g. mle,jackknife,split")
    sim.add_argument("--bootstrap-B", dest="bootstrap_B", type=int)
    sim.add_argument("--bootstrap-control", dest="bootstrap_control", action="store_true", default=None)
    sim.add_argument("--out-dir", dest="out_dir")
    sim.add_argument("--workers", type=int, help="worker processes (results do not depend on this)")
    sim.add_argument("--format", choices=("csv", "md"), help="format printed to stdout")
    sim.set_defaults(func=cmd_simulate)

    cor = sub.add_parser("correct", help="bias-correct an estimate from a data file")
    cor.add_argument("data", help="CSV file (panels: unit,period,value columns)")
    cor.add_argument("--model", required=True, help="sqrt-mean-normal, ar1, neyman-scott or probit")
    cor.add_argument("--methods", default="jackknife", help="comma-separated correction methods")
    cor.add_argument("--bootstrap-B", dest="bootstrap_B", type=int, default=1000)
    cor.add_argument("--bootstrap-control", dest="bootstrap_control", action="store_true")
    cor.add_argument("--seed", type=int, default=0)
    cor.set_defaults(func=cmd_correct)

    ver = sub.add_parser("verify", help="check closed forms against direct evaluation")
    ver.add_argument("--cases", type=int, default=1000)
    ver.add_argument("--seed", type=int, default=0)
    ver.add_argument("--tol", type=float, default=1e-10)
    ver.add_argument("--perturb", type=float, default=0.0, help=argparse.SUPPRESS)
    ver.set_defaults(func=cmd_verify)

    rep = sub.add_parser("report", help="merge summary CSVs into one markdown table")
    rep.add_argument("csv", nargs="+")
    rep.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except (BiasCorrError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
