"""Experiment runner.

    transportlab <subcommand> --config path [--out dir] [--workers n]

Subcommands: fields-check, conditions, lyapunov, moment-lyapunov,
two-point, correlation, mixing, spde, sweep.  All numerical parameters
live in the config file; flags only select the subcommand, config path,
output directory and worker count.  Exit codes: 0 success, 2 config
validation failure, 3 numerical guard (CFL, blow-up, non-convergence).
"""

import argparse
import os
import sys

import numpy as np

from . import __version__, conditions as cond_mod, fields
from .config import ConfigError, ExperimentConfig, load_config
from .flow import FlowBlowupError
from .lyapunov import (
    PowerIterationError,
    check_slope_at_zero,
    estimate_lambda1,
    estimate_moment_lyapunov,
)
from .mixing import (
    correlation_decay,
    cos_cos_observable,
    mixing_pairing,
    two_point_moments,
)
from .runio import make_manifest, write_csv, write_json, write_manifest
from .spectral import (
    CflError,
    SpectralField,
    TransportBlowupError,
    enhanced_dissipation_sweep,
    run_spde,
)
from .torus import TWO_PI, distance

GUARD_ERRORS = (CflError, FlowBlowupError, TransportBlowupError, PowerIterationError)


def _t_grid(cfg: ExperimentConfig, default_step: float = 1.0):
    step = cfg.diagnostics.get("t_grid_step", cfg.diagnostics.get("snapshot_dt", default_step))
    t_final = cfg.dynamics["t_final"]
    n = int(round(t_final / step))
    return np.arange(n + 1) * step


def _series_rows(series):
    se = series.stderrs if series.stderrs is not None else np.zeros_like(series.values)
    return [[t, v, s] for t, v, s in zip(series.times, series.values, se)]


def _fit_summary(series):
    if series.below_noise:
        return {"below_noise": True, "note": series.note}
    return {
        "rate": series.rate,
        "rate_stderr": series.rate_stderr,
        "intercept": series.intercept,
        "r_squared": series.r_squared,
        "window": list(series.window) if series.window else None,
        "window_times": [series.times[series.window[0]],
                         series.times[series.window[1] - 1]] if series.window else None,
        "flat": series.flat,
    }


def cmd_fields_check(cfg, outdir, workers, manifest_hash):
    model = cfg.build_model()
    nsamples = cfg.diagnostics.get("nsamples", 1000)
    report = fields.structural_checks(model, nsamples, cfg.seed)
    rows = [[r.name, r.value, r.threshold, int(r.passed)] for r in report.records]
    for shell, total in report.summary["shell_sums"].items():
        rows.append([f"shell_sum_{shell}", total, float("inf"), 1])
    write_csv(os.path.join(outdir, "fields_check.csv"),
              ["check", "value", "threshold", "passed"], rows, manifest_hash)
    summary = {"passed": report.passed, "name": report.name, **report.summary}
    write_json(os.path.join(outdir, "fields_check_summary.json"), summary, manifest_hash)
    print(f"{'PASS' if report.passed else 'FAIL'} {report.name}: "
          f"max|div sigma| = {report.summary['max_abs_divergence']:.3e}, "
          f"max|<Dsigma,sigma>| = {report.summary['max_abs_self_advection']:.3e}")
    return 0


def cmd_conditions(cfg, outdir, workers, manifest_hash):
    model = cfg.build_model()
    nsamples = cfg.diagnostics.get("nsamples", 200)
    rng = np.random.default_rng(cfg.seed)
    rows = []
    checks = {}

    pts = rng.uniform(0, TWO_PI, size=(nsamples, model.d))
    ranks = []
    for x in pts:
        res = cond_mod.check_span_A(model, x)
        rank = res.rank_with_brackets if res.rank_with_brackets is not None else res.rank
        ranks.append(rank)
        rows.append(["span_A", *x, *([""] * model.d), rank])
    checks["span_A"] = all(r == model.d for r in ranks)

    vals = []
    count = 0
    while count < nsamples:
        x = rng.uniform(0, TWO_PI, model.d)
        y = rng.uniform(0, TWO_PI, model.d)
        if distance(x, y) < 0.1:
            continue
        v = cond_mod.two_point_ellipticity(model, x, y)
        vals.append(v)
        rows.append(["two_point_ellipticity", *x, *y, v])
        count += 1
    checks["two_point_ellipticity"] = bool(min(vals) > 0)

    tvals = []
    for _ in range(nsamples):
        x = rng.uniform(0, TWO_PI, model.d)
        theta = rng.uniform(0, TWO_PI)
        v = np.array([np.cos(theta), np.sin(theta)]) if model.d == 2 else None
        if v is None:
            g = rng.standard_normal(model.d)
            v = g / np.linalg.norm(g)
        val = cond_mod.tangent_ellipticity(model, x, v)
        tvals.append(val)
        rows.append(["tangent_ellipticity", *x, *v, val])
    checks["tangent_ellipticity"] = bool(min(tvals) > 0)

    if model.kind == "br":
        br_ranks = []
        count = 0
        while count < nsamples:
            x = rng.uniform(0, TWO_PI, 2)
            y = rng.uniform(0, TWO_PI, 2)
            if min(distance(x, y), cond_mod.br_degeneracy_distance(x, y)) < 0.05:
                continue
            res = cond_mod.check_br_two_point_span(x, y)
            br_ranks.append(res.rank_with_brackets)
            rows.append(["br_two_point_span", *x, *y, res.rank_with_brackets])
            count += 1
        checks["br_two_point_span"] = all(r == 4 for r in br_ranks)

    width = max(len(r) for r in rows)
    header = ["check"] + [f"c{i}" for i in range(1, width)]
    rows = [r + [""] * (width - len(r)) for r in rows]
    write_csv(os.path.join(outdir, "conditions.csv"), header, rows, manifest_hash)
    summary = {
        "checks": checks,
        "min_two_point_ellipticity": min(vals),
        "min_tangent_ellipticity": min(tvals),
        "bracket_convention": "[f,g] = <Dg,f> - <Df,g>; the opposite sign flips "
                              "bracket vectors only, spans are unchanged",
    }
    write_json(os.path.join(outdir, "conditions_summary.json"), summary, manifest_hash)
    for name, ok in checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return 0


def cmd_lyapunov(cfg, outdir, workers, manifest_hash):
    model = cfg.build_model()
    est = estimate_lambda1(
        model, cfg.dynamics["amplitude"], cfg.dynamics["t_final"], cfg.dynamics["dt"],
        cfg.ensemble["realizations"], cfg.seed,
        qr_every=cfg.diagnostics.get("qr_every", 10), workers=workers,
    )
    rows = [[r, e] for r, e in enumerate(est.exponents)]
    write_csv(os.path.join(outdir, "lyapunov.csv"), ["realization", "exponent"],
              rows, manifest_hash)
    lo, hi = est.confidence_interval()
    write_json(os.path.join(outdir, "lyapunov_summary.json"), {
        "lambda1_hat": est.lambda1_hat,
        "stderr": est.stderr,
        "ci95": [lo, hi],
        "t_final": est.t_final,
        "dt": est.dt,
        "n_realizations": est.n_realizations,
    }, manifest_hash)
    print(f"lambda1_hat = {est.lambda1_hat:.6g} +- {est.stderr:.3g}")
    return 0


def cmd_moment_lyapunov(cfg, outdir, workers, manifest_hash):
    model = cfg.build_model()
    p_grid = cfg.diagnostics.get("p_grid", [-0.5, -0.25, -0.1, 0.0, 0.1, 0.25, 0.5])
    curve = estimate_moment_lyapunov(
        model, cfg.dynamics["amplitude"], p_grid, cfg.dynamics["t_final"],
        cfg.dynamics["dt"], cfg.ensemble["realizations"], cfg.seed, workers=workers,
    )
    rows = [
        [p, lh, se, int(rel), mw, dr]
        for p, lh, se, rel, mw, dr in zip(
            curve.p, curve.lambda_hat, curve.stderr, curve.reliable,
            curve.max_weight_fraction, curve.bias_drift)
    ]
    write_csv(os.path.join(outdir, "moment_lyapunov.csv"),
              ["p", "lambda_hat", "stderr", "reliable", "max_weight_fraction",
               "bias_drift"], rows, manifest_hash)
    summary = {
        "t_final": curve.t_final,
        "dt": curve.dt,
        "n_samples": curve.n_samples,
        "lambda1_hat": curve.lambda1_proxy,
        "lambda1_stderr": curve.lambda1_proxy_se,
    }
    try:
        summary["slope_check"] = check_slope_at_zero(
            curve, curve.lambda1_proxy, curve.lambda1_proxy_se)
    except ValueError:
        pass
    write_json(os.path.join(outdir, "moment_lyapunov_summary.json"), summary, manifest_hash)
    print(f"Lambda(p) on {len(curve.p)} grid points; lambda1 proxy "
          f"{curve.lambda1_proxy:.6g} +- {curve.lambda1_proxy_se:.3g}")
    return 0


def cmd_two_point(cfg, outdir, workers, manifest_hash):
    model = cfg.build_model()
    x = np.asarray(cfg.diagnostics.get("x0", [2.0, 3.0]), dtype=float)
    y = np.asarray(cfg.diagnostics.get("y0", [2.001, 3.0]), dtype=float)
    p_list = cfg.diagnostics.get("p_grid", [0.25])
    p_list = [p for p in p_list if p > 0]
    series_by_p = two_point_moments(
        model, cfg.dynamics["amplitude"], cfg.dynamics["kappa"], x, y, p_list,
        _t_grid(cfg), cfg.ensemble["realizations"], cfg.seed,
        dt=cfg.dynamics["dt"], workers=workers,
    )
    summary = {"p": {}}
    for p, series in series_by_p.items():
        series.fit()
        write_csv(os.path.join(outdir, f"two_point_p{p:g}.csv"),
                  ["t", "value", "stderr"], _series_rows(series), manifest_hash)
        summary["p"][str(p)] = _fit_summary(series)
    write_json(os.path.join(outdir, "two_point_summary.json"), summary, manifest_hash)
    print(f"two-point moments for p = {sorted(series_by_p)} written")
    return 0


def cmd_correlation(cfg, outdir, workers, manifest_hash):
    model = cfg.build_model()
    psi = cfg.diagnostics.get("observable", cos_cos_observable())
    # off-diagonal default: a pair started on the diagonal never separates
    # under shared noise and the correlation saturates at the diagonal mean
    x = np.asarray(cfg.diagnostics.get("x0", [0.0, 0.0]), dtype=float)
    y = np.asarray(cfg.diagnostics.get("y0", [2.0, 1.0]), dtype=float)
    series = correlation_decay(
        model, cfg.dynamics["amplitude"], cfg.dynamics["kappa"], psi, x, y,
        _t_grid(cfg), cfg.ensemble["realizations"], cfg.seed,
        dt=cfg.dynamics["dt"], workers=workers,
    )
    write_csv(os.path.join(outdir, "correlation.csv"), ["t", "value", "stderr"],
              _series_rows(series), manifest_hash)
    write_json(os.path.join(outdir, "correlation_summary.json"),
               _fit_summary(series), manifest_hash)
    if series.below_noise:
        print(series.note)
    else:
        print(f"correlation rate = {series.rate:.6g} +- {series.rate_stderr:.3g}, "
              f"R^2 = {series.r_squared:.4f}")
    return 0


def cmd_mixing(cfg, outdir, workers, manifest_hash):
    model = cfg.build_model()
    terms = cfg.initial.get("terms")
    if terms is None:
        raise ConfigError("[initial] terms: missing (mixing needs an initial scalar)")
    z_cut = cfg.diagnostics.get("z_cut", 8)
    Q = cfg.diagnostics.get("quadrature", 128)
    series = mixing_pairing(
        model, cfg.dynamics["amplitude"], cfg.dynamics["kappa"], terms, z_cut,
        _t_grid(cfg), Q, cfg.ensemble["inner_samples"], cfg.seed,
        dt=cfg.dynamics["dt"], n_realizations=cfg.ensemble["realizations"],
        workers=workers,
    )
    header, rows = series.csv_rows()
    write_csv(os.path.join(outdir, "pairings.csv"), header, rows, manifest_hash)
    summary = {"s": {}, "quadrature": Q, "z_cut": z_cut,
               "inner_samples": series.inner_samples}
    for s in cfg.diagnostics.get("s_values", [1.0]):
        proxy = series.hminus_proxy(s).fit()
        write_csv(os.path.join(outdir, f"mixing_decay_s{s:g}.csv"),
                  ["t", "value", "stderr"], _series_rows(proxy), manifest_hash)
        summary["s"][str(s)] = _fit_summary(proxy)
    write_json(os.path.join(outdir, "mixing_summary.json"), summary, manifest_hash)
    print(f"pairings for {len(series.zs)} wavevectors written")
    return 0


def cmd_spde(cfg, outdir, workers, manifest_hash):
    model = cfg.build_model()
    terms = cfg.initial.get("terms")
    if terms is None:
        raise ConfigError("[initial] terms: missing (spde needs an initial scalar)")
    N = cfg.diagnostics.get("n_grid", 64)
    run = run_spde(
        model, SpectralField.from_terms(N, terms), cfg.dynamics["amplitude"],
        cfg.dynamics["kappa"], cfg.dynamics["c"], cfg.dynamics["t_final"],
        cfg.dynamics["dt"], cfg.seed,
        record_every=cfg.diagnostics.get("record_every", 10),
    )
    rows = [
        [t, l2, h1, hm1, r]
        for t, l2, h1, hm1, r in zip(run.times, run.l2, run.h1, run.hminus1, run.residual)
    ]
    write_csv(os.path.join(outdir, "spde.csv"),
              ["t", "L2", "H1", "Hminus1", "residual"], rows, manifest_hash)
    write_json(os.path.join(outdir, "spde_summary.json"), {
        "l2_initial": run.l2[0],
        "l2_final": run.l2[-1],
        "max_abs_residual": float(np.abs(run.residual).max()),
        "n_grid": N,
    }, manifest_hash)
    print(f"spde run: L2 {run.l2[0]:.6g} -> {run.l2[-1]:.6g}")
    return 0


def cmd_sweep(cfg, outdir, workers, manifest_hash):
    model = cfg.build_model()
    terms = cfg.initial.get("terms")
    if terms is None:
        raise ConfigError("[initial] terms: missing (sweep needs an initial scalar)")
    a_list = cfg.diagnostics.get("a_list")
    if not a_list:
        raise ConfigError("[diagnostics] a_list: missing")
    res = enhanced_dissipation_sweep(
        model, terms, a_list, cfg.dynamics["kappa"], cfg.dynamics["c"],
        cfg.dynamics["t_final"], cfg.dynamics["dt"], cfg.ensemble["realizations"],
        cfg.seed, N=cfg.diagnostics.get("n_grid", 64),
        record_every=cfg.diagnostics.get("record_every", 10), workers=workers,
    )
    rows = [
        [a, r, se, r2, w[0], w[1]]
        for a, r, se, r2, w in zip(res.amplitudes, res.rates, res.rate_stderrs,
                                   res.r_squared, res.windows)
    ]
    write_csv(os.path.join(outdir, "sweep.csv"),
              ["A", "rate", "rate_stderr", "r_squared", "window_lo", "window_hi"],
              rows, manifest_hash)
    for a, series in zip(res.amplitudes, res.median_series):
        write_csv(os.path.join(outdir, f"sweep_decay_A{a:g}.csv"),
                  ["t", "value", "stderr"], _series_rows(series), manifest_hash)
    write_json(os.path.join(outdir, "sweep_summary.json"), {
        "amplitudes": list(res.amplitudes),
        "rates": list(res.rates),
        "monotone": res.monotone,
        "q_hat": res.q_hat,
        "per_amplitude": {
            f"{a:g}": {"rate": r, "r_squared": r2, "window": list(w)}
            for a, r, r2, w in zip(res.amplitudes, res.rates, res.r_squared, res.windows)
        },
    }, manifest_hash)
    print(f"sweep rates: {np.array2string(res.rates, precision=5)}; "
          f"monotone={res.monotone}, q_hat={res.q_hat}")
    return 0


COMMANDS = {
    "fields-check": cmd_fields_check,
    "conditions": cmd_conditions,
    "lyapunov": cmd_lyapunov,
    "moment-lyapunov": cmd_moment_lyapunov,
    "two-point": cmd_two_point,
    "correlation": cmd_correlation,
    "mixing": cmd_mixing,
    "spde": cmd_spde,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="transportlab", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="INI experiment configuration")
        p.add_argument("--out", default=None, help="output directory (default: [run] outdir or .)")
        p.add_argument("--workers", type=int, default=1,
                       help="worker processes; never affects numerical output")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    outdir = args.out or cfg.raw.get("run", {}).get("outdir", ".")
    manifest, digest = make_manifest(args.subcommand, cfg.echo(), __version__)
    try:
        code = COMMANDS[args.subcommand](cfg, outdir, args.workers, digest)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except GUARD_ERRORS as e:
        print(f"numerical guard: {e}", file=sys.stderr)
        return 3
    write_manifest(outdir, manifest, digest)
    return code


if __name__ == "__main__":
    sys.exit(main())
