#!/usr/bin/env python3
"""Render publication-style figures from transportlab CSV/JSON artifacts.

    plots/render.py --kind <lambda-curve|decay|sweep|condition-map>
                    --in <csv> [--summary <json>] --out <png>

Figures are derived artifacts: every number drawn appears verbatim in the
inputs (fit overlays come from the JSON summaries, never recomputed), the
style is fixed, and no timestamps enter the image.  Exit codes: 0 on
success (including degraded no-fit rendering), 2 on schema mismatch or
unreadable inputs.
"""

import argparse
import csv
import json
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (4.8, 3.4),
    "figure.dpi": 160,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "savefig.bbox": "tight",
}


class SchemaError(Exception):
    pass


def read_csv(path, required):
    """CSV rows keyed by header name; tolerates the manifest comment line."""
    try:
        with open(path) as fh:
            lines = [ln for ln in fh if not ln.startswith("#")]
    except OSError as e:
        raise SchemaError(f"cannot read {path}: {e}") from None
    rows = list(csv.reader(lines))
    if not rows:
        raise SchemaError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    missing = [c for c in required if c not in header]
    if missing:
        raise SchemaError(f"{path}: missing columns {missing} (header {header})")
    if len(rows) < 2:
        raise SchemaError(f"{path}: no data rows")
    cols = {h: [] for h in header}
    for row in rows[1:]:
        for h, v in zip(header, row):
            cols[h].append(v)
    return cols


def read_summary(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise SchemaError(f"cannot read summary {path}: {e}") from None


def floats(xs):
    return np.array([float(x) for x in xs])


def render_lambda_curve(cols, summary, ax):
    p = floats(cols["p"])
    lam = floats(cols["lambda_hat"])
    se = floats(cols["stderr"])
    ax.errorbar(p, lam, yerr=se, fmt="o", ms=4, capsize=2, label=r"$\hat\Lambda(p)$")
    lam1 = summary.get("lambda1_hat")
    if lam1 is not None:
        span = np.linspace(p.min(), p.max(), 64)
        ax.plot(span, lam1 * span, "--", lw=1,
                label=rf"tangent $\hat\lambda_1 p$, $\hat\lambda_1$={lam1:.4g}")
    ax.axhline(0.0, color="k", lw=0.5)
    ax.axvline(0.0, color="k", lw=0.5)
    ax.set_xlabel(r"$p$")
    ax.set_ylabel(r"$\hat\Lambda(p)$")
    ax.legend(loc="best")
    return {"points": len(p)}


def render_decay(cols, summary, ax):
    t = floats(cols["t"])
    v = floats(cols["value"])
    se = floats(cols["stderr"]) if "stderr" in cols else np.zeros_like(v)
    ax.errorbar(t, v, yerr=se, fmt="o", ms=3, capsize=2, label="series")
    ax.set_yscale("log")
    fitted = False
    if summary and not summary.get("below_noise") and summary.get("rate") is not None:
        rate = summary["rate"]
        icpt = summary.get("intercept", v[0])
        win = summary.get("window_times")
        span = np.linspace(win[0], win[1], 64) if win else np.linspace(t[0], t[-1], 64)
        ax.plot(span, icpt * np.exp(-rate * span), "-", lw=1.2,
                label=f"fit rate {rate:.4g}")
        fitted = True
    if not fitted:
        ax.annotate("no fit", xy=(0.05, 0.08), xycoords="axes fraction")
    ax.set_xlabel(r"$t$")
    ax.set_ylabel("value")
    ax.legend(loc="best")
    return {"points": len(t), "fitted": fitted}


def render_sweep(cols, summary, ax):
    a = floats(cols["A"])
    rate = floats(cols["rate"])
    pos = (a > 0) & (rate > 0)
    ax.loglog(a[pos], rate[pos], "o-", ms=4, label=r"$\hat\gamma(A)$")
    q = summary.get("q_hat")
    if q is not None:
        a0, g0 = a[pos][-1], rate[pos][-1]
        span = np.array([a[pos].min(), a[pos].max()])
        ax.loglog(span, g0 * (span / a0) ** q, "--", lw=1,
                  label=rf"slope $\hat q$ = {q:.3g}")
    ax.set_xlabel(r"$A$")
    ax.set_ylabel(r"$\hat\gamma(A)$")
    ax.legend(loc="best")
    return {"points": int(pos.sum())}


def render_condition_map(cols, summary, ax):
    names = cols["check"]
    c1 = floats(cols["c1"])
    c2 = floats(cols["c2"])
    # last non-empty column per row carries the measured quantity
    vals = []
    keys = [k for k in cols if k.startswith("c")]
    for i in range(len(c1)):
        row = [cols[k][i] for k in keys]
        vals.append(float([v for v in row if v != ""][-1]))
    vals = np.array(vals)
    kinds = sorted(set(names))
    kind = kinds[0] if len(kinds) == 1 else "two_point_ellipticity"
    sel = [i for i, n in enumerate(names) if n == kind]
    sc = ax.scatter(c1[sel], c2[sel], c=vals[sel], s=12, cmap="viridis")
    plt.colorbar(sc, ax=ax, label=kind)
    ax.set_xlabel(r"$x_1$")
    ax.set_ylabel(r"$x_2$")
    ax.set_title(kind)
    return {"points": len(sel)}


KINDS = {
    "lambda-curve": (render_lambda_curve, ["p", "lambda_hat", "stderr"]),
    "decay": (render_decay, ["t", "value"]),
    "sweep": (render_sweep, ["A", "rate"]),
    "condition-map": (render_condition_map, ["check", "c1", "c2"]),
}


def render(kind, csv_path, out_path, summary_path=None):
    """Render one figure; returns an info dict (point counts)."""
    fn, required = KINDS[kind]
    cols = read_csv(csv_path, required)
    summary = read_summary(summary_path)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        info = fn(cols, summary, ax)
        fig.savefig(out_path, metadata={"Software": "transportlab-plots"})
        plt.close(fig)
    return info


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--kind", required=True, choices=sorted(KINDS))
    parser.add_argument("--in", dest="infile", required=True)
    parser.add_argument("--summary", default=None, help="optional JSON fit summary")
    parser.add_argument("--out", required=True)
    args = parser.parse_args(argv)
    try:
        info = render(args.kind, args.infile, args.out, args.summary)
    except SchemaError as e:
        print(f"schema error: {e}", file=sys.stderr)
        return 2
    print(" ".join(f"{k}={v}" for k, v in sorted(info.items())))
    return 0


if __name__ == "__main__":
    sys.exit(main())
