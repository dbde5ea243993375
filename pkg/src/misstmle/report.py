"""Report emission: raw results, metrics table, markdown summary, and one
SVG chart per performance metric (relative bias, empirical SE, model-SE
error), each grouped scenario x mechanism x method with MCSE error bars.

Everything except timings.csv is a pure function of the raw results table,
so re-rendering reproduces the files byte for byte.
"""

from __future__ import annotations

import json
from pathlib import Path

from . import harness, missing
from .core import format_float

_METRIC_SPECS = (
    ("rel_bias", "Relative bias (%)", "rel_bias_pct", "rel_bias_mcse"),
    ("emp_se", "Empirical SE", "emp_se", "emp_se_mcse"),
    ("mod_se_err", "Model SE error (%)", "mod_se_err_pct", "mod_se_err_mcse"),
)

_PALETTE = ("#4477aa", "#66ccee", "#228833", "#ccbb44", "#ee6677",
            "#aa3377", "#bbbbbb", "#222222")

_METRIC_COLUMNS = ("scenario", "mdag", "method", "label", "n_reps", "n_failed",
                   "mean_psi", "mean_se", "rel_bias_pct", "rel_bias_mcse",
                   "emp_se", "emp_se_mcse", "mod_se_err_pct", "mod_se_err_mcse")


def config_json(cfg: harness.StudyConfig) -> str:
    payload = {
        "scenarios": list(cfg.scenarios),
        "mdags": list(cfg.mdags),
        "methods": list(cfg.methods),
        "n_per_dataset": cfg.n_per_dataset,
        "n_reps": cfg.n_reps,
        "m": cfg.m,
        "cycles": cfg.cycles,
        "master_seed": cfg.master_seed,
        "truth": cfg.truth,
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def config_from_json(text: str) -> harness.StudyConfig:
    raw = json.loads(text)
    return harness.StudyConfig(
        scenarios=tuple(raw["scenarios"]), mdags=tuple(raw["mdags"]),
        methods=tuple(raw["methods"]), n_per_dataset=raw["n_per_dataset"],
        n_reps=raw["n_reps"], m=raw["m"], cycles=raw["cycles"],
        master_seed=raw["master_seed"], truth=raw["truth"])


def metrics_csv(metrics: list[harness.CellMetrics]) -> str:
    lines = [",".join(_METRIC_COLUMNS)]
    for c in metrics:
        lines.append(",".join([
            c.scenario, c.mdag, c.method, missing.METHOD_LABELS[c.method],
            str(c.n_reps), str(c.n_failed),
            format_float(c.mean_psi), format_float(c.mean_se),
            format_float(c.rel_bias_pct), format_float(c.rel_bias_mcse),
            format_float(c.emp_se), format_float(c.emp_se_mcse),
            format_float(c.mod_se_err_pct), format_float(c.mod_se_err_mcse),
        ]))
    return "\n".join(lines) + "\n"


def timings_csv(rows: list[harness.ResultRow]) -> str:
    lines = ["scenario,mdag,method,rep,seconds"]
    for r in rows:
        lines.append(f"{r.scenario},{r.mdag},{r.method},{r.rep},{r.seconds:.6f}")
    return "\n".join(lines) + "\n"


def _fmt(x: float) -> str:
    return "-" if x != x else f"{x:.3f}"


def report_md(metrics: list[harness.CellMetrics], cfg: harness.StudyConfig) -> str:
    out = ["# Simulation study report", ""]
    out.append(f"True effect {format_float(cfg.truth)}; n={cfg.n_per_dataset}; "
               f"{cfg.n_reps} replications; {cfg.m} imputations; seed {cfg.master_seed}.")
    out.append("")
    for _, title, value_key, mcse_key in _METRIC_SPECS:
        out.append(f"## {title}")
        out.append("")
        out.append("| Scenario | m-DAG | Method | Value | ±MCSE | Used | Failed |")
        out.append("|---|---|---|---|---|---|---|")
        for c in metrics:
            out.append("| {} | {} | {} | {} | {} | {} | {} |".format(
                c.scenario, c.mdag, missing.METHOD_LABELS[c.method],
                _fmt(getattr(c, value_key)), _fmt(getattr(c, mcse_key)),
                c.n_reps, c.n_failed))
        out.append("")
    return "\n".join(out)


def _svg_number(x: float) -> str:
    return f"{x:.2f}".rstrip("0").rstrip(".")


def chart_svg(metrics: list[harness.CellMetrics], cfg: harness.StudyConfig,
              title: str, value_key: str, mcse_key: str) -> str:
    """Grouped bar chart: one panel per scenario x mechanism, one bar per
    method, whiskers at +-MCSE."""
    panels = [(s, g) for s in cfg.scenarios for g in cfg.mdags]
    methods = list(cfg.methods)
    cell = {(c.scenario, c.mdag, c.method): c for c in metrics}

    vals, errs = {}, {}
    lo, hi = 0.0, 0.0
    for key, c in cell.items():
        v = getattr(c, value_key)
        e = getattr(c, mcse_key)
        if v != v:
            continue
        e = 0.0 if e != e else e
        vals[key] = v
        errs[key] = e
        lo = min(lo, v - e)
        hi = max(hi, v + e)
    if hi <= lo:
        hi = lo + 1.0
    span = hi - lo
    lo -= 0.05 * span
    hi += 0.05 * span

    bar_w, gap, pad = 14, 4, 18
    panel_w = pad * 2 + len(methods) * (bar_w + gap)
    left, top, plot_h = 70, 34, 260
    width = left + len(panels) * (panel_w + 12) + 20
    height = top + plot_h + 120

    def ypix(v: float) -> float:
        return top + (hi - v) / (hi - lo) * plot_h

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'font-family="Helvetica,Arial,sans-serif" font-size="11">']
    parts.append(f'<text x="{left}" y="18" font-size="14" font-weight="bold">{title}</text>')
    # value axis: five ticks
    for i in range(5):
        v = lo + (hi - lo) * i / 4
        y = ypix(v)
        parts.append(f'<line x1="{left - 4}" y1="{y:.1f}" x2="{width - 10}" y2="{y:.1f}" '
                     f'stroke="#dddddd" stroke-width="1"/>')
        parts.append(f'<text x="{left - 8}" y="{y + 4:.1f}" text-anchor="end">{_svg_number(v)}</text>')
    if lo < 0 < hi:
        y0 = ypix(0.0)
        parts.append(f'<line x1="{left - 4}" y1="{y0:.1f}" x2="{width - 10}" y2="{y0:.1f}" '
                     f'stroke="#888888" stroke-width="1"/>')

    x = left
    for scenario, mdag in panels:
        bx = x + pad
        for j, method in enumerate(methods):
            key = (scenario, mdag, method)
            if key in vals:
                v, e = vals[key], errs[key]
                y_top = ypix(max(v, 0.0))
                y_bot = ypix(min(v, 0.0))
                color = _PALETTE[j % len(_PALETTE)]
                parts.append(f'<rect x="{bx:.1f}" y="{y_top:.1f}" width="{bar_w}" '
                             f'height="{max(y_bot - y_top, 0.5):.1f}" fill="{color}"/>')
                cx = bx + bar_w / 2
                parts.append(f'<line x1="{cx:.1f}" y1="{ypix(v + e):.1f}" x2="{cx:.1f}" '
                             f'y2="{ypix(v - e):.1f}" stroke="#333333" stroke-width="1.2"/>')
            bx += bar_w + gap
        label_y = top + plot_h + 16
        parts.append(f'<text x="{x + panel_w / 2:.1f}" y="{label_y}" text-anchor="middle">'
                     f'{scenario} / m-DAG {mdag}</text>')
        x += panel_w + 12

    ly = top + plot_h + 40
    lx = left
    for j, method in enumerate(methods):
        color = _PALETTE[j % len(_PALETTE)]
        parts.append(f'<rect x="{lx}" y="{ly - 9}" width="10" height="10" fill="{color}"/>')
        label = missing.METHOD_LABELS[method]
        parts.append(f'<text x="{lx + 14}" y="{ly}">{label}</text>')
        lx += 14 + 7 * len(label) + 18
        if lx > width - 140:
            lx = left
            ly += 18
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_report(rows: list[harness.ResultRow], cfg: harness.StudyConfig, outdir) -> list[Path]:
    """Write results/timings/config, then render everything else back from
    the written results.csv so re-rendering is exactly reproducible."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []

    results_path = outdir / "results.csv"
    results_path.write_text(harness.rows_to_csv(rows), encoding="utf-8")
    written.append(results_path)
    (outdir / "timings.csv").write_text(timings_csv(rows), encoding="utf-8")
    written.append(outdir / "timings.csv")
    (outdir / "config.json").write_text(config_json(cfg), encoding="utf-8")
    written.append(outdir / "config.json")

    written.extend(render_from_results(outdir))
    return written


def render_from_results(outdir) -> list[Path]:
    """Recompute metrics/report/charts from results.csv + config.json."""
    outdir = Path(outdir)
    cfg = config_from_json((outdir / "config.json").read_text(encoding="utf-8"))
    rows = harness.rows_from_csv((outdir / "results.csv").read_text(encoding="utf-8"))
    metrics = harness.compute_metrics(rows, cfg)

    written = []
    (outdir / "metrics.csv").write_text(metrics_csv(metrics), encoding="utf-8")
    written.append(outdir / "metrics.csv")
    (outdir / "report.md").write_text(report_md(metrics, cfg), encoding="utf-8")
    written.append(outdir / "report.md")
    for key, title, value_key, mcse_key in _METRIC_SPECS:
        p = outdir / f"{key}.svg"
        p.write_text(chart_svg(metrics, cfg, title, value_key, mcse_key), encoding="utf-8")
        written.append(p)
    return written
