"""Figure-level aggregation: quartile summaries and static SVG plots.

Every function here is a pure transform of the stage CSVs, and the SVG
output is deterministic: a fixed hash salt, no timestamp metadata, and the
plotted summary table embedded as an XML comment so figures diff cleanly.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from .meta import spearman

_METRICS = ["c_index", "ibs", "scaled_ibs", "log_hr_se"]
_SVG_SALT = "surrsim"


def _quartiles(values: np.ndarray) -> tuple[float, float, float]:
    q1, med, q3 = np.quantile(values, [0.25, 0.5, 0.75])
    return float(q1), float(med), float(q3)


def _save_svg(fig, path: Path, data_table: str):
    with plt.rc_context({"svg.hashsalt": _SVG_SALT}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    text = path.read_text()
    comment = "<!--\nsummary-table\n" + data_table.replace("--", "- -") + "\n-->\n"
    text = text.replace("</svg>", comment + "</svg>")
    path.write_text(text)


def _grouped_boxplot(frame: pd.DataFrame, value: str, title: str, ylabel: str):
    """Boxplots of `value` grouped by alpha on the x axis, one offset series
    per beta1 level (or per mixed stratum)."""
    alphas = sorted(frame["alpha"].unique())
    series = sorted(frame["_series"].unique(), key=str)
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    width = 0.8 / max(len(series), 1)
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for j, level in enumerate(series):
        data = [
            frame[(frame["alpha"] == a) & (frame["_series"] == level)][value].to_numpy()
            for a in alphas
        ]
        positions = np.arange(len(alphas)) + (j - (len(series) - 1) / 2) * width
        color = colors[j % len(colors)]
        ax.boxplot(
            data,
            positions=positions,
            widths=width * 0.85,
            patch_artist=True,
            boxprops={"facecolor": color, "alpha": 0.5},
            medianprops={"color": "black"},
            flierprops={"marker": ".", "markersize": 3},
        )
    ax.set_xticks(np.arange(len(alphas)))
    ax.set_xticklabels([f"{a:g}" for a in alphas])
    ax.set_xlabel("alpha")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    handles = [
        plt.Rectangle((0, 0), 1, 1, facecolor=colors[j % len(colors)], alpha=0.5)
        for j in range(len(series))
    ]
    ax.legend(handles, [str(s) for s in series], title="series", fontsize=8)
    fig.tight_layout()
    return fig


def metric_boxplots(metrics: pd.DataFrame, outdir: Path | None = None) -> pd.DataFrame:
    """Quartiles of each metric per (scenario, alpha, beta1), pooling the
    active-mean grid, plus one boxplot SVG per metric when outdir is given."""
    rows = []
    for metric in _METRICS:
        for (scenario, alpha, beta1), grp in metrics.groupby(
            ["scenario", "alpha", "beta1"], sort=True
        ):
            if len(grp) == 0:
                raise ValueError(f"empty group for {metric} at {(scenario, alpha, beta1)}")
            q1, med, q3 = _quartiles(grp[metric].to_numpy())
            rows.append(
                {
                    "scenario": scenario,
                    "metric": metric,
                    "alpha": alpha,
                    "beta1": beta1,
                    "q1": q1,
                    "median": med,
                    "q3": q3,
                    "n": len(grp),
                }
            )
    summary = pd.DataFrame(rows)
    if outdir is not None:
        outdir = Path(outdir)
        plot_frame = metrics.copy()
        plot_frame["_series"] = plot_frame["beta1"].map(lambda b: f"beta1={b:g}")
        for metric in _METRICS:
            fig = _grouped_boxplot(
                plot_frame,
                metric,
                f"{plot_frame['scenario'].iloc[0]}: {metric} by alpha and beta1",
                metric,
            )
            table = summary[summary["metric"] == metric].to_csv(index=False)
            _save_svg(fig, outdir / f"fig_{metric}.svg", table)
    return summary


def _safe_corrs(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    if len(x) < 3 or np.all(x == x[0]) or np.all(y == y[0]):
        return float("nan"), float("nan")
    pearson = float(np.corrcoef(x, y)[0, 1])
    try:
        rho = spearman(x, y)
    except ValueError:
        rho = float("nan")
    return pearson, rho


def within_cell_correlations(metrics: pd.DataFrame) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Correlations of C with each other metric, two ways.

    Family "within_cell": across replicates at fixed (alpha, beta1, means).
    Family "alpha_varying": across replicates pooled over the whole alpha
    grid per (beta1, means) combination, the design that exposes how the
    metrics co-move as the link strength changes.  Returns (detail rows,
    quartile summary of the Spearman values per family and metric).
    """
    others = [m for m in _METRICS if m != "c_index"]
    detail = []
    keys = ["scenario", "beta1", "ks_mean_active", "kg_mean_active"]
    for (scenario, beta1, ksm, kgm, alpha), grp in metrics.groupby(
        keys + ["alpha"], sort=True
    ):
        c = grp["c_index"].to_numpy()
        for metric in others:
            pearson, rho = _safe_corrs(c, grp[metric].to_numpy())
            detail.append(
                {
                    "scenario": scenario,
                    "family": "within_cell",
                    "alpha": alpha,
                    "beta1": beta1,
                    "ks_mean_active": ksm,
                    "kg_mean_active": kgm,
                    "metric": metric,
                    "pearson_rho": pearson,
                    "spearman_rho": rho,
                    "n": len(grp),
                }
            )
    for (scenario, beta1, ksm, kgm), grp in metrics.groupby(keys, sort=True):
        c = grp["c_index"].to_numpy()
        for metric in others:
            pearson, rho = _safe_corrs(c, grp[metric].to_numpy())
            detail.append(
                {
                    "scenario": scenario,
                    "family": "alpha_varying",
                    "alpha": float("nan"),
                    "beta1": beta1,
                    "ks_mean_active": ksm,
                    "kg_mean_active": kgm,
                    "metric": metric,
                    "pearson_rho": pearson,
                    "spearman_rho": rho,
                    "n": len(grp),
                }
            )
    detail_df = pd.DataFrame(detail)
    rows = []
    for (scenario, family, metric), grp in detail_df.groupby(
        ["scenario", "family", "metric"], sort=True
    ):
        vals = grp["spearman_rho"].to_numpy()
        vals = vals[np.isfinite(vals)]
        if len(vals) == 0:
            q1 = med = q3 = float("nan")
        else:
            q1, med, q3 = _quartiles(vals)
        rows.append(
            {
                "scenario": scenario,
                "family": family,
                "metric": metric,
                "q1": q1,
                "median": med,
                "q3": q3,
                "n_groups": len(grp),
            }
        )
    return detail_df, pd.DataFrame(rows)


def r2_summaries(
    pairs: pd.DataFrame, outdir: Path | None = None, tag: str = ""
) -> pd.DataFrame:
    """Quartiles of R² per (scenario, mode, alpha, beta1-or-mixed stratum),
    with a grouped boxplot SVG when outdir is given."""
    rows = []
    for (scenario, mode, alpha, stratum), grp in pairs.groupby(
        ["scenario", "mode", "alpha", "beta1_or_mixed"], sort=True
    ):
        q1, med, q3 = _quartiles(grp["r2"].to_numpy())
        rows.append(
            {
                "scenario": scenario,
                "mode": mode,
                "alpha": alpha,
                "beta1_or_mixed": stratum,
                "q1": q1,
                "median": med,
                "q3": q3,
                "n": len(grp),
            }
        )
    summary = pd.DataFrame(rows)
    if outdir is not None and len(pairs):
        plot_frame = pairs.copy()
        plot_frame["_series"] = plot_frame["beta1_or_mixed"].astype(str)
        fig = _grouped_boxplot(
            plot_frame,
            "r2",
            f"{pairs['scenario'].iloc[0]}: meta-analysis R² ({tag or pairs['mode'].iloc[0]})",
            "R²",
        )
        name = f"fig_r2_{tag}.svg" if tag else "fig_r2.svg"
        _save_svg(fig, Path(outdir) / name, summary.to_csv(index=False))
    return summary


def pattern_summary(
    summary_metrics: pd.DataFrame,
    summary_r2: pd.DataFrame | None,
    correlations: pd.DataFrame | None,
) -> list[str]:
    """Human-readable lines restating the headline patterns of a run."""

    lines = []

    def med(alpha, beta1, metric):
        sel = summary_metrics[
            (summary_metrics["alpha"] == alpha)
            & (summary_metrics["beta1"] == beta1)
            & (summary_metrics["metric"] == metric)
        ]
        return float(sel["median"].iloc[0]) if len(sel) else None

    c_null = med(0.0, 0.0, "c_index")
    s_null = med(0.0, 0.0, "scaled_ibs")
    if c_null is not None:
        lines.append(
            f"null cell (alpha=0, beta1=0): median C = {c_null:.3f}, "
            f"median scaled IBS = {s_null:.3f}"
        )
    c2 = med(2.0, 0.0, "c_index")
    c6 = med(6.0, 0.0, "c_index")
    if c2 is not None and c6 is not None:
        lines.append(
            f"plateau (beta1=0): median C at alpha=2 is {c2:.3f}; "
            f"alpha=6 adds {c6 - c2:+.3f}"
        )
    if summary_r2 is not None and len(summary_r2):
        null_r2 = summary_r2[
            (summary_r2["alpha"] == 0.0)
            & (summary_r2["beta1_or_mixed"].astype(str).isin(["0.0", "0"]))
        ]
        if len(null_r2):
            lines.append(
                f"null-stratum median meta R² = {float(null_r2['median'].iloc[0]):.3f} "
                f"(n={int(null_r2['n'].iloc[0])} pairs)"
            )
    if correlations is not None and len(correlations):
        pooled = correlations[
            (correlations["metric"] == "c_index")
            & (correlations["stratum"] == "pooled")
        ]
        for filter_name in ("all", "alpha>=2"):
            sel = pooled[pooled["alpha_filter"] == filter_name]
            if len(sel):
                lines.append(
                    f"Spearman(C, R²) over {filter_name}: "
                    f"{float(sel['spearman_rho'].iloc[0]):.3f}"
                )
    return lines
