"""Aggregate run directories into profiles, heatmaps and error tables and write them out.

Outputs (all CSV: UTF-8, header row, '.' decimals, stable row order):

    cwa_by_layer.csv   experiment,layer,attn_sum,attn_mean,mlp
    cwa_heatmap.csv    experiment,component_kind,layer,n_target,cwa
    error_dist.csv     experiment,n_target,min,q25,q50,q75,max,n_outliers
    error_dist_<panel>.csv  same columns, panel = matched | mismatched | mixed
    mae.csv            language,template,n_target,mae
    error_stats.csv    experiment,avg,std,min,q25,q50,q75,max

``attn_sum`` is the attention-layer CWA (equal to the sum over heads);
``attn_mean`` is the mean over heads. Standard deviations are population
standard deviations. Outliers lie beyond 1.5 IQR from the quartiles.
"""
from __future__ import annotations

import csv
import io
import json
import math
import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence
from xml.sax.saxutils import escape

from .errors import DomainError, FormatError
from .harness import EXPERIMENTS, experiment_parts, fmt, panels, write_csv
from .judge import ErrorStats, Outcome, descriptive_stats, iqr_outliers, mae, quantile

PANELS = ("matched", "mismatched", "mixed")
LAYER_FIELDS = ["experiment", "layer", "attn_sum", "attn_mean", "mlp"]
HEATMAP_FIELDS = ["experiment", "component_kind", "layer", "n_target", "cwa"]
DIST_FIELDS = ["experiment", "n_target", "min", "q25", "q50", "q75", "max", "n_outliers"]
MAE_FIELDS = ["language", "template", "n_target", "mae"]
STATS_FIELDS = ["experiment", "avg", "std", "min", "q25", "q50", "q75", "max"]


def _mean(values: Sequence[float]) -> float:
    # fsum is exact, so the mean does not depend on input order
    return math.fsum(values) / len(values)


def _exp_key(tag: str):
    return (EXPERIMENTS.index(tag) if tag in EXPERIMENTS else len(EXPERIMENTS), tag)


@dataclass
class Aggregates:
    n_values: list[int]
    n_layers: dict[str, int] = field(default_factory=dict)
    profile: dict[str, dict[str, list[float]]] = field(default_factory=dict)
    heatmap: dict[str, dict[str, list[list[float | None]]]] = field(default_factory=dict)
    error_dist: dict[str, dict[tuple[str, int], dict]] = field(default_factory=dict)
    mae_by_template: dict[tuple[str, str, int], float] = field(default_factory=dict)
    error_stats: dict[str, ErrorStats] = field(default_factory=dict)


# -- loading -------------------------------------------------------------------

def _require(path: Path) -> Path:
    if not path.is_file():
        raise FormatError(f"run artifact missing: {path}")
    return path


def load_run(run_dir: str | Path) -> tuple[dict, list[dict], list[dict]]:
    """(config, record rows, cwa rows) of one run directory."""
    run_dir = Path(run_dir)
    try:
        config = json.loads(_require(run_dir / "config.json").read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{run_dir / 'config.json'}: invalid JSON ({exc.msg})") from None
    records = []
    path = _require(run_dir / "records.jsonl")
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
    cwa_rows = read_csv(_require(run_dir / "cwa.csv"))
    for row in records:
        for key in ("experiment", "template_set", "template_id", "language", "style",
                    "n_target", "outcome", "n_gen"):
            if key not in row:
                raise FormatError(f"{path}: record without field {key!r}")
    return config, records, cwa_rows


def _parse_cell(cell: str):
    if cell == "":
        return None
    if re.fullmatch(r"-?\d+", cell):
        return int(cell)
    try:
        return float(cell)
    except ValueError:
        return cell


def read_csv(path: str | Path) -> list[dict]:
    text = Path(path).read_text(encoding="utf-8")
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None:
        raise FormatError(f"{path}: empty CSV (no header)")
    rows = []
    for row in reader:
        if None in row or any(v is None for v in row.values()):
            raise FormatError(f"{path}:{reader.line_num}: wrong number of columns")
        rows.append({k: _parse_cell(v) for k, v in row.items()})
    return rows


def reemit_csv(src: str | Path, dst: str | Path) -> None:
    """Parse an emitted CSV and write it back; the bytes must not change."""
    text = Path(src).read_text(encoding="utf-8")
    header = next(csv.reader(io.StringIO(text)))
    write_csv(Path(dst), header, read_csv(src))


# -- aggregation ---------------------------------------------------------------

def _scored(rows: Iterable[dict], include_truncated: bool) -> list[dict]:
    out = []
    for r in rows:
        if r["outcome"] is None:
            continue
        if r["outcome"] == Outcome.TRUNCATED.value and not include_truncated:
            continue
        out.append(r)
    return out


def _template_label(row: dict) -> str:
    own = experiment_parts(row["experiment"])[1]
    return row["template_id"] if row["template_set"] == own else f"{row['template_set']}:{row['template_id']}"


def _in_panel(row: dict, panel: str | None) -> bool:
    return panel is None or panel in panels(row["experiment"], row["style"])


def _dist_row(errors: list[float]) -> dict:
    return {"min": min(errors), "q25": quantile(errors, 0.25), "q50": quantile(errors, 0.5),
            "q75": quantile(errors, 0.75), "max": max(errors),
            "n_outliers": len(iqr_outliers(errors)), "outliers": sorted(iqr_outliers(errors))}


def aggregate(run_dirs: Sequence[str | Path], n_min: int = 3, n_max: int = 9,
              panel: str | None = "matched", include_truncated: bool = False,
              exclude_outliers: bool = True) -> Aggregates:
    """Profiles, heatmaps and error tables over one or more run directories.

    ``panel`` restricts the CWA profile/heatmap, the MAE table and the error
    statistics (``None`` keeps every record); the error distributions are
    always emitted for all records and for each panel separately.
    ``exclude_outliers`` applies to the MAE-by-template table only.
    """
    if panel is not None and panel not in PANELS:
        raise DomainError(f"unknown panel {panel!r}")
    n_values = list(range(n_min, n_max + 1))
    records, cwa_rows = [], []
    for i, d in enumerate(run_dirs):
        _, recs, rows = load_run(d)
        records += recs
        cwa_rows += [{**r, "_run": i} for r in rows]
    styles = {(r["experiment"], r["template_set"], r["template_id"]): r["style"] for r in records}
    agg = Aggregates(n_values=n_values)

    # CWA profile and heatmap
    per_exp: dict[str, dict] = defaultdict(lambda: defaultdict(list))
    for row in cwa_rows:
        style = styles.get((row["experiment"], row["template_set"], row["template_id"]))
        if style is None:
            raise FormatError(f"cwa row without matching record: {row}")
        if row["n_target"] not in n_values:
            continue
        if not _in_panel({"experiment": row["experiment"], "style": style}, panel):
            continue
        run_key = (row["n_target"], row["_run"], row["template_set"], row["template_id"],
                   row["repetition"])
        per_exp[row["experiment"]][run_key].append(row)
    for exp in sorted(per_exp, key=_exp_key):
        runs = per_exp[exp]
        layers = 1 + max((r["layer"] for rows in runs.values() for r in rows
                          if r["layer"] is not None), default=-1)
        agg.n_layers[exp] = layers
        attn = [[] for _ in range(layers)]
        attn_mean = [[] for _ in range(layers)]
        mlp = [[] for _ in range(layers)]
        cells = {k: [[[] for _ in n_values] for _ in range(layers)] for k in ("attn", "mlp")}
        for (n, *_), rows in sorted(runs.items()):
            heads = defaultdict(list)
            col = n_values.index(n)
            for r in rows:
                kind, l = r["component_kind"], r["layer"]
                if kind == "attn_layer":
                    attn[l].append(r["cwa"])
                    cells["attn"][l][col].append(r["cwa"])
                elif kind == "mlp":
                    mlp[l].append(r["cwa"])
                    cells["mlp"][l][col].append(r["cwa"])
                elif kind == "attn_head":
                    heads[l].append(r["cwa"])
            for l, vals in heads.items():
                attn_mean[l].append(_mean(vals))
        agg.profile[exp] = {
            "attn_sum": [_mean(v) if v else None for v in attn],
            "attn_mean": [_mean(v) if v else None for v in attn_mean],
            "mlp": [_mean(v) if v else None for v in mlp],
        }
        agg.heatmap[exp] = {k: [[_mean(c) if c else None for c in row] for row in grid]
                            for k, grid in cells.items()}

    scored = [r for r in _scored(records, include_truncated) if r["n_target"] in n_values]

    # error distributions: all records, then each panel
    for name in ("all",) + PANELS:
        groups = defaultdict(list)
        for r in scored:
            if name == "all" or name in panels(r["experiment"], r["style"]):
                groups[(r["experiment"], r["n_target"])].append(r["n_gen"] - r["n_target"])
        agg.error_dist[name] = {k: _dist_row(v) for k, v in
                                sorted(groups.items(), key=lambda kv: (_exp_key(kv[0][0]), kv[0][1]))}

    # MAE by (language, template, N), instruction-tuned experiments only
    groups = defaultdict(list)
    for r in scored:
        if experiment_parts(r["experiment"])[1] != "IT" or not _in_panel(r, panel):
            continue
        groups[(r["language"], _template_label(r), r["n_target"])].append(r["n_gen"] - r["n_target"])
    for key in sorted(groups, key=lambda k: (["EN", "IT"].index(k[0]) if k[0] in ("EN", "IT") else 2, k)):
        errors = groups[key]
        if exclude_outliers:
            outliers = iqr_outliers(errors)
            kept = [e for e in errors if e not in outliers]
            errors = kept or errors
        agg.mae_by_template[key] = mae(errors)

    # descriptive error statistics per experiment
    groups = defaultdict(list)
    for r in scored:
        if _in_panel(r, panel):
            groups[r["experiment"]].append(r["n_gen"] - r["n_target"])
    for exp in sorted(groups, key=_exp_key):
        agg.error_stats[exp] = descriptive_stats(groups[exp])
    return agg


# -- CSV -------------------------------------------------------------------------

def emit_csv(agg: Aggregates, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    rows = []
    for exp, prof in agg.profile.items():
        for l in range(agg.n_layers[exp]):
            rows.append({"experiment": exp, "layer": l, "attn_sum": prof["attn_sum"][l],
                         "attn_mean": prof["attn_mean"][l], "mlp": prof["mlp"][l]})
    write_csv(out / "cwa_by_layer.csv", LAYER_FIELDS, rows)
    written.append(out / "cwa_by_layer.csv")

    rows = []
    for exp, grids in agg.heatmap.items():
        for kind in ("attn", "mlp"):
            for l, grid_row in enumerate(grids[kind]):
                for n, value in zip(agg.n_values, grid_row):
                    rows.append({"experiment": exp, "component_kind": kind, "layer": l,
                                 "n_target": n, "cwa": value})
    write_csv(out / "cwa_heatmap.csv", HEATMAP_FIELDS, rows)
    written.append(out / "cwa_heatmap.csv")

    for name in ("all",) + PANELS:
        fname = "error_dist.csv" if name == "all" else f"error_dist_{name}.csv"
        rows = [{"experiment": exp, "n_target": n, **vals}
                for (exp, n), vals in agg.error_dist.get(name, {}).items()]
        write_csv(out / fname, DIST_FIELDS, rows)
        written.append(out / fname)

    rows = [{"language": lang, "template": t, "n_target": n, "mae": v}
            for (lang, t, n), v in agg.mae_by_template.items()]
    write_csv(out / "mae.csv", MAE_FIELDS, rows)
    written.append(out / "mae.csv")

    rows = [{"experiment": exp, **st.as_row()} for exp, st in agg.error_stats.items()]
    write_csv(out / "error_stats.csv", STATS_FIELDS, rows)
    written.append(out / "error_stats.csv")
    return written


# -- SVG -------------------------------------------------------------------------

LOW_RGB = (33, 102, 172)
HIGH_RGB = (178, 24, 43)
EMPTY_FILL = "#dddddd"
CELL = 28


def color_for(value: float, lo: float, hi: float) -> str:
    """Linear interpolation from LOW_RGB (at ``lo``) to HIGH_RGB (at ``hi``)."""
    t = 0.5 if hi == lo else (value - lo) / (hi - lo)
    rgb = [round(a + t * (b - a)) for a, b in zip(LOW_RGB, HIGH_RGB)]
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def grid_svg(grid: Sequence[Sequence[float | None]], row_labels: Sequence[str],
             col_labels: Sequence[str], title: str = "") -> str:
    """Self-contained SVG heatmap; each cell carries its value as a title."""
    values = [v for row in grid for v in row if v is not None]
    lo, hi = (min(values), max(values)) if values else (0.0, 0.0)
    left, top = 90, 40
    width = left + CELL * max(len(col_labels), 1) + 20
    height = top + CELL * len(row_labels) + 70
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="10">',
           f'<text x="{left}" y="16" font-size="12">{escape(title)}</text>']
    for j, label in enumerate(col_labels):
        out.append(f'<text x="{left + CELL * j + CELL / 2}" y="{top - 6}" '
                   f'text-anchor="middle">{escape(str(label))}</text>')
    for i, label in enumerate(row_labels):
        y = top + CELL * i
        out.append(f'<text x="{left - 6}" y="{y + CELL / 2 + 3}" '
                   f'text-anchor="end">{escape(str(label))}</text>')
        for j, value in enumerate(grid[i]):
            fill = EMPTY_FILL if value is None else color_for(value, lo, hi)
            text = "" if value is None else fmt(float(value))
            out.append(f'<rect class="cell" x="{left + CELL * j}" y="{y}" width="{CELL}" '
                       f'height="{CELL}" fill="{fill}" title="{text}"><title>{text}</title></rect>')
    ly = top + CELL * len(row_labels) + 20
    if values and hi == lo:
        out.append(f'<rect class="legend" x="{left}" y="{ly}" width="{CELL}" height="12" '
                   f'fill="{color_for(lo, lo, hi)}" title="{fmt(float(lo))}"/>')
        out.append(f'<text x="{left + CELL + 6}" y="{ly + 10}">constant value {fmt(float(lo))} '
                   f'(single-colour scale)</text>')
    elif values:
        out.append(f'<rect class="legend" x="{left}" y="{ly}" width="{CELL}" height="12" '
                   f'fill="{color_for(lo, lo, hi)}" title="{fmt(float(lo))}"/>')
        out.append(f'<text x="{left + CELL + 6}" y="{ly + 10}">min {fmt(float(lo))}</text>')
        out.append(f'<rect class="legend" x="{left}" y="{ly + 18}" width="{CELL}" height="12" '
                   f'fill="{color_for(hi, lo, hi)}" title="{fmt(float(hi))}"/>')
        out.append(f'<text x="{left + CELL + 6}" y="{ly + 28}">max {fmt(float(hi))}</text>')
    else:
        out.append(f'<text x="{left}" y="{ly + 10}">no data</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_svg(agg: Aggregates, out_dir: str | Path) -> list[Path]:
    """One layer x N heatmap per (experiment, attn|mlp) and one layer profile
    per experiment."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for exp, grids in agg.heatmap.items():
        layers = [f"layer {l}" for l in range(agg.n_layers[exp])]
        for kind in ("attn", "mlp"):
            path = out / f"heatmap_{exp}_{kind}.svg"
            path.write_text(grid_svg(grids[kind], layers, [str(n) for n in agg.n_values],
                                     f"{exp} {kind} CWA by layer and N"), encoding="utf-8")
            written.append(path)
    for exp, prof in agg.profile.items():
        cols = ("attn_sum", "attn_mean", "mlp")
        grid = [[prof[c][l] for c in cols] for l in range(agg.n_layers[exp])]
        path = out / f"profile_{exp}.svg"
        path.write_text(grid_svg(grid, [f"layer {l}" for l in range(agg.n_layers[exp])], cols,
                                 f"{exp} CWA by layer"), encoding="utf-8")
        written.append(path)
    return written
