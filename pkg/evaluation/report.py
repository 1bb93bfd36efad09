"""Report emission: metrics.json, sweep CSVs, a contact sheet and SVG line plots."""

import csv
import json
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

from data.images import contact_sheet, write_ppm
from utils.errors import DimensionError, FormatError
from utils.logger import log_component_call, setup_logger

logger = setup_logger(__name__)

SHEET_TILES = 16
SHEET_COLUMNS = 4

SVG_WIDTH = 480
SVG_HEIGHT = 320
SVG_MARGIN = 48
SERIES_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def _jsonable(value: Any) -> Any:
    if hasattr(value, "model_dump"):
        return _jsonable(value.model_dump())
    if isinstance(value, Mapping):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


def write_metrics(results: Mapping[str, Any], path: Path) -> Path:
    """Full nested results as JSON; pydantic models are dumped, non-finite floats become null."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(_jsonable(results), indent=2, sort_keys=True), encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"cannot write metrics {path}: {exc}") from exc
    return path


def read_metrics(path: Path) -> Dict[str, Any]:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise FormatError(f"cannot read metrics {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path} is not valid JSON: {exc}") from exc


def write_csv(rows: Sequence[Mapping[str, Any]], path: Path, columns: Optional[Sequence[str]] = None) -> Path:
    path = Path(path)
    columns = list(columns or (rows[0].keys() if rows else []))
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.DictWriter(handle, fieldnames=columns)
            writer.writeheader()
            for row in rows:
                writer.writerow({c: _jsonable(row.get(c)) for c in columns})
    except OSError as exc:
        raise FormatError(f"cannot write table {path}: {exc}") from exc
    return path


def read_csv(path: Path) -> List[Dict[str, str]]:
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as handle:
            return list(csv.DictReader(handle))
    except OSError as exc:
        raise FormatError(f"cannot read table {path}: {exc}") from exc


def write_contact_sheet(images: np.ndarray, path: Path, tiles: int = SHEET_TILES,
                        columns: int = SHEET_COLUMNS) -> Path:
    """First `tiles` images in [0, 1] laid out `columns` wide, as a binary PPM."""
    images = np.asarray(images)
    if images.ndim != 4 or len(images) < tiles:
        raise DimensionError(f"contact sheet needs {tiles} images, got array of shape {images.shape}")
    return write_ppm(path, contact_sheet(images[:tiles], columns=columns))


def _scale(values: Sequence[float], low: float, high: float, lo_px: float, hi_px: float) -> List[float]:
    span = high - low or 1.0
    return [lo_px + (v - low) / span * (hi_px - lo_px) for v in values]


def line_plot_svg(x_labels: Sequence[str], series: Mapping[str, Sequence[Optional[float]]],
                  title: str, y_label: str = "") -> str:
    """A standalone SVG document with one polyline per series over categorical x positions."""
    present = [v for values in series.values() for v in values if v is not None and np.isfinite(v)]
    low, high = (min(present), max(present)) if present else (0.0, 1.0)
    if low == high:
        low, high = low - 0.5, high + 0.5
    left, right = SVG_MARGIN, SVG_WIDTH - SVG_MARGIN / 2
    top, bottom = SVG_MARGIN / 2, SVG_HEIGHT - SVG_MARGIN
    n = len(x_labels)
    xs = [left + (right - left) * (i / (n - 1) if n > 1 else 0.5) for i in range(n)]

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" '
        f'viewBox="0 0 {SVG_WIDTH} {SVG_HEIGHT}">',
        f'<rect x="0" y="0" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" fill="white"/>',
        f'<text x="{SVG_WIDTH / 2:.1f}" y="16" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" stroke="black"/>',
        f'<text x="{left - 6}" y="{bottom:.1f}" text-anchor="end" font-size="10">{low:.3g}</text>',
        f'<text x="{left - 6}" y="{top + 10:.1f}" text-anchor="end" font-size="10">{high:.3g}</text>',
    ]
    if y_label:
        parts.append(f'<text x="12" y="{(top + bottom) / 2:.1f}" font-size="11" '
                     f'transform="rotate(-90 12 {(top + bottom) / 2:.1f})">{escape(y_label)}</text>')
    for x, label in zip(xs, x_labels):
        parts.append(f'<text x="{x:.1f}" y="{bottom + 16:.1f}" text-anchor="middle" '
                     f'font-size="11">{escape(str(label))}</text>')
    for k, (name, values) in enumerate(series.items()):
        color = SERIES_COLORS[k % len(SERIES_COLORS)]
        points = [(x, v) for x, v in zip(xs, values) if v is not None and np.isfinite(v)]
        if not points:
            continue
        ys = _scale([v for _, v in points], low, high, bottom, top)
        coords = " ".join(f"{x:.1f},{y:.1f}" for (x, _), y in zip(points, ys))
        parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>')
        for (x, _), y in zip(points, ys):
            parts.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="3" fill="{color}"/>')
        parts.append(f'<text x="{right - 4:.1f}" y="{top + 14 * (k + 1):.1f}" text-anchor="end" '
                     f'font-size="11" fill="{color}">{escape(name)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_svg(document: str, path: Path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(document, encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"cannot write plot {path}: {exc}") from exc
    return path


def _as_float(value: Any) -> Optional[float]:
    try:
        return float(value)
    except (TypeError, ValueError):
        return None


def emit_report(results: Mapping[str, Any], out_dir: Path,
                sweeps: Optional[Mapping[str, Sequence[Mapping[str, Any]]]] = None,
                generations: Optional[np.ndarray] = None,
                sweep_x: str = "size") -> Dict[str, Path]:
    """Write every artifact of an evaluation into `out_dir` and return their paths by name.

    Each sweep becomes `<name>.csv` plus `<name>-<metric>.svg` for every numeric column.
    """
    out_dir = Path(out_dir)
    written: Dict[str, Path] = {"metrics": write_metrics(results, out_dir / "metrics.json")}
    for name, rows in (sweeps or {}).items():
        written[f"{name}.csv"] = write_csv(rows, out_dir / f"{name}.csv")
        if not rows:
            continue
        labels = [str(row.get(sweep_x, i)) for i, row in enumerate(rows)]
        for column in rows[0].keys():
            if column == sweep_x:
                continue
            values = [_as_float(row.get(column)) for row in rows]
            if all(v is None for v in values):
                continue
            svg = line_plot_svg(labels, {column: values}, title=f"{column} vs {sweep_x}", y_label=column)
            written[f"{name}-{column}.svg"] = write_svg(svg, out_dir / f"{name}-{column}.svg")
    if generations is not None and len(generations) >= SHEET_TILES:
        written["contact_sheet"] = write_contact_sheet(generations, out_dir / "contact_sheet.ppm")
    elif generations is not None:
        logger.warning(f"Skipping contact sheet: {len(generations)} generations, need {SHEET_TILES}")
    log_component_call(logger, "Report", "Emitted", {"out_dir": str(out_dir), "files": sorted(written)})
    return written
