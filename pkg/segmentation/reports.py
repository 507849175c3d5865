"""
Result tables and overlay images.

Per-model tables hold one block per target organ, every cell written as
"mean / (min, max)" with four decimals. The CSV form keeps full precision and
parses back to the same rows.
"""
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from PIL import Image

from .data_io import OrganId
from .exceptions import ConfigError, ShapeMismatchError, VolumeFormatError
from .metrics import CSV_COLUMNS, MetricRow

logger = logging.getLogger(__name__)

PRECISION = 4
UNDEFINED = 'n/a'
INT_COLUMNS = ('n_patients', 'n_undefined_slices')


# ========================================
# PER-MODEL TABLES
# ========================================
def format_cell(mean, low, high):
    if mean is None:
        return UNDEFINED
    return f"{mean:.{PRECISION}f} / ({low:.{PRECISION}f}, {high:.{PRECISION}f})"


def _best_models(rows, attr, pick):
    values = [getattr(row, attr) for row in rows if getattr(row, attr) is not None]
    if not values:
        return set()
    best = pick(values)
    return {row.model for row in rows if getattr(row, attr) == best}


def _target_order(target):
    try:
        return int(OrganId.from_name(target)), target
    except ValueError:
        return len(OrganId) + 1, target


def rows_to_frame(rows):
    return pd.DataFrame([row.as_dict() for row in rows], columns=CSV_COLUMNS)


def render_table(rows):
    """
    (markdown, csv) for MetricRows.

    The best mean per target is bold: highest DSC, lowest HD95. Equal means
    are all marked.
    """
    rows = list(rows)
    if not rows:
        raise VolumeFormatError("cannot render an empty report")

    lines = ['| Target | Model | DSC | HD95 | Best |', '|---|---|---|---|---|']
    targets = sorted({row.target for row in rows}, key=_target_order)
    for target in targets:
        block = [row for row in rows if row.target == target]
        best_dsc = _best_models(block, 'dsc_mean', max)
        best_hd95 = _best_models(block, 'hd95_mean', min)
        for row in block:
            dsc = format_cell(row.dsc_mean, row.dsc_min, row.dsc_max)
            hd95 = format_cell(row.hd95_mean, row.hd95_min, row.hd95_max)
            marks = []
            if row.model in best_dsc:
                dsc, marks = f"**{dsc}**", marks + ['DSC']
            if row.model in best_hd95:
                hd95, marks = f"**{hd95}**", marks + ['HD95']
            lines.append(f"| {target.replace('_', ' ')} | {row.model} | {dsc} | {hd95} | {', '.join(marks)} |")

    buffer = io.StringIO()
    rows_to_frame(rows).to_csv(buffer, index=False)
    return '\n'.join(lines) + '\n', buffer.getvalue()


def _optional(value):
    return None if value is None or (isinstance(value, float) and math.isnan(value)) else value


def parse_table_csv(text):
    """MetricRows back from the CSV half of render_table; empty cells become None."""
    frame = pd.read_csv(io.StringIO(text), float_precision='round_trip', dtype={'target': str, 'model': str})
    missing = set(CSV_COLUMNS) - set(frame.columns)
    if missing:
        raise VolumeFormatError(f"report CSV lacks columns: {', '.join(sorted(missing))}")

    rows = []
    for record in frame.to_dict(orient='records'):
        values = {name: _optional(record[name]) for name in CSV_COLUMNS}
        for name in INT_COLUMNS:
            values[name] = int(values[name] or 0)
        for name in CSV_COLUMNS[2:8]:
            if values[name] is not None:
                values[name] = float(values[name])
        rows.append(MetricRow(**values))
    return rows


def write_report(directory, rows, name='report', formats=('csv', 'md')):
    """Write `<name>.csv` and/or `<name>.md` under `directory`; returns the written paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rendered = dict(zip(('md', 'csv'), render_table(rows)))
    paths = []
    for fmt in formats:
        path = directory / f'{name}.{fmt}'
        path.write_text(rendered[fmt])
        paths.append(path)
    return paths


def collect_rows(directory):
    """Rows of `directory/report.csv`, or of every cell report below it when there is none."""
    directory = Path(directory)
    root = directory / 'report.csv'
    paths = [root] if root.exists() else sorted(directory.glob('*/*/report.csv'))
    if not paths:
        raise VolumeFormatError(f"no report.csv found under {directory}")
    rows = []
    for path in paths:
        rows.extend(parse_table_csv(path.read_text()))
    return rows


# ========================================
# ENSEMBLE TABLES
# ========================================
def ensemble_mean(per_organ):
    return float(np.mean([per_organ[organ.label] for organ in OrganId]))


def render_ensemble_table(columns):
    """
    (markdown, csv) with one DSC column per paradigm and a final Mean row.

    `columns` maps a paradigm name to {organ label: DSC} or an EnsembleReport.
    """
    columns = {name: getattr(value, 'per_organ', value) for name, value in columns.items()}
    if not columns:
        raise VolumeFormatError("cannot render an empty ensemble report")
    for name, per_organ in columns.items():
        missing = [organ.label for organ in OrganId if organ.label not in per_organ]
        if missing:
            raise VolumeFormatError(f"{name} ensemble lacks organs: {', '.join(missing)}")

    names = list(columns)
    frame = pd.DataFrame(
        {name: [columns[name][organ.label] for organ in OrganId] + [ensemble_mean(columns[name])] for name in names},
        index=pd.Index([organ.label for organ in OrganId] + ['mean'], name='organ'),
    )

    lines = ['| Organ | ' + ' | '.join(name.upper() for name in names) + ' |', '|---' * (len(names) + 1) + '|']
    for organ, values in frame.iterrows():
        label = 'Mean' if organ == 'mean' else organ.replace('_', ' ')
        lines.append(f"| {label} | " + ' | '.join(f"{values[name]:.{PRECISION}f}" for name in names) + ' |')

    buffer = io.StringIO()
    frame.to_csv(buffer)
    return '\n'.join(lines) + '\n', buffer.getvalue()


def parse_ensemble_csv(text):
    frame = pd.read_csv(io.StringIO(text), index_col='organ', float_precision='round_trip')
    return {name: frame[name].to_dict() for name in frame.columns}


# ========================================
# OVERLAYS
# ========================================
@dataclass(frozen=True)
class OverlaySpec:
    colors: dict = field(default_factory=lambda: {
        'overlap': (255, 255, 0),
        'false_positive': (0, 255, 0),
        'false_negative': (255, 0, 0),
    })
    opacity: float = 0.5

    def __post_init__(self):
        if not 0 < self.opacity <= 1:
            raise ConfigError(f"overlay opacity must lie in (0, 1], got {self.opacity}")
        if set(self.colors) != {'overlap', 'false_positive', 'false_negative'}:
            raise ConfigError("overlay colors must name overlap, false_positive and false_negative")
        if len({tuple(color) for color in self.colors.values()}) != 3:
            raise ConfigError("overlay colors must be distinct")


def overlay_classes(pred, gt):
    """Disjoint boolean masks whose union is pred | gt."""
    pred, gt = np.asarray(pred).astype(bool), np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise ShapeMismatchError(f"shape mismatch between prediction {pred.shape} and ground truth {gt.shape}")
    return {
        'overlap': pred & gt,
        'false_positive': pred & ~gt,
        'false_negative': ~pred & gt,
    }


def _grayscale(image):
    image = np.asarray(image, dtype=np.float64)
    lo, hi = float(image.min()), float(image.max())
    if 0.0 <= lo and hi <= 1.0:
        scaled = image
    elif hi > lo:
        scaled = (image - lo) / (hi - lo)
    else:
        scaled = np.zeros_like(image)
    return np.repeat((scaled * 255.0).round()[..., None], 3, axis=-1)


def overlay_array(image, pred, gt, spec=None):
    """RGB uint8 array: grayscale slice with the three error classes blended in."""
    spec = spec or OverlaySpec()
    if np.shape(image) != np.shape(pred):
        raise ShapeMismatchError(f"shape mismatch between image {np.shape(image)} and prediction {np.shape(pred)}")
    rgb = _grayscale(image)
    for name, mask in overlay_classes(pred, gt).items():
        color = np.asarray(spec.colors[name], dtype=np.float64)
        rgb[mask] = (1.0 - spec.opacity) * rgb[mask] + spec.opacity * color
    return rgb.round().clip(0, 255).astype(np.uint8)


def render_overlay(image, pred, gt, path, spec=None):
    """Write the overlay of one slice as a PNG and return its path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(overlay_array(image, pred, gt, spec)).save(path, format='PNG')
    logger.info("Wrote overlay %s", path)
    return path
