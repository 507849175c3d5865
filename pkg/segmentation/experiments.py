"""
Experiment grid: every (organ, model) cell is trained, scored on the test
split and reported; ensembles are assembled from the finished cells.

Cells fail independently. A failing cell is logged and recorded, and the
rest of the grid continues.
"""
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import pandas as pd
from joblib import Parallel, delayed

from .data_io import OrganId, load_dataset, split_dataset
from .ensemble import (
    EnsembleCandidate,
    evaluate_ensemble,
    select_ensemble_members,
)
from .metrics import evaluate_model
from .networks import MODEL_NAMES, build_model
from .reports import render_ensemble_table, write_report
from .trainer import TrainConfig, fit, prepare_data

logger = logging.getLogger(__name__)


# ========================================
# TYPES
# ========================================
@dataclass(frozen=True)
class ExperimentPlan:
    data_dir: Path
    out_dir: Path
    organs: tuple
    models: tuple
    train: TrainConfig = TrainConfig()
    name: str = 'experiment'
    ensemble: bool = False
    formats: tuple = ('csv', 'md')
    max_workers: int = 1
    record: bool = True

    def as_dict(self):
        return {
            'name': self.name,
            'data': str(self.data_dir),
            'out': str(self.out_dir),
            'organs': [OrganId(int(o)).label for o in self.organs],
            'models': list(self.models),
            'ensemble': self.ensemble,
            'formats': list(self.formats),
            'max_workers': self.max_workers,
            'train': self.train.as_dict(),
        }


@dataclass
class CellResult:
    organ: str
    model_name: str
    status: str = 'completed'
    error: str = ''
    best_epoch: int = None
    epochs_run: int = None
    val_loss: float = None
    val_dsc: float = None
    checkpoint: str = ''
    row: object = None

    @property
    def failed(self):
        return self.status == 'failed'


@dataclass
class ExperimentResult:
    plan: ExperimentPlan
    cells: list = field(default_factory=list)
    ensembles: dict = field(default_factory=dict)
    ensemble_error: str = ''
    run_id: int = None

    @property
    def failed_cells(self):
        return [cell for cell in self.cells if cell.failed]

    @property
    def ok(self):
        return not self.failed_cells and not self.ensemble_error


# ========================================
# CELLS
# ========================================
def cell_config(config, model_name):
    """Per-cell TrainConfig: GAN model names switch on adversarial mode with their critic kind."""
    _, kind = MODEL_NAMES[model_name]
    if kind is None:
        return replace(config, mode='supervised', discriminator=None)
    return replace(config, mode='adversarial', discriminator=kind)


def cell_dir(out_dir, organ, model_name):
    return Path(out_dir) / OrganId(int(organ)).label / model_name


def run_cell(plan, organ, model_name, volumes, split):
    organ = OrganId(int(organ))
    result = CellResult(organ=organ.label, model_name=model_name)
    directory = cell_dir(plan.out_dir, organ, model_name)
    try:
        config = cell_config(plan.train, model_name)
        generator, critic = build_model(
            model_name, config.seed, config.generator, config.critic, config.torch_dtype
        )
        data = prepare_data(volumes, split, organ, config)
        best, state = fit(generator, data, config, organ, critic, directory, model_name)

        test = [volumes[pid] for pid in split.test_ids]
        row, per_patient = evaluate_model(generator, test, organ, model_name, config.hu_window)
        write_report(directory, [row])
        pd.DataFrame([asdict(p) for p in per_patient]).to_csv(directory / 'patients.csv', index=False)

        result.best_epoch = best.epoch
        result.epochs_run = state.epoch
        result.val_loss = best.val_loss
        result.val_dsc = best.val_dsc
        result.checkpoint = str(best.path)
        result.row = row
    except Exception as exc:
        logger.exception("Cell %s / %s failed", organ.label, model_name)
        result.status = 'failed'
        result.error = f"{type(exc).__name__}: {exc}"
    return result


# ========================================
# ENSEMBLES
# ========================================
def run_ensembles(plan, cells, test_patients):
    candidates = [
        EnsembleCandidate(
            organ=OrganId.from_name(cell.organ),
            model_name=cell.model_name,
            checkpoint=Path(cell.checkpoint),
            val_dsc=cell.val_dsc,
        )
        for cell in cells if not cell.failed
    ]
    reports = {}
    for paradigm, members in select_ensemble_members(candidates).items():
        logger.info(
            "%s ensemble members: %s", paradigm,
            ', '.join(f"{organ.label}={c.model_name}" for organ, c in sorted(members.items())),
        )
        reports[paradigm] = evaluate_ensemble(
            {organ: c.checkpoint for organ, c in members.items()},
            test_patients, plan.train.hu_window, paradigm,
        )
    return reports


# ========================================
# EXPERIMENT
# ========================================
def run_experiment(plan, record=None):
    """
    Train and evaluate every (organ, model) cell of `plan`, then the ensembles.

    Artifacts under `plan.out_dir`: split.json, plan.json, one directory per
    cell (checkpoint/, history.csv, report.csv, patients.csv), the combined
    report and, with `plan.ensemble`, the ensemble table.
    """
    out_dir = Path(plan.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    volumes = load_dataset(plan.data_dir)
    split = split_dataset(volumes, plan.train.seed)
    with open(out_dir / 'split.json', 'w') as fh:
        json.dump(split.as_dict(), fh, indent=2)
    with open(out_dir / 'plan.json', 'w') as fh:
        json.dump(plan.as_dict(), fh, indent=2, sort_keys=True)
    logger.info(
        "Experiment '%s': %d organs x %d models, split %d/%d/%d",
        plan.name, len(plan.organs), len(plan.models),
        len(split.train_ids), len(split.val_ids), len(split.test_ids),
    )

    grid = [(OrganId(int(organ)), model) for organ in plan.organs for model in plan.models]
    cells = Parallel(n_jobs=min(plan.max_workers, len(grid)))(
        delayed(run_cell)(plan, organ, model, volumes, split) for organ, model in grid
    )
    result = ExperimentResult(plan=plan, cells=list(cells))

    rows = [cell.row for cell in result.cells if not cell.failed]
    if rows:
        write_report(out_dir, rows, formats=plan.formats)

    if plan.ensemble:
        try:
            result.ensembles = run_ensembles(plan, result.cells, [volumes[pid] for pid in split.test_ids])
            markdown, csv_text = render_ensemble_table(result.ensembles)
            if 'md' in plan.formats:
                (out_dir / 'ensemble.md').write_text(markdown)
            if 'csv' in plan.formats:
                (out_dir / 'ensemble.csv').write_text(csv_text)
        except Exception as exc:
            logger.exception("Ensemble evaluation failed")
            result.ensemble_error = f"{type(exc).__name__}: {exc}"

    for cell in result.failed_cells:
        logger.error("Failed cell %s / %s: %s", cell.organ, cell.model_name, cell.error)

    if plan.record if record is None else record:
        result.run_id = record_run(result)
    return result


def _finite(value):
    return value if value is not None and math.isfinite(value) else None


def record_run(result):
    """Store the run and its cells in the database; returns the ExperimentRun id."""
    from django.utils import timezone

    from .models import ExperimentCell, ExperimentRun

    plan = result.plan
    if result.ok:
        status = 'completed'
    elif len(result.failed_cells) == len(result.cells):
        status = 'failed'
    else:
        status = 'partial'
    run = ExperimentRun.objects.create(
        name=plan.name,
        out_dir=str(plan.out_dir),
        data_dir=str(plan.data_dir),
        seed=plan.train.seed,
        status=status,
        plan=plan.as_dict(),
        ensemble={name: report.per_organ for name, report in result.ensembles.items()} or None,
        finished_at=timezone.now(),
    )
    ExperimentCell.objects.bulk_create([
        ExperimentCell(
            run=run,
            organ=cell.organ,
            model_name=cell.model_name,
            status=cell.status,
            error=cell.error,
            best_epoch=cell.best_epoch,
            epochs_run=cell.epochs_run,
            val_loss=_finite(cell.val_loss),
            val_dsc=_finite(cell.val_dsc),
            checkpoint=cell.checkpoint,
            metrics=cell.row.as_dict() if cell.row is not None else None,
        )
        for cell in result.cells
    ])
    return run.id


def load_split_patients(data_dir, which='test', seed=0):
    """(ct, labels) pairs of one split (train, val, test) or of every patient (all)."""
    volumes = load_dataset(data_dir)
    if which == 'all':
        return list(volumes.values())
    ids = split_dataset(volumes, seed).as_dict()[which]
    return [volumes[pid] for pid in ids]
