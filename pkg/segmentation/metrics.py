import logging
from dataclasses import asdict, dataclass, fields

import numpy as np
import torch
from joblib import Parallel, delayed
from scipy import ndimage
from scipy.spatial import cKDTree

from .data_io import OrganId, normalize_slice
from .exceptions import ShapeMismatchError, VolumeFormatError
from .networks import generator_forward

logger = logging.getLogger(__name__)

FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


# ========================================
# TYPES
# ========================================
@dataclass(frozen=True, eq=False)
class BinaryMaskVolume:
    patient_id: str
    masks: np.ndarray

    def __post_init__(self):
        values = np.unique(self.masks)
        if not np.isin(values, (0, 1)).all():
            raise VolumeFormatError(f"{self.patient_id}: mask volume is not binary")


@dataclass
class PatientMetrics:
    patient_id: str
    dsc: float
    hd95: float = None
    n_undefined_slices: int = 0
    n_one_sided_slices: int = 0


@dataclass
class MetricRow:
    """One model on one organ: per-patient DSC / HD95 aggregated as mean, min, max."""
    target: str
    model: str
    dsc_mean: float
    dsc_min: float
    dsc_max: float
    hd95_mean: float = None
    hd95_min: float = None
    hd95_max: float = None
    n_patients: int = 0
    n_undefined_slices: int = 0

    def as_dict(self):
        return asdict(self)


CSV_COLUMNS = [f.name for f in fields(MetricRow)]


@dataclass
class PatientHD95:
    value: float = None
    n_undefined: int = 0
    n_one_sided: int = 0


def _masks(volume):
    return np.asarray(getattr(volume, 'masks', volume)).astype(bool)


def _check(pred, gt):
    if pred.shape != gt.shape:
        raise ShapeMismatchError(f"shape mismatch between prediction {pred.shape} and ground truth {gt.shape}")


# ========================================
# OVERLAP
# ========================================
def dsc_volume(pred, gt):
    """Dice over every voxel of the patient volume; 1.0 when both masks are empty."""
    p, g = _masks(pred), _masks(gt)
    _check(p, g)
    total = np.count_nonzero(p) + np.count_nonzero(g)
    if total == 0:
        return 1.0
    return 2.0 * np.count_nonzero(p & g) / total


# ========================================
# SURFACE DISTANCE
# ========================================
def surface_coordinates(mask):
    """(N, 2) array of foreground pixels with a 4-neighbor outside the mask or on the array border."""
    m = np.asarray(mask).astype(bool)
    interior = ndimage.binary_erosion(m, structure=FOUR_CONNECTED, border_value=0)
    return np.argwhere(m & ~interior)


def surface_pixels(mask):
    return {tuple(int(c) for c in coord) for coord in surface_coordinates(mask)}


def hd95_slice(pred, gt, spacing=(1.0, 1.0)):
    """
    95th percentile of the pooled bidirectional boundary distances of one slice.

    Returns None when either mask is empty (the distance is undefined).
    """
    p, g = np.asarray(pred).astype(bool), np.asarray(gt).astype(bool)
    _check(p, g)
    if not p.any() or not g.any():
        return None

    scale = np.asarray(spacing, dtype=np.float64)
    pred_edge = surface_coordinates(p) * scale
    gt_edge = surface_coordinates(g) * scale
    to_gt, _ = cKDTree(gt_edge).query(pred_edge)
    to_pred, _ = cKDTree(pred_edge).query(gt_edge)
    return float(np.percentile(np.concatenate([to_gt, to_pred]), 95))


def hd95_patient_detail(pred, gt, spacing=(1.0, 1.0)):
    p, g = _masks(pred), _masks(gt)
    _check(p, g)

    result = PatientHD95()
    values = []
    for k in range(p.shape[0]):
        value = hd95_slice(p[k], g[k], spacing)
        if value is None:
            result.n_undefined += 1
            if p[k].any() != g[k].any():
                result.n_one_sided += 1
        else:
            values.append(value)
    result.value = float(np.mean(values)) if values else None
    return result


def hd95_patient(pred, gt, spacing=(1.0, 1.0)):
    """Mean of the defined per-slice HD95 values; None when no slice is defined."""
    return hd95_patient_detail(pred, gt, spacing).value


# ========================================
# AGGREGATION
# ========================================
def _spread(values):
    if not values:
        return None, None, None
    return float(np.mean(values)), float(min(values)), float(max(values))


def aggregate_rows(target, model, patients):
    """MetricRow over per-patient results; HD95 statistics use patients with a defined value."""
    patients = sorted(patients, key=lambda p: p.patient_id)
    dsc = _spread([p.dsc for p in patients])
    hd95 = _spread([p.hd95 for p in patients if p.hd95 is not None])
    return MetricRow(
        target=target,
        model=model,
        dsc_mean=dsc[0], dsc_min=dsc[1], dsc_max=dsc[2],
        hd95_mean=hd95[0], hd95_min=hd95[1], hd95_max=hd95[2],
        n_patients=len(patients),
        n_undefined_slices=sum(p.n_undefined_slices for p in patients),
    )


def score_patient(patient_id, pred, gt, spacing=(1.0, 1.0)):
    detail = hd95_patient_detail(pred, gt, spacing)
    return PatientMetrics(
        patient_id=patient_id,
        dsc=dsc_volume(pred, gt),
        hd95=detail.value,
        n_undefined_slices=detail.n_undefined,
        n_one_sided_slices=detail.n_one_sided,
    )


def evaluate_masks(target, model, volumes, spacing=(1.0, 1.0), n_jobs=1):
    """
    Score (patient_id, pred, gt) mask volumes and aggregate them into a MetricRow.

    A volume may carry its own in-plane spacing as a fourth element; `spacing`
    applies to those that do not.

    Patients are scored in parallel when `n_jobs` > 1; the result does not
    depend on processing order.
    """
    jobs = []
    for pid, pred, gt, *own in volumes:
        jobs.append(delayed(score_patient)(pid, pred, gt, own[0] if own else spacing))
    scored = Parallel(n_jobs=n_jobs, prefer='threads')(jobs)
    for patient in scored:
        if patient.n_one_sided_slices:
            logger.debug("%s: %d one-sided empty slices", patient.patient_id, patient.n_one_sided_slices)
    return aggregate_rows(target, model, scored), scored


# ========================================
# MODEL EVALUATION
# ========================================
def predict_volume(model, ct, window=(-1000.0, 1000.0), batch_size=8):
    """Logit map of every axial slice of `ct`, as a (slices, H, W) float array."""
    images = np.stack([normalize_slice(ct.voxels[k], window) for k in range(ct.shape[0])])[:, None]
    chunks = []
    for start in range(0, len(images), batch_size):
        chunks.append(generator_forward(model, images[start:start + batch_size]).cpu().numpy()[:, 0])
    return np.concatenate(chunks)


def threshold_logits(logits):
    """Binary mask where sigmoid(logits) >= 0.5."""
    return (torch.sigmoid(torch.as_tensor(logits)) >= 0.5).numpy().astype(np.uint8)


def evaluate_model(model, patients, organ, model_name='model', window=(-1000.0, 1000.0),
                   spacing=None, n_jobs=1):
    """
    Report row for `model` on test patients.

    `model` is a generator module or a checkpoint directory; `patients` is an
    iterable of (CtVolume, LabelVolume). HD95 uses each patient's own in-plane
    spacing unless `spacing` is given ((1, 1) for pixel units).
    """
    if not isinstance(model, torch.nn.Module):
        from .checkpoints import load_checkpoint

        model, _, _ = load_checkpoint(model)
    model.eval()
    organ = OrganId(int(organ))

    volumes = []
    for ct, labels in patients:
        pred = threshold_logits(predict_volume(model, ct, window))
        own = tuple(ct.spacing[1:]) if spacing is None else tuple(spacing)
        volumes.append((ct.patient_id, pred, labels.indicator(organ), own))
    if not volumes:
        raise VolumeFormatError("no test patients to evaluate")

    row, per_patient = evaluate_masks(organ.label, model_name, volumes, n_jobs=n_jobs)
    logger.info(
        "%s / %s: DSC %.4f, HD95 %s over %d patients",
        organ.label, model_name, row.dsc_mean,
        'undefined' if row.hd95_mean is None else f'{row.hd95_mean:.4f}', row.n_patients,
    )
    return row, per_patient
