import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from scipy.special import expit

from .data_io import OrganId
from .exceptions import EnsembleError, NonFiniteError, ShapeMismatchError
from .metrics import dsc_volume, predict_volume

logger = logging.getLogger(__name__)

N_ORGANS = len(OrganId)


@dataclass(frozen=True)
class EnsembleCandidate:
    organ: OrganId
    model_name: str
    checkpoint: Path
    val_dsc: float
    test_dsc: float = None

    @property
    def paradigm(self):
        return paradigm_of(self.model_name)


@dataclass
class EnsembleReport:
    paradigm: str
    per_organ: dict = field(default_factory=dict)
    n_patients: int = 0

    @property
    def mean(self):
        return float(np.mean([self.per_organ[organ.label] for organ in OrganId]))


def paradigm_of(model_name):
    return 'gan' if str(model_name).startswith('gan') else 'cnn'


def _organ_keyed(members):
    keyed = {}
    for key, value in members.items():
        organ = OrganId.from_name(key) if isinstance(key, str) and not key.isdigit() else OrganId(int(key))
        keyed[organ] = value
    missing = [organ.label for organ in OrganId if organ not in keyed]
    if missing:
        raise EnsembleError(f"missing organ model for: {', '.join(missing)}")
    return keyed


def _load_members(members):
    from .checkpoints import load_checkpoint

    loaded = {}
    for organ, model in _organ_keyed(members).items():
        if not isinstance(model, torch.nn.Module):
            model, _, _ = load_checkpoint(model)
        loaded[organ] = model.eval()
    return loaded


# ========================================
# FUSION
# ========================================
def stack_logits(models, slice_image):
    """
    Pre-activation logit maps of the six organ models on one normalized slice.

    Channel k holds the logits of organ code k + 1 regardless of the order
    in which `models` lists them.
    """
    from .networks import generator_forward

    models = _load_members(models)
    channels = []
    for organ in OrganId:
        logits = generator_forward(models[organ], slice_image).cpu().numpy()
        if channels and logits.shape != channels[0].shape:
            raise ShapeMismatchError(
                f"shape mismatch: {organ.label} model produced {logits.shape}, expected {channels[0].shape}"
            )
        channels.append(logits)
    return np.stack(channels)


def fuse_argmax(stack):
    """
    Multi-class codes from a (6, ...) logit stack.

    Each pixel takes the organ with the largest logit (lowest code on ties),
    or background (0) when the sigmoid of that logit is below 0.5.
    """
    stack = np.asarray(stack, dtype=np.float64)
    if stack.shape[0] != N_ORGANS:
        raise ShapeMismatchError(f"logit stack must have {N_ORGANS} channels, got {stack.shape[0]}")
    if not np.isfinite(stack).all():
        raise NonFiniteError("non-finite values in logit stack")

    winner = np.argmax(stack, axis=0)
    top = np.take_along_axis(stack, winner[None], axis=0)[0]
    return np.where(expit(top) >= 0.5, winner + 1, 0).astype(np.uint8)


def fuse_volume(models, ct, window=(-1000.0, 1000.0)):
    """Fused (slices, H, W) code volume of one patient."""
    models = _load_members(models)
    stack = np.stack([predict_volume(models[organ], ct, window) for organ in OrganId])
    return fuse_argmax(stack)


# ========================================
# MEMBER SELECTION
# ========================================
def _selection_score(candidate):
    # a diverged run (NaN or missing DSC) never beats a scored one
    if candidate.val_dsc is None or math.isnan(candidate.val_dsc):
        return -math.inf
    return candidate.val_dsc


def select_ensemble_members(candidates):
    """
    Best candidate per organ and paradigm by validation DSC.

    Returns {paradigm: {OrganId: EnsembleCandidate}}; test scores are never read.
    """
    grouped = {}
    for candidate in sorted(candidates, key=lambda c: (c.paradigm, int(c.organ), c.model_name)):
        best = grouped.setdefault(candidate.paradigm, {})
        current = best.get(OrganId(int(candidate.organ)))
        if current is None or _selection_score(candidate) > _selection_score(current):
            best[OrganId(int(candidate.organ))] = candidate

    if not grouped:
        raise EnsembleError("missing organ coverage: no ensemble candidates")
    for paradigm, chosen in grouped.items():
        missing = [organ.label for organ in OrganId if organ not in chosen]
        if missing:
            raise EnsembleError(f"missing organ coverage for the {paradigm} ensemble: {', '.join(missing)}")
    return grouped


# ========================================
# EVALUATION
# ========================================
def evaluate_ensemble(members, patients, window=(-1000.0, 1000.0), paradigm='ensemble'):
    """
    Per-organ DSC of the fused segmentation, computed volume-wise per patient
    and averaged over patients; `mean` is the unweighted mean over organs.
    """
    models = _load_members(members)
    scores = {organ: [] for organ in OrganId}
    n_patients = 0
    for ct, labels in patients:
        fused = fuse_volume(models, ct, window)
        for organ in OrganId:
            scores[organ].append(dsc_volume(fused == int(organ), labels.indicator(organ)))
        n_patients += 1
    if not n_patients:
        raise EnsembleError("no test patients for ensemble evaluation")

    report = EnsembleReport(
        paradigm=paradigm,
        per_organ={organ.label: float(np.mean(scores[organ])) for organ in OrganId},
        n_patients=n_patients,
    )
    logger.info("%s ensemble: mean DSC %.4f over %d patients", paradigm, report.mean, n_patients)
    return report
