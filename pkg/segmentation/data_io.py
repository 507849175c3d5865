import json
import logging
import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import nibabel as nib
import numpy as np
import torch
from torch.utils.data import Dataset

from .exceptions import (
    InvalidOrganCodeError,
    PhantomError,
    ShapeMismatchError,
    VolumeFormatError,
)

logger = logging.getLogger(__name__)

HU_MIN = -2048
HU_MAX = 4095
RAW_DTYPE = '<i2'
RAW_DTYPE_NAME = 'int16-le'
MIN_PHANTOM_SIDE = 16


# ========================================
# DOMAIN TYPES
# ========================================
class OrganId(IntEnum):
    RIGHT_LUNG = 1
    LEFT_LUNG = 2
    HEART = 3
    TRACHEA = 4
    SPINAL_CORD = 5
    ESOPHAGUS = 6

    @property
    def label(self):
        return self.name.lower()

    @classmethod
    def from_name(cls, name):
        key = str(name).strip().lower().replace('-', '_')
        for organ in cls:
            if organ.label == key:
                return organ
        raise InvalidOrganCodeError(f"unknown organ name '{name}'")

    @classmethod
    def from_code(cls, code):
        try:
            return cls(int(code))
        except ValueError:
            raise InvalidOrganCodeError(f"invalid organ code {code}") from None


@dataclass(frozen=True, eq=False)
class CtVolume:
    patient_id: str
    voxels: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.voxels.ndim != 3 or self.voxels.shape[0] < 1:
            raise VolumeFormatError(
                f"{self.patient_id}: expected a (slices, height, width) volume, got {self.voxels.shape}"
            )
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise VolumeFormatError(f"{self.patient_id}: spacing must be three positive values")
        if self.voxels.size and (self.voxels.min() < HU_MIN or self.voxels.max() > HU_MAX):
            raise VolumeFormatError(
                f"{self.patient_id}: HU values outside [{HU_MIN}, {HU_MAX}]"
            )

    @property
    def shape(self):
        return self.voxels.shape


@dataclass(frozen=True, eq=False)
class LabelVolume:
    patient_id: str
    labels: np.ndarray

    def __post_init__(self):
        _check_codes(self.patient_id, self.labels)

    @property
    def shape(self):
        return self.labels.shape

    def indicator(self, organ):
        return (self.labels == int(organ)).astype(np.uint8)


@dataclass(frozen=True, eq=False)
class SliceSample:
    image: np.ndarray
    mask: np.ndarray
    patient_id: str
    slice_index: int


@dataclass(frozen=True)
class DatasetSplit:
    train_ids: tuple
    val_ids: tuple
    test_ids: tuple

    def as_dict(self):
        return {'train': list(self.train_ids), 'val': list(self.val_ids), 'test': list(self.test_ids)}


# ========================================
# LOADING
# ========================================
def _check_pair(ct, labels):
    if ct.shape != labels.shape:
        raise ShapeMismatchError(
            f"{ct.patient_id}: shape mismatch between image {ct.shape} and labels {labels.shape}"
        )


def _check_codes(patient_id, codes):
    for code in np.unique(codes):
        if code == 0:
            continue
        try:
            OrganId.from_code(int(code))
        except InvalidOrganCodeError as exc:
            raise InvalidOrganCodeError(f"{patient_id}: {exc} in label volume") from None


def _nifti_label_path(image_path):
    name = image_path.name
    for suffix in ('_image.nii.gz', '_image.nii'):
        if name.endswith(suffix):
            patient_id = name[: -len(suffix)]
            return patient_id, image_path.with_name(patient_id + suffix.replace('_image', '_label'))
    raise VolumeFormatError(f"not a NIfTI image file: {image_path}")


def _load_raw(directory):
    meta_path = directory / 'meta.json'
    with open(meta_path) as fh:
        meta = json.load(fh)

    if meta.get('dtype') != RAW_DTYPE_NAME:
        raise VolumeFormatError(f"{directory}: unsupported raw dtype {meta.get('dtype')!r}")
    shape = tuple(int(s) for s in meta['shape'])
    spacing = tuple(float(s) for s in meta['spacing'])
    patient_id = meta.get('patient_id', directory.name)

    arrays = {}
    for name in ('image', 'label'):
        path = directory / f'{name}.raw'
        if not path.exists():
            raise VolumeFormatError(f"missing file: {path}")
        arrays[name] = np.fromfile(path, dtype=RAW_DTYPE)

    expected = math.prod(shape)
    if arrays['image'].size != expected:
        raise VolumeFormatError(
            f"{directory}: image.raw holds {arrays['image'].size} voxels, meta.json says {shape}"
        )
    if arrays['label'].size != expected:
        raise ShapeMismatchError(
            f"{directory}: shape mismatch, label.raw holds {arrays['label'].size} voxels "
            f"but the image is {shape}"
        )

    codes = arrays['label'].reshape(shape)
    _check_codes(patient_id, codes)
    ct = CtVolume(patient_id, arrays['image'].reshape(shape).astype(np.int16), spacing)
    labels = LabelVolume(patient_id, codes.astype(np.uint8))
    return ct, labels


def _load_nifti(image_path):
    patient_id, label_path = _nifti_label_path(image_path)
    if not label_path.exists():
        raise VolumeFormatError(f"missing file: {label_path}")

    image = nib.load(str(image_path))
    label = nib.load(str(label_path))
    # NIfTI stores (x, y, z); volumes here are slice-major (z, y, x).
    voxels = np.rint(np.asanyarray(image.dataobj, dtype=np.float64)).transpose(2, 1, 0)
    codes = np.rint(np.asanyarray(label.dataobj, dtype=np.float64)).transpose(2, 1, 0)
    if voxels.shape != codes.shape:
        raise ShapeMismatchError(
            f"{patient_id}: shape mismatch between image {voxels.shape} and labels {codes.shape}"
        )
    _check_codes(patient_id, codes)
    # int16 would wrap out-of-range HU silently
    if voxels.size and (voxels.min() < HU_MIN or voxels.max() > HU_MAX):
        raise VolumeFormatError(f"{patient_id}: HU values outside [{HU_MIN}, {HU_MAX}]")

    dx, dy, dz = (float(z) for z in image.header.get_zooms()[:3])
    ct = CtVolume(patient_id, voxels.astype(np.int16), (dz, dy, dx))
    labels = LabelVolume(patient_id, codes.astype(np.uint8))
    return ct, labels


def load_volume(path):
    """
    Load one patient as a (CtVolume, LabelVolume) pair.

    `path` is either a raw-format patient directory (meta.json, image.raw,
    label.raw) or the `<id>_image.nii(.gz)` file of a NIfTI pair.
    """
    path = Path(path)
    if path.is_dir():
        if not (path / 'meta.json').exists():
            raise VolumeFormatError(f"missing file: {path / 'meta.json'}")
        ct, labels = _load_raw(path)
    elif path.exists():
        ct, labels = _load_nifti(path)
    else:
        raise VolumeFormatError(f"missing file: {path}")

    _check_pair(ct, labels)
    return ct, labels


def discover_patients(data_dir):
    """Map patient id -> loadable path for every patient under `data_dir`."""
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise VolumeFormatError(f"missing data directory: {data_dir}")

    found = {}
    for entry in sorted(data_dir.iterdir()):
        if entry.is_dir() and (entry / 'meta.json').exists():
            with open(entry / 'meta.json') as fh:
                found[json.load(fh).get('patient_id', entry.name)] = entry
        elif entry.name.endswith(('_image.nii', '_image.nii.gz')):
            patient_id, _ = _nifti_label_path(entry)
            found[patient_id] = entry
    return dict(sorted(found.items()))


def load_dataset(data_dir, patient_ids=None):
    """Load every patient (or the listed ones) as {patient_id: (ct, labels)}."""
    paths = discover_patients(data_dir)
    wanted = list(paths) if patient_ids is None else list(patient_ids)
    missing = [pid for pid in wanted if pid not in paths]
    if missing:
        raise VolumeFormatError(f"patients not found under {data_dir}: {', '.join(missing)}")
    return {pid: load_volume(paths[pid]) for pid in wanted}


def write_volume(out_dir, ct, labels, fmt='raw'):
    """Write a patient in the raw fallback format or as a NIfTI-1 pair."""
    _check_pair(ct, labels)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if fmt == 'raw':
        patient_dir = out_dir / ct.patient_id
        patient_dir.mkdir(parents=True, exist_ok=True)
        meta = {
            'dtype': RAW_DTYPE_NAME,
            'patient_id': ct.patient_id,
            'shape': list(ct.shape),
            'spacing': list(ct.spacing),
        }
        with open(patient_dir / 'meta.json', 'w') as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
        np.ascontiguousarray(ct.voxels, dtype=RAW_DTYPE).tofile(patient_dir / 'image.raw')
        np.ascontiguousarray(labels.labels, dtype=RAW_DTYPE).tofile(patient_dir / 'label.raw')
        return patient_dir

    if fmt == 'nifti':
        dz, dy, dx = ct.spacing
        affine = np.diag([dx, dy, dz, 1.0])
        image = nib.Nifti1Image(ct.voxels.transpose(2, 1, 0).astype(np.int16), affine)
        label = nib.Nifti1Image(labels.labels.transpose(2, 1, 0).astype(np.int16), affine)
        image_path = out_dir / f'{ct.patient_id}_image.nii.gz'
        nib.save(image, str(image_path))
        nib.save(label, str(out_dir / f'{ct.patient_id}_label.nii.gz'))
        return image_path

    raise VolumeFormatError(f"unknown volume format '{fmt}' (expected raw or nifti)")


# ========================================
# PREPROCESSING
# ========================================
def normalize_slice(hu_slice, window=(-1000.0, 1000.0)):
    """Map HU values through a fixed window onto [0, 1]."""
    lo, hi = (float(w) for w in window)
    if lo >= hi:
        raise VolumeFormatError(f"invalid HU window ({lo}, {hi}): lower bound must be below upper")
    values = np.asarray(hu_slice, dtype=np.float64)
    return np.clip((values - lo) / (hi - lo), 0.0, 1.0)


def split_dataset(patient_ids, seed=0):
    """Split patients 80/10/10 into train/val/test, deterministically for a seed."""
    ids = sorted(str(pid) for pid in patient_ids)
    if len(set(ids)) != len(ids):
        raise VolumeFormatError("duplicate patient ids in split request")
    if len(ids) < 3:
        raise VolumeFormatError(f"need at least 3 patients to split, got {len(ids)}")

    n = len(ids)
    n_val = max(1, math.floor(0.1 * n + 0.5))
    n_test = max(1, math.floor(0.1 * n + 0.5))
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [ids[i] for i in order]

    return DatasetSplit(
        train_ids=tuple(shuffled[: n - n_val - n_test]),
        val_ids=tuple(shuffled[n - n_val - n_test: n - n_test]),
        test_ids=tuple(shuffled[n - n_test:]),
    )


def extract_slices(volume, labels, organ, window=(-1000.0, 1000.0), roi_only=False):
    """One SliceSample per axial slice with the binary mask of `organ`."""
    _check_pair(volume, labels)
    organ = OrganId(int(organ))
    indicator = labels.indicator(organ)

    samples = []
    for k in range(volume.shape[0]):
        mask = indicator[k]
        if roi_only and not mask.any():
            continue
        samples.append(SliceSample(
            image=normalize_slice(volume.voxels[k], window),
            mask=mask,
            patient_id=volume.patient_id,
            slice_index=k,
        ))
    return samples


def class_pixel_distribution(label_volumes):
    """Fraction of all voxels per organ, plus the background fraction."""
    label_volumes = list(label_volumes)
    if not label_volumes:
        raise VolumeFormatError("class pixel distribution needs at least one label volume")

    counts = np.zeros(len(OrganId) + 1, dtype=np.int64)
    for volume in label_volumes:
        counts += np.bincount(volume.labels.ravel(), minlength=len(OrganId) + 1)[: len(OrganId) + 1]

    total = counts.sum()
    fractions = {'background': counts[0] / total}
    for organ in OrganId:
        fractions[organ.label] = counts[int(organ)] / total
    return fractions


def render_pixel_distribution(fractions, path):
    """Pie chart of the class pixel distribution."""
    import matplotlib

    matplotlib.use('Agg')
    import matplotlib.pyplot as plt

    names = [name for name, value in fractions.items() if value > 0]
    values = [fractions[name] for name in names]
    fig, ax = plt.subplots(figsize=(6, 6))
    ax.pie(values, labels=[n.replace('_', ' ') for n in names], autopct='%1.2f%%', startangle=90)
    ax.set_title('Pixel distribution')
    fig.savefig(path, dpi=120, bbox_inches='tight')
    plt.close(fig)
    return Path(path)


class SliceDataset(Dataset):
    """Torch view over SliceSamples: items are (image[1,H,W], mask[1,H,W])."""

    def __init__(self, samples, dtype=torch.float32):
        if not samples:
            raise VolumeFormatError("slice dataset is empty")
        self.samples = list(samples)
        self.images = torch.as_tensor(np.stack([s.image for s in self.samples])[:, None], dtype=dtype)
        self.masks = torch.as_tensor(np.stack([s.mask for s in self.samples])[:, None], dtype=dtype)

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, index):
        return self.images[index], self.masks[index]


# ========================================
# PHANTOM SYNTHESIS
# ========================================
@dataclass(frozen=True)
class Ellipsoid:
    center: tuple
    radii: tuple

    def rasterize(self, shape):
        z, y, x = np.ogrid[: shape[0], : shape[1], : shape[2]]
        cz, cy, cx = self.center
        rz, ry, rx = self.radii
        return ((z - cz) / rz) ** 2 + ((y - cy) / ry) ** 2 + ((x - cx) / rx) ** 2 <= 1.0


@dataclass(frozen=True)
class Tube:
    center: tuple
    radius: float

    def rasterize(self, shape):
        _, y, x = np.ogrid[: shape[0], : shape[1], : shape[2]]
        cy, cx = self.center
        inside = ((y - cy) / self.radius) ** 2 + ((x - cx) / self.radius) ** 2 <= 1.0
        return np.broadcast_to(inside, shape)


@dataclass
class PhantomAnatomy:
    patient_id: str
    shape: tuple
    structures: dict = field(default_factory=dict)
    intensities: dict = field(default_factory=dict)


BACKGROUND_HU = 40
ORGAN_HU = {
    OrganId.RIGHT_LUNG: -820,
    OrganId.LEFT_LUNG: -660,
    OrganId.TRACHEA: -1000,
    OrganId.SPINAL_CORD: 700,
    OrganId.ESOPHAGUS: -260,
    OrganId.HEART: 280,
}
# Later entries overwrite earlier ones; the heart stays a whole ellipsoid.
PAINT_ORDER = (
    OrganId.RIGHT_LUNG,
    OrganId.LEFT_LUNG,
    OrganId.TRACHEA,
    OrganId.SPINAL_CORD,
    OrganId.ESOPHAGUS,
    OrganId.HEART,
)


def _phantom_anatomy(rng, patient_id, shape):
    s, h, w = shape
    cz = (s - 1) / 2.0

    def jitter(value, spread=0.02):
        return value + rng.uniform(-spread, spread)

    def scale(value):
        return value * rng.uniform(0.9, 1.1)

    tube_radius = max(0.045 * min(h, w), 1.0)
    structures = {
        OrganId.RIGHT_LUNG: Ellipsoid(
            (cz, jitter(0.5) * h, jitter(0.22) * w), (0.6 * s + 0.5, scale(0.3) * h, scale(0.12) * w)
        ),
        OrganId.LEFT_LUNG: Ellipsoid(
            (cz, jitter(0.5) * h, jitter(0.78) * w), (0.6 * s + 0.5, scale(0.3) * h, scale(0.12) * w)
        ),
        OrganId.TRACHEA: Tube((jitter(0.2) * h, jitter(0.5) * w), scale(tube_radius)),
        OrganId.SPINAL_CORD: Tube((jitter(0.8) * h, jitter(0.5) * w), scale(tube_radius)),
        OrganId.ESOPHAGUS: Tube((jitter(0.66) * h, jitter(0.5) * w), scale(tube_radius)),
        OrganId.HEART: Ellipsoid(
            (cz, jitter(0.45) * h, jitter(0.5) * w), (0.35 * s + 0.5, scale(0.12) * h, scale(0.1) * w)
        ),
    }
    intensities = {organ: ORGAN_HU[organ] + int(rng.integers(-15, 16)) for organ in PAINT_ORDER}
    return PhantomAnatomy(patient_id, tuple(shape), structures, intensities)


def make_phantom_patient(rng, patient_id, shape):
    """Rasterize one phantom patient; returns (CtVolume, LabelVolume, PhantomAnatomy)."""
    anatomy = _phantom_anatomy(rng, patient_id, shape)

    codes = np.zeros(shape, dtype=np.uint8)
    for organ in PAINT_ORDER:
        codes[anatomy.structures[organ].rasterize(shape)] = int(organ)

    missing = [organ.label for organ in OrganId if not (codes == int(organ)).any()]
    if missing:
        raise PhantomError(f"shape too small to place all six structures ({', '.join(missing)} missing)")

    hu = np.full(shape, BACKGROUND_HU, dtype=np.float64)
    for organ in OrganId:
        hu[codes == int(organ)] = anatomy.intensities[organ]
    hu += rng.normal(0.0, 10.0, size=shape)
    voxels = np.clip(np.rint(hu), HU_MIN, HU_MAX).astype(np.int16)

    return CtVolume(patient_id, voxels, (2.5, 1.0, 1.0)), LabelVolume(patient_id, codes), anatomy


def synthesize_phantom(out_dir, seed=0, n_patients=3, shape=(8, 64, 64), fmt='raw'):
    """Write `n_patients` deterministic thoracic phantoms under `out_dir`."""
    shape = tuple(int(s) for s in shape)
    if n_patients < 3:
        raise PhantomError(f"need at least 3 phantom patients, got {n_patients}")
    if len(shape) != 3 or shape[0] < 1 or min(shape[1:]) < MIN_PHANTOM_SIDE:
        raise PhantomError(
            f"shape too small: in-plane size must be at least {MIN_PHANTOM_SIDE}, got {shape}"
        )

    paths = []
    for index, child in enumerate(np.random.SeedSequence(seed).spawn(n_patients)):
        rng = np.random.default_rng(child)
        ct, labels, _ = make_phantom_patient(rng, f'phantom_{index:03d}', shape)
        paths.append(write_volume(out_dir, ct, labels, fmt=fmt))
    logger.info("Wrote %d phantom patients %s to %s", n_patients, shape, out_dir)
    return paths
