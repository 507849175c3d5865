import shutil
import tempfile
from pathlib import Path

import numpy as np
import torch
from torch import nn

from segmentation.data_io import OrganId, SliceDataset, SliceSample, load_dataset, synthesize_phantom

# HU bands separating the phantom intensities (organ HU +-15 jitter, noise sigma 10)
ORACLE_BANDS = {
    OrganId.TRACHEA: (-np.inf, -910.0),
    OrganId.RIGHT_LUNG: (-910.0, -740.0),
    OrganId.LEFT_LUNG: (-740.0, -460.0),
    OrganId.ESOPHAGUS: (-460.0, -100.0),
    OrganId.HEART: (150.0, 490.0),
    OrganId.SPINAL_CORD: (490.0, np.inf),
}


class BandOracle(nn.Module):
    """Logit +10 where the windowed intensity falls in an organ's HU band, -10 elsewhere."""

    def __init__(self, organ, window=(-1000.0, 1000.0)):
        super().__init__()
        lo_hu, hi_hu = ORACLE_BANDS[OrganId(int(organ))]
        span = window[1] - window[0]
        self.lo = (lo_hu - window[0]) / span
        self.hi = (hi_hu - window[0]) / span
        self.anchor = nn.Parameter(torch.zeros(1, dtype=torch.float64))

    def forward(self, x):
        inside = (x > self.lo) & (x < self.hi)
        return torch.where(inside, 10.0, -10.0).to(x.dtype) + 0.0 * self.anchor


class TempDirMixin:
    def make_tempdir(self):
        path = Path(tempfile.mkdtemp(prefix='oarseg-test-'))
        self.addCleanup(shutil.rmtree, path, ignore_errors=True)
        return path


def phantom_dataset(directory, n_patients=5, shape=(4, 16, 16), seed=0):
    synthesize_phantom(directory, seed=seed, n_patients=n_patients, shape=shape)
    return load_dataset(directory)


def random_slices(n=6, size=16, seed=0, dtype=torch.float64):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[:size, :size]
    samples = []
    for k in range(n):
        cy, cx = rng.uniform(4, size - 4, 2)
        mask = ((yy - cy) ** 2 + (xx - cx) ** 2 <= 9).astype(np.uint8)
        image = np.clip(0.3 + 0.4 * mask + rng.normal(0, 0.05, (size, size)), 0, 1)
        samples.append(SliceSample(image=image, mask=mask, patient_id=f'p{k}', slice_index=k))
    return SliceDataset(samples, dtype)
