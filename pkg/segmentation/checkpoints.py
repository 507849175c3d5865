"""
Checkpoint directories: `manifest.json` plus one little-endian raw array per
named parameter. A GAN checkpoint keeps its critic under `critic/`.
"""
import json
import logging
import shutil
from pathlib import Path

import numpy as np
import torch

from .exceptions import CheckpointError
from .networks import (
    DiscriminatorConfig,
    GeneratorConfig,
    build_baseline,
    build_discriminator,
)

logger = logging.getLogger(__name__)

MANIFEST = 'manifest.json'
RAW_DTYPES = {torch.float32: '<f4', torch.float64: '<f8'}
TORCH_DTYPES = {'<f4': torch.float32, '<f8': torch.float64}


def _write_arrays(directory, module):
    entries = []
    for name, tensor in module.state_dict().items():
        raw_dtype = RAW_DTYPES.get(tensor.dtype)
        if raw_dtype is None:
            raise CheckpointError(f"cannot store parameter '{name}' of dtype {tensor.dtype}")
        filename = f'{name}.raw'
        np.ascontiguousarray(tensor.detach().cpu().numpy(), dtype=raw_dtype).tofile(directory / filename)
        entries.append({'name': name, 'shape': list(tensor.shape), 'dtype': raw_dtype, 'file': filename})
    return entries


def _read_arrays(directory, entries):
    state = {}
    for entry in entries:
        path = directory / entry['file']
        if not path.exists():
            raise CheckpointError(f"missing parameter file: {path}")
        values = np.fromfile(path, dtype=entry['dtype']).reshape(entry['shape'])
        state[entry['name']] = torch.from_numpy(values.copy())
    return state


def _write_manifest(directory, manifest):
    with open(directory / MANIFEST, 'w') as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def read_manifest(directory):
    path = Path(directory) / MANIFEST
    if not path.exists():
        raise CheckpointError(f"missing checkpoint: no {MANIFEST} in {directory}")
    with open(path) as fh:
        return json.load(fh)


def save_checkpoint(directory, generator, critic=None, **meta):
    """Write the generator (and critic) with `meta` (seed, epoch, scores, organ, ...) in the manifest."""
    directory = Path(directory)
    if directory.exists():
        shutil.rmtree(directory)
    directory.mkdir(parents=True)

    manifest = {
        'architecture': generator.architecture,
        'config': generator.config.as_dict(),
        'parameters': _write_arrays(directory, generator),
        **meta,
    }
    if critic is not None:
        critic_dir = directory / 'critic'
        critic_dir.mkdir()
        _write_manifest(critic_dir, {
            'architecture': critic.kind.value,
            'config': critic.config.as_dict(),
            'parameters': _write_arrays(critic_dir, critic),
            'seed': meta.get('seed', 0) + 1,
        })
        manifest['critic'] = critic.kind.value
    _write_manifest(directory, manifest)
    logger.debug("Saved checkpoint %s (epoch %s)", directory, meta.get('epoch'))
    return directory


def _restore(module, state, directory):
    try:
        module.load_state_dict(state, strict=True)
    except RuntimeError as exc:
        raise CheckpointError(f"checkpoint {directory} does not match its architecture: {exc}") from exc
    return module


def load_checkpoint(directory, with_critic=False):
    """Rebuild the generator (and optionally the critic) from a checkpoint directory."""
    directory = Path(directory)
    manifest = read_manifest(directory)
    entries = manifest['parameters']
    dtype = TORCH_DTYPES[entries[0]['dtype']] if entries else torch.float32

    generator = build_baseline(
        manifest['architecture'], manifest.get('seed', 0), GeneratorConfig(**manifest['config']), dtype
    )
    _restore(generator, _read_arrays(directory, entries), directory)
    generator.eval()

    critic = None
    if with_critic and manifest.get('critic'):
        critic_dir = directory / 'critic'
        critic_manifest = read_manifest(critic_dir)
        critic = build_discriminator(
            critic_manifest['architecture'],
            critic_manifest.get('seed', 0),
            DiscriminatorConfig(**critic_manifest['config']),
            dtype,
        )
        _restore(critic, _read_arrays(critic_dir, critic_manifest['parameters']), critic_dir)
    return generator, manifest, critic
