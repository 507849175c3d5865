import json
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import replace
from pathlib import Path

from django.conf import settings
from rest_framework import serializers

from .data_io import OrganId
from .exceptions import ConfigError
from .networks import GENERATOR_SCALES, MODEL_NAMES, DiscriminatorConfig, DiscriminatorKind
from .trainer import DTYPES, TrainConfig

ORGAN_CHOICES = [organ.label for organ in OrganId]


# ========================================
# NETWORK SERIALIZERS
# ========================================
class GeneratorConfigSerializer(serializers.Serializer):
    depth = serializers.IntegerField(required=False, min_value=2)
    base_channels = serializers.IntegerField(required=False, min_value=4)
    leaky_slope = serializers.FloatField(default=0.2, min_value=0.0, max_value=1.0)
    zero_head = serializers.BooleanField(default=False)
    se_reduction = serializers.IntegerField(default=2, min_value=1)


class DiscriminatorConfigSerializer(serializers.Serializer):
    channels = serializers.ListField(
        child=serializers.IntegerField(min_value=1), min_length=4, max_length=4,
        default=[32, 64, 128, 256],
    )
    leaky_slope = serializers.FloatField(default=0.2, min_value=0.0, max_value=1.0)


# ========================================
# TRAINING SERIALIZERS
# ========================================
class TrainConfigSerializer(serializers.Serializer):
    lr0 = serializers.FloatField(default=1e-5, min_value=0.0)
    beta1 = serializers.FloatField(default=0.5, min_value=0.0, max_value=1.0)
    beta2 = serializers.FloatField(default=0.999, min_value=0.0, max_value=1.0)
    weight_decay = serializers.FloatField(default=5e-4, min_value=0.0)
    batch_size = serializers.IntegerField(default=8, min_value=1)
    lr_factor = serializers.FloatField(default=0.2, min_value=0.0, max_value=1.0)
    lr_patience = serializers.IntegerField(default=10, min_value=1)
    stop_patience = serializers.IntegerField(default=14, min_value=1)
    improvement_threshold = serializers.FloatField(default=1e-4, min_value=0.0)
    max_epochs = serializers.IntegerField(default=500, min_value=1)
    seed = serializers.IntegerField(required=False, min_value=0)
    mode = serializers.ChoiceField(choices=['supervised', 'adversarial'], default='supervised')
    discriminator = serializers.ChoiceField(
        choices=[kind.value for kind in DiscriminatorKind], required=False, allow_null=True,
    )
    critic_steps = serializers.IntegerField(default=1, min_value=0)
    critic_gap = serializers.ChoiceField(choices=['absolute', 'signed'], default='absolute')
    adversarial_weight = serializers.FloatField(default=1.0, min_value=0.0)
    clip_value = serializers.FloatField(required=False, allow_null=True, min_value=0.0)
    dtype = serializers.ChoiceField(choices=list(DTYPES), required=False)
    hu_window = serializers.ListField(
        child=serializers.FloatField(), min_length=2, max_length=2, required=False,
    )
    roi_only = serializers.BooleanField(required=False)
    progress = serializers.BooleanField(default=False)
    scale = serializers.ChoiceField(choices=list(GENERATOR_SCALES), default='test')
    generator = GeneratorConfigSerializer(required=False)
    critic = DiscriminatorConfigSerializer(required=False)

    def validate_hu_window(self, value):
        if value[0] >= value[1]:
            raise serializers.ValidationError("HU window must satisfy lo < hi.")
        return value

    def validate(self, data):
        if data.get('mode') == 'adversarial' and not data.get('discriminator'):
            raise serializers.ValidationError("Adversarial mode requires a discriminator kind.")
        return data


class ExperimentPlanSerializer(serializers.Serializer):
    name = serializers.CharField(default='experiment', allow_blank=False)
    data = serializers.CharField()
    out = serializers.CharField()
    organs = serializers.ListField(child=serializers.ChoiceField(choices=ORGAN_CHOICES), allow_empty=False)
    models = serializers.ListField(child=serializers.ChoiceField(choices=list(MODEL_NAMES)), allow_empty=False)
    ensemble = serializers.BooleanField(default=False)
    formats = serializers.ListField(
        child=serializers.ChoiceField(choices=['csv', 'md']), allow_empty=False, default=['csv', 'md'],
    )
    seed = serializers.IntegerField(required=False, min_value=0)
    max_workers = serializers.IntegerField(required=False, min_value=1)
    record = serializers.BooleanField(default=True)
    train = TrainConfigSerializer(required=False)

    def validate_data(self, value):
        if not Path(value).is_dir():
            raise serializers.ValidationError(f"Dataset directory '{value}' does not exist.")
        return value

    def validate_out(self, value):
        # nearest existing ancestor must be writable
        path = Path(value).absolute()
        while not path.exists():
            path = path.parent
        if not os.access(path, os.W_OK):
            raise serializers.ValidationError(f"Output directory '{value}' is not writable.")
        return value

    def validate(self, data):
        if len(set(data['organs'])) != len(data['organs']) or len(set(data['models'])) != len(data['models']):
            raise serializers.ValidationError("Organs and models must not repeat.")
        return data


class EnsembleManifestSerializer(serializers.Serializer):
    members = serializers.DictField(child=serializers.CharField(), allow_empty=False)

    def validate_members(self, value):
        unknown = sorted(set(value) - set(ORGAN_CHOICES))
        if unknown:
            raise serializers.ValidationError(f"Unknown organ names: {', '.join(unknown)}.")
        return value


# ========================================
# LOADERS
# ========================================
def _validated(serializer_class, data, what):
    serializer = serializer_class(data=data)
    if not serializer.is_valid():
        raise ConfigError(f"invalid {what}: {serializer.errors}", serializer.errors)
    return serializer.validated_data


def read_toml(path):
    try:
        with open(path, 'rb') as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid TOML: {exc}") from exc


def train_config_from_data(data, **overrides):
    """Validated TrainConfig from a mapping; `overrides` win over `data`, harness settings fill the rest."""
    values = dict(_validated(TrainConfigSerializer, data or {}, 'training config'))
    harness = settings.OARSEG
    values.setdefault('seed', harness['DEFAULT_SEED'])
    values.setdefault('dtype', harness['CHECKPOINT_DTYPE'])
    values.setdefault('hu_window', harness['HU_WINDOW'])
    values.setdefault('roi_only', harness['ROI_ONLY'])
    values['hu_window'] = tuple(values['hu_window'])
    values['loader_workers'] = harness['LOADER_WORKERS']
    values['generator'] = replace(GENERATOR_SCALES[values.pop('scale')], **values.get('generator', {}))
    values['critic'] = DiscriminatorConfig(**values.get('critic', {}))
    values.update({key: value for key, value in overrides.items() if value is not None})
    return TrainConfig(**values)


def load_train_config(path=None, **overrides):
    """TrainConfig from the `[train]` table of `path`, or from its top level when there is no such table."""
    data = read_toml(path) if path else {}
    if isinstance(data.get('train'), dict):
        data = data['train']
    unknown = sorted(set(data) - set(TrainConfigSerializer().fields))
    if unknown:
        raise ConfigError(f"unknown training config keys in {path}: {', '.join(unknown)}", {'unknown': unknown})
    return train_config_from_data(data, **overrides)


def plan_from_data(data):
    from .experiments import ExperimentPlan

    values = _validated(ExperimentPlanSerializer, data, 'experiment plan')
    seed = values.get('seed')
    return ExperimentPlan(
        name=values['name'],
        data_dir=Path(values['data']),
        out_dir=Path(values['out']),
        organs=tuple(OrganId.from_name(name) for name in values['organs']),
        models=tuple(values['models']),
        train=train_config_from_data(data.get('train', {}), seed=seed),
        ensemble=values['ensemble'],
        formats=tuple(values['formats']),
        max_workers=values.get('max_workers', settings.OARSEG['MAX_WORKERS']),
        record=values['record'],
    )


def load_plan(path):
    return plan_from_data(read_toml(path))


def load_ensemble_manifest(path):
    """{OrganId: checkpoint directory} from a JSON manifest mapping organ names to checkpoints."""
    try:
        with open(path) as fh:
            members = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"ensemble manifest {path} does not exist") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"ensemble manifest {path} is not valid JSON: {exc}") from exc
    values = _validated(EnsembleManifestSerializer, {'members': members}, 'ensemble manifest')
    base = Path(path).parent
    return {OrganId.from_name(name): base / checkpoint for name, checkpoint in values['members'].items()}
