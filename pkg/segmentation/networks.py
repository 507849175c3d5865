import logging
from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .exceptions import ConfigError, NonFiniteError, ShapeMismatchError

logger = logging.getLogger(__name__)


# ========================================
# CONFIGURATION
# ========================================
@dataclass(frozen=True)
class GeneratorConfig:
    depth: int = 3
    base_channels: int = 8
    leaky_slope: float = 0.2
    in_channels: int = 1
    out_channels: int = 1
    zero_head: bool = False
    se_reduction: int = 2

    def __post_init__(self):
        if self.depth < 2:
            raise ConfigError(f"generator depth must be >= 2, got {self.depth}")
        if self.base_channels < 4:
            raise ConfigError(f"generator base_channels must be >= 4, got {self.base_channels}")
        if not 0 < self.leaky_slope < 1:
            raise ConfigError(f"leaky_slope must lie in (0, 1), got {self.leaky_slope}")
        if self.in_channels != 1 or self.out_channels != 1:
            raise ConfigError("the generator maps one CT channel to one logit channel")

    @property
    def divisor(self):
        return 2 ** (self.depth - 1)

    def as_dict(self):
        return asdict(self)


FULL_SCALE_GENERATOR = GeneratorConfig(depth=5, base_channels=64)
TEST_SCALE_GENERATOR = GeneratorConfig(depth=3, base_channels=8)
GENERATOR_SCALES = {'full': FULL_SCALE_GENERATOR, 'test': TEST_SCALE_GENERATOR}


class DiscriminatorKind(str, Enum):
    PRODUCT = 'product'
    EARLY_FUSION = 'early_fusion'
    LATE_FUSION = 'late_fusion'


@dataclass(frozen=True)
class DiscriminatorConfig:
    channels: tuple = (32, 64, 128, 256)
    leaky_slope: float = 0.2

    def __post_init__(self):
        if len(self.channels) != 4 or any(int(c) < 1 for c in self.channels):
            raise ConfigError(f"critic trunk needs four positive channel widths, got {self.channels}")
        object.__setattr__(self, 'channels', tuple(int(c) for c in self.channels))

    def as_dict(self):
        return {'channels': list(self.channels), 'leaky_slope': self.leaky_slope}


# Five model names of the command line -> (generator architecture, critic kind)
MODEL_NAMES = {
    'unet': ('unet_supervised', None),
    'se-resunet': ('se_resunet', None),
    'gan-prod': ('unet_supervised', DiscriminatorKind.PRODUCT),
    'gan-early': ('unet_supervised', DiscriminatorKind.EARLY_FUSION),
    'gan-late': ('unet_supervised', DiscriminatorKind.LATE_FUSION),
}


# ========================================
# BUILDING BLOCKS
# ========================================
def se_block(features, reduction, weights):
    """
    Squeeze-and-excitation gating of a (B, C, H, W) or (C, H, W) feature array.

    `weights` is (w1, b1, w2, b2): the bottleneck C -> C/reduction and the
    expansion back to C. Each channel is scaled by a gate in (0, 1).
    """
    squeeze = features.dim() == 3
    x = features.unsqueeze(0) if squeeze else features
    channels = x.shape[1]
    if reduction < 1 or channels % reduction:
        raise ShapeMismatchError(
            f"channels ({channels}) not divisible by the SE reduction ({reduction})"
        )

    w1, b1, w2, b2 = weights
    pooled = x.mean(dim=(2, 3))
    gate = torch.sigmoid(F.linear(F.relu(F.linear(pooled, w1, b1)), w2, b2))
    out = x * gate[:, :, None, None]
    return out.squeeze(0) if squeeze else out


class SEBlock(nn.Module):
    def __init__(self, channels, reduction=2, zero_init=False):
        super().__init__()
        if channels % reduction:
            raise ShapeMismatchError(
                f"channels ({channels}) not divisible by the SE reduction ({reduction})"
            )
        self.reduction = reduction
        self.squeeze = nn.Linear(channels, channels // reduction)
        self.excite = nn.Linear(channels // reduction, channels)
        if zero_init:
            for layer in (self.squeeze, self.excite):
                nn.init.zeros_(layer.weight)
                nn.init.zeros_(layer.bias)

    def forward(self, x):
        weights = (self.squeeze.weight, self.squeeze.bias, self.excite.weight, self.excite.bias)
        return se_block(x, self.reduction, weights)


class ConvPair(nn.Module):
    def __init__(self, in_channels, out_channels, slope):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(in_channels, out_channels, 3, padding=1),
            nn.LeakyReLU(slope),
            nn.Conv2d(out_channels, out_channels, 3, padding=1),
            nn.LeakyReLU(slope),
        )

    def forward(self, x):
        return self.body(x)


class ResidualSEBlock(nn.Module):
    """Residual conv pair followed by squeeze-and-excitation."""

    def __init__(self, in_channels, out_channels, slope, reduction=2):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        self.skip = (
            nn.Identity() if in_channels == out_channels
            else nn.Conv2d(in_channels, out_channels, 1)
        )
        self.act = nn.LeakyReLU(slope)
        self.se = SEBlock(out_channels, reduction)

    def forward(self, x):
        y = self.conv2(self.act(self.conv1(x)))
        return self.se(self.act(y + self.skip(x)))


# ========================================
# GENERATOR
# ========================================
class UNetGenerator(nn.Module):
    """
    2-D U-Net producing one logit map per input slice.

    `depth` levels: each encoder level is a conv pair followed by 2x max-pool
    (the deepest level is the bottleneck), the decoder mirrors it with
    transposed-conv upsampling and skip concatenation, and a final 1x1
    convolution produces the logit channel.
    """

    def __init__(self, config=TEST_SCALE_GENERATOR, block='conv'):
        super().__init__()
        self.config = config
        self.block = block
        self.architecture = 'se_resunet' if block == 'se_residual' else 'unet_supervised'

        def make_block(cin, cout):
            if block == 'se_residual':
                return ResidualSEBlock(cin, cout, config.leaky_slope, config.se_reduction)
            return ConvPair(cin, cout, config.leaky_slope)

        widths = [config.base_channels * 2 ** level for level in range(config.depth)]
        self.encoders = nn.ModuleList()
        cin = config.in_channels
        for width in widths:
            self.encoders.append(make_block(cin, width))
            cin = width
        self.pool = nn.MaxPool2d(2)

        self.upsamplers = nn.ModuleList()
        self.decoders = nn.ModuleList()
        for width in reversed(widths[:-1]):
            self.upsamplers.append(nn.ConvTranspose2d(width * 2, width, 2, stride=2))
            self.decoders.append(make_block(width * 2, width))

        self.head = nn.Conv2d(widths[0], config.out_channels, 1)
        if config.zero_head:
            nn.init.zeros_(self.head.weight)
            nn.init.zeros_(self.head.bias)

    def check_input(self, height, width):
        divisor = self.config.divisor
        if height % divisor or width % divisor:
            raise ShapeMismatchError(
                f"spatial dims not divisible by {divisor} (2^(depth-1)) for input {height}x{width}"
            )

    def forward(self, x):
        self.check_input(x.shape[-2], x.shape[-1])
        skips = []
        for level, encoder in enumerate(self.encoders):
            x = encoder(x)
            if level < len(self.encoders) - 1:
                skips.append(x)
                x = self.pool(x)
        for upsample, decoder in zip(self.upsamplers, self.decoders):
            x = decoder(torch.cat([upsample(x), skips.pop()], dim=1))
        return self.head(x)


def _seeded(seed, factory, dtype=torch.float32):
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(int(seed))
        module = factory()
    return module.to(dtype)


def build_generator(config=TEST_SCALE_GENERATOR, seed=0, input_shape=None, dtype=torch.float32):
    """U-Net generator with deterministic initialization for `seed`."""
    model = _seeded(seed, lambda: UNetGenerator(config), dtype)
    if input_shape is not None:
        model.check_input(*input_shape[-2:])
    return model


def build_baseline(name, seed=0, config=TEST_SCALE_GENERATOR, dtype=torch.float32):
    """Supervised baselines: the shared U-Net or the SE residual U-Net."""
    if name == 'unet_supervised':
        return build_generator(config, seed, dtype=dtype)
    if name == 'se_resunet':
        return _seeded(seed, lambda: UNetGenerator(config, block='se_residual'), dtype)
    raise ConfigError(
        f"baseline '{name}' is out of scope (available: unet_supervised, se_resunet)"
    )


def check_finite_parameters(model):
    for name, param in model.named_parameters():
        if not torch.isfinite(param).all():
            raise NonFiniteError(f"non-finite values in parameter '{name}'")


def generator_forward(model, image):
    """
    Logit map of one slice (H, W) or of a batch (B, 1, H, W).

    Returns a tensor with the same rank as the input; no gradient is tracked.
    """
    check_finite_parameters(model)
    dtype = next(model.parameters()).dtype
    x = torch.as_tensor(np.asarray(image) if not torch.is_tensor(image) else image, dtype=dtype)
    single = x.dim() == 2
    if single:
        x = x[None, None]
    with torch.no_grad():
        logits = model(x)
    return logits[0, 0] if single else logits


# ========================================
# DISCRIMINATORS
# ========================================
def critic_block(in_channels, out_channels, slope):
    return nn.Sequential(
        nn.Conv2d(in_channels, out_channels, 3, stride=2, padding=1),
        nn.LeakyReLU(slope),
    )


class ConvCritic(nn.Module):
    """Product (1 channel) and early-fusion (2 channel) critic: 4 strided blocks, pool, scalar."""

    def __init__(self, in_channels, config=DiscriminatorConfig()):
        super().__init__()
        widths = (in_channels,) + config.channels
        self.trunk = nn.Sequential(*[
            critic_block(widths[i], widths[i + 1], config.leaky_slope) for i in range(4)
        ])
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.score = nn.Linear(config.channels[-1], 1)

    def forward(self, x):
        return self.score(self.pool(self.trunk(x)).flatten(1)).squeeze(1)


class LateFusionCritic(nn.Module):
    """Two single-channel branches of three blocks, concatenated, one joint block, pooled scalar."""

    def __init__(self, config=DiscriminatorConfig()):
        super().__init__()
        widths = (1,) + config.channels[:3]
        slope = config.leaky_slope
        self.image_branch = nn.Sequential(*[critic_block(widths[i], widths[i + 1], slope) for i in range(3)])
        self.mask_branch = nn.Sequential(*[critic_block(widths[i], widths[i + 1], slope) for i in range(3)])
        self.joint = critic_block(2 * config.channels[2], config.channels[3], slope)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.score = nn.Linear(config.channels[3], 1)

    def forward(self, image, mask):
        merged = torch.cat([self.image_branch(image), self.mask_branch(mask)], dim=1)
        return self.score(self.pool(self.joint(merged)).flatten(1)).squeeze(1)


def build_discriminator(kind, seed=0, config=DiscriminatorConfig(), dtype=torch.float32):
    kind = DiscriminatorKind(kind)
    if kind is DiscriminatorKind.LATE_FUSION:
        factory = lambda: LateFusionCritic(config)  # noqa: E731
    else:
        channels = 1 if kind is DiscriminatorKind.PRODUCT else 2
        factory = lambda: ConvCritic(channels, config)  # noqa: E731
    critic = _seeded(seed, factory, dtype)
    critic.kind = kind
    critic.config = config
    return critic


def build_model(name, seed=0, generator_config=TEST_SCALE_GENERATOR,
                critic_config=DiscriminatorConfig(), dtype=torch.float32):
    """Resolve a command-line model name to (generator, critic or None)."""
    if name not in MODEL_NAMES:
        raise ConfigError(
            f"model '{name}' is out of scope (available: {', '.join(MODEL_NAMES)})"
        )
    architecture, kind = MODEL_NAMES[name]
    generator = build_baseline(architecture, seed, generator_config, dtype)
    critic = None if kind is None else build_discriminator(kind, seed + 1, critic_config, dtype)
    return generator, critic


def count_parameters(module):
    return sum(p.numel() for p in module.parameters())
