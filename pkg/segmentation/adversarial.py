import logging
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .exceptions import ConfigError, ShapeMismatchError
from .networks import DiscriminatorKind

logger = logging.getLogger(__name__)

BCE_EPS = 1e-7

LAYOUTS = {
    DiscriminatorKind.PRODUCT: 'single_channel_product',
    DiscriminatorKind.EARLY_FUSION: 'two_channel',
    DiscriminatorKind.LATE_FUSION: 'two_branch',
}


@dataclass(frozen=True)
class EncodedPair:
    """Critic inputs built from G(x) (fake) and GT(x) (real); each side is a tuple of planes."""
    fake_input: tuple
    real_input: tuple
    layout: str


@dataclass(frozen=True)
class LossBreakdown:
    total: torch.Tensor
    bce: torch.Tensor
    adversarial: torch.Tensor
    d_objective: torch.Tensor

    def as_floats(self):
        return {
            'total': self.total.item(),
            'bce': self.bce.item(),
            'adversarial': self.adversarial.item(),
            'd_objective': self.d_objective.item(),
        }


def _check_shapes(image, other, what='logits'):
    if tuple(image.shape) != tuple(other.shape):
        raise ShapeMismatchError(
            f"shape mismatch between image {tuple(image.shape)} and {what} {tuple(other.shape)}"
        )


def _two_channel(image, mask):
    # (H, W) -> (2, H, W); (1, H, W) -> (2, H, W); (B, 1, H, W) -> (B, 2, H, W)
    if image.dim() == 2:
        return torch.stack([image, mask])
    if image.dim() == 3:
        return torch.cat([image, mask], dim=0)
    if image.dim() == 4:
        return torch.cat([image, mask], dim=1)
    raise ShapeMismatchError(f"cannot fuse inputs of rank {image.dim()} into two channels")


# ========================================
# INPUT ENCODINGS
# ========================================
def encode_product(image, logits):
    """tanh(G(x)) * x, pixel by pixel; the mask factor lies in (-1, 1)."""
    _check_shapes(image, logits)
    return torch.tanh(logits) * image


def encode_early_fusion(image, logits):
    """Channel 0 is the slice, channel 1 is sigmoid(G(x))."""
    _check_shapes(image, logits)
    return _two_channel(image, torch.sigmoid(logits))


def encode_late_fusion(image, logits):
    """Branch A is the slice, branch B is sigmoid(G(x)); nothing is mixed here."""
    _check_shapes(image, logits)
    return image, torch.sigmoid(logits)


def encode_pair(kind, image, logits, gt):
    """Fake and real critic inputs for `kind`; the real side uses GT(x) in place of the activated logits."""
    kind = DiscriminatorKind(kind)
    _check_shapes(image, gt, 'ground truth')
    gt = gt.to(image.dtype)

    if kind is DiscriminatorKind.PRODUCT:
        fake, real = (encode_product(image, logits),), (gt * image,)
    elif kind is DiscriminatorKind.EARLY_FUSION:
        fake, real = (encode_early_fusion(image, logits),), (_two_channel(image, gt),)
    else:
        fake, real = encode_late_fusion(image, logits), (image, gt)
    return EncodedPair(fake_input=fake, real_input=real, layout=LAYOUTS[kind])


# ========================================
# OBJECTIVES
# ========================================
def _scores(values, name):
    scores = values if torch.is_tensor(values) else torch.as_tensor(values, dtype=torch.float64)
    if scores.numel() == 0:
        raise ShapeMismatchError(f"{name} critic scores are empty (one batch expected)")
    return scores.reshape(-1)


def critic_gap(fake_scores, real_scores):
    """Signed gap mean(D(real)) - mean(D(fake))."""
    fake = _scores(fake_scores, 'fake')
    real = _scores(real_scores, 'real')
    if fake.numel() != real.numel():
        raise ShapeMismatchError(
            f"fake and real score batches differ in size ({fake.numel()} vs {real.numel()})"
        )
    return real.mean() - fake.mean()


def critic_objective(fake_scores, real_scores):
    """|E[D(fake)] - E[D(real)]| with the expectation taken as the batch mean."""
    return critic_gap(fake_scores, real_scores).abs()


def critic_loss(fake_scores, real_scores, gap='absolute'):
    """Quantity the critic minimizes: the negated absolute or signed gap."""
    if gap == 'absolute':
        return -critic_objective(fake_scores, real_scores)
    if gap == 'signed':
        return -critic_gap(fake_scores, real_scores)
    raise ConfigError(f"unknown critic gap '{gap}' (expected absolute or signed)")


def bce_loss(prob, gt, eps=BCE_EPS):
    """Mean binary cross-entropy of probabilities clamped to [eps, 1 - eps]."""
    _check_shapes(prob, gt, 'ground truth')
    return F.binary_cross_entropy(prob.clamp(eps, 1.0 - eps), gt.to(prob.dtype))


def composite_generator_loss(image, logits, gt, kind=None, discriminator=None, weight=1.0):
    """
    Generator loss: BCE[G(x), GT(x)] minus the adversarial term.

    adversarial = weight * (mean D(fake) - mean D(real)) so the generator
    descends bce + weight * (mean D(real) - mean D(fake)). Without a critic
    (or with weight 0) the loss is the plain BCE.
    """
    bce = bce_loss(torch.sigmoid(logits), gt)
    if discriminator is None or kind is None:
        zero = torch.zeros((), dtype=bce.dtype)
        return LossBreakdown(total=bce, bce=bce, adversarial=zero, d_objective=zero)

    pair = encode_pair(kind, image, logits, gt)
    fake_scores = discriminator(*pair.fake_input)
    real_scores = discriminator(*pair.real_input)
    adversarial = -weight * critic_gap(fake_scores, real_scores)
    return LossBreakdown(
        total=bce - adversarial,
        bce=bce,
        adversarial=adversarial,
        d_objective=critic_objective(fake_scores.detach(), real_scores.detach()),
    )


def clip_critic_weights(critic, clip_value):
    """Clamp every critic parameter to [-clip_value, clip_value] in place."""
    with torch.no_grad():
        for param in critic.parameters():
            param.clamp_(-clip_value, clip_value)
