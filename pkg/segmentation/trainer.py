import copy
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import pandas as pd
import torch
from torch.utils.data import DataLoader
from tqdm import tqdm

from .adversarial import (
    clip_critic_weights,
    composite_generator_loss,
    critic_loss,
    encode_pair,
)
from .checkpoints import save_checkpoint
from .data_io import OrganId, SliceDataset, extract_slices
from .exceptions import ConfigError, NonFiniteError
from .metrics import dsc_volume, predict_volume, threshold_logits
from .networks import DiscriminatorConfig, DiscriminatorKind, GeneratorConfig, TEST_SCALE_GENERATOR

logger = logging.getLogger(__name__)

DTYPES = {'float32': torch.float32, 'float64': torch.float64}


# ========================================
# CONFIGURATION AND STATE
# ========================================
@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 1e-5
    beta1: float = 0.5
    beta2: float = 0.999
    weight_decay: float = 5e-4
    batch_size: int = 8
    lr_factor: float = 0.2
    lr_patience: int = 10
    stop_patience: int = 14
    improvement_threshold: float = 1e-4
    max_epochs: int = 500
    seed: int = 0
    mode: str = 'supervised'
    discriminator: DiscriminatorKind = None
    critic_steps: int = 1
    critic_gap: str = 'absolute'
    adversarial_weight: float = 1.0
    clip_value: float = None
    dtype: str = 'float32'
    hu_window: tuple = (-1000.0, 1000.0)
    roi_only: bool = False
    loader_workers: int = 0
    progress: bool = False
    generator: GeneratorConfig = TEST_SCALE_GENERATOR
    critic: DiscriminatorConfig = DiscriminatorConfig()

    def __post_init__(self):
        if not 0 < self.lr_factor < 1:
            raise ConfigError(f"lr_factor must lie in (0, 1), got {self.lr_factor}")
        if self.stop_patience <= 0 or self.lr_patience <= 0:
            raise ConfigError("patience values must be positive")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size and max_epochs must be positive")
        if self.mode not in ('supervised', 'adversarial'):
            raise ConfigError(f"unknown training mode '{self.mode}'")
        if self.mode == 'adversarial' and self.discriminator is None:
            raise ConfigError("adversarial mode requires a discriminator kind")
        if self.discriminator is not None:
            object.__setattr__(self, 'discriminator', DiscriminatorKind(self.discriminator))
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype must be one of {', '.join(DTYPES)}")
        if self.critic_gap not in ('absolute', 'signed'):
            raise ConfigError(f"critic_gap must be absolute or signed, got '{self.critic_gap}'")

    @property
    def torch_dtype(self):
        return DTYPES[self.dtype]

    def as_dict(self):
        data = asdict(self)
        data['discriminator'] = self.discriminator.value if self.discriminator else None
        data['hu_window'] = list(self.hu_window)
        data['critic'] = self.critic.as_dict()
        return data


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_bce: float
    train_adv: float = 0.0
    d_objective: float = 0.0
    val_loss: float = math.nan
    val_dsc: float = math.nan


HISTORY_COLUMNS = [f.name for f in fields(EpochRecord)]


@dataclass
class RunState:
    epoch: int = 0
    current_lr: float = 0.0
    best_val_loss: float = math.inf
    best_val_dsc: float = math.nan
    best_epoch: int = 0
    epochs_since_improvement: int = 0
    lr_drops: int = 0
    stopped_early: bool = False
    history: list = field(default_factory=list)


@dataclass
class TrainingData:
    train: SliceDataset
    val: SliceDataset
    val_volumes: list


@dataclass
class BestCheckpoint:
    epoch: int
    val_loss: float
    val_dsc: float
    generator_state: dict
    critic_state: dict = None
    path: Path = None


# ========================================
# OPTIMIZATION
# ========================================
def make_optimizer(params, config, lr=None):
    return torch.optim.Adam(
        params,
        lr=config.lr0 if lr is None else lr,
        betas=(config.beta1, config.beta2),
        weight_decay=config.weight_decay,
    )


def check_finite_gradients(params, where):
    for index, param in enumerate(params):
        if param.grad is not None and not torch.isfinite(param.grad).all():
            raise NonFiniteError(f"non-finite gradient in {where} (parameter #{index})")


def adam_step(params, grads, moment_state, config, lr=None):
    """
    One Adam update of `params` with `grads`.

    Weight decay enters as an L2 term in the gradient. `moment_state` is the
    state dict returned by the previous call (None on the first step); the
    new state dict is returned with the updated parameters.
    """
    params = list(params)
    grads = list(grads)
    for index, grad in enumerate(grads):
        if not torch.isfinite(grad).all():
            raise NonFiniteError(f"non-finite gradient for parameter #{index}")

    optimizer = make_optimizer(params, config, lr)
    if moment_state is not None:
        optimizer.load_state_dict(moment_state)
        for group in optimizer.param_groups:
            group['lr'] = config.lr0 if lr is None else lr
    for param, grad in zip(params, grads):
        param.grad = grad.detach().clone()
    optimizer.step()
    return params, optimizer.state_dict()


class PlateauSchedule:
    """
    Plateau learning-rate decay and early stopping on the validation loss.

    An epoch improves when its loss beats the best by more than the relative
    threshold. The lr is multiplied by `factor` once `lr_patience` epochs in a
    row fail to improve; training stops once `stop_patience` epochs fail.
    """

    def __init__(self, lr0, factor=0.2, lr_patience=10, stop_patience=14, threshold=1e-4):
        self.lr0 = lr0
        self.factor = factor
        self.lr_patience = lr_patience
        self.stop_patience = stop_patience
        self.threshold = threshold
        self.best = math.inf
        self.epochs_since_improvement = 0
        self._lr_wait = 0
        self.drops = 0

    @property
    def lr(self):
        return self.lr0 * self.factor ** self.drops

    def is_improvement(self, loss):
        if not math.isfinite(loss):
            return False
        if not math.isfinite(self.best):
            return True
        return loss < self.best - abs(self.best) * self.threshold

    def step(self, loss):
        """Record one epoch; returns (improved, lr_dropped, should_stop)."""
        improved = self.is_improvement(loss)
        if improved:
            self.best = loss
            self.epochs_since_improvement = 0
            self._lr_wait = 0
        else:
            self.epochs_since_improvement += 1
            self._lr_wait += 1

        dropped = self._lr_wait >= self.lr_patience
        if dropped:
            self.drops += 1
            self._lr_wait = 0
        return improved, dropped, self.epochs_since_improvement >= self.stop_patience

    @classmethod
    def from_config(cls, config):
        return cls(config.lr0, config.lr_factor, config.lr_patience, config.stop_patience,
                   config.improvement_threshold)


# ========================================
# DATA
# ========================================
def prepare_data(volumes, split, organ, config):
    """Slice datasets for the train/val patients of `split`; `volumes` maps id -> (ct, labels)."""
    organ = OrganId(int(organ))

    def slices(ids, roi_only):
        samples = []
        for pid in ids:
            ct, labels = volumes[pid]
            samples.extend(extract_slices(ct, labels, organ, config.hu_window, roi_only))
        return SliceDataset(samples, config.torch_dtype)

    return TrainingData(
        train=slices(split.train_ids, config.roi_only),
        val=slices(split.val_ids, False),
        val_volumes=[volumes[pid] for pid in split.val_ids],
    )


def make_loader(dataset, config, epoch):
    """Deterministically shuffled batches: the order depends only on (seed, epoch)."""
    seed = int(np.random.SeedSequence([config.seed, epoch]).generate_state(1)[0])
    generator = torch.Generator().manual_seed(seed)
    extra = {'prefetch_factor': 2} if config.loader_workers > 0 else {}
    return DataLoader(
        dataset,
        batch_size=config.batch_size,
        shuffle=True,
        generator=generator,
        num_workers=config.loader_workers,
        **extra,
    )


# ========================================
# EPOCHS
# ========================================
def train_epoch_supervised(model, data, config, optimizer, epoch=1):
    """One pass over `data` minimizing BCE; returns the mean train BCE as an EpochRecord."""
    if len(data) == 0:
        raise ConfigError("training split is empty")
    model.train()
    params = list(model.parameters())
    total, count = 0.0, 0

    for batch, (images, masks) in enumerate(make_loader(data, config, epoch)):
        optimizer.zero_grad()
        loss = composite_generator_loss(images, model(images), masks).total
        if not torch.isfinite(loss):
            raise NonFiniteError(f"non-finite BCE at epoch {epoch}, batch {batch}")
        loss.backward()
        check_finite_gradients(params, f"generator at epoch {epoch}, batch {batch}")
        optimizer.step()
        total += loss.item() * len(images)
        count += len(images)

    return EpochRecord(epoch=epoch, lr=optimizer.param_groups[0]['lr'], train_bce=total / count)


def train_epoch_adversarial(generator, critic, data, config, g_optimizer, d_optimizer, epoch=1):
    """
    One adversarial pass: per batch, `critic_steps` critic updates on detached
    generator output, then one generator update on the composite loss.
    """
    if len(data) == 0:
        raise ConfigError("training split is empty")
    kind = config.discriminator
    generator.train()
    critic.train()
    g_params = list(generator.parameters())
    d_params = list(critic.parameters())
    sums = {'bce': 0.0, 'adversarial': 0.0, 'd_objective': 0.0}
    count = 0

    for batch, (images, masks) in enumerate(make_loader(data, config, epoch)):
        for _ in range(config.critic_steps):
            with torch.no_grad():
                logits = generator(images)
            pair = encode_pair(kind, images, logits, masks)
            d_optimizer.zero_grad()
            d_loss = critic_loss(critic(*pair.fake_input), critic(*pair.real_input), config.critic_gap)
            if not torch.isfinite(d_loss):
                raise NonFiniteError(f"non-finite critic objective at epoch {epoch}, batch {batch}")
            d_loss.backward()
            check_finite_gradients(d_params, f"critic at epoch {epoch}, batch {batch}")
            d_optimizer.step()
            if config.clip_value is not None:
                clip_critic_weights(critic, config.clip_value)

        critic.requires_grad_(False)
        try:
            g_optimizer.zero_grad()
            losses = composite_generator_loss(
                images, generator(images), masks, kind, critic, config.adversarial_weight
            )
            if not torch.isfinite(losses.total):
                raise NonFiniteError(
                    f"non-finite generator loss at epoch {epoch}, batch {batch}: {losses.as_floats()}"
                )
            losses.total.backward()
            check_finite_gradients(g_params, f"generator at epoch {epoch}, batch {batch}")
            g_optimizer.step()
        finally:
            critic.requires_grad_(True)

        n = len(images)
        for key, value in losses.as_floats().items():
            if key in sums:
                sums[key] += value * n
        count += n

    return EpochRecord(
        epoch=epoch,
        lr=g_optimizer.param_groups[0]['lr'],
        train_bce=sums['bce'] / count,
        train_adv=sums['adversarial'] / count,
        d_objective=sums['d_objective'] / count,
    )


def validate(model, data, organ, config):
    """(validation BCE over all val pixels, mean volume DSC over val patients) for TrainingData."""
    model.eval()
    val = data.val
    total, count = 0.0, 0
    with torch.no_grad():
        for start in range(0, len(val), config.batch_size):
            images = val.images[start:start + config.batch_size]
            masks = val.masks[start:start + config.batch_size]
            loss = composite_generator_loss(images, model(images), masks).bce
            total += loss.item() * len(images)
            count += len(images)

    organ = OrganId(int(organ))
    scores = [
        dsc_volume(threshold_logits(predict_volume(model, ct, config.hu_window, config.batch_size)),
                   labels.indicator(organ))
        for ct, labels in data.val_volumes
    ]
    return total / count, float(np.mean(scores)) if scores else math.nan


def write_history(path, history):
    frame = pd.DataFrame([asdict(record) for record in history], columns=HISTORY_COLUMNS)
    frame.to_csv(path, index=False)
    return Path(path)


# ========================================
# FIT
# ========================================
def fit(generator, data, config, organ, critic=None, out_dir=None, model_name=None):
    """
    Train until early stopping or `max_epochs`; returns (BestCheckpoint, RunState).

    The best epoch is the one with the lowest validation loss (BCE); its
    validation DSC is kept as the selection score. The generator (and critic)
    hold the best parameters on return.
    """
    if config.mode == 'adversarial' and critic is None:
        raise ConfigError("adversarial mode requires a critic network")
    torch.manual_seed(config.seed)
    dtype = config.torch_dtype
    generator.to(dtype)
    if critic is not None:
        critic.to(dtype)

    schedule = PlateauSchedule.from_config(config)
    g_optimizer = make_optimizer(generator.parameters(), config)
    d_optimizer = make_optimizer(critic.parameters(), config) if critic is not None else None
    state = RunState(current_lr=schedule.lr)
    best = BestCheckpoint(
        epoch=0, val_loss=math.inf, val_dsc=math.nan,
        generator_state=copy.deepcopy(generator.state_dict()),
        critic_state=copy.deepcopy(critic.state_dict()) if critic is not None else None,
    )

    epochs = tqdm(range(1, config.max_epochs + 1), desc=model_name or 'fit', disable=not config.progress)
    for epoch in epochs:
        for optimizer in filter(None, (g_optimizer, d_optimizer)):
            for group in optimizer.param_groups:
                group['lr'] = schedule.lr

        if config.mode == 'adversarial':
            record = train_epoch_adversarial(generator, critic, data.train, config, g_optimizer, d_optimizer, epoch)
        else:
            record = train_epoch_supervised(generator, data.train, config, g_optimizer, epoch)
        record.val_loss, record.val_dsc = validate(generator, data, organ, config)
        state.history.append(record)

        improved, dropped, stop = schedule.step(record.val_loss)
        state.epoch = epoch
        state.epochs_since_improvement = schedule.epochs_since_improvement
        logger.info(
            "epoch %d lr %.3g train_bce %.5f train_adv %.5f d_obj %.5f val_loss %.5f val_dsc %.4f",
            epoch, record.lr, record.train_bce, record.train_adv, record.d_objective,
            record.val_loss, record.val_dsc,
        )
        if improved:
            best = BestCheckpoint(
                epoch=epoch, val_loss=record.val_loss, val_dsc=record.val_dsc,
                generator_state=copy.deepcopy(generator.state_dict()),
                critic_state=copy.deepcopy(critic.state_dict()) if critic is not None else None,
            )
        if dropped:
            logger.warning("No validation improvement for %d epochs, lr -> %.3g", config.lr_patience, schedule.lr)
        state.current_lr = schedule.lr
        state.lr_drops = schedule.drops
        if stop:
            state.stopped_early = True
            logger.warning("Early stopping at epoch %d (best epoch %d)", epoch, best.epoch)
            break

    if best.epoch == 0:
        logger.warning("No validation improvement in %d epochs; returning the epoch-0 checkpoint", state.epoch)
    state.best_val_loss = best.val_loss
    state.best_val_dsc = best.val_dsc
    state.best_epoch = best.epoch

    generator.load_state_dict(best.generator_state)
    if critic is not None:
        critic.load_state_dict(best.critic_state)

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        best.path = save_checkpoint(
            out_dir / 'checkpoint', generator, critic,
            seed=config.seed, epoch=best.epoch, val_loss=best.val_loss, val_dsc=best.val_dsc,
            organ=OrganId(int(organ)).label, model_name=model_name,
            train_config=config.as_dict(),
        )
        write_history(out_dir / 'history.csv', state.history)
    return best, state
