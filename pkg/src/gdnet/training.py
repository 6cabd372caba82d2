"""Mixup augmentation, the two-stage mixing schedule and the training loop."""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from . import tensor_numerics as tn
from .errors import ConfigurationError, DimensionError, DivergenceError
from .model import GDNetModel
from .patches import PatchBatch, PatchSource, make_minibatches
from .preclassification import SampleSet

log = logging.getLogger(__name__)


class MixupMode(str, enum.Enum):
    NONE = "none"
    STANDARD = "standard"
    TWO_STAGE = "two-stage"


@dataclass(frozen=True)
class MixupSchedule:
    num_epochs: int = 200
    alpha: float = 1.0
    mode: MixupMode = MixupMode.TWO_STAGE

    def __post_init__(self):
        object.__setattr__(self, "mode", MixupMode(self.mode))
        if self.num_epochs < 0 or self.num_epochs % 2:
            raise ConfigurationError(f"num_epochs must be a non-negative even integer, got {self.num_epochs}")
        if self.alpha <= 0:
            raise ConfigurationError("alpha must be positive")


def sample_lambda(alpha: float, rng: np.random.Generator) -> float:
    if alpha <= 0:
        raise ConfigurationError(f"Beta concentration must be positive, got {alpha}")
    return float(rng.beta(alpha, alpha))


def mixup_batch(batch: PatchBatch, lam: float, permutation=None, rng=None) -> PatchBatch:
    """Convex combination of each sample with its partner ``permutation[i]``.

    If ``permutation`` is None a uniform one is drawn from ``rng``.
    """
    b = len(batch)
    if permutation is None:
        permutation = rng.permutation(b)
    permutation = np.asarray(permutation)
    if permutation.shape != (b,):
        raise DimensionError(f"permutation of length {permutation.shape} for batch of {b}")
    lam_x = batch.inputs.dtype.type(lam)
    lam_y = batch.labels.dtype.type(lam)
    x = lam_x * batch.inputs + (1 - lam_x) * batch.inputs[permutation]
    y = lam_y * batch.labels + (1 - lam_y) * batch.labels[permutation]
    return PatchBatch(x, y, batch.coords)


def stage_two_rate(epoch: int, num: int) -> float:
    return 2.0 * (num - epoch) / num


def mixing_decision(epoch: int, num: int, mode: MixupMode | str, rng: np.random.Generator) -> bool:
    """Whether to mix the current minibatch; epochs are numbered from 1."""
    mode = MixupMode(mode)
    if not 1 <= epoch <= num:
        raise ConfigurationError(f"epoch {epoch} outside 1..{num}")
    if mode is MixupMode.NONE:
        return False
    if mode is MixupMode.STANDARD or epoch <= num // 2:
        return True
    return rng.random() < stage_two_rate(epoch, num)


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 1e-3
    mixup: MixupMode = MixupMode.TWO_STAGE
    alpha: float = 1.0
    seed: int = 42
    # forces every mixing draw to this value; used to check the NONE/STANDARD equivalence
    fixed_lambda: float | None = None

    def __post_init__(self):
        self.mixup = MixupMode(self.mixup)
        if self.batch_size < 2:
            raise ConfigurationError("batch_size must be at least 2")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")

    @property
    def schedule(self) -> MixupSchedule:
        return MixupSchedule(self.epochs, self.alpha, self.mixup)


@dataclass
class TrainRecord:
    mean_loss: list = field(default_factory=list)
    mixing_rate: list = field(default_factory=list)
    model: GDNetModel | None = None
    seed: int = 0

    def to_csv(self) -> str:
        lines = ["epoch,mean_loss,mixing_rate"]
        for i, (loss, rate) in enumerate(zip(self.mean_loss, self.mixing_rate), start=1):
            lines.append(f"{i},{loss:.8f},{rate:.6f}")
        return "\n".join(lines) + "\n"

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())


def train_step(model: GDNetModel, optim: dict, batch: PatchBatch) -> float:
    model.zero_grad()
    logits, _, trace = model.forward(batch.inputs, keep_trace=True)
    loss = tn.soft_cross_entropy(logits, batch.labels)
    model.backward(trace, tn.soft_cross_entropy_grad(logits, batch.labels).astype(model.dtype))
    for name, slot in model.named_parameters():
        tn.adam_update(slot, optim[name])
    return loss


def train_model(model: GDNetModel, samples: SampleSet, source: PatchSource,
                config: TrainConfig | None = None) -> TrainRecord:
    """Train in place with the configured mixup schedule; deterministic per seed."""
    config = config or TrainConfig()
    schedule = config.schedule
    if len(samples) == 0:
        raise ConfigurationError("sample set is empty")
    if source.r != model.config.r:
        raise DimensionError(f"patch size {source.r} does not match model r={model.config.r}")
    optim = {name: tn.AdamState.for_param(slot, config.learning_rate)
             for name, slot in model.named_parameters()}
    # shuffling and mixing draw from independent streams so that NONE and
    # STANDARD with lambda=1 see identical batches
    seeds = np.random.SeedSequence(config.seed).spawn(2)
    shuffle_seeds = np.random.default_rng(seeds[0]).integers(0, 2**63 - 1, size=schedule.num_epochs)
    mix_rng = np.random.default_rng(seeds[1])
    record = TrainRecord(model=model, seed=config.seed)
    num = schedule.num_epochs
    for epoch in range(1, num + 1):
        losses, mixed = [], 0
        for batch in make_minibatches(samples, source, config.batch_size, int(shuffle_seeds[epoch - 1])):
            if mixing_decision(epoch, num, schedule.mode, mix_rng):
                lam = config.fixed_lambda if config.fixed_lambda is not None else sample_lambda(schedule.alpha, mix_rng)
                batch = mixup_batch(batch, lam, rng=mix_rng)
                mixed += 1
            loss = train_step(model, optim, batch)
            if not np.isfinite(loss):
                raise DivergenceError(epoch, loss)
            losses.append(loss)
        record.mean_loss.append(float(np.mean(losses)))
        record.mixing_rate.append(mixed / len(losses))
        log.info("epoch %d/%d loss %.5f mixed %.2f", epoch, num, record.mean_loss[-1], record.mixing_rate[-1])
    return record
