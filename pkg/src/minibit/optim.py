"""SGD with classical momentum and the staircase learning-rate schedule."""

from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from minibit.errors import ConfigError, NumericError, RegistryError


def _exact(v):
    # decimal-string route so 0.03 means the decimal 0.03, not its binary neighbour
    return Fraction(repr(float(v))) if not isinstance(v, int) else Fraction(v)


@dataclass
class LrSchedule:
    base_lr: float = 0.03
    momentum: float = 0.9
    milestones: list = field(default_factory=lambda: [20, 30, 40])
    decay_factor: float = 10.0
    total_epochs: int = 50
    batch_size: int = 512
    reference_batch: int = 512
    weight_decay: float = 0.0

    def validate(self):
        if self.base_lr <= 0:
            raise ConfigError("base_lr must be > 0")
        if self.decay_factor <= 1:
            raise ConfigError("decay_factor must be > 1")
        if self.batch_size < 1 or self.reference_batch < 1 or self.total_epochs < 1:
            raise ConfigError("batch_size, reference_batch and total_epochs must be >= 1")
        ms = list(self.milestones)
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise ConfigError(f"milestones must be strictly increasing: {ms}")
        if ms and (ms[0] < 0 or ms[-1] >= self.total_epochs):
            raise ConfigError(f"milestones must lie in [0, total_epochs): {ms}")
        return self

    def to_dict(self):
        return asdict(self)


def staircase(base_lr, milestones, position, decay_factor=10.0, scale=Fraction(1)):
    """``base_lr * scale / decay_factor**k`` with k = #milestones <= position, rounded once."""
    k = sum(1 for m in milestones if m <= position)
    return float(_exact(base_lr) * scale / _exact(decay_factor) ** k)


def lr_at(schedule, epoch):
    if not 0 <= epoch < schedule.total_epochs:
        raise IndexError(f"epoch {epoch} outside [0, {schedule.total_epochs})")
    scale = Fraction(int(schedule.batch_size), int(schedule.reference_batch))
    return staircase(schedule.base_lr, schedule.milestones, epoch, schedule.decay_factor, scale)


class SgdMomentumState:
    def __init__(self, params, momentum=0.9):
        self.momentum = momentum
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}
        self.step_count = 0

    def reset_keys(self, params):
        """Re-align velocities after head surgery; new or reshaped keys start at zero."""
        self.velocity = {
            k: self.velocity[k] if k in self.velocity and self.velocity[k].shape == v.shape
            else np.zeros_like(v)
            for k, v in params.items()
        }


def sgd_step(params, grads, state, lr, weight_decay=0.0):
    """v <- momentum*v + g + wd*p ;  p <- p - lr*v   (in place)."""
    if set(params) != set(grads) or set(params) != set(state.velocity):
        diff = sorted(set(params) ^ set(grads) | set(params) ^ set(state.velocity))
        raise RegistryError(f"registry keys disagree: {diff}")
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {k}; step aborted")
    mom = state.momentum
    for k, p in params.items():
        v = state.velocity[k]
        if mom:
            v *= mom
            v += grads[k]
        else:
            np.copyto(v, grads[k])
        if weight_decay:
            v += weight_decay * p
        p -= lr * v
    state.step_count += 1
