"""HyperRule: fine-tuning hyperparameters from dataset size and resolution.

The rule is a fixed lookup. All constants sit in ``HyperRuleTable`` so callers
(and tests) can pin or override them.
"""

from dataclasses import asdict, dataclass, field
from math import ceil


@dataclass(frozen=True)
class HyperRuleTable:
    small_threshold: int = 20_000
    large_threshold: int = 500_000
    small_steps: int = 500
    medium_steps: int = 10_000
    large_steps: int = 20_000
    mixup_alpha: float = 0.1
    low_res_limit: int = 96
    low_res_cap: tuple = (160, 128)
    high_res: tuple = (256, 224)
    base_lr: float = 0.003
    momentum: float = 0.9
    milestone_fractions: tuple = (0.3, 0.6, 0.9)


DEFAULT_TABLE = HyperRuleTable()


@dataclass(frozen=True)
class DatasetProfile:
    num_examples: int
    shorter_side: int
    num_classes: int = 2

    def __post_init__(self):
        if self.num_examples < 1 or self.shorter_side < 1 or self.num_classes < 1:
            raise ValueError(f"dataset profile fields must be positive: {self}")


@dataclass(frozen=True)
class HyperRuleDecision:
    resize: int
    crop: int
    test_resolution: int
    schedule_steps: int
    lr_milestone_fractions: tuple = field(default=(0.3, 0.6, 0.9))
    mixup_enabled: bool = False
    mixup_alpha: float = 0.0
    base_lr: float = 0.003
    momentum: float = 0.9

    @property
    def train_resolution(self):
        return (self.resize, self.crop)

    def milestone_steps(self):
        return [int(f * self.schedule_steps) for f in self.lr_milestone_fractions]

    def to_json_dict(self):
        """Keys exactly as printed by the ``hyperrule`` subcommand."""
        return {
            "resize": self.resize,
            "crop": self.crop,
            "test_resolution": self.test_resolution,
            "steps": self.schedule_steps,
            "milestones": list(self.lr_milestone_fractions),
            "mixup": self.mixup_enabled,
            "mixup_alpha": self.mixup_alpha,
            "base_lr": self.base_lr,
            "momentum": self.momentum,
        }

    @classmethod
    def from_json_dict(cls, d):
        return cls(
            resize=int(d["resize"]), crop=int(d["crop"]),
            test_resolution=int(d["test_resolution"]), schedule_steps=int(d["steps"]),
            lr_milestone_fractions=tuple(d["milestones"]), mixup_enabled=bool(d["mixup"]),
            mixup_alpha=float(d["mixup_alpha"]), base_lr=float(d["base_lr"]),
            momentum=float(d["momentum"]),
        )

    def as_dict(self):
        return asdict(self)


def resolution_for(shorter_side, table=DEFAULT_TABLE):
    if shorter_side <= table.low_res_limit:
        k = ceil(shorter_side / 32)
        resize = min(40 * k, table.low_res_cap[0])
        crop = min(32 * k, table.low_res_cap[1])
    else:
        resize, crop = table.high_res
    return resize, crop


def schedule_for(num_examples, table=DEFAULT_TABLE):
    """(steps, mixup) for the size regime of ``num_examples``."""
    if num_examples < table.small_threshold:
        return table.small_steps, False
    if num_examples <= table.large_threshold:
        return table.medium_steps, True
    return table.large_steps, True


def decide(profile, table=DEFAULT_TABLE):
    resize, crop = resolution_for(profile.shorter_side, table)
    steps, mixup = schedule_for(profile.num_examples, table)
    return HyperRuleDecision(
        resize=resize,
        crop=crop,
        test_resolution=crop,
        schedule_steps=steps,
        lr_milestone_fractions=tuple(table.milestone_fractions),
        mixup_enabled=mixup,
        mixup_alpha=table.mixup_alpha if mixup else 0.0,
        base_lr=table.base_lr,
        momentum=table.momentum,
    )
