"""Upstream pre-training, downstream fine-tuning and evaluation loops."""

import logging
import time
from dataclasses import asdict, dataclass, field
from math import ceil
from pathlib import Path

import numpy as np

from minibit import hyperrule
from minibit.checkpoint import Checkpoint, checkpoint_load, checkpoint_save
from minibit.data import AugmentSpec, batch_iter, load_dataset_dir, mixup_batch, one_hot
from minibit.errors import ConfigError, LoadMismatchError, TrainingError
from minibit.metrics import (EpochMetrics, accuracy, confusion_from_predictions, predict,
                             softmax_cross_entropy, write_metrics_csv)
from minibit.model import ResNetConfig, build_model, replace_head
from minibit.optim import LrSchedule, SgdMomentumState, lr_at, sgd_step, staircase
from minibit.tensor import Prng

log = logging.getLogger(__name__)

DATA_STREAM = 1013  # PCG32 stream id for data order/augmentation (init uses the default)
POSITIVE_CLASS_NAME = "malignant"


@dataclass
class TrainConfig:
    mode: str = "pretrain"
    model: ResNetConfig = field(default_factory=lambda: ResNetConfig.preset("resnet14", base_width=16))
    schedule: LrSchedule = field(default_factory=LrSchedule)
    hyperrule: dict = None  # finetune: full override of the decided HyperRule record
    train_dir: str = ""
    val_dir: str = ""
    batch_size: int = 32
    seed: int = 0
    checkpoint_in: str = ""
    checkpoint_out: str = ""
    metrics_csv: str = ""
    eval_every: int = 0
    resolution: int = 0
    steps: int = -1  # finetune: override schedule_steps when >= 0
    lr_batch_scaling: bool = False  # finetune: multiply base_lr by batch/512
    hflip_prob: float = 0.5
    record_wall_time: bool = True

    def validate(self):
        if self.mode not in ("pretrain", "finetune"):
            raise ConfigError(f"mode must be pretrain or finetune, got {self.mode!r}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.mode == "finetune" and not self.checkpoint_in:
            raise ConfigError("finetune requires checkpoint_in")
        if not self.train_dir:
            raise ConfigError("train_dir is required")
        self.model.validate()
        if self.mode == "pretrain":
            self.schedule.validate()
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if isinstance(d.get("model"), dict):
            d["model"] = ResNetConfig.from_dict(d["model"])
        if isinstance(d.get("schedule"), dict):
            unknown = set(d["schedule"]) - set(LrSchedule.__dataclass_fields__)
            if unknown:
                raise ConfigError(f"unknown schedule keys: {sorted(unknown)}")
            d["schedule"] = LrSchedule(**d["schedule"])
        return cls(**d)


@dataclass
class EvalResult:
    loss: float
    accuracy: float
    confusion: object
    predictions: np.ndarray


@dataclass
class TrainResult:
    model: object
    rows: list
    checkpoint: Checkpoint
    initial_loss: float
    decision: object = None


def positive_class_index(class_names):
    if POSITIVE_CLASS_NAME in class_names:
        return class_names.index(POSITIVE_CLASS_NAME)
    return len(class_names) - 1


def evaluate(model, dataset, batch_size=64, resolution=None):
    """Deterministic pass (resize + centre crop, no shuffling)."""
    k = model.config.num_classes
    if k != len(dataset.class_names):
        raise ConfigError(f"model has {k} classes but dataset has {len(dataset.class_names)}")
    side = resolution or dataset.items[0].pixels.shape[1]
    spec = AugmentSpec(side, side, enabled=False)
    total_loss = 0.0
    preds = []
    for x, y in batch_iter(dataset, batch_size, None, spec):
        logits = model.forward(x)
        loss, _ = softmax_cross_entropy(y, logits)
        total_loss += loss * len(y)
        preds.append(predict(logits))
    preds = np.concatenate(preds)
    labels = dataset.labels
    if k == 2:
        conf = confusion_from_predictions(preds, labels, positive_class_index(dataset.class_names))
        acc = accuracy(conf)
    else:
        conf = None
        acc = 100.0 * float(np.mean(preds == labels))
    return EvalResult(total_loss / len(dataset), acc, conf, preds)


def make_checkpoint(model, position, rng):
    return Checkpoint(model_config=model.config.to_dict(),
                      params={k: v.copy() for k, v in model.params.items()},
                      position=position, prng_state=rng.get_state() if rng else {})


def _train_epoch(model, state, dataset, cfg, rng, augment, lr_fn, step, max_steps,
                 weight_decay, mixup_alpha, val=None, test_res=None):
    """One pass (or until ``max_steps``). Returns (loss_sum, correct, seen, step, first_loss)."""
    loss_sum = 0.0
    correct = 0
    seen = 0
    first_loss = None
    k = model.config.num_classes
    for x, y in batch_iter(dataset, cfg.batch_size, rng, augment):
        if max_steps is not None and step >= max_steps:
            break
        target = y
        if mixup_alpha:
            x, target, _, _ = mixup_batch(x, one_hot(y, k), mixup_alpha, rng)
        logits = model.forward(x)
        loss, grad = softmax_cross_entropy(target, logits)
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss {loss} at step {step}")
        if first_loss is None:
            first_loss = loss
        grads = model.backward(grad)
        sgd_step(model.params, grads, state, lr_fn(step), weight_decay)
        loss_sum += loss * len(y)
        correct += int(np.sum(predict(logits) == y))
        seen += len(y)
        step += 1
        if cfg.eval_every and step % cfg.eval_every == 0 and val is not None:
            ev = evaluate(model, val, cfg.batch_size, test_res)
            log.info("step %d: val_loss=%.4f val_acc=%.2f", step, ev.loss, ev.accuracy)
    return loss_sum, correct, seen, step, first_loss


def _resolution(cfg, dataset):
    if cfg.resolution:
        r = int(cfg.resolution)
        return AugmentSpec(ceil(r * 8 / 7), r, cfg.hflip_prob), r
    resize, crop = hyperrule.resolution_for(dataset.shorter_side)
    return AugmentSpec(resize, crop, cfg.hflip_prob), crop


def _row(epoch, loss_sum, correct, seen, val, lr, t0, cfg):
    wall = time.perf_counter() - t0 if cfg.record_wall_time else 0.0
    train_loss = loss_sum / seen if seen else 0.0
    train_acc = 100.0 * correct / seen if seen else 0.0
    return EpochMetrics(epoch, train_loss, train_acc, val.loss if val else 0.0,
                        val.accuracy if val else 0.0, lr, wall)


def _load_datasets(cfg):
    train = load_dataset_dir(cfg.train_dir, "train")
    val = load_dataset_dir(cfg.val_dir, "validation") if cfg.val_dir else None
    if val is not None and val.class_names != train.class_names:
        raise ConfigError(f"train classes {train.class_names} != val classes {val.class_names}")
    return train, val


def _finish(cfg, model, rows, position, rng):
    ckpt = make_checkpoint(model, position, rng)
    if cfg.checkpoint_out:
        Path(cfg.checkpoint_out).parent.mkdir(parents=True, exist_ok=True)
        checkpoint_save(cfg.checkpoint_out, ckpt)
    if cfg.metrics_csv:
        Path(cfg.metrics_csv).parent.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(cfg.metrics_csv, rows)
    return ckpt


def pretrain(cfg, datasets=None):
    """Train from scratch with the epoch-based staircase schedule."""
    cfg.mode = "pretrain"
    cfg.validate()
    train, val = datasets or _load_datasets(cfg)
    if cfg.model.num_classes != len(train.class_names):
        raise ConfigError(f"model.num_classes={cfg.model.num_classes} but dataset has "
                          f"{len(train.class_names)} classes")
    model = build_model(cfg.model, cfg.seed)
    rng = Prng(cfg.seed, DATA_STREAM)
    sched = cfg.schedule
    sched.batch_size = cfg.batch_size
    state = SgdMomentumState(model.params, sched.momentum)
    augment, test_res = _resolution(cfg, train)
    rows = []
    initial = None
    step = 0
    t0 = time.perf_counter()
    for epoch in range(sched.total_epochs):
        lr = lr_at(sched, epoch)
        loss_sum, correct, seen, step, first = _train_epoch(
            model, state, train, cfg, rng, augment, lambda s: lr, step, None,
            sched.weight_decay, 0.0, val, test_res)
        initial = first if initial is None else initial
        ev = evaluate(model, val, cfg.batch_size, test_res) if val else None
        rows.append(_row(epoch, loss_sum, correct, seen, ev, lr, t0, cfg))
        log.info("epoch %d lr=%g train_loss=%.4f val_acc=%s", epoch, lr, rows[-1].train_loss,
                 f"{ev.accuracy:.2f}" if ev else "-")
    ckpt = _finish(cfg, model, rows, {"mode": "pretrain", "epoch": sched.total_epochs, "step": step}, rng)
    return TrainResult(model, rows, ckpt, initial)


def load_body(cfg):
    """Build ``cfg.model`` and fill it from ``cfg.checkpoint_in`` (head included)."""
    ckpt = checkpoint_load(cfg.checkpoint_in)
    model_cfg = ResNetConfig.from_dict({**cfg.model.to_dict(),
                                        "num_classes": ckpt.model_config.get("num_classes", 1)})
    model = build_model(model_cfg, cfg.seed)
    own = model.params
    bad = sorted(k for k in set(own) | set(ckpt.params)
                 if k not in own or k not in ckpt.params or own[k].shape != ckpt.params[k].shape)
    if bad:
        raise LoadMismatchError("checkpoint does not match model config", bad)
    model.load_params(ckpt.params)
    return model


def finetune(cfg, datasets=None):
    """Load a checkpoint, swap the head and run the HyperRule schedule."""
    cfg.mode = "finetune"
    cfg.validate()
    return finetune_model(cfg, load_body(cfg), datasets)


def finetune_model(cfg, model, datasets=None):
    """Fine-tuning loop on an already-built model (used for from-scratch baselines too)."""
    train, val = datasets or _load_datasets(cfg)
    replace_head(model, len(train.class_names))
    cfg.model = model.config
    if cfg.hyperrule:
        decision = hyperrule.HyperRuleDecision.from_json_dict(cfg.hyperrule)
    else:
        decision = hyperrule.decide(hyperrule.DatasetProfile(
            len(train), train.shorter_side, len(train.class_names)))
    if cfg.steps >= 0:
        decision = hyperrule.HyperRuleDecision(**{**decision.as_dict(), "schedule_steps": cfg.steps})
    if cfg.resolution:
        r = int(cfg.resolution)
        decision = hyperrule.HyperRuleDecision(**{**decision.as_dict(), "resize": ceil(r * 8 / 7),
                                                  "crop": r, "test_resolution": r})
    augment = AugmentSpec(decision.resize, decision.crop, cfg.hflip_prob)
    scale = cfg.batch_size / 512 if cfg.lr_batch_scaling else 1.0
    milestones = decision.milestone_steps()

    def lr_fn(step):
        return staircase(decision.base_lr, milestones, step) * scale

    rng = Prng(cfg.seed, DATA_STREAM)
    state = SgdMomentumState(model.params, decision.momentum)
    total = decision.schedule_steps
    rows = []
    initial = None
    step = 0
    epoch = 0
    t0 = time.perf_counter()
    while step < total:
        lr = lr_fn(step)
        loss_sum, correct, seen, step, first = _train_epoch(
            model, state, train, cfg, rng, augment, lr_fn, step, total, 0.0,
            decision.mixup_alpha if decision.mixup_enabled else 0.0, val, decision.test_resolution)
        initial = first if initial is None else initial
        ev = evaluate(model, val, cfg.batch_size, decision.test_resolution) if val else None
        rows.append(_row(epoch, loss_sum, correct, seen, ev, lr, t0, cfg))
        log.info("epoch %d step %d lr=%g train_loss=%.4f val_acc=%s", epoch, step, lr,
                 rows[-1].train_loss, f"{ev.accuracy:.2f}" if ev else "-")
        epoch += 1
    ckpt = _finish(cfg, model, rows, {"mode": "finetune", "epoch": epoch, "step": step}, rng)
    return TrainResult(model, rows, ckpt, initial, decision)


def epochs_to_reach(rows, target_acc):
    """1-based count of epochs until validation accuracy first reaches ``target_acc``."""
    for i, r in enumerate(rows):
        if r.val_acc >= target_acc:
            return i + 1
    return None


def trailing_mean(values, window=5):
    values = list(values)
    return float(np.mean(values[:window])), float(np.mean(values[-window:]))
