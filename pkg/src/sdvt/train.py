"""Epoch/step training loop binding model, data, losses, and schedules."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from .data import AugConfig, Sample, augment, default_taxonomy, sample_rng
from .distill import (ScheduleConfig, TrainPhase, build_fcvitprobs_schedule,
                      fcvit_loss, fcvitprobs_loss, skin_distil_loss,
                      uniform_layer_weights)
from .errors import InvalidArgumentError, NumericFailureError
from .losses import LossSpec, cross_entropy
from .metrics import MetricsReport, build_report
from .optim import AdamWHyper, OptimState, adamw_step, clip_grad_norm
from .tensor import no_grad
from .vit import ViTModel, forward

REGIMES = ("plain", "skin_distil", "fcvit", "fcvitprobs", "cascade_step")
_TEACHER_REGIMES = ("skin_distil", "cascade_step")


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 64
    seed: int = 0
    eval_every: int = 1
    checkpoint_dir: Optional[str] = None
    learning_rate: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    grad_clip: Optional[float] = None
    schedule: Optional[ScheduleConfig] = None
    regime: str = "plain"
    augment: Optional[AugConfig] = field(default_factory=AugConfig)
    keep_indices: Optional[Tuple[int, ...]] = None
    layer_weights: Optional[Sequence[float]] = None
    epochs_per_step: Optional[int] = None
    lr_schedule: str = "none"  # none | cosine | warmup_cosine
    warmup_fraction: float = 0.1
    balance: bool = False  # inverse-frequency sampling with replacement

    def validate(self) -> "TrainConfig":
        if self.epochs < 1:
            raise InvalidArgumentError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise InvalidArgumentError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.regime not in REGIMES:
            raise InvalidArgumentError(f"unknown regime {self.regime!r}; expected one of {REGIMES}")
        if self.lr_schedule not in ("none", "cosine", "warmup_cosine"):
            raise InvalidArgumentError(
                f"lr_schedule must be 'none', 'cosine', or 'warmup_cosine', got {self.lr_schedule}")
        if not 0.0 < self.warmup_fraction < 1.0:
            raise InvalidArgumentError(
                f"warmup_fraction must be in (0, 1), got {self.warmup_fraction}")
        return self


@dataclass
class EpochRecord:
    epoch: int
    loss_total: float
    loss_task: float
    loss_distil: float
    loss_cosine: float
    loss_mse: float
    loss_kl: float
    train_acc: float
    eval_bma: Optional[float]
    eval_acc: Optional[float]
    seconds: float


@dataclass
class History:
    records: List[EpochRecord] = field(default_factory=list)

    CSV_HEADER = ("epoch,loss_total,loss_task,loss_distil,loss_cosine,"
                  "loss_mse,loss_kl,train_acc,eval_bma,eval_acc,seconds")

    def to_csv(self, path) -> None:
        lines = [self.CSV_HEADER]
        for r in self.records:
            eval_bma = "" if r.eval_bma is None else repr(r.eval_bma)
            eval_acc = "" if r.eval_acc is None else repr(r.eval_acc)
            lines.append(
                f"{r.epoch},{r.loss_total!r},{r.loss_task!r},{r.loss_distil!r},"
                f"{r.loss_cosine!r},{r.loss_mse!r},{r.loss_kl!r},{r.train_acc!r},"
                f"{eval_bma},{eval_acc},{r.seconds!r}")
        Path(path).write_text("\n".join(lines) + "\n")

    @property
    def best_bma(self) -> Optional[float]:
        vals = [r.eval_bma for r in self.records if r.eval_bma is not None]
        return max(vals) if vals else None


def _param_groups(model: ViTModel) -> Dict[str, List[str]]:
    groups: Dict[str, List[str]] = {"backbone": []}
    for name, _ in model.named_parameters():
        if name.startswith("heads."):
            idx = name.split(".")[1]
            groups.setdefault(f"head:{idx}", []).append(name)
        else:
            groups["backbone"].append(name)
    return groups


def _phases_for(model: ViTModel, cfg: TrainConfig) -> List[TrainPhase]:
    n_heads = len(model.heads)
    if cfg.regime == "fcvitprobs":
        schedule = cfg.schedule or ScheduleConfig()
        return build_fcvitprobs_schedule(schedule, model.config.num_layers)
    if cfg.regime == "fcvit":
        heads = tuple(range(n_heads))
        groups = tuple(f"head:{i}" for i in heads) + ("backbone",)
    else:
        # plain / skin_distil / cascade_step: the loss reaches only the top head
        heads = (n_heads - 1,)
        groups = (f"head:{n_heads - 1}", "backbone")
    return [TrainPhase(0, cfg.epochs, heads, groups, cfg.regime)]


def _phase_at(phases: List[TrainPhase], epoch: int) -> TrainPhase:
    for p in phases:
        if p.start_epoch <= epoch < p.end_epoch:
            return p
    return phases[-1]


def train(model: ViTModel, teacher: Optional[ViTModel], train_set: Sequence[Sample],
          test_set: Sequence[Sample], cfg: TrainConfig,
          spec: Optional[LossSpec] = None) -> Tuple[ViTModel, History]:
    """Train ``model`` under the configured regime; returns it plus history.

    Mini-batches are reshuffled deterministically per (seed, epoch);
    augmentation streams are per (seed, epoch, sample index).  The best
    checkpoint by eval BMA and the final one are written to checkpoint_dir
    when it is set.
    """
    cfg.validate()
    spec = (spec or LossSpec()).validate()
    if cfg.regime in _TEACHER_REGIMES and teacher is None:
        raise InvalidArgumentError(f"regime {cfg.regime!r} requires a teacher")
    if cfg.regime not in _TEACHER_REGIMES and teacher is not None:
        raise InvalidArgumentError(f"regime {cfg.regime!r} does not take a teacher")
    if cfg.regime in ("fcvit", "fcvitprobs") and not model.config.per_layer_heads:
        raise InvalidArgumentError(f"regime {cfg.regime!r} requires per_layer_heads")
    if len(train_set) == 0:
        raise InvalidArgumentError("training set is empty")

    params = dict(model.named_parameters())
    hyper = AdamWHyper(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay)
    state = OptimState(params, hyper)
    groups = _param_groups(model)
    phases = _phases_for(model, cfg)
    total_epochs = phases[-1].end_epoch
    layer_weights = (list(cfg.layer_weights) if cfg.layer_weights is not None
                     else uniform_layer_weights(len(model.heads)))

    ckpt_dir = Path(cfg.checkpoint_dir) if cfg.checkpoint_dir else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    best_bma = -1.0
    history = History()
    labels_all = np.array([s.label for s in train_set], dtype=np.int64)
    steps_per_epoch = math.ceil(len(train_set) / cfg.batch_size)
    total_steps = steps_per_epoch * total_epochs
    warmup_steps = max(1, int(round(cfg.warmup_fraction * total_steps)))
    step_no = 0

    def _lr_at(step: int) -> float:
        if cfg.lr_schedule == "none":
            return cfg.learning_rate
        if cfg.lr_schedule == "cosine":
            return cfg.learning_rate * 0.5 * (1.0 + math.cos(math.pi * step / max(1, total_steps)))
        if step < warmup_steps:
            return cfg.learning_rate * (step + 1) / warmup_steps
        frac = (step - warmup_steps) / max(1, total_steps - warmup_steps)
        return cfg.learning_rate * 0.5 * (1.0 + math.cos(math.pi * frac))

    for epoch in range(total_epochs):
        t0 = time.perf_counter()
        phase = _phase_at(phases, epoch)
        trainable: List[str] = []
        for g in phase.trainable_groups:
            trainable.extend(groups[g])

        epoch_rng = np.random.default_rng([cfg.seed, epoch, 17])
        if cfg.balance:
            freq = np.bincount(labels_all, minlength=int(labels_all.max()) + 1)
            w = 1.0 / freq[labels_all]
            order = epoch_rng.choice(len(train_set), size=len(train_set),
                                     replace=True, p=w / w.sum())
        else:
            order = epoch_rng.permutation(len(train_set))
        sums = {"total": 0.0, "task": 0.0, "distil_ce": 0.0, "cosine": 0.0,
                "mse": 0.0, "kl": 0.0}
        correct = 0

        for batch_i in range(0, len(order), cfg.batch_size):
            idxs = order[batch_i:batch_i + cfg.batch_size]
            if cfg.augment is not None:
                images = np.stack([
                    augment(train_set[i].image, cfg.augment, sample_rng(cfg.seed, epoch, int(i)))
                    for i in idxs])
            else:
                images = np.stack([train_set[i].image for i in idxs])
            labels = labels_all[idxs]
            drop_rng = np.random.default_rng([cfg.seed, epoch, batch_i, 99])

            out = forward(model, images, "train", rng=drop_rng)
            components = {"task": 0.0, "distil_ce": 0.0, "cosine": 0.0, "mse": 0.0}
            kl_part = 0.0
            if cfg.regime == "plain":
                total = cross_entropy(out.final_logits, labels)
                components["task"] = total.item()
            elif cfg.regime in _TEACHER_REGIMES:
                with no_grad():
                    teacher_out = forward(teacher, images, "eval")
                total, components = skin_distil_loss(out, teacher_out, labels, spec,
                                                     cfg.keep_indices)
            elif cfg.regime == "fcvit":
                total = fcvit_loss(out.per_layer_logits, labels, layer_weights)
                components["task"] = total.item()
            else:  # fcvitprobs
                total = fcvitprobs_loss(out.per_layer_logits, labels, phase.active_heads)
                with no_grad():
                    task_only = cross_entropy(out.final_logits.detach(), labels).item()
                components["task"] = task_only
                kl_part = total.item() - task_only

            total_val = total.item()
            if not np.isfinite(total_val):
                raise NumericFailureError(
                    f"non-finite loss at epoch {epoch}, batch {batch_i // cfg.batch_size}: "
                    f"total={total_val}, components={components}")

            total.backward()
            if cfg.grad_clip is not None:
                clip_grad_norm(params, trainable, cfg.grad_clip)
            state.hyper.learning_rate = _lr_at(step_no)
            step_no += 1
            adamw_step(params, state, trainable)

            bs = len(idxs)
            sums["total"] += total_val * bs
            for k in ("task", "distil_ce", "cosine", "mse"):
                sums[k] += components[k] * bs
            sums["kl"] += kl_part * bs
            preds = np.argmax(out.final_logits.data, axis=1)
            correct += int((preds == labels).sum())

        n = len(train_set)
        eval_bma = eval_acc = None
        if len(test_set) and ((epoch + 1) % cfg.eval_every == 0 or epoch == total_epochs - 1):
            report = evaluate(model, test_set, cfg.batch_size)
            eval_bma, eval_acc = report.bma, report.accuracy
            if ckpt_dir is not None and report.bma > best_bma:
                from .checkpoint import save_checkpoint
                save_checkpoint(model, ckpt_dir / "best.sdvt")
            best_bma = max(best_bma, report.bma)

        history.records.append(EpochRecord(
            epoch=epoch + 1,
            loss_total=sums["total"] / n,
            loss_task=sums["task"] / n,
            loss_distil=sums["distil_ce"] / n,
            loss_cosine=sums["cosine"] / n,
            loss_mse=sums["mse"] / n,
            loss_kl=sums["kl"] / n,
            train_acc=correct / n,
            eval_bma=eval_bma,
            eval_acc=eval_acc,
            seconds=time.perf_counter() - t0,
        ))

    if ckpt_dir is not None:
        from .checkpoint import save_checkpoint
        save_checkpoint(model, ckpt_dir / "final.sdvt")
        history.to_csv(ckpt_dir / "history.csv")
    return model, history


def evaluate(model: ViTModel, test_set: Sequence[Sample], batch_size: int = 64) -> MetricsReport:
    """Full-pass argmax evaluation (ties resolve to the lowest class index)."""
    if len(test_set) == 0:
        raise InvalidArgumentError("evaluation set is empty")
    preds: List[int] = []
    labels = [s.label for s in test_set]
    with no_grad():
        for i in range(0, len(test_set), batch_size):
            batch = test_set[i:i + batch_size]
            images = np.stack([s.image for s in batch])
            out = forward(model, images, "eval")
            preds.extend(np.argmax(out.final_logits.data, axis=1).tolist())
    taxonomy = default_taxonomy() if model.config.num_classes == 8 else None
    return build_report(preds, labels, model.config.num_classes, taxonomy)
