"""Student construction and the distillation loss family.

Covers: initializing a shallow student by copying a selected subset of the
teacher's blocks, stripping the last block, the combined task/teacher loss,
per-layer-head losses (independent cross-entropies, and the KL chain where
each head chases the distribution of the head above it), the multi-phase
head-growing schedule, and the depth-by-depth cascade driver.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from .errors import InvalidArgumentError
from .losses import LossSpec, cosine_distance_loss, cross_entropy, kl_divergence, mse_loss, softmax
from .tensor import Tensor
from .vit import ForwardOutput, ViTModel, build


@dataclass
class BlockSelection:
    keep_indices: Tuple[int, ...]

    def __init__(self, keep_indices: Sequence[int]):
        self.keep_indices = tuple(int(i) for i in keep_indices)

    def validate(self, teacher_layers: int) -> "BlockSelection":
        ks = self.keep_indices
        if len(ks) == 0:
            raise InvalidArgumentError("block selection must be non-empty")
        if any(b <= a for a, b in zip(ks, ks[1:])):
            raise InvalidArgumentError(f"keep_indices must be strictly increasing, got {ks}")
        if ks[0] < 0 or ks[-1] >= teacher_layers:
            raise InvalidArgumentError(
                f"keep_indices {ks} out of range for a {teacher_layers}-layer teacher")
        return self


# blocks 0, 2, 4, 7, 9, 11: the halved-depth selection used by default
DEFAULT_KEEP = (0, 2, 4, 7, 9, 11)


def init_student_from_teacher(teacher: ViTModel, sel: BlockSelection) -> ViTModel:
    """Student with depth len(sel); block j is a bitwise copy of teacher
    block sel[j], every other parameter copied unchanged."""
    sel.validate(teacher.config.num_layers)
    ks = sel.keep_indices
    cfg = replace(teacher.config, num_layers=len(ks))
    student = build(cfg)
    tstate = teacher.state_arrays()
    mapped = {}
    for name, _ in student.named_parameters():
        src_name = name
        if name.startswith("blocks."):
            j, rest = name[len("blocks."):].split(".", 1)
            src_name = f"blocks.{ks[int(j)]}.{rest}"
        elif name.startswith("heads.") and teacher.config.per_layer_heads:
            j, rest = name[len("heads."):].split(".", 1)
            src_name = f"heads.{ks[int(j)]}.{rest}"
        mapped[name] = tstate[src_name]
    student.load_arrays(mapped)
    return student


def strip_last_block(model: ViTModel) -> ViTModel:
    """Drop the last transformer block (and its head, if per-layer heads)."""
    L = model.config.num_layers
    if L < 2:
        raise InvalidArgumentError("cannot strip the last block of a single-layer model")
    cfg = replace(model.config, num_layers=L - 1)
    student = build(cfg)
    state = model.state_arrays()
    student.load_arrays({name: state[name] for name, _ in student.named_parameters()})
    return student


def skin_distil_loss(student_out: ForwardOutput, teacher_out: ForwardOutput,
                     labels, spec: LossSpec,
                     keep_indices: Optional[Sequence[int]] = None):
    """Linear combination of task CE, teacher-matching CE, hidden cosine, and
    logit MSE.  Returns (total, components) with components as plain floats;
    the total is accumulated in the fixed order task, distil_ce, cosine, mse.
    """
    spec.validate()
    if teacher_out.final_logits.requires_grad:
        raise InvalidArgumentError("teacher outputs must be produced with gradients detached")
    if teacher_out.final_logits.shape[0] != student_out.final_logits.shape[0]:
        raise InvalidArgumentError("student and teacher batch sizes differ")

    components = {"task": 0.0, "distil_ce": 0.0, "cosine": 0.0, "mse": 0.0}
    terms: List[Tuple[float, Tensor]] = []

    if spec.w_task > 0:
        task = cross_entropy(student_out.final_logits, labels)
        components["task"] = task.item()
        terms.append((spec.w_task, task))
    if spec.w_distil_ce > 0:
        soft = softmax(teacher_out.final_logits, temperature=spec.temperature).detach()
        distil = cross_entropy(student_out.final_logits, soft, temperature=spec.temperature)
        components["distil_ce"] = distil.item()
        terms.append((spec.w_distil_ce, distil))
    if spec.w_cosine > 0:
        n_student = len(student_out.per_layer_hidden)
        n_teacher = len(teacher_out.per_layer_hidden)
        if n_teacher == 0 or n_student == 0:
            raise InvalidArgumentError("hidden states required when w_cosine > 0")
        if keep_indices is None:
            if n_student != n_teacher:
                raise InvalidArgumentError(
                    "keep_indices required to align hidden states of models of different depth")
            keep_indices = tuple(range(n_student))
        if len(keep_indices) != n_student or max(keep_indices) >= n_teacher:
            raise InvalidArgumentError("keep_indices do not align student and teacher depths")
        pair_losses = [
            cosine_distance_loss(student_out.per_layer_hidden[j][:, 0],
                                 teacher_out.per_layer_hidden[keep_indices[j]][:, 0].detach())
            for j in range(n_student)
        ]
        cos = pair_losses[0]
        for extra in pair_losses[1:]:
            cos = cos + extra
        cos = cos * (1.0 / len(pair_losses))
        components["cosine"] = cos.item()
        terms.append((spec.w_cosine, cos))
    if spec.w_mse > 0:
        mse = mse_loss(student_out.final_logits, teacher_out.final_logits.detach())
        components["mse"] = mse.item()
        terms.append((spec.w_mse, mse))

    if not terms:
        return Tensor(np.float32(0.0)), components
    total = terms[0][1] * terms[0][0]
    for w, t in terms[1:]:
        total = total + t * w
    return total, components


def fcvit_loss(per_layer_logits: Sequence[Tensor], labels,
               layer_weights: Sequence[float]) -> Tensor:
    """Linearly combined per-layer cross-entropies."""
    if len(per_layer_logits) == 0:
        raise InvalidArgumentError("per-layer logits required (build with per_layer_heads)")
    if len(layer_weights) != len(per_layer_logits):
        raise InvalidArgumentError(
            f"{len(layer_weights)} weights for {len(per_layer_logits)} layers")
    total = None
    for w, logits in zip(layer_weights, per_layer_logits):
        if w == 0.0:
            continue
        term = cross_entropy(logits, labels) * float(w)
        total = term if total is None else total + term
    if total is None:
        return Tensor(np.float32(0.0))
    return total


def uniform_layer_weights(num_layers: int) -> List[float]:
    return [1.0 / num_layers] * num_layers


def fcvitprobs_loss(per_layer_logits: Sequence[Tensor], labels,
                    active_heads: Iterable[int]) -> Tensor:
    """Task CE at the top head plus, for each active lower head, a KL term
    pushing its distribution toward the (detached) head above it."""
    L = len(per_layer_logits)
    if L == 0:
        raise InvalidArgumentError("per-layer logits required (build with per_layer_heads)")
    active = sorted(set(int(i) for i in active_heads))
    if not active or active[-1] != L - 1:
        raise InvalidArgumentError("the top head must always be active")
    if active != list(range(active[0], L)):
        raise InvalidArgumentError(f"active heads must be a contiguous suffix, got {active}")

    total = cross_entropy(per_layer_logits[L - 1], labels)
    for i in active:
        if i >= L - 1:
            continue
        upper = softmax(per_layer_logits[i + 1]).detach()
        lower = softmax(per_layer_logits[i])
        total = total + kl_divergence(upper, lower)
    return total


@dataclass
class ScheduleConfig:
    """Epoch counts for the three head-growing phases: top head only (M),
    one added head per phase (N each), whole-stack fine-tune (P)."""

    M: int = 2
    N: int = 1
    P: int = 5

    def validate(self) -> "ScheduleConfig":
        for name, v in (("M", self.M), ("N", self.N), ("P", self.P)):
            if not isinstance(v, int) or v < 0:
                raise InvalidArgumentError(f"{name} must be a non-negative integer, got {v}")
        return self


@dataclass(frozen=True)
class TrainPhase:
    start_epoch: int
    end_epoch: int           # exclusive
    active_heads: Tuple[int, ...]
    trainable_groups: Tuple[str, ...]   # "head:i" and/or "backbone"
    loss_recipe: str

    @property
    def epochs(self) -> int:
        return self.end_epoch - self.start_epoch


def build_fcvitprobs_schedule(cfg: ScheduleConfig, num_layers: int) -> List[TrainPhase]:
    """Phase plan: top head for M epochs, one head added (top-down) every N
    epochs, then P epochs with everything trainable.  Empty phases are
    dropped so the result partitions [0, total_epochs)."""
    cfg.validate()
    if num_layers < 1:
        raise InvalidArgumentError(f"num_layers must be >= 1, got {num_layers}")
    L = num_layers
    phases: List[TrainPhase] = []
    epoch = 0

    def head_groups(heads: Sequence[int]) -> Tuple[str, ...]:
        return tuple(f"head:{i}" for i in heads)

    if cfg.M > 0:
        heads = (L - 1,)
        phases.append(TrainPhase(epoch, epoch + cfg.M, heads, head_groups(heads), "fcvitprobs"))
        epoch += cfg.M
    if cfg.N > 0:
        for p in range(1, L):
            heads = tuple(range(L - 1 - p, L))
            phases.append(TrainPhase(epoch, epoch + cfg.N, heads, head_groups(heads), "fcvitprobs"))
            epoch += cfg.N
    if cfg.P > 0:
        heads = tuple(range(L))
        groups = head_groups(heads) + ("backbone",)
        phases.append(TrainPhase(epoch, epoch + cfg.P, heads, groups, "fcvitprobs"))
        epoch += cfg.P
    return phases


@dataclass
class CascadeEntry:
    num_layers: int
    model: ViTModel
    report: "MetricsReport"  # noqa: F821 - forward ref to metrics module


@dataclass
class CascadeResult:
    entries: List[CascadeEntry] = field(default_factory=list)

    def validate(self) -> "CascadeResult":
        depths = [e.num_layers for e in self.entries]
        if any(b != a - 1 for a, b in zip(depths, depths[1:])):
            raise InvalidArgumentError(f"cascade depths must decrease by 1, got {depths}")
        return self


def cascade_distill(full_teacher: ViTModel, dataset, train_cfg, spec: LossSpec) -> CascadeResult:
    """Depth-by-depth distillation: the first student is a same-size copy of
    the per-layer-head teacher; each next student strips the last block of
    the previous one and is taught by it.  Every depth is evaluated,
    checkpointed as cascade_L{k}.sdvt, and appended to cascade_summary.csv
    before the next depth starts, so failures keep partial results on disk.
    """
    from .checkpoint import save_checkpoint
    from .metrics import MetricsReport  # noqa: F401 - type used via training
    from .train import train, evaluate
    from .vit import param_count

    if not full_teacher.config.per_layer_heads:
        raise InvalidArgumentError("cascade requires a per-layer-head teacher")
    train_set, test_set = dataset

    out_dir = Path(train_cfg.checkpoint_dir) if train_cfg.checkpoint_dir else None
    csv_path = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path = out_dir / "cascade_summary.csv"
        with open(csv_path, "w", newline="") as fh:
            csv.writer(fh).writerow(["depth", "params", "bma", "accuracy"])

    epochs = train_cfg.epochs_per_step or train_cfg.epochs
    result = CascadeResult()
    teacher = full_teacher
    student = init_student_from_teacher(
        full_teacher, BlockSelection(range(full_teacher.config.num_layers)))

    for depth in range(full_teacher.config.num_layers, 0, -1):
        step_cfg = replace(
            train_cfg,
            regime="cascade_step",
            epochs=epochs,
            seed=train_cfg.seed * 1000 + depth,
            checkpoint_dir=None,
        )
        student, history = train(student, teacher, train_set, test_set, step_cfg, spec)
        report = evaluate(student, test_set, train_cfg.batch_size)
        result.entries.append(CascadeEntry(depth, student, report))
        if out_dir is not None:
            save_checkpoint(student, out_dir / f"cascade_L{depth}.sdvt")
            with open(csv_path, "a", newline="") as fh:
                csv.writer(fh).writerow(
                    [depth, param_count(student), f"{report.bma:.6f}", f"{report.accuracy:.6f}"])
        if depth > 1:
            teacher = student
            student = strip_last_block(student)
    return result.validate()
