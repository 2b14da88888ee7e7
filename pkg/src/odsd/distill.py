"""Student training against a frozen teacher on paired (original, augmented) batches."""
from dataclasses import dataclass

import numpy as np

from .dcrd import BatchOutputs, DcrdHyper, total_loss
from .errors import ConfigError, ContractViolation
from .nets import AugmentationSpec, SgdState, accuracy, augment, cosine_lr, mlp_backward, mlp_forward, sgd_step

SCHEDULES = ("constant", "cosine")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch: int = 64
    lr: float = 0.025
    momentum: float = 0.9
    weight_decay: float = 5e-4
    schedule: str = "constant"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch < 1:
            raise ConfigError("epochs must be >= 0 and batch >= 1")
        if self.lr < 0 or not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise ConfigError("need lr >= 0, 0 <= momentum < 1, weight_decay >= 0")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")

    def lr_at(self, epoch):
        if self.schedule == "cosine":
            return cosine_lr(self.lr, epoch, self.epochs)
        return self.lr


def epoch_order(selected, seed, epoch):
    """Seeded shuffle of the selected pool indices for one epoch."""
    return np.asarray(selected)[np.random.default_rng([seed, epoch, 2]).permutation(len(selected))]


def distill(teacher, student, features, selected, hyper=None, train=None, aug=None, test=None,
            state=None, start_epoch=0, stop_epoch=None, on_epoch=None):
    """Train ``student`` in place and return one metrics dict per epoch run.

    ``selected`` indexes rows of ``features``; those indices also key the
    augmentation streams.  ``state`` and ``start_epoch`` resume an earlier
    run; ``stop_epoch`` ends early (exclusive) to simulate an interruption.
    ``on_epoch(epoch, record, state)`` is called after every epoch.
    """
    hyper = hyper or DcrdHyper()
    train = train or TrainConfig()
    aug = aug or AugmentationSpec()
    if teacher.n_classes != student.n_classes:
        raise ConfigError(f"teacher has {teacher.n_classes} classes, student {student.n_classes}")
    selected = np.asarray(selected, dtype=np.int64)
    if selected.size == 0:
        raise ContractViolation("nothing selected to distill on")
    if state is None:
        state = SgdState.for_model(student, train.lr, train.momentum, train.weight_decay)
    teacher_sum = teacher.checksum()
    stop = train.epochs if stop_epoch is None else min(stop_epoch, train.epochs)
    records = []
    for epoch in range(start_epoch, stop):
        lr = train.lr_at(epoch)
        order = epoch_order(selected, train.seed, epoch)
        sums = np.zeros(5)
        steps = 0
        for start in range(0, len(order), train.batch):
            idx = order[start:start + train.batch]
            x = features[idx]
            xb = np.vstack([x, augment(x, aug, epoch, idx)])
            t_out = teacher(xb)
            s_out, cache = mlp_forward(student, xb)
            bd = total_loss(BatchOutputs(t_out, s_out, "paired"), hyper)
            sgd_step(student, mlp_backward(student, cache, bd.grad_student), state, lr=lr)
            sums += (bd.kd, bd.denoise, bd.contrast_inst, bd.contrast_ts, bd.total)
            steps += 1
        kd, den, c1, c2, _ = sums / steps
        record = {
            "epoch": epoch,
            "kd": float(kd),
            "denoise": float(den),
            "c1": float(c1),
            "c2": float(c2),
            # recombined from the epoch means so the breakdown identity holds per record
            "total": float(kd + hyper.lambda1 * den + hyper.lambda2 * (c1 + c2)),
            "lr": lr,
            "test_accuracy": accuracy(student, test) if test is not None else None,
        }
        records.append(record)
        if on_epoch is not None:
            on_epoch(epoch, record, state)
    if teacher.checksum() != teacher_sum:
        raise RuntimeError("teacher parameters changed during distillation")
    return records
