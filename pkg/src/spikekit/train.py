"""Desk-scale supervised training and gradient verification.

Training is plain SGD with momentum 0.9 on the cross-entropy of
time-averaged logits, with an optional cosine learning-rate decay. Runs
are bit-reproducible for a fixed seed: epoch shuffles are derived from
``seed + epoch``, gradient accumulation order is fixed, and the momentum
buffers are part of the checkpointable state.

``grad_check`` verifies analytic gradients against central finite
differences of the network's smoothed relaxation (firing steps replaced
by their hard-sigmoid integral). The leak gates of the relaxation are
frozen at their base-run values during probing, mirroring the
constant-gate treatment of the production backward, and probes whose
perturbation crosses a kink (surrogate-window edge or pool-routing
change) are excluded rather than failed.
"""

from __future__ import annotations

import copy
import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .data import Dataset
from .model import (
    SpikingTransformer,
    clear_kinks,
    collect_kinks,
    set_gate_mode,
    set_kink_tracking,
    set_spike_mode,
)

__all__ = [
    "TrainConfig",
    "Trainer",
    "NonFiniteLossError",
    "evaluate",
    "grad_check",
    "GradCheckReport",
    "GroupResult",
    "diagnose_nonfinite",
]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 0.1
    lr_schedule: str = "cosine"
    seed: int = 0
    loss: str = "cross_entropy"
    momentum: float = 0.9

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.loss != "cross_entropy":
            raise ValueError(f"unsupported loss {self.loss!r}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")


class NonFiniteLossError(RuntimeError):
    """Raised when the training loss stops being finite."""

    def __init__(self, layer: str, value: float):
        super().__init__(f"non-finite loss ({value}); first offending layer: {layer}")
        self.layer = layer
        self.value = value


def diagnose_nonfinite(model: nn.Module, images: torch.Tensor) -> str:
    """Name the first module whose output is non-finite on this batch."""
    offender = []

    def make_hook(name):
        def hook(_module, _inputs, output):
            if offender:
                return
            out = output if isinstance(output, torch.Tensor) else output[0]
            if not torch.isfinite(out).all():
                offender.append(name)

        return hook

    handles = [
        m.register_forward_hook(make_hook(name))
        for name, m in model.named_modules()
        if name
    ]
    try:
        with torch.no_grad():
            model(images)
    finally:
        for h in handles:
            h.remove()
    return offender[0] if offender else "<loss>"


class Trainer:
    """Owns the optimisation state of one training run.

    The momentum buffers, step counter and epoch counter are exposed so a
    checkpoint can capture them and a resumed run continues the exact
    trajectory of an uninterrupted one.
    """

    def __init__(
        self,
        model: SpikingTransformer,
        dataset: Dataset,
        config: TrainConfig,
        log_path=None,
        start_step: int = 0,
        start_epoch: int = 0,
        momentum_buffers: Optional[dict] = None,
    ):
        if len(dataset) == 0:
            raise ValueError("cannot train on an empty dataset")
        self.model = model
        self.dataset = dataset
        self.config = config
        self.log_path = log_path
        self.step = start_step
        self.epoch = start_epoch
        self._params = [(n, p) for n, p in model.named_parameters()]
        self.momentum_buffers = {
            n: torch.zeros_like(p) for n, p in self._params
        }
        if momentum_buffers:
            for n, buf in momentum_buffers.items():
                if n not in self.momentum_buffers:
                    raise ValueError(f"unknown momentum buffer {n!r}")
                self.momentum_buffers[n] = torch.as_tensor(
                    np.asarray(buf), dtype=self.momentum_buffers[n].dtype
                ).reshape(self.momentum_buffers[n].shape)
        self._log_rows = []

    @property
    def steps_per_epoch(self) -> int:
        return max(1, math.ceil(len(self.dataset) / self.config.batch_size))

    @property
    def total_steps(self) -> int:
        return self.steps_per_epoch * self.config.epochs

    def lr_at(self, step: int) -> float:
        base = self.config.learning_rate
        if self.config.lr_schedule == "constant":
            return base
        total = max(1, self.total_steps)
        t = min(step, total)
        return base * 0.5 * (1.0 + math.cos(math.pi * t / total))

    def train_step(self, images: torch.Tensor, labels: torch.Tensor) -> float:
        """One SGD-with-momentum update; returns the batch loss."""
        if len(images) == 0:
            raise ValueError("empty batch")
        model, cfg = self.model, self.config
        model.train()
        for _, p in self._params:
            p.grad = None
        logits = model(images)
        loss = F.cross_entropy(logits, labels)
        if not torch.isfinite(loss):
            layer = diagnose_nonfinite(model, images)
            raise NonFiniteLossError(layer, float(loss.detach()))
        loss.backward()
        lr = self.lr_at(self.step)
        with torch.no_grad():
            for name, p in self._params:
                if p.grad is None:
                    continue
                buf = self.momentum_buffers[name]
                buf.mul_(cfg.momentum).add_(p.grad)
                p.add_(buf, alpha=-lr)
        value = float(loss.detach())
        self.step += 1
        self._log_rows.append((self.step, self.epoch, value, lr, ""))
        return value

    def _epoch_order(self, epoch: int) -> np.ndarray:
        rng = np.random.default_rng(self.config.seed + epoch)
        return rng.permutation(len(self.dataset))

    def run(self, target_accuracy: Optional[float] = None) -> dict:
        """Train for the configured epochs; optionally stop once the
        training-set accuracy reaches ``target_accuracy``.

        Returns a history dict with per-step losses and per-epoch accuracy.
        """
        losses, accuracies = [], []
        images = torch.from_numpy(self.dataset.images)
        labels = torch.from_numpy(self.dataset.labels)
        bs = self.config.batch_size
        while self.epoch < self.config.epochs:
            order = self._epoch_order(self.epoch)
            for lo in range(0, len(order), bs):
                idx = torch.from_numpy(order[lo : lo + bs].copy())
                losses.append(self.train_step(images[idx], labels[idx]))
            self.epoch += 1
            acc = evaluate(self.model, self.dataset)
            accuracies.append(acc)
            if self._log_rows:
                row = self._log_rows[-1]
                self._log_rows[-1] = row[:4] + (f"{acc:.6f}",)
            if target_accuracy is not None and acc >= target_accuracy:
                break
        self.flush_log()
        return {"loss": losses, "accuracy": accuracies}

    def flush_log(self) -> None:
        if self.log_path is None or not self._log_rows:
            return
        new_file = self.step == len(self._log_rows)
        mode = "w" if new_file else "a"
        with open(self.log_path, mode, newline="") as fh:
            writer = csv.writer(fh)
            if new_file:
                writer.writerow(["step", "epoch", "loss", "lr", "accuracy"])
            for step, epoch, loss, lr, acc in self._log_rows:
                writer.writerow([step, epoch, f"{loss:.8f}", f"{lr:.8f}", acc])
        self._log_rows = []

    def momentum_records(self) -> dict:
        return {
            f"__momentum.{name}": buf.detach().cpu().numpy().astype(np.float32)
            for name, buf in self.momentum_buffers.items()
        }


def evaluate(model: nn.Module, dataset: Dataset, batch_size: int = 64) -> float:
    """Fraction of argmax-correct predictions over the dataset."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    model.eval()
    correct = 0
    with torch.no_grad():
        for lo in range(0, len(dataset), batch_size):
            images = torch.from_numpy(dataset.images[lo : lo + batch_size])
            labels = torch.from_numpy(dataset.labels[lo : lo + batch_size])
            pred = model(images).argmax(dim=1)
            correct += int((pred == labels).sum())
    return correct / len(dataset)


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------


@dataclass
class GroupResult:
    name: str
    size: int
    checked: int
    excluded: int
    rel_err: float
    passed: bool


@dataclass
class GradCheckReport:
    groups: list = field(default_factory=list)
    cosine: float = 1.0
    tolerance: float = 1e-2

    @property
    def passed(self) -> bool:
        return all(g.passed for g in self.groups) and self.cosine >= 0.99

    def summary(self) -> str:
        lines = [
            f"{g.name}: rel_err={g.rel_err:.2e} checked={g.checked} "
            f"excluded={g.excluded} -> {'ok' if g.passed else 'FAIL'}"
            for g in self.groups
        ]
        lines.append(f"whole-vector cosine similarity: {self.cosine:.6f}")
        return "\n".join(lines)


def _kinks_equal(a: list, b: list) -> bool:
    if len(a) != len(b):
        return False
    return all(x.shape == y.shape and torch.equal(x, y) for x, y in zip(a, b))


def grad_check(
    model: SpikingTransformer,
    images,
    labels,
    tolerance: float = 1e-2,
    step: float = 1e-5,
) -> GradCheckReport:
    """Compare analytic gradients of the smoothed relaxation with central
    finite differences, parameter group by parameter group.

    Works on a float64 copy of the model; batch-norm layers keep their
    batch statistics (the same normalisation the training gradient sees)
    but their running estimates are not advanced between probes.
    """
    work = copy.deepcopy(model).double()
    work.train()
    for m in work.modules():
        if isinstance(m, (nn.BatchNorm1d, nn.BatchNorm2d)):
            m.momentum = 0.0
    images_t = torch.as_tensor(np.asarray(images), dtype=torch.float64)
    labels_t = torch.as_tensor(np.asarray(labels), dtype=torch.long)

    def loss_fn() -> torch.Tensor:
        return F.cross_entropy(work(images_t), labels_t)

    set_spike_mode(work, "smooth")
    set_gate_mode(work, "record")
    set_kink_tracking(work, True)
    clear_kinks(work)
    for p in work.parameters():
        p.grad = None
    base_loss = loss_fn()
    base_kinks = collect_kinks(work)
    base_loss.backward()
    analytic = {
        name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
        for name, p in work.named_parameters()
    }

    set_gate_mode(work, "replay")
    report = GradCheckReport(tolerance=tolerance)
    all_fd, all_an = [], []

    def probe() -> tuple:
        clear_kinks(work)
        with torch.no_grad():
            value = float(loss_fn())
        return value, _kinks_equal(collect_kinks(work), base_kinks)

    with torch.no_grad():
        for name, p in work.named_parameters():
            flat = p.reshape(-1)
            g_an = analytic[name].reshape(-1)
            fd = torch.zeros_like(flat)
            excluded = torch.zeros(flat.numel(), dtype=torch.bool)
            for i in range(flat.numel()):
                original = float(flat[i])
                flat[i] = original + step
                up, ok_up = probe()
                flat[i] = original - step
                down, ok_down = probe()
                flat[i] = original
                fd[i] = (up - down) / (2.0 * step)
                excluded[i] = not (ok_up and ok_down)
            keep = ~excluded
            diff = float(torch.linalg.norm(fd[keep] - g_an[keep]))
            scale = max(
                float(torch.linalg.norm(fd[keep])),
                float(torch.linalg.norm(g_an[keep])),
                1e-12,
            )
            rel = diff / scale if keep.any() else 0.0
            report.groups.append(
                GroupResult(
                    name=name,
                    size=flat.numel(),
                    checked=int(keep.sum()),
                    excluded=int(excluded.sum()),
                    rel_err=rel,
                    passed=rel <= tolerance,
                )
            )
            all_fd.append(fd[keep])
            all_an.append(g_an[keep])

    fd_vec = torch.cat(all_fd) if all_fd else torch.zeros(1)
    an_vec = torch.cat(all_an) if all_an else torch.zeros(1)
    denom = float(torch.linalg.norm(fd_vec)) * float(torch.linalg.norm(an_vec))
    if denom < 1e-24:
        report.cosine = 1.0
    else:
        report.cosine = float(torch.dot(fd_vec, an_vec)) / denom
    return report
