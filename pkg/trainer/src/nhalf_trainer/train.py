"""Training loop, metrics logging and the clip ablation sweep."""

from __future__ import annotations

import copy
import csv
import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .config import TrainConfig
from .data import SplitData
from .model import NHalfNet, build_net


class TrainError(RuntimeError):
    pass


def ensure_finite_loss(value: float, epoch: int, offset: int, lr: float) -> None:
    if not math.isfinite(value):
        raise TrainError(
            f"non-finite loss at epoch {epoch}, sample offset {offset}: "
            f"{value} (lr={lr:.4g})"
        )


@dataclass
class EpochMetrics:
    epoch: int
    train_acc: float
    test_acc: float
    loss: float


@dataclass
class TrainResult:
    net: NHalfNet  # loaded with the best-by-test-accuracy state
    metrics: list[EpochMetrics] = field(default_factory=list)
    best_test_acc: float = 0.0


@torch.no_grad()
def accuracy(net: NHalfNet, data: SplitData, batch_size: int = 256) -> float:
    net.eval()
    images = torch.from_numpy(data.images)
    labels = torch.from_numpy(data.labels)
    correct = 0
    for start in range(0, len(labels), batch_size):
        scores = net(images[start : start + batch_size])
        correct += int((scores.argmax(dim=1) == labels[start : start + batch_size]).sum())
    return correct / len(labels)


def train(cfg: TrainConfig, train_data: SplitData, test_data: SplitData) -> TrainResult:
    """Quantization-aware training; deterministic under a fixed seed."""
    torch.manual_seed(cfg.seed)
    torch.set_num_threads(1)  # bit-reproducible reductions
    net = build_net(cfg)
    optimizer = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate)
    scheduler = torch.optim.lr_scheduler.ExponentialLR(optimizer, gamma=cfg.lr_decay)
    generator = torch.Generator().manual_seed(cfg.seed)

    images = torch.from_numpy(train_data.images)
    labels = torch.from_numpy(train_data.labels)
    result = TrainResult(net=net)
    best_state = copy.deepcopy(net.state_dict())

    for epoch in range(cfg.epochs):
        net.train()
        order = torch.randperm(len(labels), generator=generator)
        epoch_loss = 0.0
        seen = 0
        correct = 0
        for start in range(0, len(labels), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            x, y = images[batch], labels[batch]
            optimizer.zero_grad()
            scores = net(x)
            loss = F.cross_entropy(scores * cfg.logit_scale, y)
            ensure_finite_loss(loss.item(), epoch, start, scheduler.get_last_lr()[0])
            loss.backward()
            optimizer.step()
            net.clamp_latent_weights()
            epoch_loss += float(loss.item()) * len(batch)
            correct += int((scores.argmax(dim=1) == y).sum())
            seen += len(batch)
        scheduler.step()

        test_acc = accuracy(net, test_data)
        result.metrics.append(
            EpochMetrics(epoch, correct / seen, test_acc, epoch_loss / seen)
        )
        if test_acc >= result.best_test_acc:
            result.best_test_acc = test_acc
            best_state = copy.deepcopy(net.state_dict())

    net.load_state_dict(best_state)
    net.eval()
    return result


def write_metrics(metrics: list[EpochMetrics], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_acc", "test_acc", "loss"])
        for m in metrics:
            writer.writerow([m.epoch, f"{m.train_acc:.6f}", f"{m.test_acc:.6f}", f"{m.loss:.6f}"])


def sweep_clip(
    cfg: TrainConfig,
    train_data: SplitData,
    test_data: SplitData,
    clips=(8, 15, 31, 63),
) -> list[tuple[int, float, float]]:
    """Retrain per clip value; returns (clip, final_train_acc, best_test_acc) rows."""
    rows = []
    for clip in clips:
        result = train(cfg.with_clip(clip), train_data, test_data)
        rows.append((clip, result.metrics[-1].train_acc, result.best_test_acc))
    return rows


def write_sweep(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["clip", "train_acc", "test_acc"])
        for clip, train_acc, test_acc in rows:
            writer.writerow([clip, f"{train_acc:.6f}", f"{test_acc:.6f}"])
