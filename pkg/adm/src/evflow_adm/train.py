"""Training loop: AdamW over batched engine examples, loss curve to CSV.

The default regime is the small-data one this module ships for: every
step sees the full example set (deterministic batches), the learning
rate warms up, holds, then cosine-decays to zero. Density matching and
the flow term train jointly with the multiscale regression per the total
loss; nothing is staged or frozen.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
import torch

from .losses import LossConfig, changer_loss, flow_loss, selector_loss, total_loss
from .model import AdaptiveDensityModule


@dataclass(frozen=True)
class StepRecord:
    step: int
    total: float
    changer: float
    selector: float
    flow: float


def _stack(batch):
    v_in = torch.stack([e.v_in for e in batch])
    v_gt = torch.stack([e.v_gt for e in batch])
    flow = torch.stack([e.flow for e in batch])
    valid = torch.stack([e.valid for e in batch])
    return v_in, v_gt, flow, valid


def batch_losses(model: AdaptiveDensityModule, batch, cfg: LossConfig = LossConfig()):
    """Component losses of one forward pass over a list of examples."""
    v_in, v_gt, flow_gt, valid = _stack(batch)
    out = model(v_in)
    l_changer = changer_loss(out["changed"], v_gt, cfg)
    l_selector = selector_loss(out["adapted"], v_gt, cfg)
    l_flow = flow_loss(out["flow"], flow_gt, valid)
    return total_loss(l_changer, l_selector, l_flow, cfg), l_changer, l_selector, l_flow


def train_step(model, batch, optimizer, cfg: LossConfig = LossConfig(), step: int = 0) -> StepRecord:
    """One gradient update over a batch of engine examples."""
    optimizer.zero_grad()
    total, l_changer, l_selector, l_flow = batch_losses(model, batch, cfg)
    total.backward()
    optimizer.step()
    return StepRecord(step, float(total), float(l_changer), float(l_selector), float(l_flow))


def schedule_lr(step: int, steps: int, lr: float, warmup: int, flat_until: int) -> float:
    """Linear warmup, hold, cosine decay to zero."""
    if step < warmup:
        return lr * (step + 1) / warmup
    if step < flat_until:
        return lr
    span = max(steps - flat_until, 1)
    return lr * 0.5 * (1.0 + math.cos(math.pi * (step - flat_until) / span))


def train_loop(
    model: AdaptiveDensityModule,
    examples,
    steps: int = 500,
    batch_size: int | None = None,
    lr: float = 4e-3,
    warmup: int = 25,
    flat_until: int = 300,
    seed: int = 0,
    cfg: LossConfig = LossConfig(),
    csv_path=None,
):
    """Train on engine examples; batch_size None means full-batch steps."""
    if not examples:
        raise ValueError("no training examples")
    optimizer = torch.optim.AdamW(model.parameters(), lr=lr)
    rng = np.random.default_rng(seed)
    history = []
    for step in range(steps):
        for group in optimizer.param_groups:
            group["lr"] = schedule_lr(step, steps, lr, warmup, flat_until)
        if batch_size is None:
            batch = examples
        else:
            idx = rng.choice(len(examples), size=min(batch_size, len(examples)), replace=False)
            batch = [examples[int(i)] for i in idx]
        history.append(train_step(model, batch, optimizer, cfg, step))
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "total", "changer", "selector", "flow"])
            for rec in history:
                writer.writerow([rec.step, rec.total, rec.changer, rec.selector, rec.flow])
    return history
