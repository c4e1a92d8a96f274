"""Adaptive density module over the event engine's dataset files."""

from .data import (
    GT_BAND,
    TrainExample,
    adjacent_sparse_examples,
    load_examples,
    load_pair,
    select_gt_threshold,
)
from .losses import (
    LossConfig,
    changer_loss,
    flow_loss,
    pyramid_targets,
    selector_loss,
    soft_density,
    total_loss,
)
from .model import (
    AdaptiveDensityModule,
    DensityChanger,
    DensitySelector,
    FlowHead,
    blend_by_weights,
)
from .train import StepRecord, batch_losses, schedule_lr, train_loop, train_step

__version__ = "0.1.0"
