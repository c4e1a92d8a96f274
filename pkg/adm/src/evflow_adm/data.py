"""Engine-output loading and ground-truth selection for density training.

A dataset sample ships the same window pair at several contrast
thresholds. The pair whose recorded density falls inside the target band
(0.45..0.55 by default, ties resolved toward 0.5) becomes the training
target; every threshold yields one input example against that target.
Samples with no in-band threshold are skipped with a warning.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import torch

from .formats import ManifestSample, read_events, read_flow, read_manifest, voxelize

GT_BAND = (0.45, 0.55)


@dataclass(frozen=True)
class TrainExample:
    sample_id: str
    input_threshold: float
    gt_threshold: float
    input_density: float
    gt_density: float
    v_in: torch.Tensor     # (2B, H, W)
    v_gt: torch.Tensor     # (2B, H, W)
    flow: torch.Tensor     # (2, H, W)
    valid: torch.Tensor    # (H, W) bool


def select_gt_threshold(sample: ManifestSample, band=GT_BAND):
    """Threshold whose density lies in the band, closest to the center."""
    center = 0.5 * (band[0] + band[1])
    best = None
    for c, d in zip(sample.thresholds, sample.densities):
        if band[0] <= d <= band[1]:
            if best is None or abs(d - center) < abs(best[1] - center):
                best = (c, d)
    return best


def load_pair(root, sample: ManifestSample, c: float) -> np.ndarray:
    """Concatenated (2B, H, W) voxel pair for one threshold."""
    prev = voxelize(read_events(sample.events_path(root, c, "prev")), sample.bins)
    nxt = voxelize(read_events(sample.events_path(root, c, "next")), sample.bins)
    return np.concatenate([prev, nxt], axis=0)


def load_examples(root, band=GT_BAND, dtype=torch.float32, include_gt_input=True):
    """One TrainExample per (sample, input threshold); skips bandless samples."""
    examples = []
    for sample in read_manifest(root):
        choice = select_gt_threshold(sample, band)
        if choice is None:
            warnings.warn(
                f"sample {sample.sample_id}: no threshold with density in "
                f"[{band[0]}, {band[1]}]; skipped"
            )
            continue
        gt_c, gt_d = choice
        v_gt = torch.as_tensor(load_pair(root, sample, gt_c), dtype=dtype)
        u, v, valid = read_flow(sample.flow_path(root))
        flow = torch.as_tensor(np.stack([u, v]), dtype=dtype)
        valid_t = torch.as_tensor(valid)
        for c, d in zip(sample.thresholds, sample.densities):
            if c == gt_c and not include_gt_input:
                continue
            examples.append(
                TrainExample(
                    sample_id=sample.sample_id,
                    input_threshold=c,
                    gt_threshold=gt_c,
                    input_density=d,
                    gt_density=gt_d,
                    v_in=torch.as_tensor(load_pair(root, sample, c), dtype=dtype),
                    v_gt=v_gt,
                    flow=flow,
                    valid=valid_t,
                )
            )
    return examples


def adjacent_sparse_examples(examples, sample_ids=None):
    """One example per sample: the input threshold just above the target's.

    The sparser neighbor of the ground-truth pair is the canonical small-
    data training input; it misses part of the target's support, so the
    module has to both inject mass and keep what is there.
    """
    best = {}
    for e in examples:
        if sample_ids is not None and e.sample_id not in sample_ids:
            continue
        if e.input_threshold <= e.gt_threshold:
            continue
        cur = best.get(e.sample_id)
        if cur is None or e.input_threshold < cur.input_threshold:
            best[e.sample_id] = e
    return [best[k] for k in sorted(best)]
