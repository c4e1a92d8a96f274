"""Adaptive density module: global density changer + per-pixel selector.

The changer is a three-level encoder-decoder over the concatenated voxel
pair (2B channels). Every encoding and decoding block is two 3x3
convolutions plus one 1x1 convolution; levels 2 and 3 enter through a
stride-2 convolution, so the three decoder outputs form an exact
full / half / quarter resolution pyramid, each with 2B channels. The
selector compares the changer's full-resolution output with the raw
input and blends them per pixel (and per pair half) through a 2-way
softmax, so its output is always a convex combination of the two.

A small 3-layer convolutional flow head closes the training loop; it
stands in for a full flow network and only exercises the flow loss.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn


def _conv(cin, cout, stride=1, kernel=3):
    return nn.Conv2d(cin, cout, kernel_size=kernel, stride=stride, padding=kernel // 2)


class EncoderBlock(nn.Module):
    """Two 3x3 convolutions and one 1x1; the first may downsample."""

    def __init__(self, cin, cout, stride=1):
        super().__init__()
        self.c1 = _conv(cin, cout, stride=stride)
        self.c2 = _conv(cout, cout)
        self.c3 = _conv(cout, cout, kernel=1)

    def forward(self, x):
        x = F.relu(self.c1(x))
        x = F.relu(self.c2(x))
        return F.relu(self.c3(x))


class DecoderBlock(nn.Module):
    """Two 3x3 convolutions for features, one 1x1 for the scale output."""

    def __init__(self, channels, out_channels):
        super().__init__()
        self.c1 = _conv(channels, channels)
        self.c2 = _conv(channels, channels)
        self.out = _conv(channels, out_channels, kernel=1)

    def forward(self, x):
        feat = F.relu(self.c2(F.relu(self.c1(x))))
        return feat, self.out(feat)


class DensityChanger(nn.Module):
    """Encoder-decoder emitting density-transformed pairs at 3 scales.

    The full-resolution fusion also sees the raw voxel pair: signed
    per-pixel masses survive the ReLU feature path only indirectly, and
    the final scale has to reproduce them exactly.
    """

    def __init__(self, bins=5, widths=(32, 64, 96)):
        super().__init__()
        cin = 2 * bins
        w1, w2, w3 = widths
        self.enc1 = EncoderBlock(cin, w1)
        self.enc2 = EncoderBlock(w1, w2, stride=2)
        self.enc3 = EncoderBlock(w2, w3, stride=2)
        self.dec3 = DecoderBlock(w3, cin)
        self.fuse2 = _conv(w3 + w2, w2, kernel=1)
        self.dec2 = DecoderBlock(w2, cin)
        self.fuse1 = _conv(w2 + w1 + cin, w1, kernel=1)
        self.dec1 = DecoderBlock(w1, cin)

    def forward(self, v):
        if v.shape[-1] % 4 or v.shape[-2] % 4:
            raise ValueError(f"spatial size {tuple(v.shape[-2:])} must be divisible by 4")
        e1 = self.enc1(v)
        e2 = self.enc2(e1)
        e3 = self.enc3(e2)
        g3, out3 = self.dec3(e3)
        f2 = F.relu(self.fuse2(torch.cat([F.interpolate(g3, scale_factor=2, mode="nearest"), e2], dim=1)))
        g2, out2 = self.dec2(f2)
        f1 = F.relu(
            self.fuse1(torch.cat([F.interpolate(g2, scale_factor=2, mode="nearest"), e1, v], dim=1))
        )
        _, out1 = self.dec1(f1)
        return out1, out2, out3   # full, half, quarter resolution


def blend_by_weights(v, v_changed, weights):
    """Per-pixel, per-half mix: weights[..., 0] takes the changed
    representation, weights[..., 1] the raw input. weights has shape
    (n, 2 halves, 2 choices, h, w)."""
    bins = v.shape[1] // 2
    out_halves = []
    for half in range(2):
        sel = weights[:, half]          # (n, 2, h, w)
        raw = v[:, half * bins : (half + 1) * bins]
        changed = v_changed[:, half * bins : (half + 1) * bins]
        out_halves.append(sel[:, 0:1] * changed + sel[:, 1:2] * raw)
    return torch.cat(out_halves, dim=1)


class DensitySelector(nn.Module):
    """Per-pixel softmax blend of the changer output and the raw input.

    One weight pair per input half (the two windows of the pair may need
    different treatment), broadcast across that half's channels.
    """

    def __init__(self, bins=5, hidden=32):
        super().__init__()
        cin = 4 * bins           # raw pair + changed pair
        self.c1 = _conv(cin, hidden)
        self.c2 = _conv(hidden, 4)  # 2 halves x 2 choices

    def forward(self, v, v_changed):
        if v.shape != v_changed.shape:
            raise ValueError("input and changed representations must match in shape")
        logits = self.c2(F.relu(self.c1(torch.cat([v, v_changed], dim=1))))
        n, _, h, w = logits.shape
        weights = torch.softmax(logits.reshape(n, 2, 2, h, w), dim=2)
        return blend_by_weights(v, v_changed, weights), weights


class FlowHead(nn.Module):
    """Minimal convolutional flow predictor over the adapted pair."""

    def __init__(self, bins=5, hidden=32):
        super().__init__()
        self.c1 = _conv(2 * bins, hidden)
        self.c2 = _conv(hidden, hidden)
        self.c3 = _conv(hidden, 2)

    def forward(self, v_adapted):
        return self.c3(F.relu(self.c2(F.relu(self.c1(v_adapted)))))


class AdaptiveDensityModule(nn.Module):
    """Changer + selector + flow head, end to end."""

    def __init__(self, bins=5, widths=(32, 64, 96), selector_hidden=32, flow_hidden=32):
        super().__init__()
        self.bins = bins
        self.changer = DensityChanger(bins, widths)
        self.selector = DensitySelector(bins, selector_hidden)
        self.flow_head = FlowHead(bins, flow_hidden)

    def forward(self, v):
        out1, out2, out3 = self.changer(v)
        v_adapted, weights = self.selector(v, out1)
        flow = self.flow_head(v_adapted)
        return {
            "changed": (out1, out2, out3),
            "adapted": v_adapted,
            "weights": weights,
            "flow": flow,
        }

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())
