import numpy as np
import pytest
import torch

from evflow_adm.model import (
    AdaptiveDensityModule,
    DensityChanger,
    DensitySelector,
    FlowHead,
    blend_by_weights,
)


class TestChangerShapes:
    def test_three_scale_pyramid(self):
        m = DensityChanger(bins=5)
        out1, out2, out3 = m(torch.randn(2, 10, 16, 16))
        assert out1.shape == (2, 10, 16, 16)
        assert out2.shape == (2, 10, 8, 8)
        assert out3.shape == (2, 10, 4, 4)

    def test_rectangular_input(self):
        m = DensityChanger(bins=5)
        out1, out2, out3 = m(torch.randn(1, 10, 12, 20))
        assert out1.shape[-2:] == (12, 20)
        assert out2.shape[-2:] == (6, 10)
        assert out3.shape[-2:] == (3, 5)

    def test_indivisible_spatial_size_rejected(self):
        m = DensityChanger(bins=5)
        with pytest.raises(ValueError):
            m(torch.randn(1, 10, 10, 10))

    def test_zero_input_zeroed_output_layers(self):
        m = DensityChanger(bins=5)
        with torch.no_grad():
            for blk in (m.dec1, m.dec2, m.dec3):
                blk.out.weight.zero_()
                blk.out.bias.zero_()
        outs = m(torch.zeros(1, 10, 8, 8))
        for out in outs:
            assert torch.all(out == 0)


class TestSelector:
    def test_blend_hard_weights_identity(self):
        v = torch.randn(2, 10, 8, 8)
        changed = torch.randn(2, 10, 8, 8)
        take_raw = torch.zeros(2, 2, 2, 8, 8)
        take_raw[:, :, 1] = 1.0
        assert torch.equal(blend_by_weights(v, changed, take_raw), v)
        take_changed = torch.zeros(2, 2, 2, 8, 8)
        take_changed[:, :, 0] = 1.0
        assert torch.equal(blend_by_weights(v, changed, take_changed), changed)

    def test_weights_sum_to_one(self):
        m = DensitySelector(bins=5)
        v = torch.randn(3, 10, 8, 8)
        changed = torch.randn(3, 10, 8, 8)
        _, weights = m(v, changed)
        sums = weights.sum(dim=2)
        assert torch.all((sums - 1.0).abs() < 1e-6)

    def test_output_inside_envelope(self):
        torch.manual_seed(0)
        m = DensitySelector(bins=5)
        v = torch.randn(2, 10, 8, 8)
        changed = torch.randn(2, 10, 8, 8)
        out, _ = m(v, changed)
        lo = torch.minimum(v, changed)
        hi = torch.maximum(v, changed)
        assert torch.all(out >= lo - 1e-6)
        assert torch.all(out <= hi + 1e-6)

    def test_shape_mismatch_rejected(self):
        m = DensitySelector(bins=5)
        with pytest.raises(ValueError):
            m(torch.randn(1, 10, 8, 8), torch.randn(1, 10, 4, 4))


class TestAssembledModule:
    def test_forward_contract(self):
        torch.manual_seed(1)
        m = AdaptiveDensityModule()
        out = m(torch.randn(2, 10, 16, 16))
        assert out["adapted"].shape == (2, 10, 16, 16)
        assert out["flow"].shape == (2, 2, 16, 16)
        assert len(out["changed"]) == 3

    def test_ablation_baseline_recoverable(self):
        # changer zeroed + selector forced to the raw side: the flow head
        # consumes the raw voxel pair unchanged
        torch.manual_seed(2)
        m = AdaptiveDensityModule()
        v = torch.randn(1, 10, 8, 8)
        out1, _, _ = m.changer(v)
        take_raw = torch.zeros(1, 2, 2, 8, 8)
        take_raw[:, :, 1] = 1.0
        adapted = blend_by_weights(v, torch.zeros_like(out1), take_raw)
        assert torch.equal(adapted, v)
        assert m.flow_head(adapted).shape == (1, 2, 8, 8)

    def test_parameter_budget(self):
        m = AdaptiveDensityModule()
        assert m.parameter_count() < 2_000_000

    def test_flow_head_output_channels(self):
        head = FlowHead(bins=5)
        assert head(torch.randn(1, 10, 8, 8)).shape == (1, 2, 8, 8)
