import json
import math

import pytest

from convdse import zoo
from convdse.costs import (DEFAULT_PLATFORM, PlatformSpec, activation_traffic_words,
                           energy_estimate, energy_from_counts, layer_macs, layer_params,
                           model_macs, model_params, peak_activation_bytes, report,
                           storage_bytes)
from convdse.graph import (Conv, FullyConnected, GraphBuilder, Pool, ReLU, TensorShape)


PLATFORM = PlatformSpec(on_chip_bytes=1024, e_mac=1e-12, macs_per_second=1e9)


class TestLayerParams:
    def test_conv_3x3_with_bias(self):
        assert layer_params(Conv(3, 3, 64, bias=True), TensorShape(8, 8, 64)) == 36_928

    def test_fc7_sized_layer(self):
        # 4096 input channels and 4096 filters, bias off: exactly 2**24 weights
        count = layer_params(FullyConnected(4096, bias=False), TensorShape(1, 1, 4096))
        assert count == 16_777_216
        assert count * 4 == 67_108_864

    def test_1x1_vs_3x3_ratio_is_exactly_nine(self):
        shape = TensorShape(14, 14, 48)
        one = layer_params(Conv(1, 1, 96, bias=False), shape)
        three = layer_params(Conv(3, 3, 96, bias=False), shape)
        assert three == 9 * one

    def test_grouping_divides_weights(self):
        shape = TensorShape(8, 8, 16)
        dense = layer_params(Conv(3, 3, 16, groups=1, bias=False), shape)
        for g in (2, 4, 8, 16):
            grouped = layer_params(Conv(3, 3, 16, groups=g, bias=False), shape)
            assert grouped * g == dense

    def test_stateless_layers_have_no_params(self):
        shape = TensorShape(8, 8, 16)
        for spec in (Pool("max", 2, 2), ReLU()):
            assert layer_params(spec, shape) == 0

    def test_divisibility_error(self):
        with pytest.raises(ValueError, match="divide input channels"):
            layer_params(Conv(1, 1, 4, groups=4), TensorShape(4, 4, 6))


class TestLayerMacs:
    def test_tiny_1x1(self):
        assert layer_macs(Conv(1, 1, 8), TensorShape(1, 1, 8)) == 64

    def test_depthwise_is_c_times_cheaper(self):
        shape = TensorShape(14, 14, 32)
        dense = layer_macs(Conv(3, 3, 32, groups=1, bias=False), shape)
        depthwise = layer_macs(Conv(3, 3, 32, groups=32, bias=False), shape)
        assert dense == 32 * depthwise

    def test_pool_is_free(self):
        assert layer_macs(Pool("avg", 3, 2), TensorShape(27, 27, 96)) == 0


class TestModelTotals:
    def test_alexnet_scale(self):
        params = model_params(zoo.alexnet())
        assert params == 60_965_224

    def test_input_only_graph_is_empty(self):
        b = GraphBuilder("empty")
        b.input(TensorShape(32, 32, 3))
        g = b.build()
        assert model_params(g) == 0
        assert model_macs(g) == 0
        assert storage_bytes(g) == 0

    def test_storage_is_params_times_word(self):
        g = zoo.squeezenet(0.5)
        assert storage_bytes(g, 32) == 4 * model_params(g)
        assert storage_bytes(g, 8) == model_params(g)

    def test_fc7_dwarfs_squeezenet(self):
        ratio = (layer_params(FullyConnected(4096), TensorShape(1, 1, 4096))
                 / model_params(zoo.squeezenet(0.5)))
        assert 13 <= ratio <= 15

    def test_grouping_scales_model_macs(self):
        def variant(g):
            b = GraphBuilder(f"g{g}")
            x = b.input(TensorShape(8, 8, 16))
            b.conv(x, 3, 16, groups=g, pad=1, bias=False)
            return b.build()

        base = model_macs(variant(1))
        for g in (2, 4, 16):
            assert model_macs(variant(g)) * g == base


class TestPeakActivations:
    def test_single_relu_counts_input_and_output(self):
        b = GraphBuilder("relu")
        x = b.input(TensorShape(10, 10, 10))
        b.relu(x)
        assert peak_activation_bytes(b.build()) == 8000

    def test_diamond_keeps_squeeze_output_live(self):
        # squeeze output must stay live across both expand branches
        b = GraphBuilder("diamond")
        x = b.input(TensorShape(4, 4, 2))       # 32 elements
        s = b.conv(x, 1, 8, name="squeeze")     # 128 elements
        left = b.conv(s, 1, 4, name="left")     # 64 elements
        right = b.conv(s, 3, 4, pad=1, name="right")  # 64 elements
        b.concat([left, right])                 # 128 elements
        # executing "right": squeeze (128) + left (64) + right (64) all live
        assert peak_activation_bytes(b.build()) == 4 * (128 + 64 + 64)

    def test_later_pool_never_reduces_peak(self):
        def with_pool_at(k):
            b = GraphBuilder(f"pool_at_{k}")
            x = b.input(TensorShape(32, 32, 8))
            for i in range(1, 6):
                x = b.conv(x, 3, 8, pad=1, name=f"conv{i}")
                if i == k:
                    x = b.maxpool(x, 2, 2)
            return b.build()

        peaks = [peak_activation_bytes(with_pool_at(k)) for k in range(1, 6)]
        assert all(b >= a for a, b in zip(peaks, peaks[1:]))


class TestEnergy:
    def test_spilled_weights_double_the_bill(self):
        # 1M params / 100M MACs at 1 pJ per MAC: weights spill past 1 MB
        p = PlatformSpec(on_chip_bytes=1 << 20, e_mac=1e-12, macs_per_second=1e9)
        e = energy_from_counts(100_000_000, 1_000_000, 0, 0, p)
        assert e == pytest.approx(200e-6, rel=1e-9)

    def test_everything_on_chip_halves_it(self):
        p = PlatformSpec(on_chip_bytes=16 << 20, e_mac=1e-12, macs_per_second=1e9)
        e = energy_from_counts(100_000_000, 1_000_000, 0, 0, p)
        assert e == pytest.approx(100e-6, rel=1e-9)

    def test_halving_params_strictly_helps_offchip_models(self):
        p = PlatformSpec(on_chip_bytes=1 << 20, e_mac=1e-12, macs_per_second=1e9)
        big = energy_from_counts(100_000_000, 1_000_000, 0, 0, p)
        small = energy_from_counts(100_000_000, 500_000, 0, 0, p)
        assert small < big

    def test_batch_amortizes_weight_traffic_only(self):
        p = PlatformSpec(on_chip_bytes=1 << 20, e_mac=1e-12, macs_per_second=1e9)
        e1 = energy_from_counts(100_000_000, 1_000_000, 0, 0, p, batch=1)
        e4 = energy_from_counts(100_000_000, 1_000_000, 0, 0, p, batch=4)
        assert e4 == pytest.approx(100e-6 + 25e-6, rel=1e-9)
        assert e4 < e1

    def test_graph_estimate_includes_activation_traffic(self):
        g = zoo.squeezenet(0.5)
        tight = PlatformSpec(on_chip_bytes=1024, e_mac=1e-12, macs_per_second=1e9)
        roomy = PlatformSpec(on_chip_bytes=1 << 30, e_mac=1e-12, macs_per_second=1e9)
        spilled = energy_estimate(g, tight)
        resident = energy_estimate(g, roomy)
        macs_only = model_macs(g) * 1e-12
        assert resident == pytest.approx(macs_only, rel=1e-9)
        words = model_params(g) + activation_traffic_words(g)
        assert spilled == pytest.approx(macs_only + words * 100 * 1e-12, rel=1e-9)


class TestReport:
    def test_fields_are_consistent(self):
        g = zoo.squeezenet(0.5)
        m = report(g, DEFAULT_PLATFORM)
        assert m.storage_bytes == 4 * m.total_params
        assert m.ota_bytes == m.storage_bytes
        assert m.fps_proxy == pytest.approx(DEFAULT_PLATFORM.macs_per_second / m.total_macs)
        assert m.recorded_top5_error is None

    def test_deterministic(self):
        g = zoo.alexnet()
        a = json.dumps(report(g, PLATFORM).to_dict())
        b = json.dumps(report(g, PLATFORM).to_dict())
        assert a == b

    def test_input_only_graph_has_infinite_fps_proxy(self):
        b = GraphBuilder("empty")
        b.input(TensorShape(8, 8, 3))
        m = report(b.build(), PLATFORM)
        assert math.isinf(m.fps_proxy)
        assert m.to_dict()["fps_proxy"] is None

    def test_platform_validation(self):
        with pytest.raises(ValueError):
            PlatformSpec(on_chip_bytes=0, e_mac=1e-12, macs_per_second=1e9)
        with pytest.raises(ValueError, match="unknown key"):
            PlatformSpec.from_dict({"on_chip_bytes": 1, "e_mac": 1e-12,
                                    "macs_per_second": 1e9, "dram_banks": 4})
