import math

import numpy as np
import pytest
import torch

from tempovo.temporal import (
    TimeConditionLayer,
    condition_features,
    encode_time,
    encode_time_batch,
    frequency_bank,
)


class TestEncodeTime:
    @pytest.mark.parametrize("k_pe", [2, 4, 8])
    @pytest.mark.parametrize("dt", [1 / 12, 1 / 10, 1 / 6, 1 / 4])
    def test_matches_scalar_trig(self, dt, k_pe):
        # Element-by-element oracle using math.sin/cos on scalars.
        enc = encode_time(dt, k_pe)
        assert enc.shape == (1 + 2 * k_pe,)
        assert abs(enc[0] - dt) < 1e-15
        for i in range(k_pe):
            w = math.pi * (2.0 ** i)
            assert abs(enc[1 + i] - math.sin(w * dt)) < 1e-12
            assert abs(enc[1 + k_pe + i] - math.cos(w * dt)) < 1e-12

    def test_distinct_intervals_distinct_codes(self):
        a = encode_time(1 / 12)
        b = encode_time(1 / 6)
        assert np.linalg.norm(a - b) > 1e-3

    def test_known_values(self):
        # dt -> 0: sins vanish, cosines go to one; first entry is raw dt.
        enc = encode_time(1e-12, k_pe=2)
        np.testing.assert_allclose(enc, [1e-12, 0, 0, 1, 1], atol=1e-11)
        enc = encode_time(1.0, k_pe=1)
        np.testing.assert_allclose(enc, [1.0, math.sin(math.pi), -1.0], atol=1e-15)

    def test_octave_spacing(self):
        w = frequency_bank(8)
        np.testing.assert_allclose(w[1:] / w[:-1], 2.0, atol=0)
        assert w[0] == pytest.approx(math.pi, abs=0)

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            encode_time(0.0)
        with pytest.raises(ValueError):
            encode_time(-0.1)
        with pytest.raises(ValueError):
            encode_time(float("nan"))
        with pytest.raises(ValueError):
            encode_time(0.1, k_pe=0)

    def test_batch_matches_single(self):
        dts = [1 / 12, 1 / 6, 1 / 4]
        batch = encode_time_batch(dts, k_pe=4)
        assert batch.shape == (3, 9)
        for i, dt in enumerate(dts):
            np.testing.assert_allclose(
                batch[i].numpy(), encode_time(dt, 4).astype(np.float32), atol=1e-7
            )


class TestConditionFeatures:
    def test_identity_and_doubling(self):
        rng = np.random.default_rng(0)
        feat = rng.normal(size=(5, 5, 8))
        np.testing.assert_array_equal(
            condition_features(feat, np.zeros(8), np.zeros(8)), feat
        )
        np.testing.assert_allclose(
            condition_features(feat, np.ones(8), np.zeros(8)), 2 * feat, atol=0
        )

    def test_matches_scalar_loop(self):
        rng = np.random.default_rng(1)
        feat = rng.normal(size=(4, 6, 3))
        alpha = rng.normal(size=3)
        beta = rng.normal(size=3)
        out = condition_features(feat, alpha, beta)
        for i in range(4):
            for j in range(6):
                for c in range(3):
                    ref = (1.0 + alpha[c]) * feat[i, j, c] + beta[c]
                    assert abs(out[i, j, c] - ref) < 1e-12

    def test_channel_mismatch(self):
        with pytest.raises(ValueError):
            condition_features(np.zeros((2, 2, 3)), np.zeros(4), np.zeros(3))


class TestTimeConditionLayer:
    def test_identity_at_init(self):
        torch.manual_seed(0)
        layer = TimeConditionLayer(channels=8, k_pe=4)
        # Identity for every interval, not just one.
        feat = torch.randn(2, 8, 5, 5)
        rng = np.random.default_rng(3)
        for _ in range(10):
            dts = rng.uniform(0.01, 2.0, size=2)
            out = layer(feat, encode_time_batch(dts, k_pe=4))
            assert torch.equal(out, feat)  # bitwise: (1+0)*x+0

    def test_nonzero_weights_break_identity_and_depend_on_dt(self):
        torch.manual_seed(1)
        layer = TimeConditionLayer(channels=8, k_pe=4)
        with torch.no_grad():
            layer.scale.weight.normal_(std=0.1)
            layer.shift.weight.normal_(std=0.1)
        feat = torch.randn(1, 8, 5, 5)
        out_a = layer(feat, encode_time_batch([1 / 12], k_pe=4))
        out_b = layer(feat, encode_time_batch([1 / 6], k_pe=4))
        assert not torch.equal(out_a, feat)
        assert (out_a - out_b).norm().item() > 1e-8

    def test_one_step_training_makes_conditioning_live(self):
        torch.manual_seed(2)
        layer = TimeConditionLayer(channels=4, k_pe=2)
        opt = torch.optim.SGD(layer.parameters(), lr=0.1)
        feat = torch.randn(3, 4, 2, 2)
        enc = encode_time_batch([1 / 12, 1 / 6, 1 / 4], k_pe=2)
        loss = (layer(feat, enc) - 1.0).pow(2).mean()
        loss.backward()
        opt.step()
        assert layer.scale.weight.abs().max().item() > 0
        assert layer.shift.weight.abs().max().item() > 0

    def test_shape_validation(self):
        layer = TimeConditionLayer(channels=8)
        with pytest.raises(ValueError):
            layer(torch.zeros(2, 4, 3, 3), encode_time_batch([0.1, 0.1]))
        with pytest.raises(ValueError):
            layer(torch.zeros(2, 8, 3, 3), encode_time_batch([0.1]))
