import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedasta.client import (
    ClientSpec,
    client_encode,
    client_encoder_backward,
    client_loss_and_grads,
    client_predict,
    init_client,
    period_spectrum,
)
from fedasta.decomposition import decompose
from fedasta.errors import ConfigurationError, DimensionError, NumericOverflowError
from fedasta.nn import gru_sequence_forward
from fedasta.spectral import Threshold, filtered_ft

from conftest import numeric_grad, rel_err

SPEC = ClientSpec(input_len=12, horizon=4, hidden=6, layers=2, server_hidden=5)


def composed_oracle(x, h_agg, p, spec):
    """Forecast written as the explicit composition of its pieces."""
    d = decompose(x[:, 0], spec.window)
    seq = x.copy()
    seq[:, 0] = d.seasonal
    h, _ = gru_sequence_forward(seq, p, prefix="enc")
    seasonal = np.concatenate([h[0], h_agg]) @ p["head.w"] + p["head.b"]
    trend = d.trend @ p["trend.w"] + p["trend.b"]
    return seasonal + trend


class TestEncode:
    def test_constant_input(self, rng):
        p = init_client(SPEC, rng)
        enc = client_encode(np.full((12, 1), 2.5), p, SPEC, Threshold())
        h0, _ = gru_sequence_forward(np.zeros((12, 1)), p, prefix="enc")
        np.testing.assert_array_equal(enc.h, h0)
        s = enc.spectra[0]
        assert s.indices.tolist() == [0]
        assert s.values[0] == pytest.approx(12 * 2.5)

    def test_window_one_encodes_zero_series(self, rng):
        spec = ClientSpec(input_len=12, horizon=4, hidden=6, layers=1, server_hidden=5, window=1)
        p = init_client(spec, rng)
        x = rng.normal(size=(12, 1))
        h0, _ = gru_sequence_forward(np.zeros((12, 1)), p, prefix="enc")
        np.testing.assert_array_equal(client_encode(x, p, spec).h, h0)

    def test_sinusoid_plus_offset(self, rng):
        p = init_client(SPEC, rng)
        t = np.arange(12)
        x = (5 + np.sin(2 * np.pi * t / 4))[:, None]
        enc = client_encode(x, p, SPEC, Threshold())
        d = decompose(x[:, 0], 5)
        ref = filtered_ft(d.trend, Threshold())
        assert enc.spectra[0].indices.tolist() == ref.indices.tolist()
        assert np.argmax(np.abs(enc.spectra[0].values)) == 0
        seq = x.copy()
        seq[:, 0] = d.seasonal
        np.testing.assert_array_equal(enc.h, gru_sequence_forward(seq, p, prefix="enc")[0])

    def test_batch_matches_single(self, rng):
        p = init_client(SPEC, rng)
        x = rng.normal(size=(3, 12, 1))
        enc = client_encode(x, p, SPEC)
        for b in range(3):
            np.testing.assert_allclose(enc.h[b], client_encode(x[b], p, SPEC).h[0], atol=1e-12)

    def test_wrong_length(self, rng):
        with pytest.raises(DimensionError):
            client_encode(np.zeros((10, 1)), init_client(SPEC, rng), SPEC)

    def test_bad_window(self):
        with pytest.raises(ConfigurationError):
            ClientSpec(window=4)

    def test_multichannel_decomposes_target_only(self, rng):
        spec = ClientSpec(input_len=12, horizon=4, input_dim=2, hidden=4, layers=1, server_hidden=3)
        p = init_client(spec, rng)
        x = rng.normal(size=(12, 2))
        enc = client_encode(x, p, spec)
        seq = x.copy()
        seq[:, 0] = decompose(x[:, 0], 5).seasonal
        np.testing.assert_array_equal(enc.h, gru_sequence_forward(seq, p, prefix="enc")[0])

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-50, 50))
    def test_seasonal_path_shift_invariant(self, c):
        r = np.random.default_rng(0)
        p = init_client(SPEC, r)
        x = r.normal(size=(12, 1))
        a = client_encode(x, p, SPEC).h
        b = client_encode(x + c, p, SPEC).h
        np.testing.assert_allclose(a, b, atol=1e-9)

    def test_period_spectrum_uses_trend(self, rng):
        x = rng.normal(size=50)
        s = period_spectrum(x, SPEC, Threshold())
        from fedasta.decomposition import moving_average
        ref = filtered_ft(moving_average(x, 5), Threshold())
        assert s.indices.tolist() == ref.indices.tolist()


class TestPredict:
    def test_zero_weights_give_biases(self, rng):
        p = init_client(SPEC, rng)
        for k in ("head.w", "trend.w"):
            p[k] = np.zeros_like(p[k])
        fc, _ = client_predict(rng.normal(size=6), rng.normal(size=5), rng.normal(size=12), p)
        np.testing.assert_array_equal(fc.y_hat[0], p["head.b"] + p["trend.b"])

    def test_zero_aggregate_isolates_local_path(self, rng):
        p = init_client(SPEC, rng)
        h, tr = rng.normal(size=6), rng.normal(size=12)
        fc, _ = client_predict(h, np.zeros(5), tr, p)
        expect = h @ p["head.w"][:6] + p["head.b"] + tr @ p["trend.w"] + p["trend.b"]
        np.testing.assert_allclose(fc.y_hat[0], expect, atol=1e-12)

    def test_composition_oracle(self, rng):
        p = init_client(SPEC, rng)
        x = rng.normal(size=(12, 1))
        h_agg = rng.normal(size=5)
        enc = client_encode(x, p, SPEC)
        fc, _ = client_predict(enc.h, h_agg, enc.trend, p)
        np.testing.assert_allclose(fc.y_hat[0], composed_oracle(x, h_agg, p, SPEC), atol=1e-12)
        assert np.array_equal(fc.y_hat, fc.seasonal_pred + fc.trend_pred)

    def test_width_mismatch(self, rng):
        with pytest.raises(DimensionError):
            client_predict(np.zeros(6), np.zeros(4), np.zeros(12), init_client(SPEC, rng))

    def test_no_decomposition_has_no_trend_params(self, rng):
        spec = ClientSpec(input_len=12, horizon=4, hidden=6, layers=1, server_hidden=5, decompose=False)
        p = init_client(spec, rng)
        assert not any(k.startswith("trend.") for k in p)
        full = init_client(SPEC, rng)
        assert set(full) - set(init_client(ClientSpec(input_len=12, horizon=4, hidden=6, layers=2, server_hidden=5,
                                                      decompose=False), rng)) == {"trend.w", "trend.b"}
        enc = client_encode(rng.normal(size=(12, 1)), p, spec)
        fc, _ = client_predict(enc.h, np.zeros(5), enc.trend, p)
        assert not fc.trend_pred.any()


class TestLoss:
    def test_perfect_forecast(self, rng):
        p = init_client(SPEC, rng)
        fc, cache = client_predict(rng.normal(size=6), rng.normal(size=5), rng.normal(size=12), p)
        loss, g = client_loss_and_grads(fc, fc.y_hat.copy(), cache)
        assert loss == 0 and all(not v.any() for v in g.values())

    def test_horizon_one_analytic(self):
        p = {"head.w": np.zeros((2, 1)), "head.b": np.array([2.0]), "trend.w": np.zeros((1, 1)), "trend.b": np.zeros(1)}
        fc, cache = client_predict(np.zeros(1), np.zeros(1), np.zeros(1), p)
        loss, g = client_loss_and_grads(fc, np.zeros((1, 1)), cache)
        assert loss == 4.0
        assert g["head.b"][0] == 4.0

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_names_node(self, rng):
        p = init_client(SPEC, rng)
        fc, cache = client_predict(np.full(6, np.inf), np.zeros(5), np.zeros(12), p)
        with pytest.raises(NumericOverflowError, match="node 7"):
            client_loss_and_grads(fc, np.zeros((1, 4)), cache, node_id=7)

    @pytest.mark.parametrize("seed", range(20))
    def test_finite_differences_all_parameters(self, seed):
        r = np.random.default_rng(seed)
        p = init_client(SPEC, r)
        x = r.normal(size=(3, 12, 1))
        h_agg = r.normal(size=(3, 5))
        y = r.normal(size=(3, 4))

        def loss():
            enc = client_encode(x, p, SPEC)
            fc, _ = client_predict(enc.h, h_agg, enc.trend, p)
            return float(np.mean((fc.y_hat - y) ** 2))

        enc = client_encode(x, p, SPEC)
        fc, cache = client_predict(enc.h, h_agg, enc.trend, p)
        _, g = client_loss_and_grads(fc, y, cache)
        g.update(client_encoder_backward(enc, g["d_h"]))
        for name in p:
            assert rel_err(g[name], numeric_grad(loss, p[name])) < 1e-4, name
        assert rel_err(g["d_h_agg"], numeric_grad(loss, h_agg)) < 1e-4
