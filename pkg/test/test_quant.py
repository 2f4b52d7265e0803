import numpy as np
import pytest
import torch

from axvit.errors import CalibrationStateError, ConfigError, DataError
from axvit.quant import (CLIP_FLOOR, HistogramCalibrator, QuantParams, compute_scale, dequantize, fake_quant,
                         fake_quant_ste_grad, observe, quantize)


def test_quantize_rounds_half_away_from_zero_and_saturates():
    qp = QuantParams(0.5)
    q = quantize(torch.tensor([0.25, -0.25, 0.74, 100.0, -100.0]), qp)
    assert q.tolist() == [1, -1, 1, 127, -127]


def test_round_trip_error_within_half_step():
    qp = QuantParams.from_clip(3.0, 8)
    x = torch.empty(100_000, dtype=torch.float64).uniform_(-3.0, 3.0, generator=torch.Generator().manual_seed(0))
    error = (dequantize(quantize(x, qp), qp, torch.float64) - x).abs()
    assert float(error.max()) <= qp.scale / 2 + 1e-12


def test_invalid_params():
    with pytest.raises(ConfigError):
        QuantParams(0.0)
    with pytest.raises(ConfigError):
        QuantParams(0.1, zero_point=3)


def test_percentile_ignores_single_outlier():
    bulk = np.random.default_rng(0).uniform(0.0, 1.0, 999)
    cal = HistogramCalibrator(percentile=99.9).observe(np.append(bulk, 100.0))
    clip = cal.clip_value()
    assert bulk.max() <= clip <= bulk.max() + cal.bin_width


def test_max_calibration_returns_observed_max():
    cal = HistogramCalibrator(percentile=100.0)
    observe(cal, [0.5, -2.0])
    observe(cal, torch.tensor([1.5]))
    assert cal.clip_value() == 2.0
    assert compute_scale(cal, 8).scale == pytest.approx(2.0 / 127)


def test_percentile_clip_is_monotone():
    values = np.random.default_rng(1).standard_normal(10_000)
    low = HistogramCalibrator(percentile=99.0).observe(values).clip_value()
    high = HistogramCalibrator(percentile=99.9).observe(values).clip_value()
    top = HistogramCalibrator(percentile=100.0).observe(values).clip_value()
    assert low <= high <= top


def test_rebinning_keeps_mass():
    cal = HistogramCalibrator(num_bins=64)
    cal.observe(np.linspace(0, 1, 100))
    cal.observe(np.linspace(0, 4, 100))
    assert cal.total == 200
    assert cal.counts.sum() == pytest.approx(200)
    assert cal.observed_max == 4.0


@pytest.mark.parametrize("seed", range(5))
def test_split_observation_matches_single_call(seed):
    values = np.random.default_rng(seed).standard_normal(40_000)
    # largest magnitude last, so the second call rebins the first call's histogram
    peak = int(np.argmax(np.abs(values)))
    values[[peak, -1]] = values[[-1, peak]]
    whole = HistogramCalibrator().observe(values)
    split = HistogramCalibrator().observe(values[:20_000]).observe(values[20_000:])
    assert split.total == whole.total
    assert split.observed_max == whole.observed_max
    assert abs(split.clip_value() - whole.clip_value()) <= whole.bin_width * (1 + 1e-9)


def test_calibrator_errors():
    with pytest.raises(CalibrationStateError):
        HistogramCalibrator().clip_value()
    with pytest.raises(DataError):
        HistogramCalibrator().observe([1.0, float("nan")])


def test_zero_tensor_gets_floor_scale():
    cal = HistogramCalibrator().observe(np.zeros(10))
    assert cal.clip_value() == CLIP_FLOOR
    assert compute_scale(cal, 8).scale > 0


def test_ste_grad_masks_outside_clip():
    qp = QuantParams.from_clip(1.0, 8)
    x = torch.tensor([0.5, 0.999, 1.5, -2.0])
    grad = fake_quant_ste_grad(torch.ones(4), x, qp)
    assert grad.tolist() == [1.0, 1.0, 0.0, 0.0]
    with pytest.raises(ConfigError):
        fake_quant_ste_grad(torch.ones(3), x, qp)


def test_fake_quant_autograd_matches_ste_grad():
    qp = QuantParams.from_clip(1.0, 8)
    x = torch.tensor([0.3, -0.7, 1.2, -1.01], requires_grad=True)
    y = fake_quant(x, qp)
    assert torch.allclose(y, dequantize(quantize(x.detach(), qp), qp))
    y.sum().backward()
    assert x.grad.tolist() == [1.0, 1.0, 0.0, 0.0]
