"""Symmetric per-tensor quantization, histogram-percentile calibration and STE helpers."""
import logging
from dataclasses import dataclass

import numpy as np
import torch

from axvit.errors import CalibrationStateError, ConfigError, DataError

logger = logging.getLogger(__name__)

DEFAULT_BINS = 2048
DEFAULT_PERCENTILE = 99.9
CLIP_FLOOR = 1e-8


@dataclass(frozen=True)
class QuantParams:
    scale: float
    bitwidth: int = 8
    zero_point: int = 0

    def __post_init__(self):
        if not self.scale > 0:
            raise ConfigError(f"scale must be > 0, got {self.scale}")
        if self.zero_point != 0:
            raise ConfigError("only symmetric quantization (zero_point=0) is supported")
        if self.bitwidth < 2:
            raise ConfigError(f"bitwidth must be >= 2, got {self.bitwidth}")

    @property
    def qmax(self):
        return (1 << (self.bitwidth - 1)) - 1

    @property
    def clip(self):
        return self.scale * self.qmax

    @classmethod
    def from_clip(cls, clip, bitwidth):
        return cls(clip / ((1 << (bitwidth - 1)) - 1), bitwidth)


# Histogram of |values| over [0, observed_max]; grows by proportional rebinning
class HistogramCalibrator:
    def __init__(self, num_bins=DEFAULT_BINS, percentile=DEFAULT_PERCENTILE):
        if num_bins < 1:
            raise ConfigError(f"num_bins must be >= 1, got {num_bins}")
        if not 0 < percentile <= 100:
            raise ConfigError(f"percentile must lie in (0, 100], got {percentile}")
        self.num_bins = num_bins
        self.percentile = percentile
        self.counts = np.zeros(num_bins, dtype=np.float64)
        self.observed_max = 0.0
        self.total = 0

    @property
    def bin_width(self):
        return self.observed_max / self.num_bins

    def _rebin(self, new_max):
        n = self.num_bins
        if self.observed_max == 0.0:
            counts = np.zeros(n)
            counts[0] = self.counts.sum()
        else:
            # Interpolating the cumulative mass spreads each old bin over the new ones it overlaps
            cdf = np.concatenate(([0.0], np.cumsum(self.counts)))
            old_edges = np.linspace(0.0, self.observed_max, n + 1)
            new_edges = np.linspace(0.0, new_max, n + 1)
            counts = np.diff(np.interp(new_edges, old_edges, cdf))
        logger.debug("rebinned histogram from max %.6g to %.6g", self.observed_max, new_max)
        self.counts = counts
        self.observed_max = float(new_max)

    def observe(self, values):
        if isinstance(values, torch.Tensor):
            values = values.detach().cpu().numpy()
        values = np.abs(np.asarray(values, dtype=np.float64).ravel())
        if not np.all(np.isfinite(values)):
            raise DataError("calibration data contains NaN or Inf")
        if values.size == 0:
            return self
        vmax = float(values.max())
        if vmax > self.observed_max:
            self._rebin(vmax)
        if self.observed_max == 0.0:
            self.counts[0] += values.size
        else:
            hist, _ = np.histogram(values, bins=self.num_bins, range=(0.0, self.observed_max))
            self.counts += hist
        self.total += values.size
        return self

    def clip_value(self):
        if self.total == 0:
            raise CalibrationStateError("calibrator has not observed any values")
        if self.percentile >= 100:
            clip = self.observed_max
        else:
            target = self.percentile / 100.0 * self.total
            cumulative = np.cumsum(self.counts)
            index = int(np.searchsorted(cumulative, target - 1e-9 * self.total, side="left"))
            clip = min(index + 1, self.num_bins) * self.bin_width
        if clip <= 0.0:
            logger.warning("calibrated clip is zero, using floor %g", CLIP_FLOOR)
            clip = CLIP_FLOOR
        return clip


def observe(cal, values):
    return cal.observe(values)


def compute_scale(cal, bitwidth):
    return QuantParams.from_clip(cal.clip_value(), bitwidth)


# Round half away from zero, then saturate to the symmetric range
def quantize(x, qp):
    x = torch.as_tensor(x)
    if not x.is_floating_point():
        x = x.to(torch.get_default_dtype())
    q = torch.sign(x) * torch.floor(x.abs() / qp.scale + 0.5)
    return q.clamp(-qp.qmax, qp.qmax).to(torch.int64)


def dequantize(q, qp, dtype=None):
    return torch.as_tensor(q).to(dtype or torch.get_default_dtype()) * qp.scale


def ste_mask(x, qp):
    return (torch.as_tensor(x).abs() <= qp.clip).to(torch.as_tensor(x).dtype)


def fake_quant_ste_grad(upstream_grad, x, qp):
    upstream_grad = torch.as_tensor(upstream_grad)
    x = torch.as_tensor(x)
    if upstream_grad.shape != x.shape:
        raise ConfigError(f"gradient shape {tuple(upstream_grad.shape)} does not match input {tuple(x.shape)}")
    return upstream_grad * ste_mask(x, qp).to(upstream_grad.dtype)


class FakeQuantSTE(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, qp):
        ctx.save_for_backward(x)
        ctx.qp = qp
        return dequantize(quantize(x, qp), qp, dtype=x.dtype)

    @staticmethod
    def backward(ctx, grad_output):
        (x,) = ctx.saved_tensors
        return fake_quant_ste_grad(grad_output, x, ctx.qp), None


def fake_quant(x, qp):
    return FakeQuantSTE.apply(x, qp)
