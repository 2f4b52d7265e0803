"""Approximation-aware finetuning, pretraining, STE gradient checks and the toy attention run."""
import logging
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from tqdm import tqdm

from axvit.axmul import LUT_MAX_BITWIDTH, build_lut
from axvit.data import batches, subset
from axvit.errors import CalibrationStateError, ConfigError, DivergenceError
from axvit.nn import attention_forward, calibrate_model, linear_forward, real_forward, vit_forward
from axvit.quant import HistogramCalibrator, QuantParams, compute_scale

logger = logging.getLogger(__name__)

OPTIMIZERS = ("adam", "sgd")


@dataclass(frozen=True)
class TrainHyperparams:
    optimizer: str = "adam"
    learning_rate: float = 5e-5
    epochs: int = 1
    batch_size: int = 128
    data_fraction: float = 0.025
    seed: int = 0
    max_steps: int | None = None

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}, got '{self.optimizer}'", source="--optimizer")
        # 0 is accepted and means "no update"
        if not self.learning_rate >= 0:
            raise ConfigError(f"learning rate must be >= 0, got {self.learning_rate}", source="--lr")
        if not 0 < self.data_fraction <= 1:
            raise ConfigError(f"data fraction must lie in (0, 1], got {self.data_fraction}", source="--data-fraction")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch size must be >= 1")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError(f"max steps must be >= 1, got {self.max_steps}", source="--max-steps")


def _optimizer(params, hp):
    if hp.optimizer == "sgd":
        return torch.optim.SGD(params, lr=hp.learning_rate)
    return torch.optim.Adam(params, lr=hp.learning_rate, betas=(0.9, 0.999), eps=1e-8)


def _train_loop(model, dataset, hp, forward, desc):
    data = subset(dataset, hp.data_fraction, hp.seed)
    optimizer = _optimizer(model.parameters(), hp)
    history = []
    steps_per_epoch = math.ceil(len(data) / hp.batch_size)
    total = steps_per_epoch * hp.epochs if hp.max_steps is None else min(hp.max_steps, steps_per_epoch * hp.epochs)
    model.train()
    with tqdm(total=total, desc=desc, disable=not logger.isEnabledFor(logging.INFO), leave=False) as bar:
        for epoch in range(hp.epochs):
            for images, labels in batches(data, hp.batch_size, shuffle=True, seed=hp.seed + epoch):
                if len(history) >= total:
                    break
                loss = F.cross_entropy(forward(images), labels)
                if not torch.isfinite(loss):
                    raise DivergenceError(f"loss became non-finite at step {len(history)}")
                optimizer.zero_grad()
                loss.backward()
                if hp.learning_rate > 0:
                    optimizer.step()
                history.append(float(loss))
                bar.update(1)
    model.eval()
    logger.info("%s: %d steps on %d samples, loss %.4f -> %.4f", desc, len(history), len(data),
                history[0], history[-1])
    return history


# Full-precision training from scratch
def pretrain(model, dataset, hp):
    return _train_loop(model, dataset, hp, lambda images: real_forward(model, images), "pretrain")


def finetune(model, axx, dataset, hp, luts, recalibrate=False, calibration_data=None):
    if not model.calibrated:
        raise CalibrationStateError("finetuning needs a calibrated model")
    history = _train_loop(model, dataset, hp, lambda images: vit_forward(model, images, axx, luts), "finetune")
    if recalibrate:
        old = model.scales
        bitwidth = next(iter(old.values())).bitwidth
        calibrate_model(model, calibration_data if calibration_data is not None else dataset, bitwidth=bitwidth)
    return model, history


@dataclass
class GradCheckReport:
    analytic: torch.Tensor
    numeric: torch.Tensor | None
    max_rel_deviation: float | None
    rejected: bool = False
    reason: str | None = None


def _probe_problem(probe, qp, epsilon):
    magnitude = probe.abs()
    if bool(((magnitude - qp.clip).abs() <= epsilon).any()):
        return "probe within epsilon of the clip boundary"
    inside = magnitude[magnitude < qp.clip]
    fraction = inside / qp.scale - torch.floor(inside / qp.scale)
    if bool(((fraction - 0.5).abs() * qp.scale <= epsilon).any()):
        return "probe within epsilon of a rounding boundary"
    return None


def ste_gradient_check(layer, probe, epsilon, upstream=None, seed=0):
    """STE input gradient of ``layer`` against central differences of ``layer.reference``.

    Deviation is max|analytic - numeric| / max|numeric|.
    """
    probe = torch.as_tensor(probe, dtype=torch.float64)
    if upstream is None:
        gen = torch.Generator().manual_seed(seed)
        out_shape = layer.reference(probe).shape
        upstream = torch.randn(out_shape, generator=gen, dtype=torch.float64)
    x = probe.clone().requires_grad_(True)
    (layer(x) * upstream).sum().backward()
    analytic = x.grad.detach()
    problem = _probe_problem(probe, layer.qp_x, epsilon)
    if problem:
        logger.warning("gradient check rejected: %s", problem)
        return GradCheckReport(analytic, None, None, rejected=True, reason=problem)
    numeric = torch.zeros_like(probe)
    flat = numeric.view(-1)
    with torch.no_grad():
        for i in range(probe.numel()):
            step = torch.zeros_like(probe).view(-1)
            step[i] = epsilon
            step = step.view_as(probe)
            plus = (layer.reference(probe + step) * upstream).sum()
            minus = (layer.reference(probe - step) * upstream).sum()
            flat[i] = (plus - minus) / (2 * epsilon)
    scale = max(float(numeric.abs().max()), 1e-12)
    deviation = float((analytic - numeric).abs().max()) / scale
    return GradCheckReport(analytic, numeric, deviation)


@dataclass
class ToyResult:
    losses: list
    outputs: np.ndarray
    targets: np.ndarray
    multiplier: str = ""

    def rolling_losses(self, window=50):
        losses = np.asarray(self.losses)
        kernel = np.ones(window)
        counts = np.convolve(np.ones_like(losses), kernel)[: len(losses)]
        return np.convolve(losses, kernel)[: len(losses)] / counts

    # Shared bin edges so the two distributions are comparable
    def histograms(self, bins=50):
        lo = float(min(self.outputs.min(), self.targets.min()))
        hi = float(max(self.outputs.max(), self.targets.max()))
        edges = np.linspace(lo, hi, bins + 1)
        return edges, np.histogram(self.outputs, edges)[0], np.histogram(self.targets, edges)[0]


def _dynamic_qp(tensor, bitwidth):
    return compute_scale(HistogramCalibrator(percentile=100.0).observe(tensor), bitwidth)


def toy_attention_experiment(mult, iterations=500, seed=0, learning_rate=0.5, batch_size=32, tokens=8, dim=8):
    """Regress a frozen real-arithmetic attention layer with an approximate one by SGD on N(0, 1) data.

    The target uses soft queries/keys; the student starts from near-zero weights and
    takes fresh max-calibrated scales every iteration.
    """
    if iterations < 1:
        raise ConfigError(f"iterations must be >= 1, got {iterations}", source="--iterations")
    lut = build_lut(mult) if mult.bitwidth <= LUT_MAX_BITWIDTH else mult
    gen = torch.Generator().manual_seed(seed)
    target_q = 0.3 / math.sqrt(dim) * torch.randn(dim, dim, generator=gen)
    target_k = 0.3 / math.sqrt(dim) * torch.randn(dim, dim, generator=gen)
    target_v = torch.randn(dim, dim, generator=gen) / math.sqrt(dim)
    weights = [
        (0.01 * torch.randn(dim, dim, generator=gen)).requires_grad_(True),
        (0.01 * torch.randn(dim, dim, generator=gen)).requires_grad_(True),
        torch.zeros(dim, dim).requires_grad_(True),
    ]
    optimizer = torch.optim.SGD(weights, lr=learning_rate)
    losses = []
    output = target = None
    for step in tqdm(range(iterations), desc=f"toy {mult.name}", leave=False,
                     disable=not logger.isEnabledFor(logging.INFO)):
        x = torch.randn(batch_size, tokens, dim, generator=gen)
        with torch.no_grad():
            target = attention_forward(x @ target_q.t(), x @ target_k.t(), x @ target_v.t(), dim)
        qp_x = _dynamic_qp(x, mult.bitwidth)
        q, k, v = (linear_forward(x, w, None, qp_x, _dynamic_qp(w, mult.bitwidth), lut) for w in weights)
        qps = {
            "attn.query": _dynamic_qp(q, mult.bitwidth),
            "attn.key": _dynamic_qp(k, mult.bitwidth),
            "attn.value": _dynamic_qp(v, mult.bitwidth),
            "attn.probs": QuantParams(1.0 / ((1 << (mult.bitwidth - 1)) - 1), mult.bitwidth),
        }
        output = attention_forward(q, k, v, dim, qps, lut)
        loss = F.mse_loss(output, target)
        if not torch.isfinite(loss):
            raise DivergenceError(f"toy experiment diverged at iteration {step}")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        losses.append(float(loss))
    logger.info("toy %s: mse %.5f -> %.5f over %d iterations", mult.name, losses[0], losses[-1], iterations)
    return ToyResult(losses, output.detach().numpy().ravel(), target.numpy().ravel(), mult.name)
