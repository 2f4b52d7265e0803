"""Toy vision transformer whose attention and FFN multiplications run through product LUTs.

Each matmul site has two operand roles (e.g. ``qkv.input`` / ``qkv.weight``) with their
own per-tensor scales. The same block code runs in three modes:

- real: no scales, plain floating point (pretraining, calibration);
- reference: scales, exact integer matmul (the integer-reference quantized path);
- approximate: scales, every product looked up in the block's LUT.

Patch embedding, LayerNorm, softmax, GELU, residual adds and the head stay exact.
"""
import logging
import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from axvit.axmul import ProductLut
from axvit.data import batches, patchify
from axvit.errors import CalibrationStateError, ConfigError, DataError
from axvit.quant import DEFAULT_BINS, DEFAULT_PERCENTILE, HistogramCalibrator, QuantParams, compute_scale, quantize, ste_mask

logger = logging.getLogger(__name__)

ACC_MAX = (1 << 31) - 1
PROBS_ROLE = "attn.probs"


@dataclass(frozen=True)
class ModelConfig:
    num_layers: int = 2
    embed_dim: int = 32
    num_heads: int = 2
    ffn_dim: int = 64
    num_patches: int = 16
    num_classes: int = 10
    patch_dim: int = 16
    layer_norm: bool = True

    def __post_init__(self):
        if self.num_layers < 1:
            raise ConfigError(f"num_layers must be >= 1, got {self.num_layers}")
        if self.embed_dim % self.num_heads:
            raise ConfigError(f"embed_dim {self.embed_dim} is not divisible by num_heads {self.num_heads}")
        if math.isqrt(self.patch_dim) ** 2 != self.patch_dim:
            raise ConfigError(f"patch_dim {self.patch_dim} is not a square patch")

    @property
    def head_dim(self):
        return self.embed_dim // self.num_heads

    @property
    def patch_size(self):
        return math.isqrt(self.patch_dim)


@dataclass(frozen=True)
class AxxConfig:
    assignment: tuple

    def __post_init__(self):
        object.__setattr__(self, "assignment", tuple(self.assignment))

    @classmethod
    def uniform(cls, name, num_layers):
        return cls((name,) * num_layers)

    @classmethod
    def parse(cls, text):
        return cls(tuple(part.strip() for part in text.replace(",", "|").split("|") if part.strip()))

    def __str__(self):
        return "|".join(self.assignment)

    def __len__(self):
        return len(self.assignment)

    def validate(self, catalog, num_layers):
        if len(self.assignment) != num_layers:
            raise ConfigError(f"assignment has {len(self.assignment)} entries, model has {num_layers} layers",
                              source="axx config")
        unknown = [name for name in self.assignment if name not in catalog]
        if unknown:
            raise ConfigError(f"unknown multiplier(s): {', '.join(unknown)}", source="axx config")


# Approximable MACs per block and the exact ones (patch embedding + head), per image
@dataclass(frozen=True)
class MacCounts:
    per_layer: tuple
    fixed: float = 0.0

    @property
    def total(self):
        return sum(self.per_layer) + self.fixed


def layer_mac_counts(config):
    p, d, df = config.num_patches, config.embed_dim, config.ffn_dim
    block = p * d * 3 * d + 2 * p * p * d + p * d * d + 2 * p * d * df
    fixed = p * config.patch_dim * d + d * config.num_classes
    return MacCounts(tuple([block] * config.num_layers), fixed)


def axx_matmul(a, b, lut):
    a = torch.as_tensor(a, dtype=torch.int64)
    b = torch.as_tensor(b, dtype=torch.int64)
    if a.dim() < 2 or b.dim() < 2 or a.shape[-1] != b.shape[-2]:
        raise DataError(f"matmul shape mismatch: {tuple(a.shape)} x {tuple(b.shape)}")
    lut.check_range(a, b)
    batch = torch.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    out = torch.zeros(*batch, a.shape[-2], b.shape[-1], dtype=torch.int64)
    if isinstance(lut, ProductLut):
        rows = lut.encode(a) * lut.size
        cols = lut.encode(b)
        for t in range(a.shape[-1]):
            out += lut.take(rows[..., :, t, None] + cols[..., None, t, :])
    else:
        # Functional mode for multipliers without a LUT
        for t in range(a.shape[-1]):
            out += lut.products(a[..., :, t, None], b[..., None, t, :])
    if out.numel() and int(out.abs().max()) > ACC_MAX:
        raise DataError("32-bit accumulator overflow in approximate matmul")
    return out


# Exact integer matmul through float64, exact while |sums| < 2**53
def reference_matmul(a, b):
    return torch.matmul(a.to(torch.float64), b.to(torch.float64)).round().to(torch.int64)


class ApproxMatmul(torch.autograd.Function):
    """Quantize both operands, multiply through the LUT, rescale.

    Backward is the straight-through estimate: the real-arithmetic matmul gradient
    masked to the clip range of each operand.
    """

    @staticmethod
    def forward(ctx, a, b, qp_a, qp_b, lut):
        acc = axx_matmul(quantize(a, qp_a), quantize(b, qp_b), lut) if lut is not None \
            else reference_matmul(quantize(a, qp_a), quantize(b, qp_b))
        ctx.save_for_backward(a, b)
        ctx.qps = (qp_a, qp_b)
        return acc.to(a.dtype) * (qp_a.scale * qp_b.scale)

    @staticmethod
    def backward(ctx, grad):
        a, b = ctx.saved_tensors
        qp_a, qp_b = ctx.qps
        grad_a = grad_b = None
        if ctx.needs_input_grad[0]:
            grad_a = (grad @ b.transpose(-1, -2) * ste_mask(a, qp_a)).sum_to_size(a.shape)
        if ctx.needs_input_grad[1]:
            grad_b = (a.transpose(-1, -2) @ grad * ste_mask(b, qp_b)).sum_to_size(b.shape)
        return grad_a, grad_b, None, None, None


def approx_matmul(a, b, qp_a, qp_b, lut):
    if lut is not None and max(qp_a.bitwidth, qp_b.bitwidth) > lut.bitwidth:
        raise ConfigError(f"{lut.bitwidth}-bit multiplier cannot take {max(qp_a.bitwidth, qp_b.bitwidth)}-bit operands")
    return ApproxMatmul.apply(a, b, qp_a, qp_b, lut)


def _product(a, b, qp_a, qp_b, lut):
    if qp_a is None and qp_b is None and lut is None:
        return a @ b
    if qp_a is None or qp_b is None:
        raise CalibrationStateError("approximate matmul needs calibrated scales for both operands")
    return approx_matmul(a, b, qp_a, qp_b, lut)


def _qp(qps, role):
    if qps is None:
        return None
    if role not in qps:
        raise CalibrationStateError(f"no calibrated scale for '{role}'")
    return qps[role]


def _observe(observe, role, tensor):
    if observe is not None:
        observe(role, tensor.detach())


def linear_forward(x, w, bias, qp_x, qp_w, lut):
    out = _product(x, w.t(), qp_x, qp_w, lut)
    return out if bias is None else out + bias


def _linear(x, w, bias, name, qps, lut, observe):
    _observe(observe, f"{name}.input", x)
    _observe(observe, f"{name}.weight", w)
    return linear_forward(x, w, bias, _qp(qps, f"{name}.input"), _qp(qps, f"{name}.weight"), lut)


# Scores are dequantized first, then divided by sqrt(d_k)
def attention_forward(q, k, v, d_k, qps=None, lut=None, observe=None):
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise DataError(f"attention shape mismatch: q {tuple(q.shape)}, k {tuple(k.shape)}, v {tuple(v.shape)}")
    kt = k.transpose(-1, -2)
    _observe(observe, "attn.query", q)
    _observe(observe, "attn.key", kt)
    scores = _product(q, kt, _qp(qps, "attn.query"), _qp(qps, "attn.key"), lut) / math.sqrt(d_k)
    probs = torch.softmax(scores, dim=-1)
    _observe(observe, "attn.value", v)
    return _product(probs, v, _qp(qps, PROBS_ROLE), _qp(qps, "attn.value"), lut)


@dataclass
class AttentionWeights:
    qkv_weight: torch.Tensor
    qkv_bias: torch.Tensor
    proj_weight: torch.Tensor
    proj_bias: torch.Tensor


def multi_head_forward(x, weights, num_heads, qps=None, lut=None, observe=None):
    batch, tokens, dim = x.shape
    if dim % num_heads:
        raise ConfigError(f"{num_heads} heads do not divide embedding size {dim}")
    head_dim = dim // num_heads
    qkv = _linear(x, weights.qkv_weight, weights.qkv_bias, "qkv", qps, lut, observe)
    q, k, v = qkv.reshape(batch, tokens, 3, num_heads, head_dim).permute(2, 0, 3, 1, 4)
    heads = attention_forward(q, k, v, head_dim, qps, lut, observe)
    merged = heads.transpose(1, 2).reshape(batch, tokens, dim)
    return _linear(merged, weights.proj_weight, weights.proj_bias, "proj", qps, lut, observe)


def gelu(x):
    return F.gelu(x, approximate="tanh")


def ffn_forward(x, w1, b1, w2, b2, qps=None, lut=None, observe=None):
    hidden = gelu(_linear(x, w1, b1, "fc1", qps, lut, observe))
    return _linear(hidden, w2, b2, "fc2", qps, lut, observe)


class Block(nn.Module):
    def __init__(self, config):
        super().__init__()
        d = config.embed_dim
        self.norm1 = nn.LayerNorm(d)
        self.qkv = nn.Linear(d, 3 * d)
        self.proj = nn.Linear(d, d)
        self.norm2 = nn.LayerNorm(d)
        self.fc1 = nn.Linear(d, config.ffn_dim)
        self.fc2 = nn.Linear(config.ffn_dim, d)

    def attention_weights(self):
        return AttentionWeights(self.qkv.weight, self.qkv.bias, self.proj.weight, self.proj.bias)

    def forward(self, x, num_heads, qps=None, lut=None, observe=None, layer_norm=True):
        h = self.norm1(x) if layer_norm else x
        x = x + multi_head_forward(h, self.attention_weights(), num_heads, qps, lut, observe)
        h = self.norm2(x) if layer_norm else x
        return x + ffn_forward(h, self.fc1.weight, self.fc1.bias, self.fc2.weight, self.fc2.bias, qps, lut, observe)


class ToyViT(nn.Module):
    def __init__(self, config=None, seed=0):
        super().__init__()
        self.config = config or ModelConfig()
        cfg = self.config
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.patch_embed = nn.Linear(cfg.patch_dim, cfg.embed_dim)
            self.pos_embed = nn.Parameter(0.02 * torch.randn(1, cfg.num_patches, cfg.embed_dim))
            self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.num_layers))
            self.head = nn.Linear(cfg.embed_dim, cfg.num_classes)
        # (layer, role) -> QuantParams
        self.scales = {}

    @property
    def calibrated(self):
        return bool(self.scales)

    def block_scales(self, index):
        if not self.scales:
            raise CalibrationStateError("model is not calibrated; run calibration first")
        layer = f"block{index}"
        return {role: qp for (name, role), qp in self.scales.items() if name == layer}

    def embed(self, images):
        patches = patchify(images, self.config.patch_size)
        if patches.shape[1] != self.config.num_patches:
            raise DataError(f"images give {patches.shape[1]} patches, model expects {self.config.num_patches}")
        return self.patch_embed(patches) + self.pos_embed

    def classify(self, tokens):
        return self.head(tokens.mean(dim=1))

    def forward(self, images):
        return real_forward(self, images)


def _run(model, images, block_luts, quantized, observe=None):
    x = model.embed(images)
    for index, block in enumerate(model.blocks):
        qps = model.block_scales(index) if quantized else None
        block_observe = None
        if observe is not None:
            block_observe = lambda role, t, layer=f"block{index}": observe(layer, role, t)
        x = block(x, model.config.num_heads, qps, block_luts[index], block_observe, model.config.layer_norm)
    return model.classify(x)


def vit_forward(model, images, axx, luts):
    axx.validate(luts, model.config.num_layers)
    return _run(model, images, [luts[name] for name in axx.assignment], quantized=True)


# Integer-reference path: same quantization, exact integer matmuls
def reference_forward(model, images):
    return _run(model, images, [None] * model.config.num_layers, quantized=True)


def real_forward(model, images, observe=None):
    return _run(model, images, [None] * model.config.num_layers, quantized=False, observe=observe)


def calibrate_model(model, dataset, percentile=DEFAULT_PERCENTILE, bins=DEFAULT_BINS, bitwidth=8, batch_size=128):
    calibrators = {}

    def observe(layer, role, tensor):
        if (layer, role) not in calibrators:
            # Weights use max calibration, activations the configured percentile
            calibrators[(layer, role)] = HistogramCalibrator(bins, 100.0 if role.endswith(".weight") else percentile)
        calibrators[(layer, role)].observe(tensor)

    if len(dataset) == 0:
        raise DataError("calibration dataset is empty")
    with torch.no_grad():
        for images, _ in batches(dataset, batch_size):
            real_forward(model, images, observe)
    scales = {key: compute_scale(cal, bitwidth) for key, cal in sorted(calibrators.items())}
    probs = QuantParams(1.0 / ((1 << (bitwidth - 1)) - 1), bitwidth)
    for index in range(model.config.num_layers):
        scales[(f"block{index}", PROBS_ROLE)] = probs
    model.scales = scales
    logger.info("calibrated %d tensors on %d samples (percentile %.4g, %d bins, %d-bit)",
                len(scales), len(dataset), percentile, bins, bitwidth)
    return scales


# Top-1 accuracy; axx=None evaluates the unquantized model
def evaluate_accuracy(model, dataset, axx, luts=None, batch_limit=None, batch_size=256):
    data = dataset.head(batch_limit) if batch_limit else dataset
    if len(data) == 0:
        raise DataError("cannot evaluate on an empty dataset")
    correct = 0
    with torch.no_grad():
        for images, labels in batches(data, batch_size):
            logits = real_forward(model, images) if axx is None else vit_forward(model, images, axx, luts)
            correct += int((logits.argmax(dim=-1) == labels).sum())
    return correct / len(data)


@dataclass
class QuantLinear:
    """A single calibrated linear layer, optionally followed by GELU."""

    weight: torch.Tensor
    bias: torch.Tensor | None
    qp_x: QuantParams
    qp_w: QuantParams
    lut: object = None
    activation: str | None = None

    def _activate(self, y):
        return gelu(y) if self.activation == "gelu" else y

    def __call__(self, x):
        return self._activate(linear_forward(x, self.weight, self.bias, self.qp_x, self.qp_w, self.lut))

    def reference(self, x):
        return self._activate(linear_forward(x, self.weight, self.bias, None, None, None))
