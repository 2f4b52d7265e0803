"""Approximate multipliers: behavioral models, exhaustive product LUTs and error metrics.

Operands are signed two's-complement integers of ``bitwidth`` bits. A LUT row or
column index is the offset encoding ``x + 2**(b-1)``.
"""
import hashlib
import logging
import re
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import torch

from axvit.errors import ConfigError, LutModeError, OperandRangeError

logger = logging.getLogger(__name__)

LUT_MAX_BITWIDTH = 12

# Multiplier family
class Kind(str, Enum):
    EXACT = "exact"
    TRUNCATE = "truncate"
    PERFORATE = "perforate"
    EXTERNAL = "external"


@dataclass(frozen=True)
class AxMultiplier:
    name: str
    bitwidth: int
    kind: Kind = Kind.EXACT
    param: int = 0
    power_mw: float = 0.0
    area_um2: float = 0.0
    delay_ns: float = 0.0
    lut_path: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.bitwidth < 2:
            raise ConfigError(f"bitwidth must be >= 2, got {self.bitwidth}", source=self.name)
        if self.kind in (Kind.TRUNCATE, Kind.PERFORATE) and not 0 <= self.param < self.bitwidth:
            raise ConfigError(f"{self.kind.value} parameter must lie in [0, {self.bitwidth}), got {self.param}",
                              source=self.name)
        if self.kind is Kind.EXTERNAL and not self.lut_path:
            raise ConfigError("external multiplier needs a lut_path", source=self.name)
        for field in ("power_mw", "area_um2", "delay_ns"):
            if getattr(self, field) < 0:
                raise ConfigError(f"{field} must be >= 0", source=self.name)

    @property
    def lo(self):
        return -(1 << (self.bitwidth - 1))

    @property
    def hi(self):
        return (1 << (self.bitwidth - 1)) - 1

    @property
    def is_exact(self):
        return self.kind is Kind.EXACT or (self.kind in (Kind.TRUNCATE, Kind.PERFORATE) and self.param == 0)

    # Functional mode: elementwise products on python ints or int64 tensors, no range check
    def products(self, x, y):
        if self.kind is Kind.EXACT:
            return x * y
        if self.kind is Kind.TRUNCATE:
            keep = ~((1 << self.param) - 1)
            return (x & keep) * (y & keep)
        if self.kind is Kind.PERFORATE:
            # Dropping the r lowest partial-product rows of y equals clearing y's r LSBs
            keep = ~((1 << self.param) - 1)
            return x * (y & keep)
        return _external_lut(self.lut_path).products(x, y)

    def check_range(self, x, y):
        _check_operands(x, y, self.bitwidth)


class ProductLut:
    """Dense ``2**b x 2**b`` table of signed products, immutable after construction."""

    def __init__(self, bitwidth, entries, name=None):
        size = 1 << bitwidth
        entries = torch.as_tensor(entries).to(torch.int32)
        if tuple(entries.shape) != (size, size):
            raise ConfigError(f"LUT for {bitwidth} bits needs shape ({size}, {size}), got {tuple(entries.shape)}",
                              source=name)
        self.bitwidth = bitwidth
        self.name = name
        self._flat = entries.reshape(-1).clone()

    @property
    def offset(self):
        return 1 << (self.bitwidth - 1)

    @property
    def size(self):
        return 1 << self.bitwidth

    # Copy, so callers cannot mutate the table
    @property
    def entries(self):
        return self._flat.view(self.size, self.size).clone()

    def encode(self, x):
        return x + self.offset

    def check_range(self, x, y):
        _check_operands(x, y, self.bitwidth)

    # Entries at flat indices encode(x) * size + encode(y); no range check
    def take(self, index):
        return self._flat[index]

    def products(self, x, y):
        x = torch.as_tensor(x, dtype=torch.int64)
        y = torch.as_tensor(y, dtype=torch.int64)
        self.check_range(x, y)
        return self.take(self.encode(x) * self.size + self.encode(y)).to(torch.int64)

    def __eq__(self, other):
        return (isinstance(other, ProductLut) and other.bitwidth == self.bitwidth
                and torch.equal(other._flat, self._flat))

    def __hash__(self):
        return hash((self.bitwidth, lut_checksum(self)))

    def __repr__(self):
        return f"ProductLut(name={self.name!r}, bitwidth={self.bitwidth})"


@dataclass(frozen=True)
class ErrorMetrics:
    mae_pct: float
    wce_pct: float
    mre_pct: float


def _bounds(bitwidth):
    return -(1 << (bitwidth - 1)), (1 << (bitwidth - 1)) - 1


def _check_operands(x, y, bitwidth):
    lo, hi = _bounds(bitwidth)
    for operand, value in (("x", x), ("y", y)):
        if isinstance(value, torch.Tensor):
            if value.numel() == 0:
                continue
            vmin, vmax = int(value.min()), int(value.max())
            if vmin < lo or vmax > hi:
                raise OperandRangeError(operand, vmin if vmin < lo else vmax, bitwidth)
        elif not lo <= value <= hi:
            raise OperandRangeError(operand, value, bitwidth)


@lru_cache(maxsize=None)
def _external_lut(path):
    from utils.storage import load_lut

    return load_lut(path)


def approx_product(m, x, y):
    m.check_range(x, y)
    return int(m.products(int(x), int(y)))


# Vectorized approx_product over integer tensors
def approx_products(m, xs, ys):
    xs = torch.as_tensor(xs, dtype=torch.int64)
    ys = torch.as_tensor(ys, dtype=torch.int64)
    m.check_range(xs, ys)
    return torch.as_tensor(m.products(xs, ys), dtype=torch.int64)


def operand_grid(bitwidth):
    lo, hi = _bounds(bitwidth)
    values = torch.arange(lo, hi + 1, dtype=torch.int64)
    return torch.meshgrid(values, values, indexing="ij")


def build_lut(m):
    if m.bitwidth > LUT_MAX_BITWIDTH:
        raise LutModeError(f"{m.name}: {m.bitwidth}-bit LUT exceeds the {LUT_MAX_BITWIDTH}-bit cap; "
                           "use functional mode (pass the multiplier itself to axx_matmul)")
    if m.kind is Kind.EXTERNAL:
        lut = _external_lut(m.lut_path)
        if lut.bitwidth != m.bitwidth:
            raise ConfigError(f"LUT file is {lut.bitwidth}-bit, catalog says {m.bitwidth}", source=m.lut_path)
        return ProductLut(m.bitwidth, lut.entries, name=m.name)
    xs, ys = operand_grid(m.bitwidth)
    entries = approx_products(m, xs, ys)
    logger.debug("built %d-entry LUT for %s", entries.numel(), m.name)
    return ProductLut(m.bitwidth, entries, name=m.name)


def lut_lookup(lut, x, y):
    lut.check_range(x, y)
    return int(lut.take(lut.encode(int(x)) * lut.size + lut.encode(int(y))))


def lut_checksum(lut):
    return hashlib.sha256(lut._flat.numpy().astype("<i4").tobytes()).hexdigest()


def error_metrics(m):
    if m.bitwidth > LUT_MAX_BITWIDTH:
        raise LutModeError(f"{m.name}: exhaustive metrics are limited to {LUT_MAX_BITWIDTH} bits")
    xs, ys = operand_grid(m.bitwidth)
    exact = xs * ys
    diff = (approx_products(m, xs, ys) - exact).abs().to(torch.float64)
    norm = float(1 << (2 * m.bitwidth - 2))
    nonzero = exact != 0
    mre = (diff[nonzero] / exact[nonzero].abs().to(torch.float64)).mean()
    return ErrorMetrics(
        mae_pct=float(diff.mean() / norm * 100.0),
        wce_pct=float(diff.max() / norm * 100.0),
        mre_pct=float(mre * 100.0),
    )


# EvoApprox 8-bit signed multipliers: published hardware numbers on stand-in behavioral kinds
PRESETS_8BIT = (
    ("mul8s_1KV6", Kind.EXACT, 0, 0.425, 729.8, 1.48),
    ("mul8s_1KV9", Kind.TRUNCATE, 1, 0.410, 685.2, 1.47),
    ("mul8s_1L2H", Kind.TRUNCATE, 2, 0.301, 558.8, 1.36),
    ("mul8s_1L2L", Kind.TRUNCATE, 3, 0.200, 411.6, 1.14),
)


def default_catalog():
    return {name: AxMultiplier(name, 8, kind, param, power, area, delay)
            for name, kind, param, power, area, delay in PRESETS_8BIT}


_SPEC_PATTERNS = (
    (re.compile(r"^exact(\d+)$"), Kind.EXACT),
    (re.compile(r"^trunc(\d+)k(\d+)$"), Kind.TRUNCATE),
    (re.compile(r"^perf(\d+)r(\d+)$"), Kind.PERFORATE),
)


# Accepts catalog names or short specs such as exact8, trunc8k2, perf8r3
def parse_multiplier_spec(spec, catalog=None):
    if catalog and spec in catalog:
        return catalog[spec]
    for pattern, kind in _SPEC_PATTERNS:
        match = pattern.match(spec)
        if match:
            groups = [int(g) for g in match.groups()]
            return AxMultiplier(spec, groups[0], kind, groups[1] if len(groups) > 1 else 0)
    raise ConfigError(f"unknown multiplier '{spec}' (expected a catalog name, exactN, truncNkK or perfNrR)")


# A true exact multiplier wins over zero-parameter truncate/perforate entries
def exact_baseline(catalog):
    for m in catalog.values():
        if m.kind is Kind.EXACT:
            return m
    for m in catalog.values():
        if m.is_exact:
            return m
    raise ConfigError("catalog has no exact multiplier to serve as power baseline")


# name -> ProductLut, or the multiplier itself above the LUT cap (functional mode)
def build_luts(catalog):
    return {name: build_lut(m) if m.bitwidth <= LUT_MAX_BITWIDTH else m for name, m in catalog.items()}
