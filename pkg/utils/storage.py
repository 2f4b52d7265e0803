import json
import logging
import os
import struct
import tempfile
from dataclasses import asdict
from pathlib import Path

import numpy as np
import pandas as pd
import torch

from axvit.axmul import AxMultiplier, Kind, ProductLut
from axvit.data import Dataset, synthetic_dataset
from axvit.errors import CatalogParseError, ConfigError, DataError
from axvit.nn import ModelConfig, ToyViT
from axvit.quant import QuantParams

logger = logging.getLogger(__name__)

LUT_MAGIC = b"AXLUT\0"
LUT_VERSION = 1
CHECKPOINT_MAGIC = b"AXVIT\0"
CHECKPOINT_VERSION = 1
CATALOG_COLUMNS = ["name", "kind", "bitwidth", "param", "power_mw", "area_um2", "delay_ns", "lut_path"]
SCALE_COLUMNS = ["layer", "role", "scale", "bitwidth"]
IDX_UBYTE = 0x08
SYNTHETIC_PREFIX = "synthetic:"


# Write to a temp file next to the target, then rename over it
def atomic_write(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _read(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError("file not found", source=str(path))
    return path.read_bytes()


# LUT files
def save_lut(lut, path):
    header = LUT_MAGIC + bytes([LUT_VERSION, lut.bitwidth, 1])
    payload = lut.entries.numpy().astype("<i4").tobytes()
    logger.info("writing %d-bit LUT to %s", lut.bitwidth, path)
    return atomic_write(path, header + payload)


def load_lut(path):
    raw = _read(path)
    head = len(LUT_MAGIC) + 3
    if raw[: len(LUT_MAGIC)] != LUT_MAGIC or len(raw) < head:
        raise DataError(f"{path}: not an AXLUT file")
    version, bitwidth, signed = raw[len(LUT_MAGIC):head]
    if version != LUT_VERSION:
        raise DataError(f"{path}: unsupported AXLUT version {version}")
    if signed != 1:
        raise DataError(f"{path}: only signed LUTs are supported")
    size = 1 << bitwidth
    entries = np.frombuffer(raw, dtype="<i4", offset=head)
    if entries.size != size * size:
        raise DataError(f"{path}: expected {size * size} entries for {bitwidth} bits, found {entries.size}")
    return ProductLut(bitwidth, torch.from_numpy(entries.astype(np.int32).reshape(size, size)), name=Path(path).stem)


# Catalog CSV, one multiplier per row; line numbers count the header as line 1
def load_catalog(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError("catalog file not found", source=str(path))
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise CatalogParseError(str(e), str(path), 1) from e
    missing = [column for column in CATALOG_COLUMNS[:7] if column not in frame.columns]
    if missing:
        raise CatalogParseError(f"missing column(s): {', '.join(missing)}", str(path), 1)
    catalog = {}
    for index, row in frame.iterrows():
        line = index + 2
        try:
            name = row["name"].strip()
            if not name:
                raise ValueError("empty name")
            if name in catalog:
                raise ValueError(f"duplicate multiplier '{name}'")
            lut_path = row.get("lut_path", "").strip() or None
            if lut_path and not Path(lut_path).is_absolute():
                lut_path = str(path.parent / lut_path)
            catalog[name] = AxMultiplier(
                name=name,
                bitwidth=int(row["bitwidth"]),
                kind=Kind(row["kind"].strip().lower()),
                param=int(row["param"] or 0),
                power_mw=float(row["power_mw"]),
                area_um2=float(row["area_um2"]),
                delay_ns=float(row["delay_ns"]),
                lut_path=lut_path,
            )
        except (ValueError, ConfigError) as e:
            raise CatalogParseError(str(e), str(path), line) from e
    if not catalog:
        raise CatalogParseError("catalog has no multipliers", str(path), 2)
    logger.info("loaded %d multipliers from %s", len(catalog), path)
    return catalog


def save_catalog(catalog, path):
    rows = [{
        "name": m.name, "kind": m.kind.value, "bitwidth": m.bitwidth, "param": m.param,
        "power_mw": m.power_mw, "area_um2": m.area_um2, "delay_ns": m.delay_ns, "lut_path": m.lut_path or "",
    } for m in catalog.values()]
    return atomic_write(path, pd.DataFrame(rows, columns=CATALOG_COLUMNS).to_csv(index=False))


# Scale maps: (layer, role) -> QuantParams
def scales_frame(scales):
    rows = [{"layer": layer, "role": role, "scale": qp.scale, "bitwidth": qp.bitwidth}
            for (layer, role), qp in sorted(scales.items())]
    return pd.DataFrame(rows, columns=SCALE_COLUMNS)


def save_scales(scales, path):
    return atomic_write(path, scales_frame(scales).to_csv(index=False, float_format="%.17g"))


def load_scales(path):
    if not Path(path).is_file():
        raise ConfigError("scale map not found", source=str(path))
    frame = pd.read_csv(path, float_precision="round_trip")
    return {(row.layer, row.role): QuantParams(float(row.scale), int(row.bitwidth)) for row in frame.itertuples()}


# Checkpoints: magic, version, u32 header length, JSON header, float32 LE payloads in header order
def save_checkpoint(model, path):
    state = model.state_dict()
    tensors = [{"name": name, "shape": list(t.shape)} for name, t in state.items()]
    header = json.dumps({
        "config": asdict(model.config),
        "tensors": tensors,
        "scales": [[layer, role, qp.scale, qp.bitwidth] for (layer, role), qp in sorted(model.scales.items())],
    }, sort_keys=True).encode("utf-8")
    payload = b"".join(t.detach().cpu().numpy().astype("<f4").tobytes() for t in state.values())
    blob = CHECKPOINT_MAGIC + bytes([CHECKPOINT_VERSION]) + struct.pack("<I", len(header)) + header + payload
    logger.info("writing checkpoint (%d tensors, %d scales) to %s", len(tensors), len(model.scales), path)
    return atomic_write(path, blob)


def load_checkpoint(path):
    raw = _read(path)
    start = len(CHECKPOINT_MAGIC)
    if raw[:start] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not an AXVIT checkpoint")
    if raw[start] != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {raw[start]}")
    (length,) = struct.unpack_from("<I", raw, start + 1)
    offset = start + 5
    try:
        header = json.loads(raw[offset:offset + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataError(f"{path}: corrupt checkpoint header: {e}") from e
    offset += length
    model = ToyViT(ModelConfig(**header["config"]))
    state = {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        if offset + 4 * count > len(raw):
            raise DataError(f"{path}: truncated tensor '{entry['name']}'")
        values = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).astype(np.float32)
        state[entry["name"]] = torch.from_numpy(values.reshape(entry["shape"]))
        offset += 4 * count
    model.load_state_dict(state)
    model.scales = {(layer, role): QuantParams(scale, bitwidth) for layer, role, scale, bitwidth in header["scales"]}
    model.eval()
    return model


# IDX: two zero bytes, type byte (0x08 = ubyte), ndim, big-endian u32 dims, then data
def write_idx(array, path):
    array = np.ascontiguousarray(array, dtype=np.uint8)
    header = bytes([0, 0, IDX_UBYTE, array.ndim]) + struct.pack(f">{array.ndim}I", *array.shape)
    return atomic_write(path, header + array.tobytes())


def read_idx(path):
    raw = _read(path)
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0 or raw[2] != IDX_UBYTE:
        raise DataError(f"{path}: not a ubyte IDX file")
    ndim = raw[3]
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    data = np.frombuffer(raw, dtype=np.uint8, offset=4 + 4 * ndim)
    if data.size != int(np.prod(dims, dtype=np.int64)):
        raise DataError(f"{path}: expected {int(np.prod(dims))} values for dims {dims}, found {data.size}")
    return data.reshape(dims).copy()


def dataset_paths(prefix):
    return Path(f"{prefix}-images.idx"), Path(f"{prefix}-labels.idx")


def save_dataset(dataset, prefix):
    images, labels = dataset_paths(prefix)
    write_idx(dataset.images, images)
    write_idx(dataset.labels, labels)
    logger.info("wrote %d samples to %s / %s", len(dataset), images, labels)
    return images, labels


# A prefix of an IDX pair, or synthetic:<n>[:<seed>]
def load_dataset(spec):
    spec = str(spec)
    if spec.startswith(SYNTHETIC_PREFIX):
        parts = spec[len(SYNTHETIC_PREFIX):].split(":")
        try:
            n = int(parts[0])
            seed = int(parts[1]) if len(parts) > 1 else 0
        except ValueError as e:
            raise ConfigError(f"expected synthetic:<n>[:<seed>], got '{spec}'", source="--dataset") from e
        return synthetic_dataset(n, seed)
    images, labels = dataset_paths(spec)
    return Dataset(read_idx(images), read_idx(labels))


# CSV tables, optionally preceded by a '# key=value,...' comment line
def write_table(frame, path, header=None):
    text = frame.to_csv(index=False, float_format="%.17g")
    if header:
        text = "# " + ",".join(f"{key}={value}" for key, value in header.items()) + "\n" + text
    return atomic_write(path, text)


def read_table(path):
    if not Path(path).is_file():
        raise ConfigError("table not found", source=str(path))
    return pd.read_csv(path, comment="#", float_precision="round_trip")


def read_table_header(path):
    with open(path, encoding="utf-8") as handle:
        first = handle.readline().strip()
    if not first.startswith("#"):
        return {}
    return dict(item.split("=", 1) for item in first[1:].strip().split(",") if "=" in item)
