"""Flat-file tensor archive for weight sets. Bit-exact round trips.

Layout, all little-endian:

    bytes 0..7    header length N (unsigned 64-bit)
    bytes 8..8+N  UTF-8 JSON header
    the rest      raw tensor blob

The header carries ``format_version``, a CRC-32 of the blob, the attention
config (field-for-field JSON), and a tensor manifest: name, dtype ("f32" or
"f64"), row-major shape, byte offset into the blob, and byte length. Reads
validate the version, name uniqueness, offset/length consistency, blob size,
and checksum before any tensor is materialized; every failure names the
offending field. Tensors are stored and loaded as little-endian regardless
of host byte order, so an archive means the same floats everywhere.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .config import AttentionConfig, Mechanism
from .errors import ArchiveError, ConfigurationError
from .weights import WeightSet

FORMAT_VERSION = 1

_DTYPE_CODES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


def _dtype_code(arr: np.ndarray) -> str:
    if arr.dtype == np.float32:
        return "f32"
    if arr.dtype == np.float64:
        return "f64"
    raise ArchiveError(f"unsupported tensor dtype {arr.dtype}; use float32 or float64")


def write_archive(weights: WeightSet, path) -> None:
    """Serialize a WeightSet (its config included) to ``path``."""
    if weights.config is None:
        raise ArchiveError("weights carry no config; cannot serialize")
    manifest = []
    chunks = []
    offset = 0
    for name, arr in weights.named_tensors().items():
        code = _dtype_code(arr)
        raw = np.ascontiguousarray(arr).astype(_DTYPE_CODES[code], copy=False).tobytes()
        manifest.append({
            "name": name,
            "dtype": code,
            "shape": list(arr.shape),
            "offset": offset,
            "length": len(raw),
        })
        chunks.append(raw)
        offset += len(raw)
    blob = b"".join(chunks)
    header = {
        "format_version": FORMAT_VERSION,
        "checksum": zlib.crc32(blob) & 0xFFFFFFFF,
        "config": weights.config.to_json_dict(),
        "tensors": manifest,
    }
    header_bytes = json.dumps(header, separators=(",", ":")).encode("utf-8")
    with open(Path(path), "wb") as f:
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        f.write(blob)


def _expected_tensors(config: AttentionConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape map a well-formed archive must provide for a config."""
    d, H, d_h = config.d, config.H, config.d_h
    exp: dict[str, tuple[int, ...]] = {f"wq.{h}": (d, d_h) for h in range(H)}
    m = config.mechanism
    if m is Mechanism.MHA:
        for h in range(H):
            exp[f"wk.{h}"] = (d, d_h)
            exp[f"wv.{h}"] = (d, d_h)
    elif m is Mechanism.MQA:
        exp["wk_shared"] = (d, d_h)
        exp["wv_shared"] = (d, d_h)
    elif m is Mechanism.GQA:
        for g in range(config.G):
            exp[f"wk.{g}"] = (d, d_h)
            exp[f"wv.{g}"] = (d, d_h)
    elif m is Mechanism.MLA:
        exp["wdown"] = (d, config.d_c)
        for h in range(H):
            exp[f"wup_k.{h}"] = (config.d_c, d_h)
            exp[f"wup_v.{h}"] = (config.d_c, d_h)
    else:  # LRKV
        exp["wk_shared"] = (d, d_h)
        exp["wv_shared"] = (d, d_h)
        for h in range(H):
            exp[f"uk.{h}"] = (d, config.r)
            exp[f"bk.{h}"] = (d_h, config.r)
            exp[f"uv.{h}"] = (d, config.r)
            exp[f"bv.{h}"] = (d_h, config.r)
    return exp


def _stack(tensors: dict[str, np.ndarray], prefix: str, count: int) -> tuple:
    return tuple(tensors[f"{prefix}.{i}"] for i in range(count))


def read_archive(path) -> WeightSet:
    """Load a WeightSet; validates structure and checksum before decoding."""
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise ArchiveError("truncated archive: missing header length")
    (header_len,) = struct.unpack("<Q", data[:8])
    if len(data) < 8 + header_len:
        raise ArchiveError("truncated archive: header shorter than declared")
    try:
        header = json.loads(data[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ArchiveError(f"unreadable header: {e}") from e
    blob = data[8 + header_len :]

    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise ArchiveError(
            f"format_version mismatch: archive has {version!r}, expected {FORMAT_VERSION}"
        )
    try:
        config = AttentionConfig.from_json_dict(header["config"])
    except (KeyError, TypeError, ConfigurationError) as e:
        raise ArchiveError(f"bad config block: {e}") from e

    manifest = header.get("tensors")
    if not isinstance(manifest, list):
        raise ArchiveError("manifest missing or not a list")
    seen: set[str] = set()
    prev_end = 0
    tensors: dict[str, np.ndarray] = {}
    for entry in manifest:
        name = entry.get("name")
        if not isinstance(name, str):
            raise ArchiveError(f"manifest entry without a valid name: {entry!r}")
        if name in seen:
            raise ArchiveError(f"duplicate tensor name: {name}")
        seen.add(name)
        code = entry.get("dtype")
        if code not in _DTYPE_CODES:
            raise ArchiveError(f"tensor {name}: unknown dtype {code!r}")
        dtype = _DTYPE_CODES[code]
        shape = tuple(entry.get("shape", ()))
        offset, length = entry.get("offset"), entry.get("length")
        if not isinstance(offset, int) or not isinstance(length, int) or offset < 0:
            raise ArchiveError(f"tensor {name}: invalid offset/length")
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        if length != count * dtype.itemsize:
            raise ArchiveError(
                f"tensor {name}: length {length} does not match shape {shape} "
                f"at {dtype.itemsize} bytes/element"
            )
        if offset < prev_end:
            raise ArchiveError(f"tensor {name}: offset {offset} overlaps previous tensor")
        prev_end = offset + length
        if prev_end > len(blob):
            raise ArchiveError(f"truncated blob: tensor {name} extends past end of file")
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=offset)
        tensors[name] = arr.reshape(shape).astype(dtype.newbyteorder("="), copy=True)

    stored = header.get("checksum")
    if stored != (zlib.crc32(blob) & 0xFFFFFFFF):
        raise ArchiveError("checksum mismatch: blob corrupted")

    expected = _expected_tensors(config)
    missing = sorted(set(expected) - set(tensors))
    if missing:
        raise ArchiveError(f"missing tensors: {', '.join(missing)}")
    extra = sorted(set(tensors) - set(expected))
    if extra:
        raise ArchiveError(f"unexpected tensors: {', '.join(extra)}")
    for name, shape in expected.items():
        if tensors[name].shape != shape:
            raise ArchiveError(
                f"tensor {name}: shape {tensors[name].shape}, expected {shape}"
            )

    H = config.H
    wq = _stack(tensors, "wq", H)
    m = config.mechanism
    if m is Mechanism.MHA:
        return WeightSet(wq=wq, wk=_stack(tensors, "wk", H),
                         wv=_stack(tensors, "wv", H), config=config)
    if m is Mechanism.MQA:
        return WeightSet(wq=wq, wk_shared=tensors["wk_shared"],
                         wv_shared=tensors["wv_shared"], config=config)
    if m is Mechanism.GQA:
        return WeightSet(wq=wq, wk=_stack(tensors, "wk", config.G),
                         wv=_stack(tensors, "wv", config.G), config=config)
    if m is Mechanism.MLA:
        return WeightSet(wq=wq, wdown=tensors["wdown"],
                         wup_k=_stack(tensors, "wup_k", H),
                         wup_v=_stack(tensors, "wup_v", H), config=config)
    return WeightSet(
        wq=wq,
        wk_shared=tensors["wk_shared"],
        wv_shared=tensors["wv_shared"],
        uk=_stack(tensors, "uk", H),
        bk=_stack(tensors, "bk", H),
        uv=_stack(tensors, "uv", H),
        bv=_stack(tensors, "bv", H),
        config=config,
    )
