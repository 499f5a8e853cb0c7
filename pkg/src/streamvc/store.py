"""Named tensor store with a bit-exact binary serialization.

File layout (all integers little-endian):

    magic "STSW" | version u32 = 1 | tensor_count u32 | reserved u32 = 0
    per tensor:
        name_len u16 | name utf-8
        dtype u8 (0=f32, 1=i8, 2=i4) | rank u8 | dims rank x u32
        params_len u32 | params blob
        payload_len u32 | payload

The params blob for quantized tensors is: n_scales u32, scales f32 x n,
n_zero_points u32, zero_points i32 x n (n_zero_points is 0 for the
symmetric scheme).  int4 payloads pack two values per byte, low nibble
first, as 4-bit two's complement.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Dict, Iterator, Optional, Tuple

import numpy as np

from .errors import FormatError

MAGIC = b"STSW"
VERSION = 1

DTYPE_F32 = 0
DTYPE_I8 = 1
DTYPE_I4 = 2

HEADER_SIZE = 16

SCHEME_PER_CHANNEL_SYMMETRIC = "per_channel_symmetric"
SCHEME_PER_TENSOR_AFFINE = "per_tensor_affine"


@dataclass
class QuantParams:
    bits: int
    scheme: str
    scales: np.ndarray  # float32
    zero_points: Optional[np.ndarray] = None  # int32, affine only

    def __eq__(self, other) -> bool:
        if not isinstance(other, QuantParams):
            return NotImplemented
        same_zp = (
            (self.zero_points is None) == (other.zero_points is None)
            and (self.zero_points is None or np.array_equal(self.zero_points, other.zero_points))
        )
        return (
            self.bits == other.bits
            and self.scheme == other.scheme
            and np.array_equal(self.scales, other.scales)
            and same_zp
        )


@dataclass
class Entry:
    dtype: int
    shape: Tuple[int, ...]
    payload: bytes
    qparams: Optional[QuantParams] = None

    @property
    def numel(self) -> int:
        return int(np.prod(self.shape)) if self.shape else 1


def pack_int4(values: np.ndarray) -> bytes:
    """Nibble-pack int values in [-8, 7]; element 2i goes to the low nibble."""
    flat = values.astype(np.int8).ravel()
    if flat.size % 2:
        flat = np.concatenate([flat, np.zeros(1, dtype=np.int8)])
    lo = flat[0::2].astype(np.uint8) & 0x0F
    hi = flat[1::2].astype(np.uint8) & 0x0F
    return (lo | (hi << 4)).tobytes()


def unpack_int4(payload: bytes, numel: int) -> np.ndarray:
    raw = np.frombuffer(payload, dtype=np.uint8)
    lo = (raw & 0x0F).astype(np.int8)
    hi = (raw >> 4).astype(np.int8)
    # sign-extend 4-bit two's complement
    lo = np.where(lo >= 8, lo - 16, lo)
    hi = np.where(hi >= 8, hi - 16, hi)
    out = np.empty(raw.size * 2, dtype=np.int8)
    out[0::2] = lo
    out[1::2] = hi
    return out[:numel]


class WeightStore:
    """Ordered name -> tensor map holding float32 and quantized entries."""

    def __init__(self):
        self._entries: Dict[str, Entry] = {}
        self._f32_cache: Dict[str, np.ndarray] = {}

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> Iterator[str]:
        return iter(self._entries)

    def entry(self, name: str) -> Entry:
        if name not in self._entries:
            raise KeyError(f"weight store has no tensor {name!r}")
        return self._entries[name]

    def put(self, name: str, arr: np.ndarray) -> None:
        arr = np.asarray(arr, dtype=np.float32)
        self._entries[name] = Entry(DTYPE_F32, tuple(arr.shape), arr.tobytes())
        self._f32_cache.pop(name, None)

    def put_entry(self, name: str, entry: Entry) -> None:
        self._entries[name] = entry
        self._f32_cache.pop(name, None)

    def f32(self, name: str) -> np.ndarray:
        """Float32 view of a tensor, dequantizing (and caching) if needed."""
        if name not in self._f32_cache:
            self._f32_cache[name] = dequantize_entry(self.entry(name))
        return self._f32_cache[name]

    def total_params(self) -> int:
        return sum(e.numel for e in self._entries.values())

    def __eq__(self, other) -> bool:
        if not isinstance(other, WeightStore):
            return NotImplemented
        if list(self._entries) != list(other._entries):
            return False
        for name, e in self._entries.items():
            o = other._entries[name]
            if (e.dtype, e.shape, e.payload, e.qparams) != (o.dtype, o.shape, o.payload, o.qparams):
                return False
        return True


def entry_to_array(entry: Entry) -> np.ndarray:
    """Raw stored values (float32, or the integer codes for quantized entries)."""
    if entry.dtype == DTYPE_F32:
        return np.frombuffer(entry.payload, dtype=np.float32).reshape(entry.shape).copy()
    if entry.dtype == DTYPE_I8:
        return np.frombuffer(entry.payload, dtype=np.int8).reshape(entry.shape).copy()
    if entry.dtype == DTYPE_I4:
        return unpack_int4(entry.payload, entry.numel).reshape(entry.shape)
    raise FormatError(f"unknown dtype code {entry.dtype}", 0)


def dequantize_entry(entry: Entry) -> np.ndarray:
    if entry.dtype == DTYPE_F32:
        return entry_to_array(entry)
    q = entry_to_array(entry).astype(np.float32)
    p = entry.qparams
    if p is None:
        raise FormatError("quantized entry without parameters", 0)
    if p.scheme == SCHEME_PER_CHANNEL_SYMMETRIC:
        # scales laid out along the last (output-channel) axis
        return (q * p.scales).astype(np.float32)
    zp = p.zero_points if p.zero_points is not None else np.zeros_like(p.scales, np.int32)
    return ((q - zp.astype(np.float32)) * p.scales).astype(np.float32)


def _params_blob(qparams: Optional[QuantParams]) -> bytes:
    if qparams is None:
        return b""
    scales = np.asarray(qparams.scales, dtype="<f4").ravel()
    zps = (
        np.asarray(qparams.zero_points, dtype="<i4").ravel()
        if qparams.zero_points is not None
        else np.zeros(0, dtype="<i4")
    )
    return (
        struct.pack("<I", scales.size)
        + scales.tobytes()
        + struct.pack("<I", zps.size)
        + zps.tobytes()
    )


def _parse_params_blob(blob: bytes, bits: int, offset: int) -> Optional[QuantParams]:
    if not blob:
        return None
    try:
        (n_scales,) = struct.unpack_from("<I", blob, 0)
        pos = 4
        scales = np.frombuffer(blob, dtype="<f4", count=n_scales, offset=pos).copy()
        pos += 4 * n_scales
        (n_zp,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        zps = np.frombuffer(blob, dtype="<i4", count=n_zp, offset=pos).copy() if n_zp else None
    except struct.error as exc:
        raise FormatError(f"truncated quant params: {exc}", offset) from exc
    scheme = SCHEME_PER_TENSOR_AFFINE if zps is not None else SCHEME_PER_CHANNEL_SYMMETRIC
    return QuantParams(bits=bits, scheme=scheme, scales=scales, zero_points=zps)


def to_bytes(store: WeightStore) -> bytes:
    out = [MAGIC, struct.pack("<III", VERSION, len(store), 0)]
    for name in store.names():
        e = store.entry(name)
        name_b = name.encode("utf-8")
        params = _params_blob(e.qparams)
        out.append(struct.pack("<H", len(name_b)))
        out.append(name_b)
        out.append(struct.pack("<BB", e.dtype, len(e.shape)))
        out.append(struct.pack(f"<{len(e.shape)}I", *e.shape) if e.shape else b"")
        out.append(struct.pack("<I", len(params)))
        out.append(params)
        out.append(struct.pack("<I", len(e.payload)))
        out.append(e.payload)
    return b"".join(out)


def serialized_size(store: WeightStore) -> int:
    return len(to_bytes(store))


def from_bytes(data: bytes) -> WeightStore:
    if len(data) < HEADER_SIZE:
        raise FormatError("file shorter than header", len(data))
    if data[:4] != MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}", 0)
    version, count, reserved = struct.unpack_from("<III", data, 4)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if reserved != 0:
        raise FormatError(f"nonzero reserved field {reserved}", 12)
    store = WeightStore()
    pos = HEADER_SIZE

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(f"truncated while reading {what}", pos)
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name = take(name_len, "name").decode("utf-8")
        dtype, rank = struct.unpack("<BB", take(2, "dtype/rank"))
        if dtype not in (DTYPE_F32, DTYPE_I8, DTYPE_I4):
            raise FormatError(f"unknown dtype code {dtype}", pos - 2)
        shape = struct.unpack(f"<{rank}I", take(4 * rank, "dims")) if rank else ()
        (params_len,) = struct.unpack("<I", take(4, "params length"))
        params_at = pos
        params = _parse_params_blob(
            take(params_len, "params"), bits=4 if dtype == DTYPE_I4 else 8, offset=params_at
        )
        (payload_len,) = struct.unpack("<I", take(4, "payload length"))
        payload = take(payload_len, "payload")
        store.put_entry(name, Entry(dtype, tuple(int(d) for d in shape), payload, params))
    return store


def save(store: WeightStore, path) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(store))


def load(path) -> WeightStore:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
