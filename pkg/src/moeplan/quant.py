"""Per-group asymmetric INT4 weight quantization.

Each contiguous group of ``group_size`` elements gets an affine code:
scale = (max - min) / 15, zero_point = min, code = round((x - min) / scale)
clamped to [0, 15]; a constant group stores scale 0 with all-zero codes.
Dequantization is code * scale + zero_point, so the per-element round-trip
error is at most scale / 2.

Codes pack two per byte, low nibble first. The binary container is
little-endian: magic ``GQI4``, u32 version, u32 group_size, u64
original_len, float64 scales, float64 zero_points, packed codes.
"""

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"GQI4"
VERSION = 1
DEFAULT_GROUP_SIZE = 128
_HEADER = struct.Struct("<4sIIQ")


class QuantFormatError(ValueError):
    """Corrupted or inconsistent quantized-tensor structure."""


@dataclass(frozen=True)
class GroupQuantizedTensor:
    codes: np.ndarray        # packed uint8, two 4-bit codes per byte
    scales: np.ndarray       # float64, one per group
    zero_points: np.ndarray  # float64, one per group
    group_size: int
    original_len: int

    def __post_init__(self):
        n_groups = -(-self.original_len // self.group_size)
        if self.group_size < 1:
            raise QuantFormatError(f"group_size must be >= 1, got {self.group_size}")
        if self.original_len < 1:
            raise QuantFormatError(f"original_len must be >= 1, got {self.original_len}")
        if len(self.scales) != n_groups or len(self.zero_points) != n_groups:
            raise QuantFormatError(
                f"expected {n_groups} groups, got {len(self.scales)} scales / "
                f"{len(self.zero_points)} zero points"
            )
        if len(self.codes) != (self.original_len + 1) // 2:
            raise QuantFormatError(
                f"expected {(self.original_len + 1) // 2} packed bytes, got {len(self.codes)}"
            )

    @property
    def n_groups(self) -> int:
        return len(self.scales)

    def packed_nbytes(self) -> int:
        return _HEADER.size + 16 * self.n_groups + len(self.codes)


def pack_codes(codes: np.ndarray) -> np.ndarray:
    """Pack 4-bit codes two per byte, low nibble = even index."""
    codes = np.asarray(codes, dtype=np.uint8)
    if codes.size % 2:
        codes = np.concatenate([codes, np.zeros(1, dtype=np.uint8)])
    pairs = codes.reshape(-1, 2)
    return (pairs[:, 0] | (pairs[:, 1] << 4)).astype(np.uint8)


def unpack_codes(packed: np.ndarray, n: int) -> np.ndarray:
    packed = np.asarray(packed, dtype=np.uint8)
    out = np.empty(len(packed) * 2, dtype=np.uint8)
    out[0::2] = packed & 0x0F
    out[1::2] = packed >> 4
    return out[:n]


def quantize_int4(values, group_size: int = DEFAULT_GROUP_SIZE) -> GroupQuantizedTensor:
    """Quantize a real vector to per-group INT4 codes."""
    x = np.asarray(values, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise ValueError("cannot quantize an empty vector")
    if group_size < 1:
        raise ValueError(f"group_size must be >= 1, got {group_size}")
    if not np.isfinite(x).all():
        raise ValueError("input contains non-finite values")
    n = x.size
    n_groups = -(-n // group_size)
    padded = np.empty(n_groups * group_size, dtype=np.float64)
    padded[:n] = x
    if padded.size > n:
        padded[n:] = x[-1]  # pad with a real value so it never widens the group range
    g = padded.reshape(n_groups, group_size)
    lo = g.min(axis=1)
    hi = g.max(axis=1)
    scales = (hi - lo) / 15.0
    zero_points = lo.copy()
    safe = np.where(scales > 0, scales, 1.0)
    codes = np.rint((g - lo[:, None]) / safe[:, None])
    codes = np.clip(codes, 0, 15)
    codes[scales == 0] = 0
    flat = codes.reshape(-1)[:n].astype(np.uint8)
    return GroupQuantizedTensor(
        codes=pack_codes(flat),
        scales=scales,
        zero_points=zero_points,
        group_size=group_size,
        original_len=n,
    )


def dequantize(q: GroupQuantizedTensor) -> np.ndarray:
    """Reconstruct the real vector: code * scale + zero_point per element."""
    codes = unpack_codes(q.codes, q.original_len).astype(np.float64)
    group_idx = np.arange(q.original_len) // q.group_size
    return codes * q.scales[group_idx] + q.zero_points[group_idx]


def to_bytes(q: GroupQuantizedTensor) -> bytes:
    header = _HEADER.pack(MAGIC, VERSION, q.group_size, q.original_len)
    return (
        header
        + np.ascontiguousarray(q.scales, dtype="<f8").tobytes()
        + np.ascontiguousarray(q.zero_points, dtype="<f8").tobytes()
        + np.ascontiguousarray(q.codes, dtype=np.uint8).tobytes()
    )


def from_bytes(blob: bytes) -> GroupQuantizedTensor:
    if len(blob) < _HEADER.size:
        raise QuantFormatError("blob shorter than header")
    magic, version, group_size, original_len = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise QuantFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise QuantFormatError(f"unsupported version {version}")
    n_groups = -(-original_len // group_size) if group_size else 0
    n_code_bytes = (original_len + 1) // 2
    expect = _HEADER.size + 16 * n_groups + n_code_bytes
    if len(blob) != expect:
        raise QuantFormatError(f"expected {expect} bytes, got {len(blob)}")
    off = _HEADER.size
    scales = np.frombuffer(blob, dtype="<f8", count=n_groups, offset=off).copy()
    off += 8 * n_groups
    zero_points = np.frombuffer(blob, dtype="<f8", count=n_groups, offset=off).copy()
    off += 8 * n_groups
    codes = np.frombuffer(blob, dtype=np.uint8, count=n_code_bytes, offset=off).copy()
    return GroupQuantizedTensor(
        codes=codes,
        scales=scales,
        zero_points=zero_points,
        group_size=group_size,
        original_len=original_len,
    )


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = float(np.linalg.norm(a) * np.linalg.norm(b))
    if denom == 0:
        return 1.0 if not a.any() and not b.any() else 0.0
    return float(np.dot(a, b) / denom)


def int4_backup_bytes(n_params: int, group_size: int = DEFAULT_GROUP_SIZE) -> int:
    """Size of the packed INT4 backup of ``n_params`` weights, including the
    per-group scale/zero-point overhead of the binary container."""
    if n_params < 0:
        raise ValueError(f"n_params must be >= 0, got {n_params}")
    if n_params == 0:
        return 0
    n_groups = -(-n_params // group_size)
    return (n_params + 1) // 2 + 16 * n_groups
