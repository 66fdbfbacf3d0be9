"""Binary formats for dense tensors (``LQTN``) and quantized weight bundles (``LQWB``).

All integers are little-endian.

LQTN::

    magic "LQTN" | version u16 | dtype u8 | ndim u8 | dims u64 * ndim | payload

LQWB::

    magic "LQWB" | version u16 | n u32 | k u32 | group_size u32 | layout u8
    | [descriptor u16 * 6, DualMmaPacked only]
    | packed_weights (n*k/2 bytes) | group_scales u8 | group_offsets u8
    | channel_scales f32 (n)
"""

from __future__ import annotations

import enum
import io
import math
import struct
from dataclasses import dataclass, field
from typing import BinaryIO

import numpy as np

from . import layout as _layout
from .errors import (BadMagicError, DTypeCodeError, TensorIOError, TrailingDataError,
                     TruncatedError, ValidationError, VersionError)

TENSOR_MAGIC = b"LQTN"
BUNDLE_MAGIC = b"LQWB"
FORMAT_VERSION = 1

MIN_OFFSET, MAX_OFFSET = 9, 247
MAX_GROUP_SCALE = 16


class DType(enum.IntEnum):
    F32 = 0
    F16 = 1
    I8 = 2
    U8 = 3
    U4P = 4
    I32 = 5

    @property
    def numpy(self):
        return _NUMPY_DTYPES[self]

    def nbytes(self, count: int) -> int:
        if self is DType.U4P:
            return (count + 1) // 2
        return count * np.dtype(self.numpy).itemsize


_NUMPY_DTYPES = {
    DType.F32: np.dtype("<f4"), DType.F16: np.dtype("<f2"), DType.I8: np.dtype("i1"),
    DType.U8: np.dtype("u1"), DType.U4P: np.dtype("u1"), DType.I32: np.dtype("<i4"),
}


class Layout(enum.IntEnum):
    PLAIN_ROW_MAJOR = 0
    DUAL_MMA_PACKED = 1


def pack_u4(codes) -> np.ndarray:
    """Plain nibble packing: element ``2j`` in the low nibble of byte ``j``."""
    c = np.asarray(codes, dtype=np.uint8).reshape(-1)
    if c.size and c.max() > 15:
        raise ValidationError("U4P values must lie in [0, 15]")
    if c.size % 2:
        c = np.append(c, np.uint8(0))
    return (c[0::2] | (c[1::2] << 4)).astype(np.uint8)


def unpack_u4(data, count: int) -> np.ndarray:
    b = np.asarray(data, dtype=np.uint8).reshape(-1)
    out = np.empty(b.size * 2, dtype=np.uint8)
    out[0::2] = b & 0x0F
    out[1::2] = b >> 4
    return out[:count]


@dataclass
class DenseTensor:
    dtype: DType
    dims: tuple[int, ...]
    data: bytes

    def __post_init__(self):
        self.dtype = DType(self.dtype)
        self.dims = tuple(int(d) for d in self.dims)
        if not self.dims or any(d < 1 for d in self.dims):
            raise ValidationError(f"dims must be nonempty and positive, got {self.dims}")
        expected = self.dtype.nbytes(self.size)
        if len(self.data) != expected:
            raise ValidationError(f"payload is {len(self.data)} bytes, expected {expected}")

    @property
    def size(self) -> int:
        return math.prod(self.dims)

    @classmethod
    def from_array(cls, arr, dtype: DType | None = None) -> "DenseTensor":
        arr = np.asarray(arr)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if dtype is None:
            dtype = {np.dtype("float32"): DType.F32, np.dtype("float16"): DType.F16,
                     np.dtype("int8"): DType.I8, np.dtype("uint8"): DType.U8,
                     np.dtype("int32"): DType.I32}.get(arr.dtype)
            if dtype is None:
                raise ValidationError(f"no tensor dtype for numpy {arr.dtype}")
        dtype = DType(dtype)
        if dtype is DType.U4P:
            payload = pack_u4(arr).tobytes()
        else:
            payload = np.ascontiguousarray(arr, dtype=dtype.numpy).tobytes()
        return cls(dtype, arr.shape, payload)

    def to_array(self) -> np.ndarray:
        if self.dtype is DType.U4P:
            return unpack_u4(np.frombuffer(self.data, np.uint8), self.size).reshape(self.dims)
        return np.frombuffer(self.data, dtype=self.dtype.numpy).reshape(self.dims).copy()

    def __eq__(self, other):
        if not isinstance(other, DenseTensor):
            return NotImplemented
        return (self.dtype, self.dims, bytes(self.data)) == (other.dtype, other.dims, bytes(other.data))


class _Writer:
    def __init__(self, sink: BinaryIO):
        self.sink = sink
        self.offset = 0

    def write(self, b: bytes):
        try:
            self.sink.write(b)
        except OSError as exc:
            raise TensorIOError(f"write failed: {exc}", self.offset) from exc
        self.offset += len(b)


class _Reader:
    def __init__(self, source: BinaryIO):
        self.source = source
        self.offset = 0

    def read(self, n: int, what: str) -> bytes:
        b = self.source.read(n)
        if len(b) != n:
            raise TruncatedError(f"truncated {what}: wanted {n} bytes at offset {self.offset}, got {len(b)}")
        self.offset += n
        return b

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.read(struct.calcsize(fmt), what))

    def expect_end(self):
        if self.source.read(1):
            raise TrailingDataError(f"unexpected data after offset {self.offset}")


def _read_magic(r: _Reader, magic: bytes):
    got = r.read(4, "magic")
    if got != magic:
        raise BadMagicError(f"bad magic {got!r}, expected {magic!r}")
    (version,) = r.unpack("<H", "version")
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported version {version}")


def write_tensor(t: DenseTensor, destination: BinaryIO) -> None:
    w = _Writer(destination)
    w.write(TENSOR_MAGIC + struct.pack("<HBB", FORMAT_VERSION, t.dtype, len(t.dims)))
    w.write(struct.pack(f"<{len(t.dims)}Q", *t.dims))
    w.write(bytes(t.data))


def read_tensor(source: BinaryIO) -> DenseTensor:
    r = _Reader(source)
    _read_magic(r, TENSOR_MAGIC)
    code, ndim = r.unpack("<BB", "header")
    if code not in DType._value2member_map_:
        raise DTypeCodeError(f"dtype code {code} out of range")
    dtype = DType(code)
    if ndim == 0:
        raise ValidationError("tensor must have at least one dimension")
    dims = r.unpack(f"<{ndim}Q", "dims")
    if any(d < 1 for d in dims):
        raise ValidationError(f"dims must be positive, got {dims}")
    payload = r.read(dtype.nbytes(math.prod(dims)), "payload")
    r.expect_end()
    return DenseTensor(dtype, dims, payload)


def tensor_to_bytes(t: DenseTensor) -> bytes:
    buf = io.BytesIO()
    write_tensor(t, buf)
    return buf.getvalue()


def tensor_from_bytes(b: bytes) -> DenseTensor:
    return read_tensor(io.BytesIO(b))


@dataclass
class QuantizedWeightBundle:
    """Packed UINT4 weights with group (scale, offset) and channel scales.

    ``group_scales`` and ``group_offsets`` have shape ``(n, k // group_size)``
    regardless of layout; only ``packed_weights`` is reordered.
    """

    n: int
    k: int
    group_size: int
    layout: Layout
    packed_weights: np.ndarray
    group_scales: np.ndarray
    group_offsets: np.ndarray
    channel_scales: np.ndarray
    fragment_descriptor: _layout.FragmentDescriptor | None = field(default=None)

    def __post_init__(self):
        self.layout = Layout(self.layout)
        self.packed_weights = np.asarray(self.packed_weights, dtype=np.uint8).reshape(-1)
        self.group_scales = np.asarray(self.group_scales, dtype=np.uint8).reshape(self.n, -1)
        self.group_offsets = np.asarray(self.group_offsets, dtype=np.uint8).reshape(self.n, -1)
        self.channel_scales = np.asarray(self.channel_scales, dtype=np.float32).reshape(-1)
        if self.layout is Layout.DUAL_MMA_PACKED and self.fragment_descriptor is None:
            self.fragment_descriptor = _layout.DEFAULT_DESCRIPTOR
        self.validate()

    @property
    def groups(self) -> int:
        return self.k // self.group_size

    def validate(self) -> None:
        if self.n < 1 or self.k < 1 or self.group_size < 1:
            raise ValidationError("n, k and group_size must be positive")
        if self.k % self.group_size:
            raise ValidationError(f"k={self.k} is not a multiple of group_size={self.group_size}")
        if self.layout is Layout.DUAL_MMA_PACKED:
            d = self.fragment_descriptor
            if self.group_size % d.dual_k_span:
                raise ValidationError(f"group_size {self.group_size} straddles dual-MMA spans")
            if self.n % d.mma_m:
                raise ValidationError(f"n={self.n} is not a multiple of {d.mma_m}")
        elif self.fragment_descriptor is not None:
            raise ValidationError("fragment descriptor only valid for the dual-MMA layout")
        if self.packed_weights.size != (self.n * self.k + 1) // 2:
            raise ValidationError("packed weight payload has the wrong length")
        if self.group_scales.shape != (self.n, self.groups) or self.group_offsets.shape != (self.n, self.groups):
            raise ValidationError("group parameter arrays have the wrong shape")
        if self.channel_scales.shape != (self.n,):
            raise ValidationError("channel_scales must have n entries")
        bad = np.argwhere((self.group_scales < 1) | (self.group_scales > MAX_GROUP_SCALE))
        if bad.size:
            i, g = bad[0]
            raise ValidationError(f"group (row {i}, group {g}) scale {self.group_scales[i, g]} outside [1, 16]")
        bad = np.argwhere((self.group_offsets < MIN_OFFSET) | (self.group_offsets > MAX_OFFSET))
        if bad.size:
            i, g = bad[0]
            raise ValidationError(f"group (row {i}, group {g}) offset {self.group_offsets[i, g]} outside [9, 247]")
        cs = self.channel_scales
        if not (np.all(np.isfinite(cs)) and np.all(cs > 0)):
            raise ValidationError("channel scales must be finite and positive")

    def codes(self) -> np.ndarray:
        """Logical ``n x k`` matrix of 4-bit codes."""
        if self.layout is Layout.PLAIN_ROW_MAJOR:
            return unpack_u4(self.packed_weights, self.n * self.k).reshape(self.n, self.k)
        return _layout.unpack_matrix(self.packed_weights, self.n, self.k, self.fragment_descriptor)

    def with_layout(self, target: Layout) -> "QuantizedWeightBundle":
        target = Layout(target)
        if target is self.layout:
            return self
        codes = self.codes()
        if target is Layout.DUAL_MMA_PACKED:
            d = _layout.DEFAULT_DESCRIPTOR
            if self.group_size % d.dual_k_span or self.n % d.mma_m:
                raise ValidationError("bundle shape cannot be stored in the dual-MMA layout")
            payload, desc = _layout.pack_matrix(codes, d), d
        else:
            payload, desc = pack_u4(codes), None
        return QuantizedWeightBundle(self.n, self.k, self.group_size, target, payload,
                                     self.group_scales, self.group_offsets, self.channel_scales, desc)

    def __eq__(self, other):
        if not isinstance(other, QuantizedWeightBundle):
            return NotImplemented
        return (self.n, self.k, self.group_size, self.layout, self.fragment_descriptor) == \
            (other.n, other.k, other.group_size, other.layout, other.fragment_descriptor) and all(
                np.array_equal(a, b) for a, b in [
                    (self.packed_weights, other.packed_weights),
                    (self.group_scales, other.group_scales),
                    (self.group_offsets, other.group_offsets),
                    (self.channel_scales.view(np.uint32), other.channel_scales.view(np.uint32))])


def write_bundle(b: QuantizedWeightBundle, destination: BinaryIO) -> None:
    w = _Writer(destination)
    w.write(BUNDLE_MAGIC + struct.pack("<HIIIB", FORMAT_VERSION, b.n, b.k, b.group_size, b.layout))
    if b.layout is Layout.DUAL_MMA_PACKED:
        w.write(struct.pack("<6H", *b.fragment_descriptor.as_tuple()))
    w.write(b.packed_weights.tobytes())
    w.write(b.group_scales.tobytes())
    w.write(b.group_offsets.tobytes())
    w.write(b.channel_scales.astype("<f4").tobytes())


def read_bundle(source: BinaryIO) -> QuantizedWeightBundle:
    r = _Reader(source)
    _read_magic(r, BUNDLE_MAGIC)
    n, k, group_size, layout_code = r.unpack("<IIIB", "header")
    if layout_code not in Layout._value2member_map_:
        raise ValidationError(f"layout code {layout_code} out of range")
    lay = Layout(layout_code)
    desc = None
    if lay is Layout.DUAL_MMA_PACKED:
        desc = _layout.FragmentDescriptor(*r.unpack("<6H", "fragment descriptor"))
    if n < 1 or k < 1 or group_size < 1 or k % group_size:
        raise ValidationError(f"invalid bundle shape n={n} k={k} group_size={group_size}")
    groups = n * (k // group_size)
    payload = np.frombuffer(r.read((n * k + 1) // 2, "packed weights"), np.uint8)
    scales = np.frombuffer(r.read(groups, "group scales"), np.uint8)
    offsets = np.frombuffer(r.read(groups, "group offsets"), np.uint8)
    channel = np.frombuffer(r.read(4 * n, "channel scales"), "<f4")
    r.expect_end()
    return QuantizedWeightBundle(n, k, group_size, lay, payload.copy(), scales.copy(),
                                 offsets.copy(), channel.astype(np.float32), desc)


def bundle_to_bytes(b: QuantizedWeightBundle) -> bytes:
    buf = io.BytesIO()
    write_bundle(b, buf)
    return buf.getvalue()


def bundle_from_bytes(data: bytes) -> QuantizedWeightBundle:
    return read_bundle(io.BytesIO(data))


def save_tensor(path, t: DenseTensor) -> None:
    with open(path, "wb") as f:
        write_tensor(t, f)


def load_tensor(path) -> DenseTensor:
    with open(path, "rb") as f:
        return read_tensor(f)


def save_bundle(path, b: QuantizedWeightBundle) -> None:
    with open(path, "wb") as f:
        write_bundle(b, f)


def load_bundle(path) -> QuantizedWeightBundle:
    with open(path, "rb") as f:
        return read_bundle(f)
