"""Quantized tensors, zero-point adjustment, tiling and the QTF file format.

All tensors use a fixed NHWC layout (batch, row, column, channel).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from winoint.transforms import WinoAlgorithm

DTYPES = {"u8": np.dtype("<u1"), "i32": np.dtype("<i4")}
SUPPORTED_BITS = (9, 11, 13, 32)


class QTFError(ValueError):
    """Base class for QTF read errors."""


class QTFHeaderError(QTFError):
    pass


class QTFLengthError(QTFError):
    pass


class QTFDtypeError(QTFError):
    pass


def _as_shape(shape) -> tuple[int, int, int, int]:
    shape = tuple(int(s) for s in shape)
    if len(shape) != 4 or any(s < 0 for s in shape):
        raise ValueError(f"shape must be four non-negative dims (n, h, w, c), got {shape}")
    return shape


@dataclass(frozen=True, eq=False)
class QTensor:
    """Quantized tensor: raw integer codes plus affine quantization metadata.

    ``scale`` is carried along for bookkeeping only; no kernel reads it.
    """

    data: np.ndarray
    dtype: str = "u8"
    zero_point: int = 0
    scale: float = 1.0

    def __post_init__(self):
        if self.dtype not in DTYPES:
            raise ValueError(f"unknown dtype {self.dtype!r}")
        if not 0 <= self.zero_point <= 255:
            raise ValueError(f"zero_point {self.zero_point} outside [0, 255]")
        arr = np.asarray(self.data)
        _as_shape(arr.shape)
        if not np.issubdtype(arr.dtype, np.integer) and not np.array_equal(arr, np.rint(arr)):
            raise TypeError("QTensor data must be integer valued")
        info = np.iinfo(DTYPES[self.dtype])
        if arr.size and (arr.min() < info.min or arr.max() > info.max):
            raise ValueError(f"data outside the {self.dtype} range")
        arr = arr.astype(DTYPES[self.dtype].newbyteorder("="), copy=True)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    def __eq__(self, other):
        if not isinstance(other, QTensor):
            return NotImplemented
        return (
            self.dtype == other.dtype
            and self.zero_point == other.zero_point
            and self.scale == other.scale
            and self.shape == other.shape
            and bool(np.array_equal(self.data, other.data))
        )


@dataclass(frozen=True, eq=False)
class ITensor:
    """Signed integer tensor whose elements fit a declared signed bit width."""

    data: np.ndarray
    bits: int = 32

    def __post_init__(self):
        if self.bits not in SUPPORTED_BITS:
            raise ValueError(f"unsupported bit width {self.bits}")
        arr = np.asarray(self.data, dtype=np.int64)
        _as_shape(arr.shape)
        lo, hi = -(1 << (self.bits - 1)), (1 << (self.bits - 1)) - 1
        if arr.size and (arr.min() < lo or arr.max() > hi):
            raise OverflowError(f"values do not fit int{self.bits}")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    def __eq__(self, other):
        if not isinstance(other, ITensor):
            return NotImplemented
        return self.bits == other.bits and bool(np.array_equal(self.data, other.data))


@dataclass(frozen=True)
class Tile:
    """One t x t input window of a single channel."""

    origin: tuple[int, int]
    channel: int
    data: np.ndarray = field(repr=False)
    batch: int = 0

    @property
    def size(self) -> int:
        return self.data.shape[0]


def zero_point_adjust(t: QTensor) -> ITensor:
    """Subtract the zero point from uint8 codes, giving int9 values."""
    if t.dtype != "u8":
        raise ValueError("zero_point_adjust expects an unsigned-8 tensor")
    return ITensor(t.data.astype(np.int64) - t.zero_point, bits=9)


def tile_grid(out_h: int, out_w: int, m: int) -> tuple[int, int]:
    return -(-out_h // m), -(-out_w // m)


def tile_array(x: np.ndarray, algorithm: WinoAlgorithm, padding: int) -> tuple[np.ndarray, int, int]:
    """Cut an NHWC array into overlapping t x t tiles with stride m.

    Returns ``(tiles, out_h, out_w)`` where ``tiles`` has shape
    ``(n, tiles_h, tiles_w, c, t, t)``. The plane is zero-padded by
    ``padding`` on every side and zero-filled on the bottom/right so that
    border tiles are complete.
    """
    if padding < 0:
        raise ValueError("padding must be >= 0")
    x = np.asarray(x, dtype=np.int64)
    n, h, w, c = _as_shape(x.shape)
    m, r, t = algorithm.m, algorithm.r, algorithm.t
    out_h, out_w = h + 2 * padding - r + 1, w + 2 * padding - r + 1
    if out_h < 1 or out_w < 1:
        raise ValueError(
            f"input {h}x{w} with padding {padding} is smaller than the {r}x{r} filter"
        )
    th, tw = tile_grid(out_h, out_w, m)
    ph, pw = th * m + r - 1, tw * m + r - 1
    plane = np.zeros((n, ph, pw, c), dtype=np.int64)
    plane[:, padding:padding + h, padding:padding + w, :] = x
    win = np.lib.stride_tricks.sliding_window_view(plane, (t, t), axis=(1, 2))
    tiles = win[:, ::m, ::m]  # (n, th, tw, c, t, t)
    return np.ascontiguousarray(tiles), out_h, out_w


def extract_tiles(t: ITensor, algorithm: WinoAlgorithm, padding: int) -> list[Tile]:
    tiles, _, _ = tile_array(t.data, algorithm, padding)
    n, th, tw, c = tiles.shape[:4]
    m = algorithm.m
    out = []
    for b in range(n):
        for i in range(th):
            for j in range(tw):
                for ch in range(c):
                    out.append(Tile((i * m, j * m), ch, tiles[b, i, j, ch], batch=b))
    return out


# --- QTF file format -------------------------------------------------------


def save_qtensor(path: str | Path, t: QTensor) -> None:
    header = {
        "dtype": t.dtype,
        "shape": list(t.shape),
        "zero_point": int(t.zero_point),
        "scale": float(t.scale),
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, separators=(",", ":")).encode("utf-8") + b"\n")
        f.write(t.data.astype(DTYPES[t.dtype]).tobytes(order="C"))


def load_qtensor(path: str | Path) -> QTensor:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise QTFHeaderError(f"{path}: missing header line")
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise QTFHeaderError(f"{path}: header is not valid JSON: {e}") from None
    if not isinstance(header, dict):
        raise QTFHeaderError(f"{path}: header must be a JSON object")
    missing = {"dtype", "shape", "zero_point", "scale"} - header.keys()
    if missing:
        raise QTFHeaderError(f"{path}: header missing {sorted(missing)}")
    dtype = header["dtype"]
    if dtype not in DTYPES:
        raise QTFDtypeError(f"{path}: unknown dtype {dtype!r}")
    try:
        shape = _as_shape(header["shape"])
        zero_point = int(header["zero_point"])
        scale = float(header["scale"])
    except (TypeError, ValueError) as e:
        raise QTFHeaderError(f"{path}: bad header field: {e}") from None

    body = raw[nl + 1:]
    expected = int(np.prod(shape)) * DTYPES[dtype].itemsize
    if len(body) != expected:
        raise QTFLengthError(f"{path}: expected {expected} data bytes, found {len(body)}")
    data = np.frombuffer(body, dtype=DTYPES[dtype]).reshape(shape)
    try:
        return QTensor(data, dtype=dtype, zero_point=zero_point, scale=scale)
    except ValueError as e:
        raise QTFHeaderError(f"{path}: {e}") from None


def qtensor_io(path: str | Path, direction: str, t: QTensor | None = None) -> QTensor | None:
    """Load (``direction='load'``) or store (``direction='store'``) a QTF file."""
    if direction == "load":
        return load_qtensor(path)
    if direction == "store":
        if t is None:
            raise ValueError("store requires a tensor")
        save_qtensor(path, t)
        return None
    raise ValueError(f"direction must be 'load' or 'store', not {direction!r}")

