"""Lossy Winograd-domain filter precision scaling.

Each grid position of an output channel's transformed filter gets one
downscale factor ``n / 2**shift`` (4-bit ``n``, ``shift`` in 4..7) chosen so
that the largest magnitude across input channels fits int9 again. After the
channel sum, an 8-bit multiply ``m`` and a right shift ``q`` in 4..7 undo the
scaling approximately.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from functools import cache
from typing import Iterable, TextIO

import numpy as np

from winoint.transforms import GaussMatrix, signed_bits

INT9_MAX = 255
# largest magnitude whose factor still needs shift <= 7 (x = 255*128/m >= 8)
MAX_SCALABLE_MAGNITUDE = 255 * 128 // 8
RAT2X2_MAX_MAGNITUDE = 9 * 255


@dataclass(frozen=True, order=True)
class ScaleFactor:
    n: int
    shift: int

    def __post_init__(self):
        if self.is_sentinel:
            return
        if not (1 <= self.n <= 15 and 4 <= self.shift <= 7):
            raise ValueError(f"invalid scale factor n={self.n} shift={self.shift}")

    @property
    def is_sentinel(self) -> bool:
        return self.n == 0 and self.shift == 0

    @property
    def value(self) -> Fraction:
        return Fraction(1) if self.is_sentinel else Fraction(self.n, 1 << self.shift)

    @property
    def encoded(self) -> int:
        """6-bit code: n in the high 4 bits, shift - 4 in the low 2 bits."""
        if self.is_sentinel:
            return 0
        return (self.n << 2) | (self.shift - 4)

    @classmethod
    def decode(cls, code: int) -> ScaleFactor:
        if not 0 <= code < 64:
            raise ValueError(f"scale code {code} is not 6 bits")
        if code == 0:
            return NO_SCALING
        return cls(code >> 2, (code & 3) + 4)

    def __str__(self) -> str:
        return "none" if self.is_sentinel else f"{self.n}/2^{self.shift}"


NO_SCALING = ScaleFactor(0, 0)


@dataclass(frozen=True)
class InverseFactor:
    m: int
    q: int

    @property
    def value(self) -> Fraction:
        return Fraction(self.m, 1 << self.q)


IDENTITY_INVERSE = InverseFactor(1, 0)


@cache
def compute_scale_factor(max_magnitude: int) -> ScaleFactor:
    """Largest n/2^shift with n <= 15 that brings ``max_magnitude`` into int9."""
    max_magnitude = int(max_magnitude)
    if not 0 < max_magnitude <= MAX_SCALABLE_MAGNITUDE:
        raise ValueError(f"max magnitude {max_magnitude} outside (0, {MAX_SCALABLE_MAGNITUDE}]")
    if max_magnitude <= INT9_MAX:
        return NO_SCALING
    x = INT9_MAX * 128 // max_magnitude
    y = x.bit_length() - 1
    # n = floor(x / 2^(y-4)); y may be 3, where this is a left shift
    n = x >> (y - 4) if y >= 4 else x << (4 - y)
    shift = 11 - y
    while n > 15:
        n >>= 1
        shift -= 1
    return ScaleFactor(n, shift)


@cache
def reverse_factor(f: ScaleFactor) -> InverseFactor:
    """8-bit multiplier and 4..7-bit shift approximating 1 / f.

    Picks the largest shift whose rounded multiplier still fits 8 bits. Only
    8/2^7 (inverse exactly 16, reachable from magnitudes above 3626) has no
    such shift; it saturates to 255/2^4.
    """
    if f.is_sentinel:
        raise ValueError("no inverse for the no-scaling sentinel")
    for q in range(7, 3, -1):
        m = _round_half_away(Fraction(1 << (q + f.shift), f.n))
        if m <= 255:
            return InverseFactor(m, q)
    return InverseFactor(255, 4)


def _round_half_away(x: Fraction) -> int:
    mag = int(abs(x) + Fraction(1, 2))
    return -mag if x < 0 else mag


def _mul_shift_round(v: np.ndarray, mult, shift) -> np.ndarray:
    v = np.asarray(v, dtype=np.int64)
    shift = np.asarray(shift, dtype=np.int64)
    half = (np.int64(1) << shift) >> 1
    mag = (np.abs(v) * mult + half) >> shift
    return np.where(v < 0, -mag, mag)


def factor_arrays(factors) -> tuple[np.ndarray, np.ndarray]:
    """(n, shift) integer grids with the sentinel mapped to the identity 1/2^0."""
    n = np.vectorize(lambda f: 1 if f.is_sentinel else f.n, otypes=[np.int64])(factors)
    s = np.vectorize(lambda f: f.shift, otypes=[np.int64])(factors)
    return n, s


def inverse_arrays(factors) -> tuple[np.ndarray, np.ndarray]:
    def inv(f):
        return IDENTITY_INVERSE if f.is_sentinel else reverse_factor(f)

    m = np.vectorize(lambda f: inv(f).m, otypes=[np.int64])(factors)
    q = np.vectorize(lambda f: inv(f).q, otypes=[np.int64])(factors)
    return m, q


def position_magnitudes(W: GaussMatrix) -> np.ndarray:
    """Max over channels (axis -3) of max(|re|, |im|) for a (..., c, t, t) filter."""
    mag = np.maximum(np.abs(W.re), np.abs(W.im))
    return mag.max(axis=-3)


def scale_factors_for_filter(W: GaussMatrix) -> np.ndarray:
    """Object array of ScaleFactor, one per grid position, shared across channels.

    ``W`` has shape ``(c, t, t)``; extra leading axes (e.g. output channels)
    are kept.
    """
    if W.re.ndim < 3 or W.shape[-3] < 1:
        raise ValueError("expected a (c, t, t) Winograd-domain filter with c >= 1")
    mags = position_magnitudes(W)
    out = np.empty(mags.shape, dtype=object)
    for idx, mag in np.ndenumerate(mags):
        out[idx] = NO_SCALING if mag == 0 else compute_scale_factor(int(mag))
    return out


def apply_scaling(W: GaussMatrix, factors) -> GaussMatrix:
    """Downscale W position-wise; ``factors`` broadcasts over the channel axis."""
    n, s = factor_arrays(factors)
    n, s = n[..., None, :, :], s[..., None, :, :]
    re = _mul_shift_round(W.re, n, s)
    im = _mul_shift_round(W.im, n, s)
    if max(np.abs(re).max(initial=0), np.abs(im).max(initial=0)) > INT9_MAX:
        raise OverflowError("scaled Winograd weight outside int9")
    return GaussMatrix(re, im)


def apply_reverse(acc_value, inv: InverseFactor):
    """round_half_away(acc_value * m / 2^q) via an integer multiply and shift."""
    out = _mul_shift_round(acc_value, inv.m, inv.q)
    return int(out) if np.ndim(out) == 0 else out


def apply_reverse_grid(M: GaussMatrix, factors) -> GaussMatrix:
    """Reverse-scale a (..., t, t) accumulated Hadamard grid, re and im separately."""
    m, q = inverse_arrays(factors)
    return GaussMatrix(_mul_shift_round(M.re, m, q), _mul_shift_round(M.im, m, q))


# --- table and error analysis ------------------------------------------------


@dataclass(frozen=True)
class ScaleTableEntry:
    n: int
    p: int
    value: Fraction
    out_of_range: bool
    duplicate: bool

    @property
    def text(self) -> str:
        return format_factor(self.value)

    @property
    def grayed(self) -> bool:
        return self.out_of_range


def format_factor(v: Fraction) -> str:
    d = Decimal(v.numerator) / Decimal(v.denominator)
    return str(d.quantize(Decimal("0.00001"), rounding=ROUND_HALF_UP))


def scale_table(max_magnitude: int = RAT2X2_MAX_MAGNITUDE) -> list[ScaleTableEntry]:
    """All 60 factors n/2^(p+4), flagging unusable ones.

    A factor is out of range when it is smaller than the factor chosen for
    ``max_magnitude`` (nothing in range ever needs it); it is a duplicate when
    a smaller ``p`` already represents the same value.
    """
    floor_value = compute_scale_factor(max_magnitude).value
    values = [(n, p, Fraction(n, 1 << (p + 4))) for n in range(1, 16) for p in range(4)]
    first_p: dict[Fraction, int] = {}
    for _, p, v in values:
        first_p[v] = min(first_p.get(v, p), p)
    return [ScaleTableEntry(n, p, v, v < floor_value, first_p[v] < p) for n, p, v in values]


@dataclass(frozen=True)
class ErrorRecord:
    weight: int
    factor: ScaleFactor
    down: int
    up: int

    @property
    def numerical_error(self) -> int:
        return abs(self.up - self.weight)

    @property
    def proportional_error(self) -> float:
        return self.numerical_error / abs(self.weight)


@dataclass(frozen=True)
class ErrorReport:
    records: tuple[ErrorRecord, ...]

    @property
    def mean_numerical(self) -> float:
        return sum(r.numerical_error for r in self.records) / len(self.records)

    @property
    def mean_proportional(self) -> float:
        return sum(r.proportional_error for r in self.records) / len(self.records)

    def write_csv(self, f: TextIO) -> None:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["weight", "n", "shift", "down", "up", "num_err", "prop_err"])
        for r in self.records:
            w.writerow([
                r.weight, r.factor.n, r.factor.shift, r.down, r.up,
                r.numerical_error, f"{r.proportional_error:.6f}",
            ])
        w.writerow(["#mean", "", "", "", "", f"{self.mean_numerical:.5f}",
                    f"{self.mean_proportional:.6f}"])


def scale_roundtrip(weight: int) -> ErrorRecord:
    """Downscale one weight by its own factor and scale it back up."""
    f = compute_scale_factor(abs(weight))
    if f.is_sentinel:
        return ErrorRecord(weight, f, weight, weight)
    down = int(_mul_shift_round(weight, f.n, f.shift))
    up = apply_reverse(down, reverse_factor(f))
    return ErrorRecord(weight, f, down, up)


def static_error_sweep(population: Iterable[int]) -> ErrorReport:
    records = []
    for w in population:
        if not 256 <= abs(w) <= MAX_SCALABLE_MAGNITUDE:
            raise ValueError(f"weight {w} is not in the scalable range")
        records.append(scale_roundtrip(int(w)))
    if not records:
        raise ValueError("empty population")
    return ErrorReport(tuple(records))


def signed_bits_after_scaling() -> int:
    """Signed width of a downscaled Winograd weight (int9)."""
    return signed_bits(INT9_MAX)


def bitwidth_reduction(before_bits: int, after_bits: int) -> Fraction:
    return 1 - Fraction(after_bits, before_bits)
