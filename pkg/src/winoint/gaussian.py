"""Gaussian integers, Karatsuba complex products and multiplication counting."""

from __future__ import annotations

from dataclasses import dataclass

INT64_MIN = -(1 << 63)
INT64_MAX = (1 << 63) - 1


class ArithmeticOverflow(OverflowError):
    """An intermediate value left the signed 64-bit working range."""


def _checked(v: int) -> int:
    if not INT64_MIN <= v <= INT64_MAX:
        raise ArithmeticOverflow(f"{v} does not fit in int64")
    return v


@dataclass(frozen=True, slots=True)
class GaussInt:
    re: int
    im: int = 0

    def __post_init__(self):
        _checked(self.re)
        _checked(self.im)

    @property
    def is_rational(self) -> bool:
        return self.im == 0

    def conj(self) -> GaussInt:
        return GaussInt(self.re, -self.im)

    def __add__(self, other: GaussInt) -> GaussInt:
        return GaussInt(_checked(self.re + other.re), _checked(self.im + other.im))

    def __sub__(self, other: GaussInt) -> GaussInt:
        return GaussInt(_checked(self.re - other.re), _checked(self.im - other.im))

    def __neg__(self) -> GaussInt:
        return GaussInt(-self.re, -self.im)

    def __str__(self) -> str:
        return f"{self.re}{self.im:+d}i"


@dataclass
class MulCounter:
    """Tally of general (data x data) multiplications.

    One counter belongs to one worker; merge per-worker counters with ``+=``.
    """

    general_muls: int = 0
    additions: int = 0

    def add(self, muls: int, additions: int = 0) -> None:
        if muls < 0 or additions < 0:
            raise ValueError("counts only grow")
        self.general_muls += muls
        self.additions += additions

    def __iadd__(self, other: MulCounter) -> MulCounter:
        self.add(other.general_muls, other.additions)
        return self


@dataclass(frozen=True, slots=True)
class KaratsubaPartial:
    """Uncombined Karatsuba terms x0*y0, x1*y1 and (x0+x1)*(y0+y1)."""

    p0: int = 0
    p1: int = 0
    p2: int = 0

    def combine(self) -> GaussInt:
        return GaussInt(
            _checked(self.p0 - self.p1),
            _checked(self.p2 - self.p1 - self.p0),
        )

    def __add__(self, other: KaratsubaPartial) -> KaratsubaPartial:
        return KaratsubaPartial(
            _checked(self.p0 + other.p0),
            _checked(self.p1 + other.p1),
            _checked(self.p2 + other.p2),
        )


def karatsuba_terms(x: GaussInt, y: GaussInt, c: MulCounter) -> KaratsubaPartial:
    p0 = _checked(x.re * y.re)
    p1 = _checked(x.im * y.im)
    p2 = _checked(_checked(x.re + x.im) * _checked(y.re + y.im))
    c.add(3, 2)
    return KaratsubaPartial(p0, p1, p2)


def gmul_karatsuba(x: GaussInt, y: GaussInt, c: MulCounter) -> GaussInt:
    """Exact complex product using three multiplications (one if both are rational)."""
    if x.is_rational and y.is_rational:
        c.add(1)
        return GaussInt(_checked(x.re * y.re))
    return karatsuba_terms(x, y, c).combine()


def gmul_conjugate_pair(x: GaussInt, y: GaussInt, c: MulCounter) -> tuple[GaussInt, GaussInt]:
    """Return ``(x*y, conj(x)*conj(y))`` for the cost of a single complex product."""
    xy = karatsuba_terms(x, y, c).combine()
    return xy, xy.conj()


def karatsuba_accumulate(
    acc: KaratsubaPartial, x: GaussInt, y: GaussInt, c: MulCounter
) -> KaratsubaPartial:
    return acc + karatsuba_terms(x, y, c)
