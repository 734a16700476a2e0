"""Winograd transform matrices and the filter / activation / output transforms.

Three algorithms are provided:

``RAT_2x2_3x3``
    F(2x2, 3x3) over the rationals, points {0, 1, -1}.
``RAT_4x4_3x3``
    F(4x4, 3x3) over the rationals, points {0, 1, -1, 2, -2}.
``CPLX_4x4_3x3``
    F(4x4, 3x3) over the Gaussian integers, points {0, 1, -1, i, -i}.

Every filter matrix is stored pre-multiplied by ``filter_scale`` so that the
whole pipeline runs in integers; the output transform divides the scaling
back out (once per 1-D stage).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction
from functools import cache

import numpy as np

from winoint.tensor import Tile


class InputRangeError(ValueError):
    pass


class DivisibilityError(ArithmeticError):
    """An exact division in the output transform left a remainder."""


class AlgorithmId(str, enum.Enum):
    RAT_2x2_3x3 = "RAT_2x2_3x3"
    RAT_4x4_3x3 = "RAT_4x4_3x3"
    CPLX_4x4_3x3 = "CPLX_4x4_3x3"

    def __str__(self) -> str:
        return self.value


ALIASES = {
    "rat2x2": AlgorithmId.RAT_2x2_3x3,
    "rat4x4": AlgorithmId.RAT_4x4_3x3,
    "cplx4x4": AlgorithmId.CPLX_4x4_3x3,
}


@dataclass(frozen=True, eq=False)
class GaussMatrix:
    """Array of Gaussian integers stored as separate int64 real/imag parts.

    Supports leading batch dimensions; ``@`` multiplies the trailing two axes.
    """

    re: np.ndarray
    im: np.ndarray

    def __post_init__(self):
        re = np.asarray(self.re, dtype=np.int64)
        im = np.asarray(self.im, dtype=np.int64)
        if re.shape != im.shape:
            re, im = np.broadcast_arrays(re, im)
            re, im = re.copy(), im.copy()
        object.__setattr__(self, "re", re)
        object.__setattr__(self, "im", im)

    @classmethod
    def real(cls, a) -> GaussMatrix:
        a = np.asarray(a, dtype=np.int64)
        return cls(a, np.zeros_like(a))

    @classmethod
    def zeros(cls, shape) -> GaussMatrix:
        return cls(np.zeros(shape, np.int64), np.zeros(shape, np.int64))

    @classmethod
    def from_complex(cls, a) -> GaussMatrix:
        a = np.asarray(a, dtype=complex)
        re, im = np.rint(a.real), np.rint(a.imag)
        if not (np.array_equal(re, a.real) and np.array_equal(im, a.imag)):
            raise ValueError("entries are not Gaussian integers")
        return cls(re.astype(np.int64), im.astype(np.int64))

    def to_complex(self) -> np.ndarray:
        return self.re + 1j * self.im

    @property
    def shape(self) -> tuple[int, ...]:
        return self.re.shape

    @property
    def T(self) -> GaussMatrix:
        return GaussMatrix(np.swapaxes(self.re, -1, -2), np.swapaxes(self.im, -1, -2))

    @property
    def is_real(self) -> bool:
        return not self.im.any()

    def conj(self) -> GaussMatrix:
        return GaussMatrix(self.re, -self.im)

    def __getitem__(self, idx) -> GaussMatrix:
        return GaussMatrix(self.re[idx], self.im[idx])

    def __matmul__(self, other: GaussMatrix) -> GaussMatrix:
        if not isinstance(other, GaussMatrix):
            other = GaussMatrix.real(other)
        if not other.im.any():
            return GaussMatrix(self.re @ other.re, self.im @ other.re)
        if not self.im.any():
            return GaussMatrix(self.re @ other.re, self.re @ other.im)
        return GaussMatrix(
            self.re @ other.re - self.im @ other.im,
            self.re @ other.im + self.im @ other.re,
        )

    def __rmatmul__(self, other) -> GaussMatrix:
        return GaussMatrix.real(other) @ self

    def __eq__(self, other):
        if not isinstance(other, GaussMatrix):
            return NotImplemented
        return bool(np.array_equal(self.re, other.re) and np.array_equal(self.im, other.im))

    def __repr__(self) -> str:
        return f"GaussMatrix(\n{self.to_complex()!r})"


@dataclass(frozen=True)
class ConjLayout:
    """Which grid positions are rational and which form conjugate pairs.

    Each pair is ``(primary, mirror)``; the mirror always holds the complex
    conjugate of the primary in both the transformed filter and activation.
    """

    t: int
    rational_positions: tuple[tuple[int, int], ...]
    pair_positions: tuple[tuple[tuple[int, int], tuple[int, int]], ...]

    @property
    def rational_index(self) -> np.ndarray:
        return np.array([i * self.t + j for i, j in self.rational_positions], dtype=np.intp)

    @property
    def primary_index(self) -> np.ndarray:
        return np.array([p[0] * self.t + p[1] for p, _ in self.pair_positions], dtype=np.intp)

    @property
    def mirror_index(self) -> np.ndarray:
        return np.array([q[0] * self.t + q[1] for _, q in self.pair_positions], dtype=np.intp)

    def check(self, x: GaussMatrix) -> bool:
        """True if ``x`` (shape ``(..., t, t)``) honours this layout."""
        re = x.re.reshape(x.shape[:-2] + (self.t * self.t,))
        im = x.im.reshape(re.shape)
        if im[..., self.rational_index].any():
            return False
        p, q = self.primary_index, self.mirror_index
        return bool(
            np.array_equal(re[..., p], re[..., q]) and np.array_equal(im[..., p], -im[..., q])
        )


def _rational_layout(t: int) -> ConjLayout:
    return ConjLayout(t, tuple((i, j) for i in range(t) for j in range(t)), ())


def _complex_layout() -> ConjLayout:
    real_idx = (0, 1, 2, 5)
    rational = tuple((i, j) for i in real_idx for j in real_idx)
    pairs = [((i, 3), (i, 4)) for i in real_idx]
    pairs += [((3, j), (4, j)) for j in real_idx]
    pairs += [((3, 3), (4, 4)), ((3, 4), (4, 3))]
    return ConjLayout(6, rational, tuple(pairs))


@dataclass(frozen=True, eq=False)
class WinoAlgorithm:
    id: AlgorithmId
    m: int
    r: int
    BT: GaussMatrix
    G_int: GaussMatrix
    AT: GaussMatrix
    filter_scale: int
    layout: ConjLayout

    @property
    def t(self) -> int:
        return self.m + self.r - 1

    @property
    def output_divisor(self) -> int:
        return self.filter_scale**2

    @property
    def is_complex(self) -> bool:
        return bool(self.layout.pair_positions)

    @property
    def muls_per_tile(self) -> int:
        """General multiplications per tile and input channel."""
        return len(self.layout.rational_positions) + 3 * len(self.layout.pair_positions)


_I = 1j
_MATRICES = {
    AlgorithmId.RAT_2x2_3x3: dict(
        m=2,
        scale=2,
        BT=[[1, 0, -1, 0],
            [0, 1, 1, 0],
            [0, -1, 1, 0],
            [0, 1, 0, -1]],
        G=[[2, 0, 0],
           [1, 1, 1],
           [1, -1, 1],
           [0, 0, 2]],
        AT=[[1, 1, 1, 0],
            [0, 1, -1, -1]],
    ),
    AlgorithmId.RAT_4x4_3x3: dict(
        m=4,
        scale=24,
        BT=[[4, 0, -5, 0, 1, 0],
            [0, -4, -4, 1, 1, 0],
            [0, 4, -4, -1, 1, 0],
            [0, -2, -1, 2, 1, 0],
            [0, 2, -1, -2, 1, 0],
            [0, 4, 0, -5, 0, 1]],
        # 24 * [[1/4,0,0],[-1/6]*3,[-1/6,1/6,-1/6],[1/24,1/12,1/6],[1/24,-1/12,1/6],[0,0,1]]
        G=[[6, 0, 0],
           [-4, -4, -4],
           [-4, 4, -4],
           [1, 2, 4],
           [1, -2, 4],
           [0, 0, 24]],
        AT=[[1, 1, 1, 1, 1, 0],
            [0, 1, -1, 2, -2, 0],
            [0, 1, 1, 4, 4, 0],
            [0, 1, -1, 8, -8, 1]],
    ),
    AlgorithmId.CPLX_4x4_3x3: dict(
        m=4,
        scale=4,
        BT=[[1, 0, 0, 0, -1, 0],
            [0, 1, 1, 1, 1, 0],
            [0, -1, 1, -1, 1, 0],
            [0, -_I, -1, _I, 1, 0],
            [0, _I, -1, -_I, 1, 0],
            [0, -1, 0, 0, 0, 1]],
        G=[[4, 0, 0],
           [1, 1, 1],
           [1, -1, 1],
           [1, _I, -1],
           [1, -_I, -1],
           [0, 0, 4]],
        AT=[[1, 1, 1, 1, 1, 0],
            [0, 1, -1, _I, -_I, 0],
            [0, 1, 1, -1, -1, 0],
            [0, 1, -1, -_I, _I, 1]],
    ),
}


def resolve_id(id) -> AlgorithmId:
    if isinstance(id, AlgorithmId):
        return id
    key = str(id)
    if key.lower() in ALIASES:
        return ALIASES[key.lower()]
    for aid in AlgorithmId:
        if aid.value.lower() == key.lower():
            return aid
    raise ValueError(f"unknown algorithm {id!r}")


@cache
def _build(aid: AlgorithmId) -> WinoAlgorithm:
    spec = _MATRICES[aid]
    m = spec["m"]
    layout = _complex_layout() if aid is AlgorithmId.CPLX_4x4_3x3 else _rational_layout(m + 2)
    mats = {}
    for key in ("BT", "G", "AT"):
        mat = GaussMatrix.from_complex(spec[key])
        mat.re.flags.writeable = False
        mat.im.flags.writeable = False
        mats[key] = mat
    return WinoAlgorithm(
        id=aid,
        m=m,
        r=3,
        BT=mats["BT"],
        G_int=mats["G"],
        AT=mats["AT"],
        filter_scale=spec["scale"],
        layout=layout,
    )


def algorithm(id) -> WinoAlgorithm:
    """Look up an algorithm by id or alias (``rat2x2``, ``rat4x4``, ``cplx4x4``)."""
    return _build(resolve_id(id))


ALL_ALGORITHMS = tuple(AlgorithmId)


# --- transforms -------------------------------------------------------------


def filter_transform(g, a: WinoAlgorithm) -> GaussMatrix:
    """W = G_int g G_int^T for a (batch of) 3x3 int9 filter(s)."""
    g = np.asarray(g, dtype=np.int64)
    if g.shape[-2:] != (a.r, a.r):
        raise ValueError(f"filter must be {a.r}x{a.r}, got {g.shape[-2:]}")
    if g.size and np.abs(g).max() > 255:
        raise InputRangeError("filter weights outside int9 range [-255, 255]")
    return a.G_int @ GaussMatrix.real(g) @ a.G_int.T


def activation_transform(d, a: WinoAlgorithm) -> GaussMatrix:
    """D = BT d BT^T for a (batch of) t x t tile(s)."""
    if isinstance(d, Tile):
        d = d.data
    d = np.asarray(d, dtype=np.int64)
    if d.shape[-2:] != (a.t, a.t):
        raise ValueError(f"tile must be {a.t}x{a.t}, got {d.shape[-2:]}")
    return a.BT @ GaussMatrix.real(d) @ a.BT.T


def _div_exact(x: np.ndarray, d: int) -> np.ndarray:
    q, rem = np.divmod(x, d)
    if rem.any():
        raise DivisibilityError(f"output transform not divisible by {d}")
    return q


def div_round(x: np.ndarray, d: int) -> np.ndarray:
    """Integer division rounding half away from zero."""
    x = np.asarray(x, dtype=np.int64)
    mag = (np.abs(x) + d // 2) // d
    return np.where(x < 0, -mag, mag)


def _shift_round(x: np.ndarray) -> np.ndarray:
    mag = (np.abs(x) + 1) >> 1
    return np.where(x < 0, -mag, mag)


def _stage_divide(x: np.ndarray, a: WinoAlgorithm, exact: bool) -> np.ndarray:
    s = a.filter_scale
    if exact:
        q = _div_exact(x, s)
        return q
    if s == 2:
        return _shift_round(x)
    return div_round(x, s)


def output_transform(M: GaussMatrix, a: WinoAlgorithm, *, exact: bool = True) -> np.ndarray:
    """Y = AT M AT^T / filter_scale^2, returning real int64 values.

    The filter scaling is removed after each of the two 1-D stages (a right
    shift by one for RAT_2x2). With ``exact=True`` every division must be
    exact; lossy (precision-scaled) paths pass ``exact=False`` and get
    round-half-away-from-zero instead.

    For the complex algorithm only real output terms are ever formed: after
    the first stage, columns {0, 1, 2, 5} are real and column 4 is the
    conjugate of column 3, so the second stage needs just ``2 * Re(z3 * a3)``
    for the conjugate columns.
    """
    if M.shape[-2:] != (a.t, a.t):
        raise ValueError(f"expected {a.t}x{a.t} input, got {M.shape[-2:]}")
    if not a.is_complex:
        if M.im.any():
            raise ValueError("rational algorithm received complex Hadamard values")
        at = a.AT.re
        z = _stage_divide(at @ M.re, a, exact)
        return _stage_divide(z @ at.T, a, exact)

    at_re, at_im = a.AT.re, a.AT.im
    # first stage: real part everywhere, imaginary part only for column 3
    z_re = at_re @ M.re - at_im @ M.im
    z3_im = at_re @ M.im[..., :, 3:4] + at_im @ M.re[..., :, 3:4]
    z_re = _stage_divide(z_re, a, exact)
    z3_im = _stage_divide(z3_im, a, exact)
    real_cols = [0, 1, 2, 5]
    y = z_re[..., :, real_cols] @ at_re[:, real_cols].T
    y = y + 2 * (z_re[..., :, 3:4] @ at_re[:, 3:4].T - z3_im @ at_im[:, 3:4].T)
    return _stage_divide(y, a, exact)


# --- analysis ---------------------------------------------------------------


@dataclass(frozen=True)
class RangeReport:
    """Worst-case Winograd-domain filter magnitudes and signed bit widths.

    For complex algorithms the magnitude of an entry is the larger of the
    real-part and imaginary-part bounds.
    """

    algorithm: AlgorithmId
    weight_bound: int
    magnitude: np.ndarray
    bits: np.ndarray
    max_magnitude: int
    widening_bits: int

    @property
    def max_bits(self) -> int:
        return int(self.bits.max())


def signed_bits(magnitude: int) -> int:
    """Signed width needed for values in [-magnitude, magnitude]."""
    return 1 + int(magnitude).bit_length()


def widening_bits(filter_scale: int) -> int:
    """ceil(log2(filter_scale^2))."""
    return (filter_scale * filter_scale - 1).bit_length()


def worst_case_ranges(a: WinoAlgorithm, weight_bound: int = 255) -> RangeReport:
    if weight_bound <= 0:
        raise ValueError("weight_bound must be positive")
    G = a.G_int.to_complex()
    # coefficient of g[k][l] in W[i][j] is G[i][k] * G[j][l]
    coef = np.einsum("ik,jl->ijkl", G, G)
    re_bound = np.abs(coef.real).sum(axis=(2, 3))
    im_bound = np.abs(coef.imag).sum(axis=(2, 3))
    mag = np.rint(np.maximum(re_bound, im_bound)).astype(np.int64) * weight_bound
    bits = np.vectorize(signed_bits, otypes=[np.int64])(mag)
    return RangeReport(
        algorithm=a.id,
        weight_bound=weight_bound,
        magnitude=mag,
        bits=bits,
        max_magnitude=int(mag.max()),
        widening_bits=widening_bits(a.filter_scale),
    )


def reduction_ratio(a: WinoAlgorithm) -> Fraction:
    """Direct-method multiplications over general multiplications, per output tile."""
    return Fraction(a.m**2 * a.r**2, a.muls_per_tile)


def efficiency_gain(red_a, bits_a, red_b, bits_b) -> float:
    """Percentage gain of reduction-per-bit of algorithm a over algorithm b."""
    if min(red_a, bits_a, red_b, bits_b) <= 0:
        raise ValueError("all inputs must be positive")
    gain = (Fraction(red_a) / Fraction(bits_a)) / (Fraction(red_b) / Fraction(bits_b)) - 1
    return float(gain * 100)
