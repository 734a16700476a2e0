"""Channel-accumulated Hadamard products with conjugate-pair Karatsuba sharing.

Rational grid positions cost one multiplication each. For every conjugate
pair only the primary position is multiplied, in Karatsuba form (three
multiplications), and the three partial products are summed across channels
uncombined. ``finalize`` combines each pair once and writes the conjugate
into the mirror position.

Operands may carry leading batch dimensions (e.g. tiles x output channels);
they broadcast like numpy arrays and every broadcast element is counted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from winoint.gaussian import MulCounter
from winoint.transforms import GaussMatrix, WinoAlgorithm

# |operand| <= 2^20 and <= 2^20 channels keeps every partial below 2^62.
OPERAND_LIMIT = 1 << 20
CHANNEL_LIMIT = 1 << 20


class LayoutError(ValueError):
    """Operand does not have the conjugate symmetry the algorithm requires."""


@dataclass
class HadamardAccumulator:
    algorithm: WinoAlgorithm
    rational_acc: np.ndarray | None = None
    pair_p0: np.ndarray | None = None
    pair_p1: np.ndarray | None = None
    pair_p2: np.ndarray | None = None
    channels_seen: int = 0
    _batch_shape: tuple[int, ...] = field(default=(), repr=False)

    def _ensure(self, batch_shape: tuple[int, ...]) -> None:
        if self.rational_acc is None:
            lay = self.algorithm.layout
            self._batch_shape = batch_shape
            self.rational_acc = np.zeros(batch_shape + (len(lay.rational_positions),), np.int64)
            npairs = len(lay.pair_positions)
            self.pair_p0 = np.zeros(batch_shape + (npairs,), np.int64)
            self.pair_p1 = np.zeros_like(self.pair_p0)
            self.pair_p2 = np.zeros_like(self.pair_p0)
        elif batch_shape != self._batch_shape:
            raise ValueError(f"batch shape changed from {self._batch_shape} to {batch_shape}")

    def accumulate(self, W: GaussMatrix, D: GaussMatrix, counter: MulCounter) -> HadamardAccumulator:
        return hadamard_accumulate(self, W, D, self.algorithm, counter)

    def finalize(self) -> GaussMatrix:
        return finalize(self, self.algorithm)


def _flat(x: GaussMatrix, t: int) -> tuple[np.ndarray, np.ndarray]:
    lead = x.shape[:-2]
    return x.re.reshape(lead + (t * t,)), x.im.reshape(lead + (t * t,))


def _check_operand(x: GaussMatrix, a: WinoAlgorithm, name: str) -> None:
    if x.shape[-2:] != (a.t, a.t):
        raise ValueError(f"{name} must be {a.t}x{a.t}, got {x.shape[-2:]}")
    if not a.layout.check(x):
        raise LayoutError(f"{name} violates the {a.id} conjugate layout")
    if x.re.size and max(np.abs(x.re).max(), np.abs(x.im).max()) > OPERAND_LIMIT:
        raise OverflowError(f"{name} magnitude exceeds {OPERAND_LIMIT}")


def hadamard_accumulate(
    acc: HadamardAccumulator,
    W: GaussMatrix,
    D: GaussMatrix,
    a: WinoAlgorithm,
    c: MulCounter,
) -> HadamardAccumulator:
    """Add one input channel's W (.) D into ``acc`` and count the multiplications."""
    _check_operand(W, a, "W")
    _check_operand(D, a, "D")
    if acc.channels_seen >= CHANNEL_LIMIT:
        raise OverflowError("channel count exceeds accumulator headroom")
    batch = np.broadcast_shapes(W.shape[:-2], D.shape[:-2])
    acc._ensure(batch)
    lay = a.layout
    w_re, w_im = _flat(W, a.t)
    d_re, d_im = _flat(D, a.t)

    ri = lay.rational_index
    acc.rational_acc += w_re[..., ri] * d_re[..., ri]
    nprod = int(np.prod(batch, dtype=np.int64))
    muls = len(ri) * nprod
    adds = len(ri) * nprod

    if lay.pair_positions:
        pi = lay.primary_index
        wr, wi, dr, di = w_re[..., pi], w_im[..., pi], d_re[..., pi], d_im[..., pi]
        acc.pair_p0 += wr * dr
        acc.pair_p1 += wi * di
        acc.pair_p2 += (wr + wi) * (dr + di)
        muls += 3 * len(pi) * nprod
        adds += 5 * len(pi) * nprod

    acc.channels_seen += 1
    c.add(muls, adds)
    return acc


def finalize(acc: HadamardAccumulator, a: WinoAlgorithm) -> GaussMatrix:
    """Combine the accumulated partials into the full t x t Hadamard grid."""
    if acc.channels_seen == 0 or acc.rational_acc is None:
        raise ValueError("finalize called on an empty accumulator")
    lay = a.layout
    shape = acc._batch_shape + (a.t * a.t,)
    re = np.zeros(shape, np.int64)
    im = np.zeros(shape, np.int64)
    re[..., lay.rational_index] = acc.rational_acc
    if lay.pair_positions:
        pre = acc.pair_p0 - acc.pair_p1
        pim = acc.pair_p2 - acc.pair_p1 - acc.pair_p0
        re[..., lay.primary_index] = pre
        im[..., lay.primary_index] = pim
        re[..., lay.mirror_index] = pre
        im[..., lay.mirror_index] = -pim
    out_shape = acc._batch_shape + (a.t, a.t)
    return GaussMatrix(re.reshape(out_shape), im.reshape(out_shape))
