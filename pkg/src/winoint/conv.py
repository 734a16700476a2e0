"""Multi-channel quantized 3x3 convolution: direct reference and Winograd pipeline.

Filters are QTensors of shape ``(out_channels, 3, 3, in_channels)``; inputs are
``(n, h, w, in_channels)``. Outputs stay as signed 32-bit accumulators.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from winoint.gaussian import MulCounter
from winoint.hadamard import HadamardAccumulator
from winoint.scaling import apply_reverse_grid, apply_scaling, scale_factors_for_filter
from winoint.tensor import ITensor, QTensor, tile_array, zero_point_adjust
from winoint.transforms import (
    AlgorithmId,
    activation_transform,
    algorithm,
    filter_transform,
    output_transform,
    resolve_id,
)

DIRECT = "DIRECT"


class UnsupportedConfiguration(ValueError):
    pass


@dataclass(frozen=True)
class ConvSpec:
    algorithm: str = DIRECT
    padding: int = 0
    scaling_enabled: bool = False
    in_channels: int | None = None
    out_channels: int | None = None
    stride: int = 1
    dilation: int = 1

    def __post_init__(self):
        if self.stride != 1 or self.dilation != 1:
            raise UnsupportedConfiguration("only unit stride and dilation are supported")
        if self.padding < 0:
            raise ValueError("padding must be >= 0")
        alg = self.algorithm
        if str(alg).upper() == DIRECT or str(alg).lower() == "direct":
            alg = DIRECT
        else:
            alg = resolve_id(alg)
        object.__setattr__(self, "algorithm", alg)
        if self.scaling_enabled and alg not in (AlgorithmId.RAT_2x2_3x3, AlgorithmId.CPLX_4x4_3x3):
            raise UnsupportedConfiguration(f"filter scaling is not supported with {alg}")

    @property
    def is_direct(self) -> bool:
        return self.algorithm == DIRECT


@dataclass
class ConvStats:
    general_muls: int = 0
    additions: int = 0
    tiles: int = 0
    direct_muls: int = 0

    @property
    def reduction_ratio(self) -> Fraction:
        return Fraction(self.direct_muls, self.general_muls) if self.general_muls else Fraction(0)


@dataclass(frozen=True)
class ConvResult:
    ofm: ITensor
    stats: ConvStats = field(default_factory=ConvStats)


def _check_shapes(ifm: QTensor, filters: QTensor, spec: ConvSpec) -> tuple[int, int, int]:
    n, h, w, c = ifm.shape
    k, fh, fw, fc = filters.shape
    if (fh, fw) != (3, 3):
        raise ValueError(f"filters must be 3x3, got {fh}x{fw}")
    if fc != c:
        raise ValueError(f"filter channels {fc} != input channels {c}")
    if spec.in_channels is not None and spec.in_channels != c:
        raise ValueError(f"spec expects {spec.in_channels} input channels, got {c}")
    if spec.out_channels is not None and spec.out_channels != k:
        raise ValueError(f"spec expects {spec.out_channels} output channels, got {k}")
    out_h, out_w = h + 2 * spec.padding - 2, w + 2 * spec.padding - 2
    if out_h < 1 or out_w < 1:
        raise ValueError(f"input {h}x{w} with padding {spec.padding} is smaller than the filter")
    return out_h, out_w, k


def direct_conv(ifm: QTensor, filters: QTensor, spec: ConvSpec | None = None) -> ConvResult:
    """Reference convolution (cross-correlation) by spatial dot products."""
    spec = spec or ConvSpec()
    out_h, out_w, k = _check_shapes(ifm, filters, spec)
    x = zero_point_adjust(ifm).data
    g = zero_point_adjust(filters).data
    p = spec.padding
    x = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(x, (3, 3), axis=(1, 2))
    # win: (n, out_h, out_w, c, 3, 3)
    ofm = np.einsum("nhwcuv,kuvc->nhwk", win, g, optimize=True)
    c = ifm.shape[3]
    muls = ofm.size * 9 * c
    stats = ConvStats(general_muls=muls, additions=muls, direct_muls=muls)
    return ConvResult(ITensor(ofm, bits=32), stats)


def transform_filters(filters: QTensor, spec: ConvSpec):
    """Winograd-domain filters ``(k, c, t, t)`` and, if scaling, the factor grids ``(k, t, t)``."""
    a = algorithm(spec.algorithm)
    g = zero_point_adjust(filters).data.transpose(0, 3, 1, 2)  # (k, c, 3, 3)
    W = filter_transform(g, a)
    factors = None
    if spec.scaling_enabled:
        factors = scale_factors_for_filter(W)
        W = apply_scaling(W, factors)
    return W, factors


def _winograd_block(D, W, factors, a, exact):
    """Hadamard + output transform for all tiles against one block of output channels."""
    counter = MulCounter()
    acc = HadamardAccumulator(a)
    for ch in range(D.shape[1]):
        acc.accumulate(W[None, :, ch], D[:, None, ch], counter)
    M = acc.finalize()  # (tiles, k_block, t, t)
    if factors is not None:
        M = apply_reverse_grid(M, factors)
    return output_transform(M, a, exact=exact), counter


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("WINOINT_THREADS", "1")))
    except ValueError:
        return 1


def winograd_conv(
    ifm: QTensor, filters: QTensor, spec: ConvSpec, *, workers: int | None = None
) -> ConvResult:
    """Tiled Winograd convolution, bit-identical to ``direct_conv`` unless scaling is on."""
    if spec.is_direct:
        raise UnsupportedConfiguration("winograd_conv needs a Winograd algorithm")
    out_h, out_w, k = _check_shapes(ifm, filters, spec)
    a = algorithm(spec.algorithm)
    W, factors = transform_filters(filters, spec)

    x = zero_point_adjust(ifm).data
    tiles, _, _ = tile_array(x, a, spec.padding)
    n, th, tw, c = tiles.shape[:4]
    D = activation_transform(tiles.reshape((n * th * tw, c, a.t, a.t)), a)

    workers = workers or default_workers()
    blocks = np.array_split(np.arange(k), min(workers, k))
    jobs = [
        (D, W[b], None if factors is None else factors[b], a, not spec.scaling_enabled)
        for b in blocks
    ]
    if len(jobs) == 1:
        results = [_winograd_block(*jobs[0])]
    else:
        with ThreadPoolExecutor(len(jobs)) as ex:
            results = list(ex.map(lambda j: _winograd_block(*j), jobs))

    counter = MulCounter()
    for _, cnt in results:
        counter += cnt
    Y = np.concatenate([y for y, _ in results], axis=1)  # (tiles, k, m, m)
    m = a.m
    Y = Y.reshape(n, th, tw, k, m, m).transpose(0, 1, 4, 2, 5, 3)
    ofm = Y.reshape(n, th * m, tw * m, k)[:, :out_h, :out_w, :]

    stats = ConvStats(
        general_muls=counter.general_muls,
        additions=counter.additions,
        tiles=n * th * tw,
        direct_muls=n * out_h * out_w * k * 9 * c,
    )
    return ConvResult(ITensor(ofm, bits=32), stats)


def convolve(ifm: QTensor, filters: QTensor, spec: ConvSpec, **kw) -> ConvResult:
    if spec.is_direct:
        return direct_conv(ifm, filters, spec)
    return winograd_conv(ifm, filters, spec, **kw)


@dataclass(frozen=True)
class DiffReport:
    """Element-wise differences of two OFMs.

    Relative figures are normalised by the reference OFM's dynamic range:
    ``max_rel = max|a-b| / max|b|`` and ``mean_rel = mean|a-b| / mean|b|``.
    """

    max_abs: int
    mean_abs: float
    max_rel: float
    mean_rel: float
    n_diff: int
    size: int

    @property
    def identical(self) -> bool:
        return self.n_diff == 0


def compare(a: ConvResult, b: ConvResult) -> DiffReport:
    """Compare ``a`` against the reference ``b``."""
    x, ref = a.ofm.data, b.ofm.data
    if x.shape != ref.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {ref.shape}")
    diff = np.abs(x - ref)
    peak = max(int(np.abs(ref).max(initial=0)), 1)
    mean_ref = max(float(np.abs(ref).mean()) if ref.size else 0.0, 1.0)
    return DiffReport(
        max_abs=int(diff.max(initial=0)),
        mean_abs=float(diff.mean()) if diff.size else 0.0,
        max_rel=int(diff.max(initial=0)) / peak,
        mean_rel=(float(diff.mean()) if diff.size else 0.0) / mean_ref,
        n_diff=int(np.count_nonzero(diff)),
        size=int(diff.size),
    )
