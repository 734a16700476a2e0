"""Bit-exact integer Winograd convolution (rational and Gaussian-integer variants)."""

from winoint.conv import ConvResult, ConvSpec, compare, convolve, direct_conv, winograd_conv
from winoint.gaussian import GaussInt, KaratsubaPartial, MulCounter
from winoint.tensor import ITensor, QTensor, load_qtensor, save_qtensor, zero_point_adjust
from winoint.transforms import AlgorithmId, GaussMatrix, WinoAlgorithm, algorithm

__all__ = [
    "AlgorithmId",
    "ConvResult",
    "ConvSpec",
    "GaussInt",
    "GaussMatrix",
    "ITensor",
    "KaratsubaPartial",
    "MulCounter",
    "QTensor",
    "WinoAlgorithm",
    "algorithm",
    "compare",
    "convolve",
    "direct_conv",
    "load_qtensor",
    "save_qtensor",
    "winograd_conv",
    "zero_point_adjust",
]

__version__ = "0.1.0"
