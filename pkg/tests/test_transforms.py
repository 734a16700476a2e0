import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import correlate_valid
from winoint.transforms import (
    AlgorithmId,
    DivisibilityError,
    GaussMatrix,
    InputRangeError,
    activation_transform,
    algorithm,
    div_round,
    efficiency_gain,
    filter_transform,
    output_transform,
    reduction_ratio,
    worst_case_ranges,
)

ALGS = [a.value for a in AlgorithmId]
i = 1j

# Published matrices, with the original fractional G.
PUBLISHED_CPLX_BT = [
    [1, 0, 0, 0, -1, 0],
    [0, 1, 1, 1, 1, 0],
    [0, -1, 1, -1, 1, 0],
    [0, -i, -1, i, 1, 0],
    [0, i, -1, -i, 1, 0],
    [0, -1, 0, 0, 0, 1],
]
PUBLISHED_CPLX_G = [
    [1, 0, 0],
    [Fraction(1, 4)] * 3,
    [Fraction(1, 4), Fraction(-1, 4), Fraction(1, 4)],
    [Fraction(1, 4), "i/4", Fraction(-1, 4)],
    [Fraction(1, 4), "-i/4", Fraction(-1, 4)],
    [0, 0, 1],
]
PUBLISHED_CPLX_AT = [
    [1, 1, 1, 1, 1, 0],
    [0, 1, -1, i, -i, 0],
    [0, 1, 1, -1, -1, 0],
    [0, 1, -1, -i, i, 1],
]
F = Fraction
PUBLISHED_RAT4_G = [
    [F(1, 4), 0, 0],
    [F(-1, 6), F(-1, 6), F(-1, 6)],
    [F(-1, 6), F(1, 6), F(-1, 6)],
    [F(1, 24), F(1, 12), F(1, 6)],
    [F(1, 24), F(-1, 12), F(1, 6)],
    [0, 0, 1],
]
PUBLISHED_RAT2_G_PRIME = [[2, 0, 0], [1, 1, 1], [1, -1, 1], [0, 0, 2]]


def as_gauss(entry):
    if entry == "i/4":
        return (F(0), F(1, 4))
    if entry == "-i/4":
        return (F(0), F(-1, 4))
    return (F(entry), F(0))


def test_cplx_matrices_verbatim():
    a = algorithm("CPLX_4x4_3x3")
    np.testing.assert_array_equal(a.BT.to_complex(), np.array(PUBLISHED_CPLX_BT))
    np.testing.assert_array_equal(a.AT.to_complex(), np.array(PUBLISHED_CPLX_AT))
    for row, pub_row in zip(a.G_int.to_complex(), PUBLISHED_CPLX_G):
        for got, want in zip(row, pub_row):
            re, im = as_gauss(want)
            assert (F(int(got.real)), F(int(got.imag))) == (4 * re, 4 * im)


def test_cplx_g_row3():
    a = algorithm("cplx4x4")
    assert a.G_int[3].to_complex().tolist() == [1, 1j, -1]


def test_rat2_g_prime():
    a = algorithm("RAT_2x2_3x3")
    assert a.G_int.re.tolist() == PUBLISHED_RAT2_G_PRIME
    assert a.G_int.is_real


def test_rat4_g_is_24x_published():
    a = algorithm("rat4x4")
    assert a.G_int.re[0].tolist() == [6, 0, 0]
    scaled = [[24 * F(v) for v in row] for row in PUBLISHED_RAT4_G]
    assert a.G_int.re.tolist() == scaled


def test_transform_entries_are_cheap():
    allowed = {0, 1, -1, 1j, -1j}
    a = algorithm("cplx4x4")
    assert set(a.BT.to_complex().ravel().tolist()) <= allowed
    assert set(a.AT.to_complex().ravel().tolist()) <= allowed
    for name in ("rat2x2", "rat4x4"):
        r = algorithm(name)
        assert r.BT.is_real and r.AT.is_real
        assert np.abs(r.BT.re).max() <= 5 and np.abs(r.AT.re).max() <= 8


def test_descriptor_fields():
    for name, m, t, scale, div in [
        ("rat2x2", 2, 4, 2, 4),
        ("rat4x4", 4, 6, 24, 576),
        ("cplx4x4", 4, 6, 4, 16),
    ]:
        a = algorithm(name)
        assert (a.m, a.r, a.t, a.filter_scale, a.output_divisor) == (m, 3, t, scale, div)


def test_unknown_algorithm():
    with pytest.raises(ValueError):
        algorithm("F(6x6,3x3)")


def test_layout_partition():
    lay = algorithm("cplx4x4").layout
    assert len(lay.rational_positions) == 16
    assert len(lay.pair_positions) == 10
    cells = list(lay.rational_positions)
    for p, q in lay.pair_positions:
        cells += [p, q]
    assert sorted(cells) == [(r, c) for r in range(6) for c in range(6)]
    pairs = set(lay.pair_positions)
    assert ((3, 3), (4, 4)) in pairs and ((3, 4), (4, 3)) in pairs
    for r in (0, 1, 2, 5):
        assert ((r, 3), (r, 4)) in pairs and ((3, r), (4, r)) in pairs
    for name in ("rat2x2", "rat4x4"):
        lay = algorithm(name).layout
        assert not lay.pair_positions and len(lay.rational_positions) == lay.t**2


# --- filter transform -------------------------------------------------------


def test_filter_all_ones_rat2():
    g = np.ones((3, 3), dtype=np.int64)
    G = np.array(PUBLISHED_RAT2_G_PRIME)
    oracle = G @ g @ G.T
    W = filter_transform(g, algorithm("rat2x2"))
    assert W.is_real
    np.testing.assert_array_equal(W.re, oracle)
    assert W.re.tolist() == [[4, 6, 2, 4], [6, 9, 3, 6], [2, 3, 1, 2], [4, 6, 2, 4]]


@pytest.mark.parametrize("name", ALGS)
def test_filter_zero(name):
    a = algorithm(name)
    W = filter_transform(np.zeros((3, 3), dtype=int), a)
    assert W == GaussMatrix.zeros((a.t, a.t))


def test_filter_all_255_rat2():
    W = filter_transform(np.full((3, 3), 255), algorithm("rat2x2"))
    assert W.re.max() == 2295
    assert np.argwhere(W.re == 2295).tolist() == [[1, 1]]
    # the other centres need alternating signs to reach 2295
    g = 255 * np.array([[1, -1, 1], [-1, 1, -1], [1, -1, 1]])
    assert filter_transform(g, algorithm("rat2x2")).re[2, 2] == 2295


def test_filter_rejects_out_of_range():
    with pytest.raises(InputRangeError):
        filter_transform(np.full((3, 3), 256), algorithm("rat2x2"))


@settings(max_examples=50)
@given(arrays(np.int64, (3, 3), elements=st.integers(-255, 255)))
def test_filter_cplx_conjugate_layout(g):
    a = algorithm("cplx4x4")
    W = filter_transform(g, a)
    assert a.layout.check(W)
    oracle = a.G_int.to_complex() @ g @ a.G_int.to_complex().T
    np.testing.assert_array_equal(W.to_complex(), oracle)


# --- activation transform ---------------------------------------------------


def test_activation_delta_cplx():
    a = algorithm("cplx4x4")
    d = np.zeros((6, 6), dtype=int)
    d[0, 0] = 1
    D = activation_transform(d, a)
    expected = np.zeros((6, 6), dtype=complex)
    expected[0, 0] = 1
    np.testing.assert_array_equal(D.to_complex(), expected)


@pytest.mark.parametrize("name", ALGS)
def test_activation_zero(name):
    a = algorithm(name)
    assert activation_transform(np.zeros((a.t, a.t), dtype=int), a) == GaussMatrix.zeros((a.t, a.t))


def test_activation_wrong_size():
    with pytest.raises(ValueError):
        activation_transform(np.zeros((4, 4), dtype=int), algorithm("cplx4x4"))


def row_formulas(d):
    """d' = BT d written out row by row as in the complex algorithm's derivation."""
    d = d.astype(complex)
    return np.array([
        d[0] - d[4],
        d[1] + d[2] + d[3] + d[4],
        -d[1] + d[2] - d[3] + d[4],
        -d[2] + d[4] - (d[1] - d[3]) * 1j,
        -d[2] + d[4] + (d[1] - d[3]) * 1j,
        -d[1] + d[5],
    ])


@settings(max_examples=50)
@given(arrays(np.int64, (6, 6), elements=st.integers(-255, 255)))
def test_activation_cplx_layout_and_row_formulas(d):
    a = algorithm("cplx4x4")
    D = activation_transform(d, a)
    assert a.layout.check(D)
    np.testing.assert_array_equal(D.to_complex(), row_formulas(row_formulas(d).T).T)
    Dc = D.to_complex()
    for c in (0, 1, 2, 5):
        assert Dc[4, c] == np.conj(Dc[3, c]) and Dc[c, 4] == np.conj(Dc[c, 3])
    assert Dc[4, 4] == np.conj(Dc[3, 3]) and Dc[4, 3] == np.conj(Dc[3, 4])


# --- output transform and exactness ----------------------------------------


def full_product(a, W, D):
    """Complex AT (W . D) AT^T without any of the real-only shortcuts."""
    AT = a.AT.to_complex()
    return AT @ (W.to_complex() * D.to_complex()) @ AT.T


@pytest.mark.parametrize("name", ALGS)
def test_output_zero(name):
    a = algorithm(name)
    Y = output_transform(GaussMatrix.zeros((a.t, a.t)), a)
    assert Y.shape == (a.m, a.m) and not Y.any()


@pytest.mark.parametrize("name", ALGS)
def test_exactness_on_basis_pairs(name):
    """The pipeline is bilinear in (g, d), so checking all basis pairs proves it."""
    a = algorithm(name)
    s2 = a.output_divisor
    for gi in range(9):
        g = np.zeros(9, dtype=np.int64)
        g[gi] = 1
        g = g.reshape(3, 3)
        W = filter_transform(g, a)
        for di in range(a.t * a.t):
            d = np.zeros(a.t * a.t, dtype=np.int64)
            d[di] = 1
            d = d.reshape(a.t, a.t)
            P = full_product(a, W, activation_transform(d, a))
            np.testing.assert_array_equal(P, s2 * correlate_valid(d, g))


@pytest.mark.parametrize("name", ALGS)
def test_exactness_exhaustive_ternary_filters(name, rng):
    a = algorithm(name)
    gs = np.array(list(itertools.product((-1, 0, 1), repeat=9)), dtype=np.int64).reshape(-1, 3, 3)
    d = rng.integers(-1, 2, (a.t, a.t))
    W = filter_transform(gs, a)
    D = activation_transform(d, a)
    M = GaussMatrix(
        W.re * D.re - W.im * D.im,
        W.re * D.im + W.im * D.re,
    )
    Y = output_transform(M, a)
    win = np.lib.stride_tricks.sliding_window_view(d, (3, 3))  # (m, m, 3, 3)
    ref = np.einsum("xyuv,buv->bxy", win, gs)
    np.testing.assert_array_equal(Y, ref)


@pytest.mark.parametrize("name", ALGS)
def test_exactness_random_int9(name, rng):
    a = algorithm(name)
    for _ in range(50):
        g = rng.integers(-255, 256, (3, 3))
        d = rng.integers(-255, 256, (a.t, a.t))
        W, D = filter_transform(g, a), activation_transform(d, a)
        P = full_product(a, W, D)
        assert not P.imag.any()
        np.testing.assert_array_equal(P.real, a.output_divisor * correlate_valid(d, g))
        M = GaussMatrix.from_complex(W.to_complex() * D.to_complex())
        np.testing.assert_array_equal(output_transform(M, a), correlate_valid(d, g))


@pytest.mark.parametrize("name", ALGS)
def test_center_delta_filter_copies_input(name, rng):
    a = algorithm(name)
    g = np.zeros((3, 3), dtype=np.int64)
    g[1, 1] = 1
    d = rng.integers(-255, 256, (a.t, a.t))
    M = GaussMatrix.from_complex(
        filter_transform(g, a).to_complex() * activation_transform(d, a).to_complex()
    )
    np.testing.assert_array_equal(output_transform(M, a), d[1:1 + a.m, 1:1 + a.m])


def test_cplx_output_ignores_nothing_it_needs(rng):
    """Real-only output equals Re of the full complex product for layout-conforming M."""
    a = algorithm("cplx4x4")
    for _ in range(20):
        W = filter_transform(rng.integers(-255, 256, (3, 3)), a)
        D = activation_transform(rng.integers(-255, 256, (6, 6)), a)
        Mc = W.to_complex() * D.to_complex()
        P = a.AT.to_complex() @ Mc @ a.AT.to_complex().T
        Y = output_transform(GaussMatrix.from_complex(Mc), a)
        np.testing.assert_array_equal(16 * Y, P.real)


def test_divisibility_violation_raises():
    a = algorithm("cplx4x4")
    M = GaussMatrix.zeros((6, 6))
    M.re[0, 0] = 1
    with pytest.raises(DivisibilityError):
        output_transform(M, a)
    Y = output_transform(M, a, exact=False)
    assert Y.shape == (4, 4)


def test_rat2_lossy_divides_by_shift_with_rounding():
    a = algorithm("rat2x2")
    M = GaussMatrix.zeros((4, 4))
    M.re[0, 0] = 3  # AT M AT^T = 3 at (0,0): 3 -> 2 -> 1
    M.re[1, 1] = 0
    Y = output_transform(M, a, exact=False)
    assert Y[0, 0] == 1
    M.re[0, 0] = -3
    assert output_transform(M, a, exact=False)[0, 0] == -1


def test_div_round_half_away():
    assert div_round(np.array([5, -5, 4, -4, 6, -6]), 4).tolist() == [1, -1, 1, -1, 2, -2]


# --- range analysis ---------------------------------------------------------


def test_ranges_rat2_match_published():
    rep = worst_case_ranges(algorithm("rat2x2"), 255)
    assert rep.magnitude.tolist() == [
        [1020, 1530, 1530, 1020],
        [1530, 2295, 2295, 1530],
        [1530, 2295, 2295, 1530],
        [1020, 1530, 1530, 1020],
    ]
    assert rep.bits.tolist() == [
        [11, 12, 12, 11],
        [12, 13, 13, 12],
        [12, 13, 13, 12],
        [11, 12, 12, 11],
    ]
    assert rep.max_magnitude == 2295


@pytest.mark.parametrize("name, bits", [("rat2x2", 2), ("rat4x4", 10), ("cplx4x4", 4)])
def test_widening_bits(name, bits):
    assert worst_case_ranges(algorithm(name)).widening_bits == bits


def test_cplx_corner_is_13_bits():
    rep = worst_case_ranges(algorithm("cplx4x4"))
    assert rep.magnitude[0, 0] == 16 * 255
    assert rep.bits[0, 0] == 13


@pytest.mark.parametrize("name", ["rat2x2", "cplx4x4"])
def test_ranges_are_tight(name):
    """Every reported magnitude is reached by some +-bound sign pattern."""
    a = algorithm(name)
    bound = 255
    rep = worst_case_ranges(a, bound)
    signs = np.array(list(itertools.product((-1, 1), repeat=9)), dtype=np.int64)
    W = filter_transform(signs.reshape(-1, 3, 3) * bound, a)
    achieved = np.maximum(np.abs(W.re), np.abs(W.im)).max(axis=0)
    np.testing.assert_array_equal(achieved, rep.magnitude)


# --- complexity -------------------------------------------------------------


@pytest.mark.parametrize(
    "name, ratio, muls",
    [("rat2x2", F(9, 4), 16), ("rat4x4", F(4), 36), ("cplx4x4", F(144, 46), 46)],
)
def test_reduction_ratio(name, ratio, muls):
    a = algorithm(name)
    assert a.muls_per_tile == muls
    assert reduction_ratio(a) == ratio
    assert reduction_ratio(a) == F(a.m**2 * 9, muls)


def test_efficiency_gain_published_values():
    # published gains come from the ratio rounded to 3.13
    assert abs(efficiency_gain(3.13, 12, 4.0, 18) - 17.37) <= 0.01
    assert abs(efficiency_gain(3.13, 12, 2.25, 10) - 15.93) <= 0.01


def test_efficiency_gain_exact_ratio():
    exact = F(144, 46)
    # (72/23 / 12) / (4 / 18) - 1 = 4/23
    assert efficiency_gain(exact, 12, 4, 18) == pytest.approx(100 * 4 / 23)
    # (72/23 / 12) / (9/4 / 10) - 1 = 80/69 - 1
    assert efficiency_gain(exact, 12, F(9, 4), 10) == pytest.approx(100 * 11 / 69)


def test_efficiency_gain_identity_and_errors():
    assert efficiency_gain(3.5, 9, 3.5, 9) == 0
    with pytest.raises(ValueError):
        efficiency_gain(0, 1, 1, 1)
