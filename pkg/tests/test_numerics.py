import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from mxflow.formats import BL, BMF, FLOAT32, FixedPoint, MiniFloat, MXInt
from mxflow.numerics import (
    QuantizationError,
    UnsupportedCast,
    block_dot_exact,
    cast,
    dequantize_tensor,
    element_scale_exponent,
    fake_quantize,
    partition_blocks,
    quantize_tensor,
)


def mxint_reference(block, e, m):
    """Scalar re-statement of the MXInt rule for one block (Python ints and floats only)."""
    amax = max(abs(v) for v in block)
    lo, hi = -(2 ** (e - 1)), 2 ** (e - 1) - 1
    E = lo if amax == 0 else min(max(math.frexp(amax)[1] - 1, lo), hi)
    s = 2.0 ** (E - m + 1)
    mags = [min(round(abs(v) / s), 2**m - 1) for v in block]
    return E, mags, [math.copysign(mg * s, v) if mg else 0.0 for mg, v in zip(mags, block)]


finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False, width=64)


def tensors(rows=(1, 9), cols=(1, 9)):
    shape = st.tuples(st.integers(*rows), st.integers(*cols))
    return hnp.arrays(np.float64, shape, elements=finite)


block_formats = st.one_of(
    st.builds(MXInt, st.tuples(st.integers(1, 4), st.integers(1, 4)), st.integers(2, 8), st.integers(1, 12)),
    st.builds(BMF, st.tuples(st.integers(1, 4), st.integers(1, 4)), st.integers(3, 8), st.integers(1, 4),
              st.integers(1, 4)),
    st.builds(BL, st.tuples(st.integers(1, 4), st.integers(1, 4)), st.integers(3, 8), st.integers(1, 7)),
    st.builds(FixedPoint, st.integers(2, 16), st.integers(0, 1)),
    st.builds(MiniFloat, st.integers(2, 5), st.integers(1, 4), st.integers(0, 15)),
)


# --- worked examples ----------------------------------------------------------------


def test_mxint_worked_block():
    q = quantize_tensor(np.array([[3.0, -1.5, 0.6, 0.1]]), MXInt((1, 4), 8, 3))
    assert q.shared.tolist() == [1]
    assert element_scale_exponent(q).tolist() == [-1]
    assert q.elems.tolist() == [[6, -3, 1, 0]]
    assert dequantize_tensor(q).tolist() == [[3.0, -1.5, 0.5, 0.0]]


def test_mxint_exact_ones():
    q = quantize_tensor(np.array([[1.0, 1.0]]), MXInt((1, 2), 8, 2))
    assert q.shared.tolist() == [0]
    assert q.elems.tolist() == [[2, 2]]
    assert dequantize_tensor(q).tolist() == [[1.0, 1.0]]


@pytest.mark.parametrize("spec", [MXInt((2, 2), 8, 3), BMF((2, 2), 8, 4, 3), BL((2, 2), 8, 7)])
def test_zero_block(spec):
    q = quantize_tensor(np.zeros((2, 2)), spec)
    assert q.shared.tolist() == [-128]
    assert not q.elems.any()
    assert not dequantize_tensor(q).any()


def test_float32_is_identity():
    x = np.random.default_rng(0).standard_normal((5, 7)) * 1e10
    assert np.array_equal(fake_quantize(x, FLOAT32), x)


@given(tensors(), st.integers(1, 10), st.integers(2, 8))
def test_matches_scalar_reference(x, m, e):
    spec = MXInt((2, 3), e, m)
    got = quantize_tensor(x, spec)
    layout = got.layout
    real = layout.mask()
    fq = fake_quantize(x, spec)
    for b, blk in enumerate(got.blocks()):
        coords = layout.block_coords(b)
        vals = [x[c] for c in coords]
        E, mags, deq = mxint_reference(vals, e, m)
        assert blk.shared == E
        assert [abs(v) for v in np.array(blk.elems)[real[b]]] == mags
        assert [fq[c] for c in coords] == deq


# --- partitioning -----------------------------------------------------------------------


def padded_block_oracle(shape, block):
    rows, cols = shape
    count = 0
    for br, bc in itertools.product(range(math.ceil(rows / block[0])), range(math.ceil(cols / block[1]))):
        cells = [(br * block[0] + i, bc * block[1] + j) for i in range(block[0]) for j in range(block[1])]
        count += any(r >= rows or c >= cols for r, c in cells)
    return count


def test_exact_tiling():
    layout = partition_blocks((4, 4), (2, 2))
    assert layout.n_blocks == 4
    assert layout.padded_blocks == 0


def test_ragged_tiling():
    layout = partition_blocks((5, 3), (2, 2))
    assert layout.n_blocks == 6
    assert layout.padded_blocks == padded_block_oracle((5, 3), (2, 2))


@given(st.integers(1, 20), st.integers(1, 20), st.integers(1, 5), st.integers(1, 5))
def test_padding_oracle(rows, cols, br, bc):
    layout = partition_blocks((rows, cols), (br, bc))
    assert layout.n_blocks == math.ceil(rows / br) * math.ceil(cols / bc)
    assert layout.padded_blocks == padded_block_oracle((rows, cols), (br, bc))
    assert layout.n_blocks * br * bc >= rows * cols


def test_vector_uses_one_row():
    layout = partition_blocks((32,), (16, 2))
    assert layout.n_blocks == 1
    assert layout.block_shape == (1, 32)
    assert layout.padded_blocks == 0


def test_leading_dims_iterate():
    layout = partition_blocks((3, 4, 4), (2, 2))
    assert layout.n_blocks == 12


def test_batch_dims_keep_samples_apart():
    x = np.stack([np.full((2, 2), 1e-3), np.full((2, 2), 1e3)])
    spec = MXInt((16, 2), 8, 3)
    apart = fake_quantize(x, spec, batch_dims=1)
    assert np.array_equal(apart[0], fake_quantize(x[0], spec))
    assert np.array_equal(apart[1], fake_quantize(x[1], spec))


def test_empty_tensor_rejected():
    with pytest.raises(QuantizationError):
        partition_blocks((0, 4), (2, 2))


def test_nonfinite_reports_index():
    x = np.zeros((3, 4))
    x[2, 1] = np.nan
    with pytest.raises(QuantizationError, match=r"\(2, 1\)"):
        quantize_tensor(x, MXInt((2, 2), 8, 3))


# --- properties -------------------------------------------------------------------------


@given(tensors(), block_formats)
def test_idempotent(x, spec):
    q = quantize_tensor(x, spec)
    assert quantize_tensor(dequantize_tensor(q), spec) == q


@given(tensors(), block_formats)
def test_shape_preserved(x, spec):
    assert fake_quantize(x, spec).shape == x.shape


@given(tensors(), st.integers(1, 16), st.integers(2, 8))
def test_encoding_ranges(x, m, e):
    q = quantize_tensor(x, MXInt((2, 2), e, m))
    assert q.shared.min() >= -(2 ** (e - 1)) and q.shared.max() <= 2 ** (e - 1) - 1
    assert np.abs(q.elems).max() <= 2**m - 1


@given(tensors(), st.integers(1, 16))
def test_sign_symmetry(x, m):
    spec = MXInt((2, 2), 8, m)
    assert np.array_equal(fake_quantize(-x, spec), -fake_quantize(x, spec))


@given(tensors(), st.integers(1, 16))
def test_half_ulp_and_clamp(x, m):
    spec = MXInt((2, 2), 8, m)
    q = quantize_tensor(x, spec)
    s = q.layout.from_blocks(np.ldexp(np.ones_like(q.elems, dtype=float), element_scale_exponent(q)[:, None]))
    fq = dequantize_tensor(q)
    in_range = np.abs(x) <= (2**m - 1) * s
    assert np.all(np.abs(fq - x)[in_range] <= s[in_range] / 2)
    assert np.all(np.abs(fq) <= (2**m - 1) * s)


# --- casting ------------------------------------------------------------------------------


@given(tensors(), st.integers(1, 8), st.integers(0, 8))
def test_widening_cast_is_exact(x, m, extra):
    q = quantize_tensor(x, MXInt((2, 2), 8, m))
    wide = cast(q, MXInt((2, 2), 8, m + extra))
    assert np.array_equal(dequantize_tensor(wide), dequantize_tensor(q))
    assert np.array_equal(wide.shared, q.shared)


def test_identity_cast():
    q = quantize_tensor(np.random.default_rng(1).standard_normal((8, 8)), MXInt((2, 2), 8, 7))
    assert cast(q, MXInt((2, 2), 8, 7)) == q


@given(tensors(), st.integers(2, 10), st.integers(1, 9))
def test_narrowing_matches_requantize(x, m, m2):
    m2 = min(m2, m)
    q = quantize_tensor(x, MXInt((2, 2), 8, m))
    narrow = cast(q, MXInt((2, 2), 8, m2))
    direct = quantize_tensor(dequantize_tensor(q), MXInt((2, 2), 8, m2))
    same = narrow.shared == direct.shared
    assert np.array_equal(narrow.elems[same], direct.elems[same])


@pytest.mark.parametrize("target", [MXInt((2, 4), 8, 3), MXInt((2, 2), 6, 3), BMF((2, 2), 8, 4, 3), FLOAT32])
def test_unsupported_casts(target):
    q = quantize_tensor(np.ones((4, 4)), MXInt((2, 2), 8, 7))
    with pytest.raises(UnsupportedCast):
        cast(q, target)


# --- exact dot product ----------------------------------------------------------------


def fsum_dot(qa, qb):
    a, b = dequantize_tensor(qa).ravel(), dequantize_tensor(qb).ravel()
    return math.fsum((a * b).tolist())


@given(tensors(), st.integers(1, 20), st.integers(1, 20), st.data())
def test_dot_matches_fsum(x, ma, mb, data):
    y = data.draw(hnp.arrays(np.float64, x.shape, elements=finite))
    qa = quantize_tensor(x, MXInt((16, 2), 8, ma))
    qb = quantize_tensor(y, MXInt((16, 2), 8, mb))
    assert block_dot_exact(qa, qb) == fsum_dot(qa, qb)


@given(tensors())
def test_self_dot_nonnegative(x):
    q = quantize_tensor(x, MXInt((16, 2), 8, 7))
    assert block_dot_exact(q, q) >= 0


def test_zero_operand_dot():
    qa = quantize_tensor(np.zeros((4, 4)), MXInt((16, 2), 8, 7))
    qb = quantize_tensor(np.ones((4, 4)), MXInt((16, 2), 8, 7))
    assert block_dot_exact(qa, qb) == 0.0


def test_dot_layout_mismatch():
    qa = quantize_tensor(np.ones((4, 4)), MXInt((16, 2), 8, 7))
    qb = quantize_tensor(np.ones((4, 4)), MXInt((2, 2), 8, 7))
    with pytest.raises(QuantizationError):
        block_dot_exact(qa, qb)
