"""Bit-exact quantization into block and scalar number formats.

Tensors are tiled into blocks over their last two dimensions; leading
dimensions are iterated. A 1-D tensor of length ``n`` is viewed as ``(1, n)``
and tiled in contiguous runs of ``rows * cols`` elements so that every block
still holds ``rows * cols`` lanes. Ragged edges are zero padded and the
padding is dropped again on dequantization.

All rounding is round-to-nearest-even.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, NamedTuple

import numpy as np

from .formats import (
    BL,
    BMF,
    FixedPoint,
    Float32,
    FormatSpec,
    MiniFloat,
    MXInt,
    is_block_format,
)


class QuantizationError(ValueError):
    pass


class UnsupportedCast(QuantizationError):
    pass


# np.sqrt(2.0) is the smallest double above sqrt(2), so m >= _SQRT2 <=> m > sqrt(2).
_SQRT2 = float(np.sqrt(2.0))


@dataclass(frozen=True)
class BlockLayout:
    """Row-major tiling of a tensor into fixed-size blocks.

    ``batch_dims`` leading axes are treated as independent samples: they are
    iterated like any other leading axis but never folded into the tiled core.
    """

    tensor_shape: tuple[int, ...]
    block_shape: tuple[int, int]
    batch_dims: int
    lead: int
    rows: int
    cols: int

    @property
    def grid(self) -> tuple[int, int, int]:
        r, c = self.block_shape
        return self.lead, -(-self.rows // r), -(-self.cols // c)

    @property
    def n_blocks(self) -> int:
        lead, gr, gc = self.grid
        return lead * gr * gc

    @property
    def size(self) -> int:
        return self.block_shape[0] * self.block_shape[1]

    @property
    def padded_shape(self) -> tuple[int, int]:
        _, gr, gc = self.grid
        return gr * self.block_shape[0], gc * self.block_shape[1]

    @property
    def padded_blocks(self) -> int:
        """Number of blocks containing at least one padding lane."""
        _, gr, gc = self.grid
        r, c = self.block_shape
        full_r = self.rows // r
        full_c = self.cols // c
        return self.lead * (gr * gc - full_r * full_c)

    def to_blocks(self, x: np.ndarray) -> np.ndarray:
        """Reshape ``x`` (of ``tensor_shape``) into ``(n_blocks, block size)``."""
        r, c = self.block_shape
        lead, gr, gc = self.grid
        core = np.asarray(x).reshape(lead, self.rows, self.cols)
        ph, pw = self.padded_shape
        if (ph, pw) != (self.rows, self.cols):
            padded = np.zeros((lead, ph, pw), dtype=core.dtype)
            padded[:, : self.rows, : self.cols] = core
            core = padded
        tiles = core.reshape(lead, gr, r, gc, c).transpose(0, 1, 3, 2, 4)
        return tiles.reshape(lead * gr * gc, r * c)

    def from_blocks(self, blocks: np.ndarray) -> np.ndarray:
        r, c = self.block_shape
        lead, gr, gc = self.grid
        core = blocks.reshape(lead, gr, gc, r, c).transpose(0, 1, 3, 2, 4)
        core = core.reshape(lead, gr * r, gc * c)[:, : self.rows, : self.cols]
        return core.reshape(self.tensor_shape)

    def mask(self) -> np.ndarray:
        """Boolean ``(n_blocks, block size)`` array, True on real (unpadded) lanes."""
        return self.to_blocks(np.ones(self.tensor_shape, dtype=bool))

    def block_coords(self, index: int) -> list[tuple[int, ...]]:
        """Tensor coordinates covered by block ``index``, in lane order (padding omitted)."""
        flat = np.arange(math.prod(self.tensor_shape)).reshape(self.tensor_shape)
        lanes = self.to_blocks(flat + 1)[index]
        return [np.unravel_index(v - 1, self.tensor_shape) for v in lanes if v > 0]


def partition_blocks(
    tensor_shape: tuple[int, ...], block_shape: tuple[int, int], batch_dims: int = 0
) -> BlockLayout:
    tensor_shape = tuple(int(d) for d in tensor_shape)
    if any(d == 0 for d in tensor_shape):
        raise QuantizationError(f"cannot partition an empty tensor of shape {tensor_shape}")
    if batch_dims > len(tensor_shape):
        raise QuantizationError("batch_dims exceeds tensor rank")
    core = tensor_shape[batch_dims:]
    batch = math.prod(tensor_shape[:batch_dims])
    r, c = block_shape
    if len(core) <= 1:
        n = core[0] if core else 1
        return BlockLayout(tensor_shape, (1, r * c), batch_dims, batch, 1, n)
    return BlockLayout(
        tensor_shape, (r, c), batch_dims, batch * math.prod(core[:-2]), core[-2], core[-1]
    )


class QuantizedBlock(NamedTuple):
    shared: int
    elems: tuple[int, ...]


@dataclass(frozen=True, eq=False)
class QuantizedTensor:
    """Encoded tensor.

    ``shared`` holds one signed integer per block: the shared exponent for
    MXInt, the shared bias for BMF/BL, zero for scalar formats.
    ``elems`` holds signed integers: ``sign * magnitude`` for MXInt,
    ``sign * code`` for BMF/BL/MiniFloat, the raw two's-complement value for
    Fixed, and the float64 bit pattern for Float32.
    """

    spec: FormatSpec
    layout: BlockLayout
    shared: np.ndarray
    elems: np.ndarray

    @property
    def tensor_shape(self) -> tuple[int, ...]:
        return self.layout.tensor_shape

    def blocks(self) -> Iterator[QuantizedBlock]:
        for s, e in zip(self.shared.tolist(), self.elems.tolist()):
            yield QuantizedBlock(s, tuple(e))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, QuantizedTensor):
            return NotImplemented
        return (
            self.spec == other.spec
            and self.layout == other.layout
            and np.array_equal(self.shared, other.shared)
            and np.array_equal(self.elems, other.elems)
        )

    __hash__ = None  # type: ignore[assignment]


def shared_range(bits: int) -> tuple[int, int]:
    return -(2 ** (bits - 1)), 2 ** (bits - 1) - 1


def _check_finite(x: np.ndarray) -> None:
    bad = ~np.isfinite(x)
    if bad.any():
        index = tuple(int(i) for i in np.argwhere(bad)[0])
        raise QuantizationError(f"non-finite value {x[index]!r} at index {index}")


def _floor_log2(a: np.ndarray) -> np.ndarray:
    """Exact floor(log2(a)) for a > 0; arbitrary for a == 0."""
    return np.frexp(a)[1].astype(np.int64) - 1


def _round_log2(a: np.ndarray) -> np.ndarray:
    """Round-to-nearest of log2(a) for a > 0, computed exactly from the binary exponent."""
    mant, exp = np.frexp(a)
    return exp.astype(np.int64) - 1 + (2.0 * mant >= _SQRT2)


def _canonical_shared(shared: np.ndarray, mags: np.ndarray, lo: int) -> np.ndarray:
    """Blocks that encode to all zeros carry the minimum shared value, like a zero block."""
    return np.where(mags.any(axis=1), shared, lo)


def _layout_for(shape: tuple[int, ...], spec: FormatSpec, batch_dims: int) -> BlockLayout:
    block = spec.block_shape if is_block_format(spec) else (1, 1)
    return partition_blocks(shape, block, batch_dims)


def _encode_minifloat(a: np.ndarray, bias: np.ndarray, exp_bits: int, mant_bits: int):
    """Encode non-negative magnitudes as minifloat codes (exponent field << mant | frac).

    Exponent field 0 is subnormal; every field value is finite. Overflow saturates.
    """
    top = 2**exp_bits - 1
    bias = np.broadcast_to(bias, a.shape).astype(np.int64)
    max_val = np.ldexp(2.0 - 2.0**-mant_bits, top - bias)
    with np.errstate(over="ignore", invalid="ignore"):
        quantum = np.maximum(_floor_log2(a), 1 - bias) - mant_bits
        v = np.ldexp(np.rint(np.ldexp(a, -quantum)), quantum)
        v = np.minimum(v, max_val)
    subnormal = v < np.ldexp(1.0, 1 - bias)
    frac_sub = np.ldexp(v, mant_bits - 1 + bias)
    vex = _floor_log2(v)
    frac_norm = np.ldexp(v, mant_bits - vex) - 2**mant_bits
    field = vex + bias
    code = np.where(
        subnormal, frac_sub, (field.astype(np.float64) * 2**mant_bits) + frac_norm
    )
    return np.where(v == 0, 0.0, code).astype(np.int64)


def _decode_minifloat(code: np.ndarray, bias: np.ndarray, mant_bits: int) -> np.ndarray:
    bias = np.broadcast_to(bias, code.shape).astype(np.int64)
    field = code >> mant_bits
    frac = code & (2**mant_bits - 1)
    sub = np.ldexp(frac.astype(np.float64), 1 - bias - mant_bits)
    norm = np.ldexp((frac + 2**mant_bits).astype(np.float64), field - bias - mant_bits)
    return np.where(field == 0, sub, norm)


def quantize_tensor(t: np.ndarray, spec: FormatSpec, batch_dims: int = 0) -> QuantizedTensor:
    x = np.asarray(t, dtype=np.float64)
    _check_finite(x)
    layout = _layout_for(x.shape, spec, batch_dims)
    blocks = layout.to_blocks(x)
    n = layout.n_blocks
    a = np.abs(blocks)
    neg = blocks < 0

    if isinstance(spec, MXInt):
        lo, hi = shared_range(spec.exp_bits)
        amax = a.max(axis=1)
        exp = np.where(amax > 0, np.clip(_floor_log2(amax), lo, hi), lo)
        scale_exp = exp - spec.mant_bits + 1
        with np.errstate(over="ignore"):
            mag = np.rint(np.ldexp(a, -scale_exp[:, None]))
        mag = np.minimum(mag, 2**spec.mant_bits - 1).astype(np.int64)
        exp = _canonical_shared(exp, mag, lo)
        return QuantizedTensor(spec, layout, exp.astype(np.int64), np.where(neg, -mag, mag))

    if isinstance(spec, BMF):
        lo, hi = shared_range(spec.bias_bits)
        amax = a.max(axis=1)
        top = 2**spec.elem_exp_bits - 1
        bias = np.where(amax > 0, np.clip(top - _floor_log2(amax), lo, hi), lo)
        code = _encode_minifloat(a, bias[:, None], spec.elem_exp_bits, spec.elem_mant_bits)
        bias = _canonical_shared(bias, code, lo)
        return QuantizedTensor(spec, layout, bias.astype(np.int64), np.where(neg, -code, code))

    if isinstance(spec, BL):
        lo, hi = shared_range(spec.bias_bits)
        amax = a.max(axis=1)
        top = 2**spec.elem_exp_bits - 1
        bias = np.where(amax > 0, np.clip(top - _round_log2(amax), lo, hi), lo)
        code = _round_log2(np.where(a > 0, a, 1.0)) + bias[:, None]
        code = np.where((a > 0) & (code >= 1), np.minimum(code, top), 0)
        bias = _canonical_shared(bias, code, lo)
        return QuantizedTensor(spec, layout, bias.astype(np.int64), np.where(neg, -code, code))

    if isinstance(spec, FixedPoint):
        lo, hi = shared_range(spec.width)
        with np.errstate(over="ignore"):
            v = np.clip(np.rint(np.ldexp(blocks, spec.frac)), lo, hi).astype(np.int64)
        return QuantizedTensor(spec, layout, np.zeros(n, dtype=np.int64), v)

    if isinstance(spec, MiniFloat):
        code = _encode_minifloat(a, np.int64(spec.bias), spec.exp_bits, spec.mant_bits)
        return QuantizedTensor(
            spec, layout, np.zeros(n, dtype=np.int64), np.where(neg, -code, code)
        )

    if isinstance(spec, Float32):
        bits = np.ascontiguousarray(blocks).view(np.int64)
        return QuantizedTensor(spec, layout, np.zeros(n, dtype=np.int64), bits.copy())

    raise QuantizationError(f"unsupported format {spec!r}")


def _dequantize_blocks(q: QuantizedTensor) -> np.ndarray:
    spec = q.spec
    e = q.elems
    sign = np.where(e < 0, -1.0, 1.0)
    mag = np.abs(e)
    if isinstance(spec, MXInt):
        return np.ldexp(e.astype(np.float64), (q.shared - spec.mant_bits + 1)[:, None])
    if isinstance(spec, BMF):
        return sign * _decode_minifloat(mag, q.shared[:, None], spec.elem_mant_bits)
    if isinstance(spec, BL):
        return np.where(mag == 0, 0.0, sign * np.ldexp(1.0, mag - q.shared[:, None]))
    if isinstance(spec, FixedPoint):
        return np.ldexp(e.astype(np.float64), -spec.frac)
    if isinstance(spec, MiniFloat):
        return sign * _decode_minifloat(mag, np.int64(spec.bias), spec.mant_bits)
    if isinstance(spec, Float32):
        return np.ascontiguousarray(e).view(np.float64)
    raise QuantizationError(f"unsupported format {spec!r}")


def dequantize_tensor(q: QuantizedTensor) -> np.ndarray:
    return q.layout.from_blocks(_dequantize_blocks(q))


def fake_quantize(t: np.ndarray, spec: FormatSpec, batch_dims: int = 0) -> np.ndarray:
    """Round ``t`` to the nearest value representable in ``spec`` (quantize then dequantize)."""
    if isinstance(spec, Float32):
        x = np.asarray(t, dtype=np.float64)
        _check_finite(x)
        return x.copy()
    return dequantize_tensor(quantize_tensor(t, spec, batch_dims))


def _round_shift(mag: np.ndarray, shift: int) -> np.ndarray:
    """Integer round-half-even of ``mag / 2**shift`` for non-negative ``mag``."""
    q = mag >> shift
    r = mag & ((1 << shift) - 1)
    half = 1 << (shift - 1)
    up = (r > half) | ((r == half) & (q & 1 == 1))
    return q + up


def cast(q: QuantizedTensor, target: FormatSpec) -> QuantizedTensor:
    """Change MXInt mantissa width by bit extension or rounded truncation."""
    src = q.spec
    if not (isinstance(src, MXInt) and isinstance(target, MXInt)):
        raise UnsupportedCast(f"cannot cast {src} to {target}: only MXInt to MXInt")
    if src.block_shape != target.block_shape or src.exp_bits != target.exp_bits:
        raise UnsupportedCast(
            f"cannot cast {src} to {target}: block shape and exponent width must match"
        )
    delta = target.mant_bits - src.mant_bits
    mag = np.abs(q.elems)
    if delta >= 0:
        new = mag << delta
    else:
        new = np.minimum(_round_shift(mag, -delta), 2**target.mant_bits - 1)
    return QuantizedTensor(target, q.layout, q.shared.copy(), np.where(q.elems < 0, -new, new))


def block_dot_exact(qa: QuantizedTensor, qb: QuantizedTensor) -> float:
    """Dot product of two MXInt tensors computed in the integer domain.

    Each block's products are summed as integers and scaled once by the two
    shared exponents; blocks are combined exactly and rounded once at the end.
    """
    if not (isinstance(qa.spec, MXInt) and isinstance(qb.spec, MXInt)):
        raise QuantizationError("block_dot_exact needs two MXInt operands")
    if qa.layout != qb.layout:
        raise QuantizationError(
            f"block layout mismatch: {qa.layout.tensor_shape}/{qa.layout.block_shape} vs "
            f"{qb.layout.tensor_shape}/{qb.layout.block_shape}"
        )
    ma, mb = qa.spec.mant_bits, qb.spec.mant_bits
    if (ma + mb) + qa.layout.size.bit_length() < 62:
        sums = np.einsum("ij,ij->i", qa.elems, qb.elems).tolist()
    else:
        sums = [
            sum(int(x) * int(y) for x, y in zip(ra, rb))
            for ra, rb in zip(qa.elems.tolist(), qb.elems.tolist())
        ]
    exps = ((qa.shared - ma + 1) + (qb.shared - mb + 1)).tolist()
    terms = [(s, k) for s, k in zip(sums, exps) if s != 0]
    if not terms:
        return 0.0
    kmin = min(k for _, k in terms)
    total = sum(s << (k - kmin) for s, k in terms)
    return float(Fraction(total) * Fraction(2) ** kmin)


def element_scale_exponent(q: QuantizedTensor) -> np.ndarray:
    """Per-block exponent of one MXInt magnitude step, ``E - m + 1``."""
    if not isinstance(q.spec, MXInt):
        raise QuantizationError("element scale is defined for MXInt only")
    return q.shared - q.spec.mant_bits + 1
