"""Number format descriptions and their text syntax.

Six families are supported: ``Float32`` (the full-precision reference),
``Fixed`` point, ``MiniFloat``, and the three microscaling block formats
``MXInt`` (shared exponent), ``BMF`` (shared exponent bias) and ``BL``
(shared bias, power-of-two elements).

Text syntax, used by the IR and by config files::

    MXInt((16,2),8,7)   BMF((16,2),8,4,3)   BL((16,2),8,7)
    Fixed(8,4)          MiniFloat(4,3,7)    Float32
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Union


class FormatError(ValueError):
    """Raised for malformed or invalid format descriptions."""


def _check_bits(**fields: int) -> None:
    for name, value in fields.items():
        if not isinstance(value, int) or isinstance(value, bool) or value < 1:
            raise FormatError(f"{name} must be a positive integer, got {value!r}")


def _check_block(block_shape: tuple[int, int]) -> tuple[int, int]:
    block_shape = tuple(block_shape)
    if len(block_shape) != 2:
        raise FormatError(f"block_shape must be a pair, got {block_shape!r}")
    _check_bits(block_rows=block_shape[0], block_cols=block_shape[1])
    return block_shape


@dataclass(frozen=True)
class Float32:
    def __str__(self) -> str:
        return "Float32"


@dataclass(frozen=True)
class FixedPoint:
    width: int
    frac: int

    def __post_init__(self) -> None:
        _check_bits(width=self.width)
        if not isinstance(self.frac, int) or self.frac < 0 or self.frac >= self.width:
            raise FormatError(f"Fixed frac must satisfy 0 <= frac < width, got {self.frac}")

    def __str__(self) -> str:
        return f"Fixed({self.width},{self.frac})"


@dataclass(frozen=True)
class MiniFloat:
    exp_bits: int
    mant_bits: int
    bias: int

    def __post_init__(self) -> None:
        _check_bits(exp_bits=self.exp_bits, mant_bits=self.mant_bits)
        if not isinstance(self.bias, int):
            raise FormatError(f"MiniFloat bias must be an integer, got {self.bias!r}")

    def __str__(self) -> str:
        return f"MiniFloat({self.exp_bits},{self.mant_bits},{self.bias})"


@dataclass(frozen=True)
class MXInt:
    """Block floating point: one ``exp_bits`` exponent shared per block,
    sign-magnitude elements with ``mant_bits`` magnitude bits."""

    block_shape: tuple[int, int]
    exp_bits: int
    mant_bits: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "block_shape", _check_block(self.block_shape))
        _check_bits(exp_bits=self.exp_bits, mant_bits=self.mant_bits)

    def __str__(self) -> str:
        r, c = self.block_shape
        return f"MXInt(({r},{c}),{self.exp_bits},{self.mant_bits})"


@dataclass(frozen=True)
class BMF:
    """Block minifloat: a shared exponent bias per block, minifloat elements."""

    block_shape: tuple[int, int]
    bias_bits: int
    elem_exp_bits: int
    elem_mant_bits: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "block_shape", _check_block(self.block_shape))
        _check_bits(
            bias_bits=self.bias_bits,
            elem_exp_bits=self.elem_exp_bits,
            elem_mant_bits=self.elem_mant_bits,
        )

    def __str__(self) -> str:
        r, c = self.block_shape
        return f"BMF(({r},{c}),{self.bias_bits},{self.elem_exp_bits},{self.elem_mant_bits})"


@dataclass(frozen=True)
class BL:
    """Block logarithm: a shared bias per block, elements are signed powers of two."""

    block_shape: tuple[int, int]
    bias_bits: int
    elem_exp_bits: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "block_shape", _check_block(self.block_shape))
        _check_bits(bias_bits=self.bias_bits, elem_exp_bits=self.elem_exp_bits)

    def __str__(self) -> str:
        r, c = self.block_shape
        return f"BL(({r},{c}),{self.bias_bits},{self.elem_exp_bits})"


FormatSpec = Union[Float32, FixedPoint, MiniFloat, MXInt, BMF, BL]
BLOCK_FORMATS = (MXInt, BMF, BL)

FLOAT32 = Float32()
INT8 = FixedPoint(8, 4)
FP8_E4M3 = MiniFloat(4, 3, 7)
MXINT8 = MXInt((16, 2), 8, 7)
BMF8 = BMF((16, 2), 8, 4, 3)
BL8 = BL((16, 2), 8, 7)


def is_block_format(spec: FormatSpec) -> bool:
    return isinstance(spec, BLOCK_FORMATS)


def block_size(spec: FormatSpec) -> int:
    if is_block_format(spec):
        r, c = spec.block_shape
        return r * c
    return 1


def avg_bitwidth(spec: FormatSpec) -> Fraction:
    """Average storage bits per element, shared fields amortised over the block."""
    if isinstance(spec, MXInt):
        return Fraction(spec.exp_bits, block_size(spec)) + spec.mant_bits + 1
    if isinstance(spec, BMF):
        return (
            Fraction(spec.bias_bits, block_size(spec))
            + 1
            + spec.elem_exp_bits
            + spec.elem_mant_bits
        )
    if isinstance(spec, BL):
        return Fraction(spec.bias_bits, block_size(spec)) + 1 + spec.elem_exp_bits
    if isinstance(spec, FixedPoint):
        return Fraction(spec.width)
    if isinstance(spec, MiniFloat):
        return Fraction(1 + spec.exp_bits + spec.mant_bits)
    if isinstance(spec, Float32):
        return Fraction(32)
    raise FormatError(f"not a format: {spec!r}")


def memory_density(spec: FormatSpec) -> Fraction:
    """Values stored per bit relative to 32-bit floats."""
    return Fraction(32) / avg_bitwidth(spec)


def element_width(spec: FormatSpec) -> int:
    """Bits of one encoded element, excluding shared fields."""
    return int(avg_bitwidth(spec) - Fraction(shared_width(spec), block_size(spec)))


def shared_width(spec: FormatSpec) -> int:
    if isinstance(spec, MXInt):
        return spec.exp_bits
    if isinstance(spec, (BMF, BL)):
        return spec.bias_bits
    return 0


def precision_bits(spec: FormatSpec) -> int:
    """The width that casts and multipliers care about (mantissa-like bits)."""
    if isinstance(spec, MXInt):
        return spec.mant_bits
    if isinstance(spec, BMF):
        return spec.elem_mant_bits
    if isinstance(spec, BL):
        return 0
    if isinstance(spec, FixedPoint):
        return spec.width - 1
    if isinstance(spec, MiniFloat):
        return spec.mant_bits
    return 23


# --- text syntax -----------------------------------------------------------

_INT = r"\s*(-?\d+)\s*"
_BLOCK = r"\s*\(\s*(\d+)\s*,\s*(\d+)\s*\)\s*"
_PATTERNS = [
    (re.compile(rf"MXInt\({_BLOCK},{_INT},{_INT}\)"), lambda g: MXInt((g[0], g[1]), g[2], g[3])),
    (
        re.compile(rf"BMF\({_BLOCK},{_INT},{_INT},{_INT}\)"),
        lambda g: BMF((g[0], g[1]), g[2], g[3], g[4]),
    ),
    (re.compile(rf"BL\({_BLOCK},{_INT},{_INT}\)"), lambda g: BL((g[0], g[1]), g[2], g[3])),
    (re.compile(rf"Fixed\({_INT},{_INT}\)"), lambda g: FixedPoint(g[0], g[1])),
    (re.compile(rf"MiniFloat\({_INT},{_INT},{_INT}\)"), lambda g: MiniFloat(g[0], g[1], g[2])),
    (re.compile(r"Float32"), lambda g: FLOAT32),
]

# Matches one complete format token at the start of a string; used by the IR lexer.
FORMAT_TOKEN = re.compile(
    r"(MXInt|BMF|BL)\(\s*\(\s*\d+\s*,\s*\d+\s*\)(\s*,\s*-?\d+)+\s*\)"
    r"|(Fixed|MiniFloat)\(\s*-?\d+(\s*,\s*-?\d+)+\s*\)"
    r"|Float32"
)


def parse_format(text: str) -> FormatSpec:
    text = text.strip()
    for pattern, build in _PATTERNS:
        m = pattern.fullmatch(text)
        if m:
            return build([int(x) for x in m.groups()])
    raise FormatError(f"cannot parse format {text!r}")


def format_str(spec: FormatSpec) -> str:
    return str(spec)
