"""Arbitrary-precision binary fixed-point scalars.

A value is an integer mantissa scaled by 2**(-WORD_BITS * frac_words):
addition and multiplication are exact, and the fractional word count
propagates as max(L1, L2) for sums and L1 + L2 for products.  Rounding
to a shorter fraction is the only lossy operation.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Union

try:
    from gmpy2 import mpz, isqrt as _isqrt
except ImportError:  # pragma: no cover - gmpy2 is a hard dependency in practice
    mpz = int

    def _isqrt(x):
        import math

        return math.isqrt(x)

WORD_BITS = 64

_ZERO = mpz(0)


def _round_shifted(mant, shift):
    """mant / 2**shift rounded to nearest, ties toward zero. Exact ints."""
    if shift <= 0:
        return mant << (-shift)
    neg = mant < 0
    a = -mant if neg else mant
    half = mpz(1) << (shift - 1)
    q, r = divmod(a, mpz(1) << shift)
    if r > half:
        q += 1
    # r == half ties toward zero: keep q
    return -q if neg else q


class FixedPoint:
    """Immutable fixed-point number: value = mantissa * 2**(-WORD_BITS*frac_words)."""

    __slots__ = ("mantissa", "frac_words")

    def __init__(self, mantissa, frac_words=0):
        if frac_words < 0:
            raise ValueError("frac_words must be non-negative")
        object.__setattr__(self, "mantissa", mpz(mantissa))
        object.__setattr__(self, "frac_words", int(frac_words))

    def __setattr__(self, *a):
        raise AttributeError("FixedPoint is immutable")

    # -- constructors -------------------------------------------------

    @classmethod
    def zero(cls):
        return cls(0, 0)

    @classmethod
    def one(cls):
        return cls(1, 0)

    @classmethod
    def from_int(cls, v):
        return cls(v, 0)

    @classmethod
    def from_float(cls, x, frac_words=None):
        """Exact conversion of a binary float, rounded only when the exact
        value needs more than frac_words fractional words."""
        f = Fraction(x)
        v = cls.from_fraction(f)
        if frac_words is not None and v.frac_words > frac_words:
            v = v.round(frac_words)
        return v

    @classmethod
    def from_fraction(cls, f, frac_words=None):
        """Exact if the denominator is a power of two, else rounds to frac_words."""
        num, den = f.numerator, f.denominator
        if den & (den - 1) == 0:
            bits = den.bit_length() - 1
            L = -(-bits // WORD_BITS)
            return cls(num << (L * WORD_BITS - bits), L)
        if frac_words is None:
            raise ValueError("non-dyadic fraction needs explicit frac_words")
        shifted = (num << (frac_words * WORD_BITS))
        q, r = divmod(shifted, den) if shifted >= 0 else divmod(-shifted, den)
        if 2 * r > den:
            q += 1
        return cls(q if shifted >= 0 else -q, frac_words)

    @classmethod
    def parse_decimal(cls, text, frac_words):
        """Parse a decimal string to within 2**(-WORD_BITS*frac_words).

        Stores the smallest fractional length representing the rounded value,
        so dyadic inputs like "3.5" keep L=1 regardless of the request.
        """
        text = text.strip()
        try:
            f = Fraction(text)
        except (ValueError, ZeroDivisionError) as e:
            raise ValueError(f"bad decimal literal {text!r}") from e
        v = cls.from_fraction(f, frac_words=frac_words)
        return v.compact()

    # -- representation -----------------------------------------------

    def compact(self):
        """Drop trailing all-zero fractional words (value unchanged)."""
        m, L = self.mantissa, self.frac_words
        if m == 0:
            return FixedPoint(0, 0)
        while L > 0 and (m & ((1 << WORD_BITS) - 1)) == 0:
            m >>= WORD_BITS
            L -= 1
        return FixedPoint(m, L)

    def to_fraction(self):
        return Fraction(int(self.mantissa), 1 << (WORD_BITS * self.frac_words))

    def to_float(self):
        m = int(self.mantissa)
        shift = WORD_BITS * self.frac_words
        if shift == 0:
            return float(m)
        if abs(m) < (1 << 500) and shift < 500:
            return m / (1 << shift)
        return float(Fraction(m, 1 << shift))

    def to_decimal(self, digits=24):
        """Decimal string with the given number of fractional digits."""
        m = int(self.mantissa)
        sign = "-" if m < 0 else ""
        a = abs(m)
        shift = WORD_BITS * self.frac_words
        scaled = (a * 10**digits) >> shift if shift else a * 10**digits
        # rounding: nearest, based on the dropped tail
        if shift:
            tail = (a * 10**digits) - (scaled << shift)
            if 2 * tail >= (1 << shift):
                scaled += 1
        ip, fp = divmod(scaled, 10**digits)
        if digits == 0:
            return f"{sign}{ip}"
        return f"{sign}{ip}.{str(fp).zfill(digits)}"

    def __repr__(self):
        return f"FixedPoint({self.to_decimal(12)}, L={self.frac_words})"

    # -- arithmetic ----------------------------------------------------

    def _aligned(self, other):
        La, Lb = self.frac_words, other.frac_words
        L = La if La >= Lb else Lb
        ma = self.mantissa << ((L - La) * WORD_BITS)
        mb = other.mantissa << ((L - Lb) * WORD_BITS)
        return ma, mb, L

    def __add__(self, other):
        ma, mb, L = self._aligned(other)
        return FixedPoint(ma + mb, L)

    def __sub__(self, other):
        ma, mb, L = self._aligned(other)
        return FixedPoint(ma - mb, L)

    def __neg__(self):
        return FixedPoint(-self.mantissa, self.frac_words)

    def __mul__(self, other):
        return FixedPoint(self.mantissa * other.mantissa,
                          self.frac_words + other.frac_words)

    def round(self, frac_words):
        """Nearest value with the requested fraction length, ties toward zero."""
        if frac_words < 0:
            raise ValueError("frac_words must be non-negative")
        shift = (self.frac_words - frac_words) * WORD_BITS
        return FixedPoint(_round_shifted(self.mantissa, shift), frac_words)

    def abs(self):
        return FixedPoint(abs(self.mantissa), self.frac_words)

    def is_zero(self):
        return self.mantissa == 0

    def sign(self):
        m = self.mantissa
        return (m > 0) - (m < 0)

    def shift_pow2(self, k):
        """Multiply by 2**k exactly (k may be negative)."""
        if k >= 0:
            return FixedPoint(self.mantissa << k, self.frac_words)
        need = -k
        extra = -(-need // WORD_BITS)
        return FixedPoint(self.mantissa << (extra * WORD_BITS - need),
                          self.frac_words + extra)

    # -- comparisons ----------------------------------------------------

    def compare(self, other):
        """-1, 0, or 1 ordering by real value."""
        ma, mb, _ = self._aligned(other)
        return (ma > mb) - (ma < mb)

    def __eq__(self, other):
        return isinstance(other, FixedPoint) and self.compare(other) == 0

    def __lt__(self, other):
        return self.compare(other) < 0

    def __le__(self, other):
        return self.compare(other) <= 0

    def __gt__(self, other):
        return self.compare(other) > 0

    def __ge__(self, other):
        return self.compare(other) >= 0

    def __hash__(self):
        c = self.compact()
        return hash((int(c.mantissa), c.frac_words))


def fp_add(a: FixedPoint, b: FixedPoint) -> FixedPoint:
    return a + b


def fp_mul(a: FixedPoint, b: FixedPoint) -> FixedPoint:
    return a * b


def fp_round(a: FixedPoint, frac_words: int) -> FixedPoint:
    return a.round(frac_words)


def fp_compare(a: FixedPoint, b: FixedPoint) -> int:
    return a.compare(b)


def fp_div(a: FixedPoint, b: FixedPoint, frac_words: int) -> FixedPoint:
    """a/b rounded to nearest at the target fraction length."""
    if b.mantissa == 0:
        raise ZeroDivisionError("fixed-point division by zero")
    num = a.mantissa << ((frac_words + b.frac_words) * WORD_BITS)
    shift = a.frac_words * WORD_BITS
    # (num / 2**shift) / b.mantissa, rounded nearest ties-toward-zero
    neg = (num < 0) != (b.mantissa < 0)
    n = abs(num)
    d = abs(b.mantissa) << shift
    q, r = divmod(n, d)
    if 2 * r > d:
        q += 1
    return FixedPoint(-q if neg else q, frac_words)


def fp_sqrt(a: FixedPoint, frac_words: int) -> FixedPoint:
    """Floor square root of a non-negative value at the target length."""
    if a.mantissa < 0:
        raise ValueError("sqrt of negative fixed-point value")
    shift = 2 * frac_words * WORD_BITS - a.frac_words * WORD_BITS
    m = a.mantissa << shift if shift >= 0 else a.mantissa >> (-shift)
    return FixedPoint(_isqrt(m), frac_words)


def fp_pow2(k: int) -> FixedPoint:
    """Exact power of two 2**k."""
    return FixedPoint(1, 0).shift_pow2(k)


def words_for_bits(bits: int) -> int:
    """Fractional words needed to resolve 2**(-bits)."""
    return max(0, -(-int(bits) // WORD_BITS))


class FPComplex:
    """Complex number with FixedPoint parts; exact add/mul."""

    __slots__ = ("re", "im")

    def __init__(self, re: FixedPoint, im: FixedPoint):
        object.__setattr__(self, "re", re)
        object.__setattr__(self, "im", im)

    def __setattr__(self, *a):
        raise AttributeError("FPComplex is immutable")

    @classmethod
    def real(cls, re: FixedPoint):
        return cls(re, FixedPoint.zero())

    def __add__(self, other):
        return FPComplex(self.re + other.re, self.im + other.im)

    def __sub__(self, other):
        return FPComplex(self.re - other.re, self.im - other.im)

    def __mul__(self, other):
        return FPComplex(self.re * other.re - self.im * other.im,
                         self.re * other.im + self.im * other.re)

    def conj(self):
        return FPComplex(self.re, -self.im)

    def round(self, frac_words):
        return FPComplex(self.re.round(frac_words), self.im.round(frac_words))

    def __repr__(self):
        return f"({self.re.to_decimal(8)} + {self.im.to_decimal(8)}i)"


Number = Union[int, float, FixedPoint]


def as_fixed(v: Number, frac_words=None) -> FixedPoint:
    if isinstance(v, FixedPoint):
        return v if frac_words is None else v.round(frac_words)
    if isinstance(v, int):
        return FixedPoint(v, 0)
    return FixedPoint.from_float(v, frac_words)
