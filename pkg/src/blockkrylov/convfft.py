"""Stable fixed-point block FFT and block circular convolution.

The transforms are fixed linear operators: the only rounded quantities
are the operator coefficients (twiddle factors, and the transformed
kernel inside a convolution).  Payload arithmetic is exact, so applying
an operator is exactly linear and bitwise deterministic.
"""

from __future__ import annotations

from typing import List, Optional, Tuple

from .fixedpoint import (FixedPoint, FPComplex, WORD_BITS, fp_div, fp_pow2,
                         fp_sqrt, words_for_bits)
from .matrix import DenseMatrix, DimensionError


class CBlock:
    """Complex matrix block as a (re, im) pair of DenseMatrix."""

    __slots__ = ("re", "im")

    def __init__(self, re: DenseMatrix, im: Optional[DenseMatrix] = None):
        self.re = re
        self.im = im if im is not None else DenseMatrix.zeros(
            re.rows, re.cols, 0)

    def __add__(self, other):
        return CBlock(self.re + other.re, self.im + other.im)

    def __sub__(self, other):
        return CBlock(self.re - other.re, self.im - other.im)

    def scale_complex(self, w: FPComplex):
        return CBlock(self.re.scale(w.re) - self.im.scale(w.im),
                      self.re.scale(w.im) + self.im.scale(w.re))

    def matmul(self, other):
        return CBlock(
            self.re.matmul(other.re) - self.im.matmul(other.im),
            self.re.matmul(other.im) + self.im.matmul(other.re))

    def round_to(self, frac):
        return CBlock(self.re.round_to(frac), self.im.round_to(frac))

    def shift_pow2(self, k):
        return CBlock(self.re.shift_pow2(k), self.im.shift_pow2(k))


def _halved_root(k: int, L: int) -> FPComplex:
    """Root of unity exp(2*pi*i / 2**k) by repeated half-angle at L words."""
    one = FixedPoint(1, 0)
    zero = FixedPoint.zero()
    if k == 0:
        return FPComplex(one, zero)
    if k == 1:
        return FPComplex(-one, zero)
    if k == 2:
        return FPComplex(zero, one)
    cos_v, sin_v = -one, zero
    # walk the half-angle chain from angle pi down to 2*pi/2**k
    half = FixedPoint(1, 0).shift_pow2(-1)
    for _ in range(k - 1):
        cos_half = fp_sqrt((one + cos_v) * half, L)
        sin_half = fp_sqrt((one - cos_v) * half, L)
        cos_v, sin_v = cos_half, sin_half
    return FPComplex(cos_v, sin_v)


def _bit_reverse(idx: int, bits: int) -> int:
    out = 0
    for _ in range(bits):
        out = (out << 1) | (idx & 1)
        idx >>= 1
    return out


class FFTPlan:
    """Precomputed twiddles for a power-of-two block FFT of length t.

    Twiddle factors are rounded to the plan's coefficient precision; the
    resulting operator deviates from the exact transform by at most delta.
    """

    __slots__ = ("t", "s", "delta", "coeff_words", "twiddles", "inv_twiddles")

    def __init__(self, t: int, s: int, delta: FixedPoint):
        if t <= 0 or (t & (t - 1)) != 0:
            raise DimensionError("transform length must be a power of two")
        if delta.sign() <= 0:
            raise ValueError("delta must be positive")
        self.t = t
        self.s = s
        self.delta = delta
        bits = delta_bits(delta) + 3 * max(1, t.bit_length()) + 8
        self.coeff_words = max(1, words_for_bits(bits))
        L = self.coeff_words
        self.twiddles = []
        self.inv_twiddles = []
        levels = t.bit_length() - 1
        for level in range(1, levels + 1):
            size = 1 << level
            base = _halved_root(level, L)
            row = [FPComplex(FixedPoint(1, 0), FixedPoint.zero())]
            for _ in range(size // 2 - 1):
                row.append((row[-1] * base).round(L))
            self.twiddles.append(row)
            self.inv_twiddles.append([w.conj() for w in row])


def delta_bits(delta: FixedPoint) -> int:
    """Number of bits needed to resolve delta: ceil(-log2 delta), >= 1."""
    if delta.sign() <= 0:
        raise ValueError("delta must be positive")
    m = abs(delta.mantissa)
    # delta = m * 2**(-W L); -log2 delta = W L - log2 m
    return max(1, WORD_BITS * delta.frac_words - (m.bit_length() - 1))


def fft_apply(plan: FFTPlan, blocks: List[CBlock], inverse: bool = False
              ) -> List[CBlock]:
    """Apply the (inverse) block FFT operator; payload arithmetic is exact."""
    t = plan.t
    if len(blocks) != t:
        raise DimensionError(f"expected {t} blocks, got {len(blocks)}")
    bits = t.bit_length() - 1
    a = [blocks[_bit_reverse(i, bits)] for i in range(t)]
    tws = plan.inv_twiddles if inverse else plan.twiddles
    for level in range(1, bits + 1):
        size = 1 << level
        half = size >> 1
        row = tws[level - 1]
        for start in range(0, t, size):
            for j in range(half):
                u = a[start + j]
                v = a[start + j + half].scale_complex(row[j])
                a[start + j] = u + v
                a[start + j + half] = u - v
    if inverse:
        a = [blk.shift_pow2(-bits) for blk in a]  # exact divide by t
    return a


def _to_cblocks(blocks: List[DenseMatrix]) -> List[CBlock]:
    return [CBlock(b) for b in blocks]


def block_circular_conv(xblocks: List[DenseMatrix],
                        bblocks: List[DenseMatrix], delta: FixedPoint,
                        cache: Optional[dict] = None, cache_key=None
                        ) -> List[DenseMatrix]:
    """Circular block convolution out_i = sum_j X_{(i-j) mod t} B_j.

    Computed as inverse_fft(fft(X) .* fft(B)); the kernel transform is
    rounded (operator coefficients), payload arithmetic is exact, and
    the realized operator is within delta of the exact circulant in
    Frobenius norm.
    """
    t = len(xblocks)
    if t == 0 or (t & (t - 1)) != 0:
        raise DimensionError("block count must be a power of two")
    if len(bblocks) != t:
        raise DimensionError("kernel and payload lengths differ")
    if delta.sign() <= 0:
        raise ValueError("delta must be positive")
    s = xblocks[0].rows
    one = FixedPoint(1, 0)
    mag = one + max_mag_of(xblocks)
    denom = mag * FixedPoint(t * t * s * s, 0)
    inner = fp_div(delta, denom, delta.frac_words + denom.frac_words + 2)
    if cache is not None and cache_key in cache:
        plan, xhat = cache[cache_key]
    else:
        plan = FFTPlan(t, s, inner)
        xhat = fft_apply(plan, _to_cblocks(xblocks))
        xhat = [blk.round_to(plan.coeff_words + words_for_bits(
            _mag_bits(xblocks) + t.bit_length())) for blk in xhat]
        if cache is not None:
            cache[cache_key] = (plan, xhat)
    bhat = fft_apply(plan, _to_cblocks(bblocks))
    prod = [x.matmul(b) for x, b in zip(xhat, bhat)]
    out = fft_apply(plan, prod, inverse=True)
    return [blk.re for blk in out]


def _mag_bits(blocks) -> int:
    m = max_mag_of(blocks)
    if m.mantissa == 0:
        return 1
    return max(1, m.mantissa.bit_length() - WORD_BITS * m.frac_words + 1)


def max_mag_of(blocks) -> FixedPoint:
    out = FixedPoint.zero()
    for b in blocks:
        m = b.max_entry_magnitude()
        if m.compare(out) > 0:
            out = m
    return out


# below this many blocks the exact quadratic convolution is cheaper than
# the FFT route and introduces no error at all
DIRECT_CONV_CUTOFF = 32


def _linear_conv_direct(xblocks, bblocks) -> List[DenseMatrix]:
    tx, tb = len(xblocks), len(bblocks)
    out = []
    for l in range(tx + tb - 1):
        acc = None
        for j in range(max(0, l - tb + 1), min(tx, l + 1)):
            term = xblocks[j].matmul(bblocks[l - j])
            acc = term if acc is None else acc + term
        out.append(acc)
    return out


def linear_conv_via_circular(xblocks: List[DenseMatrix],
                             bblocks: List[DenseMatrix], delta: FixedPoint,
                             cache: Optional[dict] = None, cache_key=None,
                             direct_below: Optional[int] = None
                             ) -> List[DenseMatrix]:
    """Linear block convolution, out_l = sum_{j+k=l} X_j B_k (2t-1 blocks).

    Small block counts use the exact quadratic product; longer sequences
    go through the zero-padded circular FFT path with certified operator
    error delta.
    """
    t = max(len(xblocks), len(bblocks))
    if t == 0:
        return []
    cutoff = DIRECT_CONV_CUTOFF if direct_below is None else direct_below
    if t < max(2, cutoff):
        full = _linear_conv_direct(xblocks, bblocks)
        want = 2 * t - 1
        s_r = xblocks[0].rows
        k = bblocks[0].cols
        while len(full) < want:
            full.append(DenseMatrix.zeros(s_r, k, 0))
        return full[:want]
    tp = 1
    while tp < 2 * t:
        tp *= 2
    s = xblocks[0].rows
    k = bblocks[0].cols
    xfrac = max(b.frac for b in xblocks)
    bfrac = max(b.frac for b in bblocks)
    xz = [b.round_to(xfrac) for b in xblocks] + \
        [DenseMatrix.zeros(s, xblocks[0].cols, xfrac)] * (tp - len(xblocks))
    bz = [b.round_to(bfrac) for b in bblocks] + \
        [DenseMatrix.zeros(bblocks[0].rows, k, bfrac)] * (tp - len(bblocks))
    full = block_circular_conv(xz, bz, delta, cache=cache,
                               cache_key=cache_key)
    return full[:2 * t - 1]
