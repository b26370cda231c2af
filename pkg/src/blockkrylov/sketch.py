"""Sketch-based low-rank factorization of implicitly given matrices.

A LinOp exposes a matrix only through deterministic multiplication
routines.  low_rank_approx compresses it to rank r by sketching with a
Gaussian block, perturbing to bound the smallest singular value,
orthonormalizing, and solving a small inner SVD, never forming the
n x n matrix.
"""

from __future__ import annotations

from typing import Callable, Optional

from .convfft import delta_bits
from .fixedpoint import FixedPoint, fp_div, fp_sqrt, words_for_bits
from .matrix import (DenseMatrix, DimensionError, SingularMatrixError,
                     eig_sym_oracle, gram, mpz)
from .rng import SeedStream


class LinOp:
    """Deterministic linear operator with explicit apply tolerances.

    apply(B, delta) returns Z B for a fixed matrix Z within delta of the
    represented matrix; repeated calls with identical inputs are bitwise
    identical and exactly linear in B.
    """

    __slots__ = ("rows", "cols", "_apply", "_transpose_apply", "mag_bound",
                 "frac_bound", "tag")

    def __init__(self, rows: int, cols: int,
                 apply: Callable[[DenseMatrix, FixedPoint], DenseMatrix],
                 transpose_apply: Callable[[DenseMatrix, FixedPoint],
                                           DenseMatrix],
                 mag_bound: FixedPoint, frac_bound: Optional[int] = None,
                 tag: str = ""):
        self.rows = rows
        self.cols = cols
        self._apply = apply
        self._transpose_apply = transpose_apply
        self.mag_bound = mag_bound
        self.frac_bound = frac_bound
        self.tag = tag

    def apply(self, b: DenseMatrix, delta: FixedPoint) -> DenseMatrix:
        if b.rows != self.cols:
            raise DimensionError(f"operator expects height {self.cols}")
        return self._apply(b, delta)

    def transpose_apply(self, b: DenseMatrix, delta: FixedPoint
                        ) -> DenseMatrix:
        if b.rows != self.rows:
            raise DimensionError(f"transpose expects height {self.rows}")
        return self._transpose_apply(b, delta)

    @classmethod
    def from_dense(cls, m: DenseMatrix, tag: str = "dense") -> "LinOp":
        mt = m.transpose()
        return cls(m.rows, m.cols,
                   lambda b, d: m.matmul(b),
                   lambda b, d: mt.matmul(b),
                   m.max_entry_magnitude(), m.frac, tag)


class RankFactorization:
    """Rank-r factorization M ~ X Y^T with (n x r) factors."""

    __slots__ = ("X", "Y", "r")

    def __init__(self, X: DenseMatrix, Y: DenseMatrix, r: int):
        if X.cols != Y.cols:
            raise DimensionError("factor widths differ")
        self.X = X
        self.Y = Y
        self.r = r

    def product(self) -> DenseMatrix:
        return self.X.matmul(self.Y.transpose())


def gaussian_sketch(n: int, c: int, seed, frac_words: int = 4
                    ) -> DenseMatrix:
    """n x c matrix of N(0,1) draws; magnitudes above n are resampled."""
    if c < 1:
        raise ValueError("sketch width must be at least 1")
    stream = seed if isinstance(seed, SeedStream) else SeedStream(seed, "sketch")
    ents = []
    for _ in range(n * c):
        ents.append(stream.gauss_fixed(frac_words, truncate_at=float(n),
                                       resample=True))
    return DenseMatrix.from_entries(n, c, ents)


def _normalize_eig_signs(v: DenseMatrix) -> DenseMatrix:
    """Flip eigenvector columns so the first nonzero coordinate is positive."""
    n, c = v.rows, v.cols
    m = list(v.mants)
    for j in range(c):
        lead = 0
        for i in range(n):
            if m[i * c + j] != 0:
                lead = m[i * c + j]
                break
        if lead < 0:
            for i in range(n):
                m[i * c + j] = -m[i * c + j]
    return DenseMatrix(n, c, m, v.frac)


def _gram_half_powers(g: DenseMatrix, tol: FixedPoint, need_inverse: bool,
                      sigma_floor: Optional[FixedPoint]):
    """(G^{1/2}, G^{-1/2}) of an SPD Gram matrix via its eigensystem.

    Eigenvalues below the floor are dropped from the inverse half;
    raises SingularMatrixError when everything is below the floor or a
    floor is required but violated.
    """
    rep, v = eig_sym_oracle(g, tol)
    v = _normalize_eig_signs(v)
    c = g.rows
    L = max(words_for_bits(delta_bits(tol)) + 2, v.frac)
    lam_max = rep.max_value()
    if lam_max.sign() <= 0:
        raise SingularMatrixError("Gram matrix has no positive spectrum")
    if sigma_floor is not None:
        floor = sigma_floor * sigma_floor
    else:
        floor = tol * tol
    half = DenseMatrix.zeros(c, c, L)
    inv_half = DenseMatrix.zeros(c, c, L)
    order = sorted(range(c), key=lambda i: rep.values[i].to_fraction())
    one = FixedPoint(1, 0)
    dropped = 0
    for pos in range(c):
        lam = rep.values[pos]
        if lam.compare(floor) <= 0:
            dropped += 1
            continue
        root = fp_sqrt(lam, L)
        half.mants[pos * c + pos] = root.mantissa
        inv_half.mants[pos * c + pos] = fp_div(one, root, L).mantissa
    if need_inverse and dropped == c:
        raise SingularMatrixError("Gram matrix numerically singular")
    hp = v.matmul(half).matmul(v.transpose()).round_to(L)
    ihp = v.matmul(inv_half).matmul(v.transpose()).round_to(L)
    return hp, ihp, rep, dropped


def orthonormalize(m: DenseMatrix, tol: FixedPoint,
                   sigma_floor: Optional[FixedPoint] = None) -> DenseMatrix:
    """Column-orthonormal basis M (M^T M)^{-1/2} preserving the span."""
    if m.cols > m.rows:
        raise DimensionError("orthonormalize needs cols <= rows")
    g = gram(m, 2 * m.frac)
    gap = tol * tol
    _, ihp, rep, dropped = _gram_half_powers(g, gap, True, sigma_floor)
    if dropped and sigma_floor is None:
        raise SingularMatrixError("Gram matrix numerically singular")
    L = max(words_for_bits(delta_bits(tol)) + 2, 2)
    return m.matmul(ihp).round_to(L)


def rank_r_svd_of_product(xh: DenseMatrix, yh: DenseMatrix, r: int,
                          tol: FixedPoint) -> RankFactorization:
    """Best rank-r factors of xh yh^T through the c x c inner problem."""
    if xh.cols != yh.cols:
        raise DimensionError("inner widths differ")
    c = xh.cols
    if r > c:
        r = c
    L = max(words_for_bits(delta_bits(tol)) + 2, 2)
    zero_x = xh.max_entry_magnitude().is_zero()
    zero_y = yh.max_entry_magnitude().is_zero()
    if zero_x or zero_y:
        return RankFactorization(DenseMatrix.zeros(xh.rows, r, 0),
                                 DenseMatrix.zeros(yh.rows, r, 0), r)
    gx = gram(xh, 2 * xh.frac)
    gap = tol * tol
    p, pinv, _, _dropped = _gram_half_powers(gx, gap, False, sigma_floor=tol)
    gy = gram(yh, 2 * yh.frac)
    w = p.matmul(gy).matmul(p.transpose()).round_to(2 * L)
    w = w.mirror_upper()
    rep, u = eig_sym_oracle(w, gap)
    u = _normalize_eig_signs(u)
    order = sorted(range(c), key=lambda i: rep.values[i].to_fraction(),
                   reverse=True)
    sel = order[:r]
    usub = DenseMatrix.zeros(c, r, u.frac)
    for k, idx in enumerate(sel):
        for i in range(c):
            usub.mants[i * r + k] = u.mants[i * c + idx]
    x_out = xh.matmul(pinv.matmul(usub)).round_to(L)
    y_out = yh.matmul(p.matmul(usub)).round_to(L)
    return RankFactorization(x_out, y_out, r)


def low_rank_approx(op: LinOp, n: int, r: int, eps: FixedPoint, seed,
                    sketch_extra: int = 8) -> RankFactorization:
    """Rank-r factorization of an operator within eps of a rank-r matrix.

    Sketch width is 4r + sketch_extra columns (clamped to n); the
    sketched image is perturbed entrywise by eps * N(0,1) so its
    smallest singular value is bounded away from zero before
    orthonormalization.
    """
    if r > n:
        raise DimensionError("rank exceeds dimension")
    if eps.sign() <= 0:
        raise ValueError("eps must be positive")
    stream = seed if isinstance(seed, SeedStream) else SeedStream(seed, "lowrank")
    one = FixedPoint(1, 0)
    mag = op.mag_bound + one
    n10 = FixedPoint(n, 0)
    npow = FixedPoint(int(n) ** 10, 0)
    eps_hat = fp_div(eps, mag * npow,
                     eps.frac_words + mag.frac_words + words_for_bits(
                         10 * n10.mantissa.bit_length()) + 2)
    if eps_hat.sign() <= 0:
        eps_hat = FixedPoint(1, eps.frac_words + npow.mantissa.bit_length()
                             // 64 + 2)
    c = min(4 * r + sketch_extra, n)
    ls = words_for_bits(delta_bits(eps_hat)) + 1
    s = gaussian_sketch(n, c, stream.substream("S"), frac_words=ls)
    m_hat = op.apply(s, eps_hat)
    if m_hat.frac > ls + 2:
        m_hat = m_hat.round_to(ls + 2)
    noise_stream = stream.substream("noise")
    ln = words_for_bits(delta_bits(eps)) + 1
    noise = DenseMatrix.from_entries(
        m_hat.rows, c,
        [noise_stream.gauss_fixed(ln, truncate_at=float(n))
         for _ in range(m_hat.rows * c)])
    m_tilde = m_hat + noise.scale(eps)
    floor_den = FixedPoint(int(n) ** 20, 0)
    sigma_floor = fp_div(eps, floor_den,
                         eps.frac_words +
                         words_for_bits(floor_den.mantissa.bit_length()) + 2)
    if sigma_floor.sign() <= 0:
        sigma_floor = FixedPoint(1, eps.frac_words + 8)
    x_hat = orthonormalize(m_tilde, eps_hat, sigma_floor=sigma_floor)
    y_hat = op.transpose_apply(x_hat, eps_hat)
    if y_hat.frac > ls + 2:
        y_hat = y_hat.round_to(ls + 2)
    fact = rank_r_svd_of_product(x_hat, y_hat, r, eps_hat)
    bits = delta_bits(eps) + _mag_bits_fp(mag) + n.bit_length() + 8
    lf = words_for_bits(bits)
    return RankFactorization(fact.X.round_to(lf), fact.Y.round_to(lf), r)


def _mag_bits_fp(m: FixedPoint) -> int:
    if m.mantissa == 0:
        return 1
    from .fixedpoint import WORD_BITS

    return max(1, m.mantissa.bit_length() - WORD_BITS * m.frac_words + 1)
