"""Block Hankel/Toeplitz structure and displacement-rank representations.

A block Toeplitz matrix with m blocks of size s is determined by 2m-1
generator blocks; shifting it by s along the diagonal annihilates all
but the first block row and column, so its displaced form has rank at
most 2s.  A DisplacedRep stores such a low-rank factorization (X, Y)
with M - D M D^T = X Y^T (plus sign, D the shift-down-by-s matrix) or
M - D^T M D = X Y^T (minus sign), and supports applying M without ever
densifying it.
"""

from __future__ import annotations

from typing import List

from .convfft import linear_conv_via_circular
from .fixedpoint import FixedPoint, WORD_BITS, fp_div
from .matrix import DenseMatrix, DimensionError, mpz, svd_oracle


class BlockToeplitz:
    """m x m grid of s x s blocks with block (i, j) = gen[i - j + m - 1]."""

    __slots__ = ("s", "m", "gen")

    def __init__(self, s: int, m: int, gen: List[DenseMatrix]):
        if len(gen) != 2 * m - 1:
            raise DimensionError("need 2m-1 generator blocks")
        for g in gen:
            if (g.rows, g.cols) != (s, s):
                raise DimensionError("generator blocks must be s x s")
        self.s, self.m, self.gen = s, m, list(gen)

    def block(self, i, j) -> DenseMatrix:
        """0-based block indices; densified block (i, j) = gen[(i-j) + m-1]."""
        return self.gen[i - j + self.m - 1]

    def densify(self, cap=1024) -> DenseMatrix:
        return _densify_grid(self, cap)


class BlockHankel:
    """m x m grid of s x s blocks with block (i, j) = gen[i + j]."""

    __slots__ = ("s", "m", "gen")

    def __init__(self, s: int, m: int, gen: List[DenseMatrix]):
        if len(gen) != 2 * m - 1:
            raise DimensionError("need 2m-1 generator blocks")
        for g in gen:
            if (g.rows, g.cols) != (s, s):
                raise DimensionError("generator blocks must be s x s")
        self.s, self.m, self.gen = s, m, list(gen)

    def block(self, i, j) -> DenseMatrix:
        return self.gen[i + j]

    def densify(self, cap=1024) -> DenseMatrix:
        return _densify_grid(self, cap)

    def is_symmetric(self):
        return all(g.is_symmetric() for g in self.gen)


def _densify_grid(bm, cap):
    n = bm.s * bm.m
    if n > cap:
        raise DimensionError(f"densification size {n} exceeds cap {cap}")
    s, m = bm.s, bm.m
    frac = max(g.frac for g in bm.gen)
    out = DenseMatrix.zeros(n, n, frac)
    for i in range(m):
        for j in range(m):
            blk = bm.block(i, j).round_to(frac)
            for r in range(s):
                row = (i * s + r) * n + j * s
                out.mants[row:row + s] = blk.mants[r * s:(r + 1) * s]
    return out


def toeplitz_from_hankel(h: BlockHankel) -> BlockToeplitz:
    """Reverse the order of the column blocks: T(i,j) = H(i, m-1-j)."""
    # T's generator index (i-j)+m-1 must equal H's index i+(m-1-j) = same.
    return BlockToeplitz(h.s, h.m, list(h.gen))


def block_reversal_permute(b: DenseMatrix, s: int) -> DenseMatrix:
    """Reverse the order of size-s row blocks of a stacked matrix."""
    m = b.rows // s
    if m * s != b.rows:
        raise DimensionError("row count not a multiple of s")
    out = []
    for i in range(m - 1, -1, -1):
        out.extend(b.mants[i * s * b.cols:(i + 1) * s * b.cols])
    return DenseMatrix(b.rows, b.cols, out, b.frac)


# -- shift / displacement ---------------------------------------------------


def shift_conjugate(m: DenseMatrix, s: int, direction: str) -> DenseMatrix:
    """Conjugate by the shift-down-by-s matrix.

    down_right gives D M D^T (entries move +s along both axes); up_left
    gives D^T M D.
    """
    n = m.rows
    if n != m.cols:
        raise DimensionError("square matrix required")
    if s > n:
        raise DimensionError("shift exceeds dimension")
    out = DenseMatrix.zeros(n, n, m.frac)
    if direction == "down_right":
        for i in range(n - s):
            src = i * n
            dst = (i + s) * n + s
            out.mants[dst:dst + n - s] = m.mants[src:src + n - s]
    elif direction == "up_left":
        for i in range(s, n):
            src = i * n + s
            dst = (i - s) * n
            out.mants[dst:dst + n - s] = m.mants[src:src + n - s]
    else:
        raise ValueError("direction must be down_right or up_left")
    return out


def displace(m: DenseMatrix, s: int, sign: str) -> DenseMatrix:
    """M - D M D^T for sign 'plus', M - D^T M D for sign 'minus'."""
    if sign == "plus":
        return m - shift_conjugate(m, s, "down_right")
    if sign == "minus":
        return m - shift_conjugate(m, s, "up_left")
    raise ValueError("sign must be 'plus' or 'minus'")


def undisplace(d: DenseMatrix, s: int, sign: str) -> DenseMatrix:
    """Invert displace: reconstruct M from its displaced form (exact)."""
    n = d.rows
    if n != d.cols:
        raise DimensionError("square matrix required")
    out = d.copy()
    mants = out.mants
    if sign == "plus":
        for i in range(s, n):
            base = i * n
            prev = (i - s) * n
            for j in range(s, n):
                mants[base + j] += mants[prev + j - s]
    elif sign == "minus":
        for i in range(n - s - 1, -1, -1):
            base = i * n
            nxt = (i + s) * n
            for j in range(n - s - 1, -1, -1):
                mants[base + j] += mants[nxt + j + s]
    else:
        raise ValueError("sign must be 'plus' or 'minus'")
    return out


def shift_rows(b: DenseMatrix, s: int, down: bool) -> DenseMatrix:
    """Apply the shift matrix (down) or its transpose (up) to stacked rows."""
    out = DenseMatrix.zeros(b.rows, b.cols, b.frac)
    c = b.cols
    if down:
        out.mants[s * c:] = b.mants[:(b.rows - s) * c]
    else:
        out.mants[:(b.rows - s) * c] = b.mants[s * c:]
    return out


# -- triangular Toeplitz factors -------------------------------------------


def tl_build(x: DenseMatrix, s: int = None) -> DenseMatrix:
    """Dense block lower-triangular Toeplitz with x as first block column."""
    s = x.cols if s is None else s
    if x.cols != s:
        raise DimensionError("factor must have exactly s columns")
    m = x.rows // s
    if m * s != x.rows:
        raise DimensionError("row count not a multiple of s")
    n = m * s
    out = DenseMatrix.zeros(n, n, x.frac)
    for i in range(m):
        for j in range(i + 1):
            blk = i - j
            for r in range(s):
                src = (blk * s + r) * s
                dst = (i * s + r) * n + j * s
                out.mants[dst:dst + s] = x.mants[src:src + s]
    return out


def _rev_transpose_blocks(x: DenseMatrix, s: int) -> DenseMatrix:
    """Stack the s x s blocks of x in reverse order, each transposed."""
    m = x.rows // s
    out = DenseMatrix.zeros(x.rows, s, x.frac)
    for i in range(m):
        src_block = m - 1 - i
        for r in range(s):
            for c in range(s):
                out.mants[(i * s + r) * s + c] = \
                    x.mants[(src_block * s + c) * s + r]
    return out


def _pad_columns_to_multiple(x: DenseMatrix, s: int) -> DenseMatrix:
    r = x.cols
    rp = -(-r // s) * s
    if rp == r:
        return x
    pad = DenseMatrix.zeros(x.rows, rp - r, x.frac)
    return x.hstack(pad)


class DisplacedRep:
    """Rank-r displaced factorization of an (ms) x (ms) matrix M.

    sign 'plus':  M - D M D^T = X Y^T;  sign 'minus': M - D^T M D = X Y^T.
    """

    __slots__ = ("s", "m", "sign", "X", "Y", "_conv_cache")

    def __init__(self, s: int, m: int, sign: str, X: DenseMatrix,
                 Y: DenseMatrix):
        if sign not in ("plus", "minus"):
            raise ValueError("sign must be 'plus' or 'minus'")
        if X.rows != m * s or Y.rows != m * s or X.cols != Y.cols:
            raise DimensionError("factor shapes must be (ms) x r")
        self.s, self.m, self.sign = s, m, sign
        self.X, self.Y = X, Y
        self._conv_cache = {}

    @property
    def rank(self):
        return self.X.cols

    def transpose(self) -> "DisplacedRep":
        """Rep of M^T (swap the factors; same sign)."""
        return DisplacedRep(self.s, self.m, self.sign, self.Y, self.X)

    def column_blocks(self):
        """Zero-padded s-column factor blocks (X_t, Y_t)."""
        xp = _pad_columns_to_multiple(self.X, self.s)
        yp = _pad_columns_to_multiple(self.Y, self.s)
        t = xp.cols // self.s
        for i in range(t):
            yield (xp.submatrix(0, xp.rows, i * self.s, (i + 1) * self.s),
                   yp.submatrix(0, yp.rows, i * self.s, (i + 1) * self.s))


def rep_to_dense(rep: DisplacedRep, cap=1024) -> DenseMatrix:
    """Densify the represented matrix through triangular Toeplitz products."""
    n = rep.m * rep.s
    if n > cap:
        raise DimensionError(f"densification size {n} exceeds cap {cap}")
    s = rep.s
    acc = None
    for xt, yt in rep.column_blocks():
        if rep.sign == "plus":
            term = tl_build(xt, s).matmul(tl_build(yt, s).transpose())
        else:
            xr = _rev_transpose_blocks(xt, s)
            yr = _rev_transpose_blocks(yt, s)
            term = tl_build(xr, s).transpose().matmul(tl_build(yr, s))
        acc = term if acc is None else acc + term
    if acc is None:
        acc = DenseMatrix.zeros(n, n, 0)
    return acc


def _tl_apply(x: DenseMatrix, s: int, b: DenseMatrix, delta: FixedPoint,
              transpose: bool, cache=None, cache_key=None):
    """T_L(x) @ b (or its transpose apply) via stable block convolution.

    The x-side FFT is cached per (factor, tolerance) so repeated applies
    reuse the fixed operator coefficients.
    """
    m = x.rows // s
    xb = [x.submatrix(i * s, (i + 1) * s, 0, s) for i in range(m)]
    bb = [b.submatrix(i * s, (i + 1) * s, 0, b.cols) for i in range(m)]
    if transpose:
        # (T_L(x)^T b)_i = sum_k x_k^T b_{k+i-1}: convolve transposed blocks
        # against reversed b and read the upper output blocks.
        xb = [blk.transpose() for blk in xb]
        bb = list(reversed(bb))
    full = linear_conv_via_circular(xb, bb, delta, cache=cache,
                                    cache_key=cache_key)
    if transpose:
        picked = [full[m - 1 - i] for i in range(m)]
    else:
        picked = full[:m]
    out = picked[0]
    for blk in picked[1:]:
        out = out.vstack(blk)
    return out


def displaced_matvec(rep: DisplacedRep, b: DenseMatrix,
                     delta: FixedPoint) -> DenseMatrix:
    """Apply the represented matrix: result = Z b with ||Z - M||_F <= delta.

    Z is a fixed linear operator (the only roundings are in operator
    coefficients), so the map is exactly linear and deterministic in b.
    """
    if delta.sign() <= 0:
        raise ValueError("delta must be positive")
    if b.rows != rep.m * rep.s:
        raise DimensionError("input height must be m*s")
    s, m = rep.s, rep.m
    one = FixedPoint(1, 0)
    mag = one + rep.X.max_entry_magnitude() + rep.Y.max_entry_magnitude()
    scale = FixedPoint(m * s, 0) * mag * mag
    # per-factor convolution tolerance mirrors the composition bound
    inner = fp_div(delta, scale * FixedPoint(2 * max(1, rep.rank // s + 1), 0),
                   delta.frac_words + scale.frac_words + 2)
    acc = None
    for idx, (xt, yt) in enumerate(rep.column_blocks()):
        if rep.sign == "plus":
            mid = _tl_apply(yt, s, b, inner, transpose=True,
                            cache=rep._conv_cache, cache_key=("yT", idx, inner))
            term = _tl_apply(xt, s, mid, inner, transpose=False,
                             cache=rep._conv_cache, cache_key=("x", idx, inner))
        else:
            xr = _rev_transpose_blocks(xt, s)
            yr = _rev_transpose_blocks(yt, s)
            mid = _tl_apply(yr, s, b, inner, transpose=False,
                            cache=rep._conv_cache, cache_key=("yr", idx, inner))
            term = _tl_apply(xr, s, mid, inner, transpose=True,
                             cache=rep._conv_cache, cache_key=("xrT", idx, inner))
        acc = term if acc is None else acc + term
    return acc if acc is not None else DenseMatrix.zeros(b.rows, b.cols, 0)


def displaced_matvec_transpose(rep: DisplacedRep, b: DenseMatrix,
                               delta: FixedPoint) -> DenseMatrix:
    return displaced_matvec(rep.transpose(), b, delta)


def toeplitz_displaced_factors(t: BlockToeplitz) -> DisplacedRep:
    """Exact rank-2s plus-sign factors of a block Toeplitz matrix.

    The displaced matrix lives on the first block row and column; the
    factors encode that border directly.
    """
    s, m = t.s, t.m
    n = m * s
    frac = max(g.frac for g in t.gen)
    X = DenseMatrix.zeros(n, 2 * s, frac)
    Y = DenseMatrix.zeros(n, 2 * s, frac)
    one = mpz(1) << (WORD_BITS * frac)
    for i in range(s):
        X.mants[i * 2 * s + i] = one            # X[:s, :s] = I
        Y.mants[i * 2 * s + s + i] = one        # Y[:s, s:] = I
    # first block row -> Y[:, :s] columns; first block column (below the
    # diagonal block) -> X[s:, s:]
    for j in range(m):
        blk = t.block(0, j).round_to(frac)
        for r in range(s):
            for c in range(s):
                Y.mants[(j * s + c) * 2 * s + r] = blk.mants[r * s + c]
    for i in range(1, m):
        blk = t.block(i, 0).round_to(frac)
        for r in range(s):
            for c in range(s):
                X.mants[(i * s + r) * 2 * s + s + c] = blk.mants[r * s + c]
    return DisplacedRep(s, m, "plus", X, Y)


def displacement_rank(m: DenseMatrix, s: int, sign: str,
                      tol: FixedPoint) -> int:
    """Count oracle singular values of the displaced matrix above tol."""
    d = displace(m, s, sign)
    rep = svd_oracle(d, tol)
    return sum(1 for v in rep.values if v.compare(tol) > 0)
