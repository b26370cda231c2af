"""Dense and sparse fixed-point matrices with exact arithmetic.

Matrices store integer mantissas with one shared fractional word count,
so sums and products are exact; rounding happens only when requested.
Small-scale spectral oracles (Jacobi eigensolver, SVD via the Gram
matrix, pivoted elimination inverse) live here as ground truth for the
rest of the library.
"""

from __future__ import annotations

from operator import mul as _opmul
from typing import Iterable, List, Sequence, Tuple

from .fixedpoint import (FixedPoint, WORD_BITS, fp_div, fp_sqrt, mpz,
                         words_for_bits, _round_shifted)

ORACLE_CAP = 512
DENSIFY_CAP = 1024

_Z = mpz(0)


class DimensionError(ValueError):
    pass


class SingularMatrixError(ArithmeticError):
    pass


class OracleError(ArithmeticError):
    pass


def _round_list(mants, shift):
    if shift <= 0:
        sh = -shift
        return [m << sh for m in mants]
    return [_round_shifted(m, shift) for m in mants]


class DenseMatrix:
    """Row-major dense matrix; all entries share one frac_words."""

    __slots__ = ("rows", "cols", "mants", "frac")

    def __init__(self, rows, cols, mants, frac):
        if rows <= 0 or cols <= 0:
            raise DimensionError("matrix dimensions must be positive")
        if len(mants) != rows * cols:
            raise DimensionError("entry count does not match shape")
        self.rows = rows
        self.cols = cols
        self.mants = [mpz(m) for m in mants]
        self.frac = int(frac)

    # -- constructors ---------------------------------------------------

    @classmethod
    def zeros(cls, rows, cols, frac=0):
        return cls(rows, cols, [_Z] * (rows * cols), frac)

    @classmethod
    def identity(cls, n, frac=0):
        mants = [_Z] * (n * n)
        one = mpz(1) << (WORD_BITS * frac)
        for i in range(n):
            mants[i * n + i] = one
        return cls(n, n, mants, frac)

    @classmethod
    def from_entries(cls, rows, cols, entries: Sequence[FixedPoint]):
        L = max((e.frac_words for e in entries), default=0)
        mants = [e.mantissa << ((L - e.frac_words) * WORD_BITS) for e in entries]
        return cls(rows, cols, mants, L)

    @classmethod
    def from_rows(cls, rows_of_entries):
        rows = len(rows_of_entries)
        cols = len(rows_of_entries[0])
        flat = [e for row in rows_of_entries for e in row]
        return cls.from_entries(rows, cols, flat)

    @classmethod
    def from_ints(cls, rows_of_ints):
        rows = len(rows_of_ints)
        cols = len(rows_of_ints[0])
        return cls(rows, cols, [mpz(v) for row in rows_of_ints for v in row], 0)

    @classmethod
    def from_floats(cls, rows_of_floats, frac):
        ents = [FixedPoint.from_float(v, frac)
                for row in rows_of_floats for v in row]
        rows = len(rows_of_floats)
        cols = len(rows_of_floats[0])
        return cls(rows, cols, [e.mantissa << ((frac - e.frac_words) * WORD_BITS)
                                for e in ents], frac)

    # -- access ----------------------------------------------------------

    def entry(self, i, j) -> FixedPoint:
        return FixedPoint(self.mants[i * self.cols + j], self.frac)

    def row_mants(self, i):
        c = self.cols
        return self.mants[i * c:(i + 1) * c]

    def to_floats(self):
        return [[self.entry(i, j).to_float() for j in range(self.cols)]
                for i in range(self.rows)]

    def copy(self):
        return DenseMatrix(self.rows, self.cols, list(self.mants), self.frac)

    def __eq__(self, other):
        if not isinstance(other, DenseMatrix):
            return NotImplemented
        if (self.rows, self.cols) != (other.rows, other.cols):
            return False
        a, b = align_fracs(self, other)
        return a.mants == b.mants

    def __hash__(self):
        return hash((self.rows, self.cols))

    # -- shape ops ---------------------------------------------------------

    def transpose(self):
        r, c, m = self.rows, self.cols, self.mants
        out = [_Z] * (r * c)
        for i in range(r):
            base = i * c
            for j in range(c):
                out[j * r + i] = m[base + j]
        return DenseMatrix(c, r, out, self.frac)

    def submatrix(self, r0, r1, c0, c1):
        m = self.mants
        c = self.cols
        out = []
        for i in range(r0, r1):
            out.extend(m[i * c + c0:i * c + c1])
        return DenseMatrix(r1 - r0, c1 - c0, out, self.frac)

    def hstack(self, other):
        if self.rows != other.rows:
            raise DimensionError("hstack row mismatch")
        a, b = align_fracs(self, other)
        out = []
        for i in range(self.rows):
            out.extend(a.row_mants(i))
            out.extend(b.row_mants(i))
        return DenseMatrix(self.rows, self.cols + other.cols, out, a.frac)

    def vstack(self, other):
        if self.cols != other.cols:
            raise DimensionError("vstack column mismatch")
        a, b = align_fracs(self, other)
        return DenseMatrix(self.rows + other.rows, self.cols,
                           a.mants + b.mants, a.frac)

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        a, b = align_fracs(self, other)
        if (a.rows, a.cols) != (b.rows, b.cols):
            raise DimensionError("shape mismatch in add")
        return DenseMatrix(a.rows, a.cols,
                           [x + y for x, y in zip(a.mants, b.mants)], a.frac)

    def __sub__(self, other):
        a, b = align_fracs(self, other)
        if (a.rows, a.cols) != (b.rows, b.cols):
            raise DimensionError("shape mismatch in sub")
        return DenseMatrix(a.rows, a.cols,
                           [x - y for x, y in zip(a.mants, b.mants)], a.frac)

    def __neg__(self):
        return DenseMatrix(self.rows, self.cols, [-x for x in self.mants],
                           self.frac)

    def scale(self, s: FixedPoint):
        sm = s.mantissa
        return DenseMatrix(self.rows, self.cols, [sm * x for x in self.mants],
                           self.frac + s.frac_words)

    def shift_pow2(self, k):
        """Multiply all entries by 2**k exactly."""
        if k >= 0:
            return DenseMatrix(self.rows, self.cols,
                               [x << k for x in self.mants], self.frac)
        need = -k
        extra = -(-need // WORD_BITS)
        sh = extra * WORD_BITS - need
        return DenseMatrix(self.rows, self.cols,
                           [x << sh for x in self.mants], self.frac + extra)

    def matmul(self, other) -> "DenseMatrix":
        """Exact product; result frac = frac_a + frac_b."""
        if self.cols != other.rows:
            raise DimensionError("inner dimensions disagree")
        n, k, m = self.rows, self.cols, other.cols
        bt = other.transpose()
        a = self.mants
        b = bt.mants
        out = [_Z] * (n * m)
        for i in range(n):
            arow = a[i * k:(i + 1) * k]
            base = i * m
            for j in range(m):
                out[base + j] = sum(map(_opmul, arow, b[j * k:(j + 1) * k]))
        return DenseMatrix(n, m, out, self.frac + other.frac)

    def round_to(self, frac):
        shift = (self.frac - frac) * WORD_BITS
        if shift == 0:
            return self
        return DenseMatrix(self.rows, self.cols,
                           _round_list(self.mants, shift), frac)

    def compact(self):
        """Reduce shared frac by stripping common trailing zero words."""
        L = self.frac
        mask = (1 << WORD_BITS) - 1
        while L > 0 and all((m & mask) == 0 for m in self.mants):
            self = DenseMatrix(self.rows, self.cols,
                               [m >> WORD_BITS for m in self.mants], L - 1)
            L -= 1
        return self

    def mirror_upper(self):
        """Copy the upper triangle onto the lower one (exact symmetrization)."""
        if self.rows != self.cols:
            raise DimensionError("mirror_upper needs a square matrix")
        n = self.rows
        m = list(self.mants)
        for i in range(n):
            for j in range(i):
                m[i * n + j] = m[j * n + i]
        return DenseMatrix(n, n, m, self.frac)

    def is_symmetric(self):
        n = self.rows
        if n != self.cols:
            return False
        m = self.mants
        return all(m[i * n + j] == m[j * n + i]
                   for i in range(n) for j in range(i))

    # -- norms -----------------------------------------------------------

    def frobenius_norm_sq(self) -> FixedPoint:
        return FixedPoint(sum(x * x for x in self.mants), 2 * self.frac)

    def max_entry_magnitude(self) -> FixedPoint:
        return FixedPoint(max((abs(x) for x in self.mants), default=_Z),
                          self.frac)

    def frobenius_norm_float(self) -> float:
        import math

        f = self.frobenius_norm_sq()
        m = int(f.mantissa)
        if m == 0:
            return 0.0
        sh = max(0, m.bit_length() - 53)
        exp = sh - WORD_BITS * f.frac_words
        log2 = 0.5 * (math.log2(m >> sh) + exp)
        if log2 > 1020:
            return math.inf
        if log2 < -1020:
            return 0.0
        return 2.0 ** log2


class SparseMatrix:
    """Coordinate-list sparse matrix: sorted unique (row, col) triplets."""

    __slots__ = ("rows", "cols", "rs", "cs", "mants", "frac")

    def __init__(self, rows, cols, triplets: Iterable[Tuple[int, int, FixedPoint]]):
        trips = sorted(triplets, key=lambda t: (t[0], t[1]))
        self.rows = rows
        self.cols = cols
        L = max((t[2].frac_words for t in trips), default=0)
        rs, cs, mants = [], [], []
        last = None
        for r, c, v in trips:
            if not (0 <= r < rows and 0 <= c < cols):
                raise DimensionError(f"index ({r},{c}) out of range")
            if (r, c) == last:
                raise ValueError(f"duplicate entry at ({r},{c})")
            last = (r, c)
            if v.is_zero():
                continue
            rs.append(r)
            cs.append(c)
            mants.append(v.mantissa << ((L - v.frac_words) * WORD_BITS))
        self.rs = rs
        self.cs = cs
        self.mants = mants
        self.frac = L

    @classmethod
    def zero(cls, rows, cols):
        return cls(rows, cols, [])

    @property
    def nnz(self):
        return len(self.mants)

    def triplets(self):
        for r, c, m in zip(self.rs, self.cs, self.mants):
            yield r, c, FixedPoint(m, self.frac)

    def transpose(self):
        return SparseMatrix(self.cols, self.rows,
                            [(c, r, v) for r, c, v in self.triplets()])

    def densify(self):
        out = DenseMatrix.zeros(self.rows, self.cols, self.frac)
        for r, c, m in zip(self.rs, self.cs, self.mants):
            out.mants[r * self.cols + c] = m
        return out

    def max_entry_magnitude(self) -> FixedPoint:
        return FixedPoint(max((abs(m) for m in self.mants), default=_Z),
                          self.frac)

    def is_symmetric(self):
        if self.rows != self.cols:
            return False
        seen = {(r, c): m for r, c, m in zip(self.rs, self.cs, self.mants)}
        return all(seen.get((c, r)) == m for (r, c), m in seen.items())

    def add(self, other: "SparseMatrix") -> "SparseMatrix":
        if (self.rows, self.cols) != (other.rows, other.cols):
            raise DimensionError("shape mismatch in sparse add")
        acc = {}
        for r, c, v in self.triplets():
            acc[(r, c)] = v
        for r, c, v in other.triplets():
            acc[(r, c)] = acc[(r, c)] + v if (r, c) in acc else v
        return SparseMatrix(self.rows, self.cols,
                            [(r, c, v) for (r, c), v in acc.items()])

    def matvec(self, x: DenseMatrix) -> DenseMatrix:
        return sparse_matvec(self, x)


def align_fracs(a: DenseMatrix, b: DenseMatrix):
    if a.frac == b.frac:
        return a, b
    if a.frac < b.frac:
        sh = (b.frac - a.frac) * WORD_BITS
        a = DenseMatrix(a.rows, a.cols, [m << sh for m in a.mants], b.frac)
    else:
        sh = (a.frac - b.frac) * WORD_BITS
        b = DenseMatrix(b.rows, b.cols, [m << sh for m in b.mants], a.frac)
    return a, b


# -- spec operations ------------------------------------------------------


def mat_mul(a: DenseMatrix, b: DenseMatrix, frac_out: int) -> DenseMatrix:
    """Exact product rounded to frac_out words."""
    return a.matmul(b).round_to(frac_out)


def sparse_matvec(a: SparseMatrix, x: DenseMatrix) -> DenseMatrix:
    """Exact sparse * dense product."""
    if a.cols != x.rows:
        raise DimensionError("inner dimensions disagree")
    k = x.cols
    out = [_Z] * (a.rows * k)
    xm = x.mants
    for r, c, m in zip(a.rs, a.cs, a.mants):
        base = r * k
        xbase = c * k
        for j in range(k):
            out[base + j] += m * xm[xbase + j]
    return DenseMatrix(a.rows, k, out, a.frac + x.frac)


def frobenius_norm_sq(a) -> FixedPoint:
    if isinstance(a, SparseMatrix):
        return FixedPoint(sum(m * m for m in a.mants), 2 * a.frac)
    return a.frobenius_norm_sq()


def max_entry_magnitude(a) -> FixedPoint:
    return a.max_entry_magnitude()


def gram(a: DenseMatrix, frac_out: int) -> DenseMatrix:
    """A^T A rounded to frac_out; upper triangle computed, lower mirrored."""
    at = a.transpose()
    n = at.rows
    k = at.cols
    out = [_Z] * (n * n)
    rows = [at.mants[i * k:(i + 1) * k] for i in range(n)]
    for i in range(n):
        ri = rows[i]
        for j in range(i, n):
            out[i * n + j] = sum(map(_opmul, ri, rows[j]))
    g = DenseMatrix(n, n, out, 2 * a.frac).round_to(frac_out)
    return g.mirror_upper()


# -- spectral report -------------------------------------------------------


class SpectralReport:
    """Sorted spectrum with the minimum gap and the condition number."""

    __slots__ = ("values", "min_gap", "condition_number")

    def __init__(self, values: List[FixedPoint]):
        vals = sorted(values)
        self.values = vals
        if len(vals) > 1:
            self.min_gap = min(b - a for a, b in zip(vals, vals[1:]))
        else:
            self.min_gap = FixedPoint.zero()
        mags = sorted(v.abs() for v in vals)
        if mags and not mags[0].is_zero():
            self.condition_number = fp_div(mags[-1], mags[0],
                                           mags[0].frac_words + 2)
        else:
            self.condition_number = FixedPoint.zero()

    def min_value(self):
        return self.values[0]

    def max_value(self):
        return self.values[-1]

    def min_abs(self):
        return min(v.abs() for v in self.values)

    def max_abs(self):
        return max(v.abs() for v in self.values)


# -- oracles ---------------------------------------------------------------


def _jacobi_rotation(app, aqq, apq, L):
    """Rotation (c, s) zeroing the (p,q) entry, computed at L words."""
    two = FixedPoint(2, 0)
    theta = fp_div(aqq - app, two * apq, L)
    one = FixedPoint(1, 0)
    root = fp_sqrt(one + theta * theta, L)
    denom = theta.abs() + root
    t = fp_div(one, denom, L)
    if theta.sign() < 0:
        t = -t
    c = fp_div(one, fp_sqrt(one + t * t, L), L)
    s = (t * c).round(L)
    return c, s


def eig_sym_oracle(a: DenseMatrix, tol: FixedPoint, max_sweeps=60,
                   cap=ORACLE_CAP, vectors=True):
    """Cyclic Jacobi eigensolver for symmetric fixed-point matrices.

    Returns (SpectralReport over eigenvalues, V: DenseMatrix of column
    eigenvectors) with off-diagonal Frobenius mass below tol.  With
    vectors=False the second element is None (saves a third of the work).
    """
    n = a.rows
    if n > cap:
        raise OracleError(f"matrix size {n} exceeds oracle cap {cap}")
    if not a.is_symmetric():
        raise OracleError("eig_sym_oracle needs a symmetric matrix")
    if tol.sign() <= 0:
        raise ValueError("tol must be positive")
    L = max(words_for_bits(-_ilog2_floor(tol) + 2 * _ilog2_ceil_mag(a) + 16)
            + 2, a.frac, 2)
    A = a.round_to(L)
    am = A.mants
    vm = DenseMatrix.identity(n, L).mants if vectors else None
    tol_sq = tol * tol
    # rotations below this square threshold cannot push the total
    # off-diagonal mass above tol^2, so they are skipped; inner updates
    # floor-shift (error per op still below the working resolution)
    skip_sq = fp_div(tol_sq, FixedPoint(2 * n * n, 0), 2 * L)
    skip_mant = skip_sq.mantissa
    shift = L * WORD_BITS
    for sweep in range(max_sweeps):
        off = FixedPoint(sum(am[i * n + j] * am[i * n + j]
                             for i in range(n) for j in range(n) if i != j),
                         2 * L)
        if off.compare(tol_sq) < 0:
            break
        rotated = False
        for p in range(n):
            for q in range(p + 1, n):
                mq = am[p * n + q]
                if mq * mq <= skip_mant:
                    continue
                rotated = True
                apq = FixedPoint(mq, L)
                app = FixedPoint(am[p * n + p], L)
                aqq = FixedPoint(am[q * n + q], L)
                c, s = _jacobi_rotation(app, aqq, apq, L)
                cm, sm = c.mantissa, s.mantissa
                colp = am[p::n]
                colq = am[q::n]
                am[p::n] = [(cm * xp - sm * xq) >> shift
                            for xp, xq in zip(colp, colq)]
                am[q::n] = [(sm * xp + cm * xq) >> shift
                            for xp, xq in zip(colp, colq)]
                rowp = am[p * n:p * n + n]
                rowq = am[q * n:q * n + n]
                am[p * n:p * n + n] = [(cm * xp - sm * xq) >> shift
                                       for xp, xq in zip(rowp, rowq)]
                am[q * n:q * n + n] = [(sm * xp + cm * xq) >> shift
                                       for xp, xq in zip(rowp, rowq)]
                if vectors:
                    colp = vm[p::n]
                    colq = vm[q::n]
                    vm[p::n] = [(cm * xp - sm * xq) >> shift
                                for xp, xq in zip(colp, colq)]
                    vm[q::n] = [(sm * xp + cm * xq) >> shift
                                for xp, xq in zip(colp, colq)]
        if not rotated:
            break
    else:
        raise OracleError("Jacobi iteration did not converge")
    eigs = [FixedPoint(am[i * n + i], L) for i in range(n)]
    order = sorted(range(n), key=lambda i: eigs[i].to_fraction())
    values = [eigs[i] for i in order]
    if not vectors:
        return SpectralReport(values), None
    vout = [_Z] * (n * n)
    for newj, oldj in enumerate(order):
        for i in range(n):
            vout[i * n + newj] = vm[i * n + oldj]
    return SpectralReport(values), DenseMatrix(n, n, vout, L)


def svd_oracle(a: DenseMatrix, tol: FixedPoint, cap=ORACLE_CAP) -> SpectralReport:
    """Singular values via the eigenvalues of A^T A (or A A^T if wider)."""
    work = a if a.rows >= a.cols else a.transpose()
    if work.cols > cap:
        raise OracleError(f"matrix size exceeds oracle cap {cap}")
    g = gram(work, 2 * work.frac)
    gap = tol * tol
    rep, _ = eig_sym_oracle(g, gap, cap=cap)
    L = max(words_for_bits(-_ilog2_floor(tol) + 8) + 1, 2)
    sv = []
    zero = FixedPoint.zero()
    for lam in rep.values:
        if lam.sign() < 0:
            lam = zero
        sv.append(fp_sqrt(lam, L))
    return SpectralReport(sv)


def dense_inverse_oracle(a: DenseMatrix, tol: FixedPoint, cap=ORACLE_CAP,
                         verify_columns=3, seed=0) -> DenseMatrix:
    """Inverse by partially pivoted elimination, checked on probe columns.

    Raises SingularMatrixError when a pivot vanishes at working precision.
    """
    n = a.rows
    if n != a.cols:
        raise DimensionError("inverse needs a square matrix")
    if n > cap:
        raise OracleError(f"matrix size {n} exceeds oracle cap {cap}")
    if tol.sign() <= 0:
        raise ValueError("tol must be positive")
    bits = -_ilog2_floor(tol)
    L = max(words_for_bits(bits + 8 * max(1, n.bit_length()) + 64), a.frac, 2)
    for attempt in range(3):
        try:
            z = _gauss_jordan(a, L)
        except SingularMatrixError:
            if attempt == 2:
                raise
            L *= 2
            continue
        if _probe_residual_ok(a, z, tol, verify_columns, seed):
            return z
        L *= 2
    raise OracleError("inverse did not meet tolerance after precision escalation")


def _gauss_jordan(a: DenseMatrix, L: int) -> DenseMatrix:
    n = a.rows
    A = a.round_to(L)
    am = list(A.mants)
    inv = DenseMatrix.identity(n, L)
    im = list(inv.mants)
    shift = L * WORD_BITS
    pivot_floor = 1  # mantissa units: anything rounding to zero is singular
    for col in range(n):
        piv_row = max(range(col, n), key=lambda r: abs(am[r * n + col]))
        if abs(am[piv_row * n + col]) <= pivot_floor:
            raise SingularMatrixError(f"pivot vanished at column {col}")
        if piv_row != col:
            pc, pp = col * n, piv_row * n
            am[pc:pc + n], am[pp:pp + n] = am[pp:pp + n], am[pc:pc + n]
            im[pc:pc + n], im[pp:pp + n] = im[pp:pp + n], im[pc:pc + n]
        piv = FixedPoint(am[col * n + col], L)
        pinv = fp_div(FixedPoint(1, 0), piv, L).mantissa
        base = col * n
        arow = [(v * pinv) >> shift for v in am[base:base + n]]
        irow = [(v * pinv) >> shift for v in im[base:base + n]]
        am[base:base + n] = arow
        im[base:base + n] = irow
        for r in range(n):
            if r == col:
                continue
            f = am[r * n + col]
            if f == 0:
                continue
            rb = r * n
            am[rb:rb + n] = [x - ((f * y) >> shift)
                             for x, y in zip(am[rb:rb + n], arow)]
            im[rb:rb + n] = [x - ((f * y) >> shift)
                             for x, y in zip(im[rb:rb + n], irow)]
    return DenseMatrix(n, n, im, L)


def _probe_residual_ok(a, z, tol, k, seed):
    import random

    n = a.rows
    rng = random.Random(seed)
    k = min(k, n)
    cols = rng.sample(range(n), k)
    for c in cols:
        e = DenseMatrix.zeros(n, 1, 0)
        e.mants[c] = mpz(1)
        zc = z.matmul(e)
        r = a.matmul(zc)
        r.mants[c] -= mpz(1) << (WORD_BITS * r.frac)
        if r.frobenius_norm_sq().compare(tol * tol) > 0:
            return False
    return True


def _ilog2_floor(x: FixedPoint) -> int:
    """floor(log2(|x|)); requires x != 0."""
    if x.mantissa == 0:
        raise ValueError("log of zero")
    return abs(x.mantissa).bit_length() - 1 - WORD_BITS * x.frac_words


def _ilog2_ceil_mag(a: DenseMatrix) -> int:
    """max(0, ceil(log2 max|entry|)), 0 for the zero matrix."""
    m = a.max_entry_magnitude()
    if m.mantissa == 0:
        return 0
    return max(0, m.mantissa.bit_length() - WORD_BITS * m.frac_words)
