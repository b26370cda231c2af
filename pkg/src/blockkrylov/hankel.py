"""Recursive displacement-rank solver for block Hankel/Toeplitz systems.

The solver splits the block Toeplitz matrix into a prefix and a suffix,
recurses on the prefix, forms the Schur complement implicitly through
displaced matrix products, compresses its displaced form back to rank
2s, recurses on that, and finally compresses the assembled inverse into
a single minus-sign displaced representation.  Applying the operator
afterwards is one implicit matrix product, exactly linear in the input.
"""

from __future__ import annotations

import math
from typing import List, Optional

from .blockstruct import (BlockHankel, BlockToeplitz, DisplacedRep,
                          block_reversal_permute, displaced_matvec,
                          shift_rows, toeplitz_displaced_factors,
                          toeplitz_from_hankel)
from .convfft import delta_bits
from .fixedpoint import FixedPoint, fp_div, fp_pow2, WORD_BITS, words_for_bits
from .matrix import (DenseMatrix, DimensionError, SingularMatrixError,
                     dense_inverse_oracle, svd_oracle)
from .rng import SeedStream
from .sketch import LinOp, low_rank_approx


class CompressionResidualError(ArithmeticError):
    """Low-rank compression failed: conditioning preconditions violated."""


def _stage_words(eps: FixedPoint) -> int:
    return words_for_bits(delta_bits(eps)) + 2


def _stage_round(mat: DenseMatrix, eps: FixedPoint) -> DenseMatrix:
    """Construction-time rounding between composed operator stages.

    Keeps intermediate word lengths bounded; the introduced perturbation
    is below the node working tolerance and is absorbed by the
    compression error budget.  Never used on the solve path.
    """
    lw = _stage_words(eps)
    return mat if mat.frac <= lw else mat.round_to(lw)


class SolveOperator:
    """Node of the recursive inverse: explicit base inverse or composite.

    Composite nodes keep the children and the final minus-sign displaced
    representation of the approximate inverse; applying the operator
    uses only that final representation.
    """

    __slots__ = ("s", "m", "eps", "kind", "inv", "prefix", "schur",
                 "inv_rep", "sc_rep")

    def __init__(self, s, m, eps, kind, inv=None, prefix=None, schur=None,
                 inv_rep=None, sc_rep=None):
        self.s, self.m, self.eps, self.kind = s, m, eps, kind
        self.inv = inv
        self.prefix = prefix
        self.schur = schur
        self.inv_rep = inv_rep
        self.sc_rep = sc_rep

    @property
    def size(self):
        return self.s * self.m

    def apply(self, b: DenseMatrix, eps_apply: Optional[FixedPoint] = None
              ) -> DenseMatrix:
        if self.kind == "base":
            return self.inv.matmul(b)
        return displaced_matvec(self.inv_rep, b,
                                eps_apply if eps_apply is not None
                                else self.eps)

    def apply_transpose(self, b: DenseMatrix,
                        eps_apply: Optional[FixedPoint] = None) -> DenseMatrix:
        if self.kind == "base":
            return self.inv.transpose().matmul(b)
        return displaced_matvec(self.inv_rep.transpose(), b,
                                eps_apply if eps_apply is not None
                                else self.eps)

    def mag_bound(self) -> FixedPoint:
        if self.kind == "base":
            return self.inv.max_entry_magnitude()
        n = FixedPoint(self.size * max(1, self.inv_rep.rank), 0)
        return n * self.inv_rep.X.max_entry_magnitude() * \
            self.inv_rep.Y.max_entry_magnitude()

    def walk(self):
        """Yield every node of the recursion tree (self first)."""
        yield self
        if self.prefix is not None:
            yield from self.prefix.walk()
        if self.schur is not None:
            yield from self.schur.walk()


def solve_apply(z: SolveOperator, b: DenseMatrix,
                eps_apply: Optional[FixedPoint] = None) -> DenseMatrix:
    if b.rows != z.size:
        raise DimensionError("input height must be m*s")
    return z.apply(b, eps_apply)


def _block_slice_ops(rep_t: DisplacedRep, n_pre: int, eps: FixedPoint):
    """Sub-block multiplications of T through its full representation.

    Embedding the input at the prefix or suffix rows and slicing the
    output realizes T_{rows,cols} @ B for every prefix/suffix pair.
    """
    n = rep_t.m * rep_t.s
    rep_tt = rep_t.transpose()

    def tmul(b, rows, cols, transpose=False):
        rep = rep_tt if transpose else rep_t
        src = cols if not transpose else rows
        dst = rows if not transpose else cols
        full = DenseMatrix.zeros(n, b.cols, b.frac)
        off = 0 if src == "pre" else n_pre
        h = n_pre if src == "pre" else n - n_pre
        full.mants[off * b.cols:(off + h) * b.cols] = b.mants
        out = _stage_round(displaced_matvec(rep, full, eps), eps)
        if dst == "pre":
            return out.submatrix(0, n_pre, 0, out.cols)
        return out.submatrix(n_pre, n, 0, out.cols)

    return tmul


def implicit_schur(prefix_solve: SolveOperator, tmul, n_pre: int,
                   n_suf: int, mag_bound: FixedPoint,
                   eps: FixedPoint = None) -> LinOp:
    """Schur complement T_CC - T_CC' Z(C') T_C'C as a linear operator.

    Stage outputs are rounded at the working tolerance, so the operator
    is deterministic and linear up to that tolerance.
    """

    def apply(b, delta):
        direct = tmul(b, "suf", "suf")
        up = tmul(b, "pre", "suf")
        mid = prefix_solve.apply(up)
        if eps is not None:
            mid = _stage_round(mid, eps)
        down = tmul(mid, "suf", "pre")
        return direct - down

    def transpose_apply(b, delta):
        direct = tmul(b, "suf", "suf", transpose=True)
        up = tmul(b, "suf", "pre", transpose=True)
        mid = prefix_solve.apply_transpose(up)
        if eps is not None:
            mid = _stage_round(mid, eps)
        down = tmul(mid, "pre", "suf", transpose=True)
        return direct - down

    return LinOp(n_suf, n_suf, apply, transpose_apply, mag_bound,
                 tag="schur-complement")


def _displaced_op(base: LinOp, s: int, sign: str) -> LinOp:
    """Wrap an operator with its plus/minus displacement."""

    def apply(b, delta):
        mb = base.apply(b, delta)
        if sign == "plus":
            shifted = base.apply(shift_rows(b, s, down=False), delta)
            return mb - shift_rows(shifted, s, down=True)
        shifted = base.apply(shift_rows(b, s, down=True), delta)
        return mb - shift_rows(shifted, s, down=False)

    def transpose_apply(b, delta):
        mb = base.transpose_apply(b, delta)
        if sign == "plus":
            shifted = base.transpose_apply(shift_rows(b, s, down=False), delta)
            return mb - shift_rows(shifted, s, down=True)
        shifted = base.transpose_apply(shift_rows(b, s, down=True), delta)
        return mb - shift_rows(shifted, s, down=False)

    two = FixedPoint(2, 0)
    return LinOp(base.rows, base.cols, apply, transpose_apply,
                 two * base.mag_bound, tag=f"{sign}-displaced({base.tag})")


def _compression_residual_check(op: LinOp, fact, eps: FixedPoint,
                                stream: SeedStream, label: str,
                                slack_bits: Optional[int] = None):
    """Probe ||(op - X Y^T) v|| on random columns; flags bad conditioning."""
    n = op.cols
    probe_cols = 2
    ents = [stream.gauss_fixed(2, truncate_at=float(n))
            for _ in range(n * probe_cols)]
    v = DenseMatrix.from_entries(n, probe_cols, ents)
    lhs = op.apply(v, eps)
    rhs = fact.X.matmul(fact.Y.transpose().matmul(v))
    diff = lhs - rhs
    resid_sq = diff.frobenius_norm_sq()
    scale = FixedPoint(1, 0) + v.frobenius_norm_sq()
    slack = FixedPoint(int(n) ** 3 + 1, 0)
    budget = slack * eps
    if slack_bits is not None:
        budget = budget + fp_pow2(-slack_bits)
    bound = (budget * budget) * scale
    if resid_sq.compare(bound) > 0:
        raise CompressionResidualError(
            f"{label}: compression residual above threshold "
            f"(likely ill-conditioned block minors)")


def recursive_sc(s: int, m: int, x: DenseMatrix, y: DenseMatrix,
                 eps: FixedPoint, seed=0,
                 check_compression: bool = True) -> SolveOperator:
    """Build the approximate inverse operator of the represented matrix.

    x, y are plus-sign displaced factors of an (ms) x (ms) block
    Toeplitz-like matrix whose block-aligned prefix minors and Schur
    complements are invertible; eps is the uniform working tolerance of
    every internal operation.
    """
    if eps.sign() <= 0:
        raise ValueError("eps must be positive")
    stream = seed if isinstance(seed, SeedStream) else SeedStream(seed, "rsc")
    if m == 1:
        t = x.matmul(y.transpose())
        inv = dense_inverse_oracle(t, eps)
        return SolveOperator(s, m, eps, "base", inv=inv)
    m_pre = (m + 1) // 2
    m_suf = m - m_pre
    n_pre = m_pre * s
    n = m * s
    rep_t = DisplacedRep(s, m, "plus", x, y)
    tmul = _block_slice_ops(rep_t, n_pre, eps)
    prefix = recursive_sc(s, m_pre,
                          x.submatrix(0, n_pre, 0, x.cols),
                          y.submatrix(0, n_pre, 0, y.cols),
                          eps, stream.substream("prefix"),
                          check_compression)
    one = FixedPoint(1, 0)
    mag_t = one + x.max_entry_magnitude() * y.max_entry_magnitude() * \
        FixedPoint(n * max(1, x.cols), 0)
    mag_sc = mag_t + mag_t * mag_t * (one + prefix.mag_bound()) * \
        FixedPoint(n * n, 0)
    sc_op = implicit_schur(prefix, tmul, n_pre, n - n_pre, mag_sc, eps)
    sc_disp = _displaced_op(sc_op, s, "plus")
    sc_fact = low_rank_approx(sc_disp, n - n_pre, min(2 * s, n - n_pre),
                              eps, stream.substream("sc-compress"))
    if check_compression:
        _compression_residual_check(sc_disp, sc_fact, eps,
                                    stream.substream("sc-probe"),
                                    "schur compression")
    sc_rep = DisplacedRep(s, m_suf, "plus", sc_fact.X, sc_fact.Y)
    schur = recursive_sc(s, m_suf, sc_fact.X, sc_fact.Y, eps,
                         stream.substream("schur"), check_compression)

    def z_apply(b, delta):
        b1 = b.submatrix(0, n_pre, 0, b.cols)
        b2 = b.submatrix(n_pre, n, 0, b.cols)
        t1 = _stage_round(prefix.apply(b1), eps)
        u2 = _stage_round(schur.apply(b2 - tmul(t1, "suf", "pre")), eps)
        u1 = t1 - _stage_round(prefix.apply(tmul(u2, "pre", "suf")), eps)
        return u1.vstack(u2)

    def z_apply_t(b, delta):
        b1 = b.submatrix(0, n_pre, 0, b.cols)
        b2 = b.submatrix(n_pre, n, 0, b.cols)
        d1 = _stage_round(prefix.apply_transpose(b1), eps)
        w2 = b2 - tmul(d1, "pre", "suf", transpose=True)
        d2 = _stage_round(schur.apply_transpose(w2), eps)
        o1 = d1 - _stage_round(prefix.apply_transpose(
            tmul(d2, "suf", "pre", transpose=True)), eps)
        return o1.vstack(d2)

    mag_z = (one + prefix.mag_bound()) * (one + schur.mag_bound()) * \
        (one + mag_t) * FixedPoint(4 * n * n, 0)
    z_op = LinOp(n, n, z_apply, z_apply_t, mag_z, tag="assembled-inverse")
    z_disp = _displaced_op(z_op, s, "minus")
    inv_fact = low_rank_approx(z_disp, n, min(2 * s, n), eps,
                               stream.substream("inv-compress"))
    if check_compression:
        _compression_residual_check(z_disp, inv_fact, eps,
                                    stream.substream("inv-probe"),
                                    "inverse compression")
    inv_rep = DisplacedRep(s, m, "minus", inv_fact.X, inv_fact.Y)
    return SolveOperator(s, m, eps, "composite", prefix=prefix, schur=schur,
                         inv_rep=inv_rep, sc_rep=sc_rep)


# -- Hankel front end -------------------------------------------------------


class HankelSolveOperator:
    """Solver for a symmetric block Hankel matrix H built on the block
    Toeplitz core: H^{-1} b = J T^{-1} b with J the block reversal."""

    __slots__ = ("hankel", "toeplitz_solve", "s", "m", "scale_pow2",
                 "eps_target", "eps_work")

    def __init__(self, hankel, toeplitz_solve, scale_pow2, eps_target,
                 eps_work):
        self.hankel = hankel
        self.toeplitz_solve = toeplitz_solve
        self.s = toeplitz_solve.s
        self.m = toeplitz_solve.m
        self.scale_pow2 = scale_pow2
        self.eps_target = eps_target
        self.eps_work = eps_work

    @property
    def size(self):
        return self.s * self.m

    def apply(self, b: DenseMatrix) -> DenseMatrix:
        out = self.toeplitz_solve.apply(b)
        out = block_reversal_permute(out, self.s)
        return out.shift_pow2(-self.scale_pow2)


def working_tolerance(eps_target: FixedPoint, alpha: FixedPoint, s: int,
                      m: int, safety_exponent: int = 10) -> FixedPoint:
    """Internal tolerance delivering eps_target after recursion growth.

    The error of the recursion can grow by alpha**(-safety_exponent *
    log2(m)); shrinking the working tolerance by that factor (and ms)
    absorbs it.
    """
    if m <= 1:
        extra_bits = 0
    else:
        levels = max(1, math.ceil(math.log2(m)))
        alpha_bits = delta_bits(alpha)
        extra_bits = safety_exponent * levels * alpha_bits
    total_bits = delta_bits(eps_target) + extra_bits + \
        (s * m).bit_length() + 1
    return fp_pow2(-total_bits)


def hankel_solve(h: BlockHankel, eps_target: FixedPoint,
                 alpha: Optional[FixedPoint] = None, seed=0,
                 safety_exponent: int = 10,
                 check_compression: bool = True) -> HankelSolveOperator:
    """Build an approximate inverse operator for a block Hankel matrix.

    The matrix is rescaled by a power of two so its entries are at most
    (sm)^-2 (exactly invertible scaling), converted to block Toeplitz
    form by column-block reversal, and factored through its displaced
    representation.  alpha, when provided, is the conditioning bound of
    the corner minors and drives the internal working tolerance.
    """
    s, m = h.s, h.m
    t = toeplitz_from_hankel(h)
    mag = max((g.max_entry_magnitude() for g in t.gen),
              key=lambda v: v.to_fraction())
    # scale so max magnitude <= (sm)^-2
    target_bits = 2 * (s * m).bit_length()
    if mag.mantissa != 0:
        mag_bits = mag.mantissa.bit_length() - WORD_BITS * mag.frac_words
        k = mag_bits + target_bits
    else:
        k = 0
    scaled_gen = [g.shift_pow2(-k).compact() for g in t.gen]
    t_scaled = BlockToeplitz(s, m, scaled_gen)
    rep = toeplitz_displaced_factors(t_scaled)
    if alpha is not None:
        alpha_scaled = alpha.shift_pow2(-k)
        eps_work = working_tolerance(eps_target.shift_pow2(-k), alpha_scaled,
                                     s, m, safety_exponent)
    else:
        # fallback: quadratic observed growth in m
        eps_work = fp_pow2(-(delta_bits(eps_target) + k +
                             4 * max(1, m.bit_length()) + 4))
    node = recursive_sc(s, m, rep.X, rep.Y, eps_work, seed,
                        check_compression)
    return HankelSolveOperator(h, node, k, eps_target, eps_work)


def hankel_precondition_check(h: BlockHankel, alpha: FixedPoint,
                              oracle_tol: Optional[FixedPoint] = None):
    """Check the corner block minors of H for minimum singular value alpha.

    Every contiguous block-aligned minor touching the top-right or
    bottom-left corner must have sigma_min >= alpha.  Returns a report
    dict with per-minor values and the overall verdict.
    """
    s, m = h.s, h.m
    dense = h.densify()
    if oracle_tol is None:
        oracle_tol = fp_pow2(-delta_bits(alpha) - 16)
    results = []
    worst = None
    symmetric = h.is_symmetric()
    for i in range(1, m + 1):
        minor = dense.submatrix(0, i * s, (m - i) * s, m * s)
        rep = svd_oracle(minor, oracle_tol)
        smin = rep.min_abs()
        entries = [("top-right", i, smin)]
        if not symmetric:
            minor2 = dense.submatrix((m - i) * s, m * s, 0, i * s)
            rep2 = svd_oracle(minor2, oracle_tol)
            entries.append(("bottom-left", i, rep2.min_abs()))
        for corner, idx, val in entries:
            ok = val.compare(alpha) >= 0
            results.append({"corner": corner, "i": idx,
                            "sigma_min": val, "ok": ok})
            if worst is None or val.compare(worst) < 0:
                worst = val
    passed = all(r["ok"] for r in results)
    return {"pass": passed, "worst_sigma_min": worst, "minors": results,
            "alpha": alpha}
