"""Randomized block Krylov pipeline: preprocessing, padding, top solvers.

The solve route for a sparse system A x = b: rescale and square to a
symmetric positive definite operator, perturb it sparsely to separate
eigenvalues, build a block Krylov space from a sparse Gaussian starter,
solve the block Hankel Gram matrix of the space with the
displacement-rank solver, complete the basis with a few dense Gaussian
columns through a Schur complement, and unravel.
"""

from __future__ import annotations

import math
import time
from typing import Callable, Dict, List, Optional

from .blockstruct import BlockHankel
from .convfft import delta_bits
from .fixedpoint import FixedPoint, fp_div, fp_pow2, words_for_bits
from .hankel import (CompressionResidualError, HankelSolveOperator,
                     SolveOperator, hankel_solve)
from .matrix import (DenseMatrix, DimensionError, SingularMatrixError,
                     SparseMatrix, dense_inverse_oracle, gram, mpz,
                     sparse_matvec)
from .rng import SeedStream
from .sketch import LinOp

PAD_COEFF = 5          # s = floor(n/m) - PAD_COEFF*m, so r >= 5m
H_COEFF = 10000        # starter density h = H_COEFF * m^3 * ln(1/alpha) / n
C_L = 4                # fractional-word budget multiplier


class DegenerateSpaceError(ArithmeticError):
    """Krylov space or padding degenerate after all resample attempts."""


class PlanResult:
    __slots__ = ("m", "predicted_exponent")

    def __init__(self, m, predicted_exponent):
        self.m = m
        self.predicted_exponent = predicted_exponent


def plan_m(n: int, nnz: int, omega: float) -> PlanResult:
    """Krylov step count minimizing the predicted work exponent.

    m = min(n * nnz^{-1/(omega-1)}, n^{(omega-2)/(omega+1)}), and the
    predicted total-work exponent (base n) is
    max((5*omega-4)/(omega+1), 2 + (omega-2)/(omega-1) * log_n(nnz)).
    """
    if not (2.0 < omega <= 3.0):
        raise ValueError("omega must lie in (2, 3]")
    if nnz < n:
        raise ValueError("nnz must be at least n")
    m1 = n * nnz ** (-1.0 / (omega - 1.0))
    m2 = n ** ((omega - 2.0) / (omega + 1.0))
    m = max(1, round(min(m1, m2)))
    e1 = (5.0 * omega - 4.0) / (omega + 1.0)
    e2 = 2.0 + (omega - 2.0) / (omega - 1.0) * (math.log(nnz) / math.log(n))
    return PlanResult(m, max(e1, e2))


# -- randomized preprocessing ------------------------------------------------


def perturb_symmetric(a_bar: SparseMatrix, p: float, sigma: FixedPoint,
                      seed, frac_out: Optional[int] = None) -> SparseMatrix:
    """Add sigma * N(0,1) to each upper-triangle position w.p. p, mirrored.

    Gaussians are truncated at n standard deviations.  p = 0 returns the
    input bitwise.  frac_out, when given, rounds the noise values to
    that many fractional words.
    """
    if not a_bar.is_symmetric():
        raise DimensionError("perturb_symmetric needs a symmetric matrix")
    if not (0.0 <= p <= 1.0):
        raise ValueError("p must be a probability")
    if p == 0.0:
        return a_bar
    n = a_bar.rows
    stream = seed if isinstance(seed, SeedStream) else SeedStream(seed,
                                                                  "perturb")
    lw = max(sigma.frac_words + 1, words_for_bits(64))
    entries = {}
    for i in range(n):
        for j in range(i, n):
            if stream.uniform_float() >= p:
                continue
            g = stream.gauss_fixed(lw, truncate_at=float(n))
            v = g * sigma
            if frac_out is not None:
                v = v.round(frac_out).compact()
            entries[(i, j)] = v
    noise_trips = []
    for (i, j), v in entries.items():
        noise_trips.append((i, j, v))
        if i != j:
            noise_trips.append((j, i, v))
    noise = SparseMatrix(n, n, noise_trips)
    return a_bar.add(noise)


def sparse_gaussian(n: int, s: int, h: float, seed,
                    frac_words: int = 4) -> SparseMatrix:
    """n x s matrix; each entry independently N(0,1) w.p. h/n, else zero."""
    if not (0 <= h <= n):
        raise ValueError("density parameter h must be in [0, n]")
    stream = seed if isinstance(seed, SeedStream) else SeedStream(seed,
                                                                  "starter")
    p = h / n if n else 0.0
    trips = []
    for i in range(n):
        for j in range(s):
            if stream.uniform_float() < p:
                g = stream.gauss_fixed(frac_words, truncate_at=float(n))
                trips.append((i, j, g))
    return SparseMatrix(n, s, trips)


# -- Krylov space -----------------------------------------------------------


class KrylovSpace:
    """Power blocks of the operator against a sparse starter.

    powers[i] holds A^i G for i = 0..2m (rounded to frac_budget words per
    step); hankel_gen[i] = G^T A^i G for i = 2..2m, stored once so the
    block Hankel property holds bitwise.
    """

    __slots__ = ("s", "m", "n", "starter", "powers", "hankel_gen",
                 "frac_budget")

    def __init__(self, s, m, n, starter, powers, hankel_gen, frac_budget):
        self.s, self.m, self.n = s, m, n
        self.starter = starter
        self.powers = powers
        self.hankel_gen = hankel_gen
        self.frac_budget = frac_budget

    def k_blocks(self) -> List[DenseMatrix]:
        return self.powers[:self.m]

    def ak_blocks(self) -> List[DenseMatrix]:
        return self.powers[1:self.m + 1]

    def k_matrix(self) -> DenseMatrix:
        out = self.powers[0]
        for blk in self.powers[1:self.m]:
            out = out.hstack(blk)
        return out

    def ak_matrix(self) -> DenseMatrix:
        out = self.powers[1]
        for blk in self.powers[2:self.m + 1]:
            out = out.hstack(blk)
        return out

    def hankel(self) -> BlockHankel:
        return BlockHankel(self.s, self.m,
                           [self.hankel_gen[i] for i in
                            range(2, 2 * self.m + 1)])


def build_krylov(matvec: Callable[[DenseMatrix], DenseMatrix],
                 gs: SparseMatrix, m: int, frac_budget: int) -> KrylovSpace:
    """Repeatedly apply the operator to the starter and form Gram blocks."""
    n, s = gs.rows, gs.cols
    if m * s > n:
        raise DimensionError("m*s exceeds the dimension")
    gt = gs.transpose()
    powers = [gs.densify().round_to(frac_budget)]
    hankel_gen: Dict[int, DenseMatrix] = {}
    for i in range(1, 2 * m + 1):
        nxt = matvec(powers[-1]).round_to(frac_budget)
        powers.append(nxt)
        if i >= 2:
            blk = sparse_matvec(gt, nxt).round_to(frac_budget)
            hankel_gen[i] = blk.mirror_upper()
    return KrylovSpace(s, m, n, gs, powers, hankel_gen, frac_budget)


# -- padding ----------------------------------------------------------------


class PaddedSystem:
    """Padded basis Q = [K | G] and the assembled Gram solver.

    apply() realizes the inverse of (AQ)^T (AQ) through the block
    factorization: solve the Hankel head, couple through the r x r
    Schur complement, unravel; exactly linear in the input.
    """

    __slots__ = ("kspace", "g_pad", "ag_pad", "u_coupling", "schur_inverse",
                 "hankel_op", "r")

    def __init__(self, kspace, g_pad, ag_pad, u_coupling, schur_inverse,
                 hankel_op):
        self.kspace = kspace
        self.g_pad = g_pad
        self.ag_pad = ag_pad
        self.u_coupling = u_coupling
        self.schur_inverse = schur_inverse
        self.hankel_op = hankel_op
        self.r = g_pad.cols

    def q_matrix(self) -> DenseMatrix:
        return self.kspace.k_matrix().hstack(self.g_pad)

    def apply(self, b: DenseMatrix) -> DenseMatrix:
        ms = self.kspace.m * self.kspace.s
        bk = b.submatrix(0, ms, 0, b.cols)
        bg = b.submatrix(ms, ms + self.r, 0, b.cols)
        t = self.hankel_op.apply(bk)
        v = bg - self.u_coupling.transpose().matmul(t)
        u2 = self.schur_inverse.matmul(v)
        u1 = t - self.hankel_op.apply(self.u_coupling.matmul(u2))
        return u1.vstack(u2)


def pad_and_solve(kspace: KrylovSpace,
                  matvec: Callable[[DenseMatrix], DenseMatrix],
                  eps_inner: FixedPoint, seed,
                  ledger: Optional[dict] = None) -> PaddedSystem:
    """Complete the Krylov basis with scaled dense Gaussian columns.

    Builds the Hankel solver for (AK)^T(AK), computes the r x r Schur
    complement of the padded Gram matrix, and inverts it by the dense
    oracle.  Oracle singularity signals a degenerate space.
    """
    n, s, m = kspace.n, kspace.s, kspace.m
    L = kspace.frac_budget
    r = n - m * s
    if r < 1:
        raise DimensionError("padding needs m*s < n")
    stream = seed if isinstance(seed, SeedStream) else SeedStream(seed, "pad")
    scale = fp_div(FixedPoint(1, 0), FixedPoint(n * n, 0), L)
    ents = [stream.gauss_fixed(L, truncate_at=float(n)) * scale
            for _ in range(n * r)]
    g_pad = DenseMatrix.from_entries(n, r, ents).round_to(L)
    ag = matvec(g_pad).round_to(L)
    # coupling (AK)^T AG, stacked block by block
    u = None
    for blk in kspace.ak_blocks():
        piece = blk.transpose().matmul(ag)
        u = piece if u is None else u.vstack(piece)
    u = u.round_to(L)
    h = kspace.hankel()
    hankel_op = hankel_solve(h, eps_inner, alpha=None,
                             seed=stream.substream("hankel"))
    w = hankel_op.apply(u).round_to(L)
    d = gram(ag, L)
    sc_pad = (d - u.transpose().matmul(w)).round_to(L).mirror_upper()
    schur_inv = dense_inverse_oracle(sc_pad, eps_inner)
    if ledger is not None:
        ledger["pad"] = max(g_pad.frac, ag.frac, u.frac, sc_pad.frac)
    return PaddedSystem(kspace, g_pad, ag, u, schur_inv, hankel_op)


# -- top-level solvers -------------------------------------------------------


def alpha_bits_for(n: int, kappa: float, eps: float) -> int:
    """log2(1/alpha) for alpha = (n^8 kappa^2 / eps)^(-5 ln n)."""
    inner = 8.0 * math.log2(n) + 2.0 * math.log2(kappa) + math.log2(1.0 / eps)
    return max(8, math.ceil(5.0 * math.log(n) * inner))


def frac_budget_for(m: int, alpha_bits: int) -> int:
    from .fixedpoint import WORD_BITS

    return max(2, math.ceil(C_L * m * alpha_bits / WORD_BITS))


class BlockKrylovOperator:
    """Approximate inverse operator returned by block_krylov."""

    __slots__ = ("padded", "matvec", "n", "ledger")

    def __init__(self, padded: PaddedSystem, matvec, ledger=None):
        self.padded = padded
        self.matvec = matvec
        self.n = padded.kspace.n
        self.ledger = ledger or {}

    def aq_transpose_apply(self, x: DenseMatrix) -> DenseMatrix:
        out = None
        for blk in self.padded.kspace.ak_blocks():
            piece = blk.transpose().matmul(x)
            out = piece if out is None else out.vstack(piece)
        tail = self.padded.ag_pad.transpose().matmul(x)
        return out.vstack(tail)

    def q_apply(self, y: DenseMatrix) -> DenseMatrix:
        ms = self.padded.kspace.m * self.padded.kspace.s
        s = self.padded.kspace.s
        acc = None
        for i, blk in enumerate(self.padded.kspace.k_blocks()):
            piece = blk.matmul(y.submatrix(i * s, (i + 1) * s, 0, y.cols))
            acc = piece if acc is None else acc + piece
        acc = acc + self.padded.g_pad.matmul(
            y.submatrix(ms, ms + self.padded.r, 0, y.cols))
        return acc

    def apply(self, x: DenseMatrix) -> DenseMatrix:
        y = self.aq_transpose_apply(x)
        z = self.padded.apply(y)
        return self.q_apply(z)


def block_krylov(matvec: Callable[[DenseMatrix], DenseMatrix], n: int,
                 alpha_bits: int, m: int, seed,
                 retries: int = 3) -> BlockKrylovOperator:
    """Build the approximate inverse of a well-conditioned SPD operator.

    alpha_bits = log2(1/alpha) for the eigenvalue range/separation bound
    alpha; the operator satisfies the inverse approximation contract when
    the spectral preconditions hold.  Degenerate draws are resampled.
    """
    s = n // m - PAD_COEFF * m
    if s < 1:
        raise DimensionError("m too large for the dimension: s < 1")
    h = min(float(n), H_COEFF * (m ** 3) * (alpha_bits * math.log(2.0)) / n)
    L = frac_budget_for(m, alpha_bits)
    eps_inner = fp_pow2(-10 * m * alpha_bits)
    stream = seed if isinstance(seed, SeedStream) else SeedStream(seed,
                                                                  "krylov")
    ledger: Dict[str, int] = {}
    last_err = None
    for attempt in range(retries):
        sub = stream.substream(f"attempt{attempt}")
        gs = sparse_gaussian(n, s, h, sub.substream("starter"),
                             frac_words=L)
        ledger["starter"] = gs.frac
        kspace = build_krylov(matvec, gs, m, L)
        ledger["krylov"] = max(max(p.frac for p in kspace.powers),
                               max(g.frac for g in
                                   kspace.hankel_gen.values()))
        try:
            padded = pad_and_solve(kspace, matvec, eps_inner,
                                   sub.substream("pad"), ledger=ledger)
            return BlockKrylovOperator(padded, matvec, ledger)
        except (SingularMatrixError, CompressionResidualError) as e:
            last_err = e
    raise DegenerateSpaceError(
        f"no well-conditioned Krylov space after {retries} draws: "
        f"{last_err}")


class SolveReport:
    """Solution vector with residual, parameters, and phase diagnostics."""

    __slots__ = ("x", "residual_sq", "rhs_norm_sq", "residual_ok", "params",
                 "timings", "word_ledger")

    def __init__(self, x, residual_sq, rhs_norm_sq, residual_ok, params,
                 timings, word_ledger):
        self.x = x
        self.residual_sq = residual_sq
        self.rhs_norm_sq = rhs_norm_sq
        self.residual_ok = residual_ok
        self.params = params
        self.timings = timings
        self.word_ledger = word_ledger

    def residual_float(self) -> float:
        import math as _m

        rn = self.residual_sq.to_float()
        return _m.sqrt(rn) if rn > 0 else 0.0

    def to_json_dict(self, x_path: Optional[str] = None) -> dict:
        return {
            "x_path": x_path,
            "residual": self.residual_float(),
            "residual_ok": self.residual_ok,
            "params": self.params,
            "timings": self.timings,
            "word_ledger": self.word_ledger,
        }


PERTURB_SCALE_MODES = ("figure", "proof")


def lea(a: SparseMatrix, b: DenseMatrix, kappa: float, eps: float, seed: int,
        m: Optional[int] = None, omega: float = 2.372864,
        perturb_scale_mode: str = "figure",
        perturb_prob_coeff: float = 1.0) -> SolveReport:
    """Approximately solve A x = b given a condition-number bound.

    Returns x with ||A x - P b||_2 <= sqrt(eps) ||P b||_2 (P the column
    space projector; equal to b for invertible square A) when the
    spectral assumptions hold; the report flags the measured residual
    either way.  kappa must upper-bound sigma_max/sigma_min.
    """
    if kappa < 1.0 or eps <= 0 or eps >= 1.0:
        raise ValueError("need kappa >= 1 and 0 < eps < 1")
    if perturb_scale_mode not in PERTURB_SCALE_MODES:
        raise ValueError(f"perturb_scale_mode must be one of "
                         f"{PERTURB_SCALE_MODES}")
    n = max(a.rows, a.cols)
    timings: Dict[str, float] = {}
    stream = SeedStream(seed, "lea")
    t0 = time.time()
    abits = alpha_bits_for(n, kappa, eps)
    if m is None:
        m = plan_m(n, max(a.nnz, n), omega).m
    while m > 1 and n // m - PAD_COEFF * m < 1:
        m -= 1
    L = frac_budget_for(m, abits)
    theta = a.max_entry_magnitude()
    if theta.is_zero():
        raise SingularMatrixError("zero matrix")
    # scale coefficient 1/(n^4 theta^2), one fixed rounded value
    denom = FixedPoint(n, 0)
    n4 = FixedPoint(int(n) ** 4, 0)
    c_scale = fp_div(FixedPoint(1, 0), n4 * theta * theta, L + 2)
    # sparse symmetric perturbation
    if perturb_scale_mode == "figure":
        sigma_f = eps / (float(n) ** 10 * kappa ** 2)
    else:
        sigma_f = eps / (float(n) ** 4 * kappa)
    sigma = FixedPoint.from_float(sigma_f, L) if sigma_f > 0 else \
        FixedPoint.zero()
    p = min(1.0, perturb_prob_coeff * math.log(n) *
            math.log(kappa / eps) / n)
    r_noise = perturb_symmetric(SparseMatrix.zero(n, n), p, sigma,
                                stream.substream("perturb"), frac_out=L)
    timings["perturb"] = time.time() - t0
    at = a.transpose()

    def matvec(x: DenseMatrix) -> DenseMatrix:
        core = sparse_matvec(at, sparse_matvec(a, x)).scale(c_scale)
        noise = sparse_matvec(r_noise, x)
        return (core + noise).round_to(max(L, x.frac))

    t0 = time.time()
    op = block_krylov(matvec, n, abits, m, stream.substream("krylov"))
    timings["build"] = time.time() - t0
    ledger = dict(op.ledger)
    if sigma.sign() > 0:
        ledger["perturb"] = r_noise.frac
    t0 = time.time()
    atb = sparse_matvec(at, b)
    x = op.apply(atb).scale(c_scale).round_to(L)
    ledger["solution"] = x.frac
    timings["apply"] = time.time() - t0
    # exact fixed-point residual against b (square-system contract)
    resid = sparse_matvec(a, x) - b
    resid_sq = resid.frobenius_norm_sq()
    rhs_sq = b.frobenius_norm_sq()
    eps_fp = FixedPoint.from_float(eps, 2 * L)
    ok = resid_sq.compare(eps_fp * rhs_sq) <= 0
    params = {"n": n, "m": m, "s": op.padded.kspace.s, "r": op.padded.r,
              "L": L, "alpha_bits": abits, "seed": seed, "epsilon": eps,
              "kappa": kappa, "perturb_scale_mode": perturb_scale_mode}
    return SolveReport(x, resid_sq, rhs_sq, ok, params, timings, ledger)
