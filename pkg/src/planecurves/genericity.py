"""Finite-field certificate for the genericity condition of a double-bundle candidate.

Roles: U = V(e, 0) is swept by pure powers u^e, V = V(0, d) by v^d, and W
is the image of the projector onto the chosen components.  A sample point
x0 = sum xi_j v_j^d gives the matrix A (rows u_s^e, columns evaluation
functionals); a one-dimensional left kernel of A yields y0, whose matrix N
over fresh v' must again reach rank dim W.  Finally psi(x0, y0) is evaluated
at fresh points and must vanish.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from . import ranklab
from .ffcore import DEFAULT_PRIME, ChiTable, PsiContraction, SampleStream, check_admissible, dot3, powmod_array, reduce_chi
from .projops import BiForm, apply_projector, chi_poly, projector_coeffs, psi_exact
from .rep import Candidate

log = logging.getLogger(__name__)

ZERO_CHECK_POINTS = 64
DEFAULT_MARGIN = 32
DEFAULT_MAX_RETRIES = 3

PASS = "PASS"
INCONCLUSIVE = "INCONCLUSIVE"


class Evaluator(Protocol):
    """What run_check needs from the bilinear map."""

    p: int

    def basis_rank(self, us: np.ndarray, pts: np.ndarray, workers: int) -> int: ...

    def contraction(
        self, us: np.ndarray, vs: np.ndarray, coef: np.ndarray, pcov: np.ndarray, qvec: np.ndarray, mode: str
    ) -> tuple[int, int, Callable[[int, int], np.ndarray]]: ...


@dataclass
class PsiEvaluator:
    """The real psi, through a reduced chi table."""

    tbl: ChiTable

    @property
    def p(self) -> int:
        return self.tbl.p

    def basis_rank(self, us: np.ndarray, pts: np.ndarray, workers: int) -> int:
        # the u_s^e are independent iff the matrix (u_s(p_k))^e has full row rank
        mat = powmod_array(dot3(us, pts, self.p), self.tbl.e, self.p)
        return ranklab.rank_fp(ranklab.DenseMatrixFp(self.p, mat), workers=workers).rank

    def contraction(self, us, vs, coef, pcov, qvec, mode):
        pc = PsiContraction(self.tbl, us, vs, coef, pcov, qvec, mode)
        return pc.rows, pc.cols, pc.block


@dataclass
class GenericityInstance:
    candidate: Candidate
    p: int = DEFAULT_PRIME
    seed: int = 0
    n_points: int | None = None
    t_terms: int | None = None
    margin: int = DEFAULT_MARGIN
    max_retries: int = DEFAULT_MAX_RETRIES
    workers: int = 1
    checkpoint_dir: str | None = None

    def __post_init__(self) -> None:
        self.candidate.validate()
        dim_w = self.candidate.dim_W
        if self.n_points is None:
            self.n_points = dim_w + self.margin
        if self.t_terms is None:
            self.t_terms = dim_w + 33
        if self.n_points < dim_w + self.margin:
            raise ValueError(f"n_points = {self.n_points} below dim W + margin = {dim_w + self.margin}")
        # t_terms = 0 is accepted on purpose: it is the degenerate x0 = 0 probe
        if self.t_terms < 0:
            raise ValueError("t_terms must be non-negative")
        if self.max_retries < 0:
            raise ValueError("max_retries must be non-negative")


@dataclass
class Attempt:
    index: int
    t_terms: int
    basis_resamples: int
    rank_A: int
    kernel_dim: int
    rank_N: int | None
    zero_check: bool | None
    seconds: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "index": self.index,
            "tTerms": self.t_terms,
            "basisResamples": self.basis_resamples,
            "rankA": self.rank_A,
            "kernelDim": self.kernel_dim,
            "rankN": self.rank_N,
            "zeroCheck": self.zero_check,
        }


@dataclass
class Verdict:
    candidate: Candidate
    prime: int
    seed: int
    n_points: int
    t_terms: int
    rank_A: int
    kernel_dim: int
    rank_N: int | None
    zero_check: bool | None
    status: str
    retries: int
    attempts: list[Attempt]
    wall_seconds: float
    error_bound: float

    def __post_init__(self) -> None:
        ok = (
            self.rank_A == self.candidate.dim_W
            and self.kernel_dim == 1
            and self.rank_N == self.candidate.dim_W
            and self.zero_check is True
        )
        if (self.status == PASS) != ok:
            raise AssertionError(f"status {self.status} inconsistent with ranks and zero check")

    def to_json(self, timings: bool = True) -> dict:
        c = self.candidate
        out = {
            "d": c.d,
            "e": c.e,
            "components": list(c.components),
            "dimW": c.dim_W,
            "prime": self.prime,
            "seed": self.seed,
            "nPoints": self.n_points,
            "tTerms": self.t_terms,
            "rankA": self.rank_A,
            "kernelDim": self.kernel_dim,
            "rankN": self.rank_N,
            "zeroCheck": self.zero_check,
            "status": self.status,
            "retries": self.retries,
            "zeroCheckErrorBound": self.error_bound,
            "attempts": [a.to_json() for a in self.attempts],
        }
        if timings:
            out["wallSeconds"] = round(self.wall_seconds, 3)
            out["stageSeconds"] = [{k: round(v, 3) for k, v in a.seconds.items()} for a in self.attempts]
        return out


def _stream(inst: GenericityInstance, attempt: int, what: str) -> SampleStream:
    c = inst.candidate
    return SampleStream(inst.seed, f"db/d{c.d}/e{c.e}/{what}/attempt{attempt}")


def _vectors(inst, attempt, what, count, p) -> np.ndarray:
    return _stream(inst, attempt, what).vectors(count, p)[0]


def _ckpt(inst: GenericityInstance, attempt: int, what: str) -> Path | None:
    if inst.checkpoint_dir is None:
        return None
    c = inst.candidate
    d = Path(inst.checkpoint_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d / f"db-d{c.d}-e{c.e}-s{inst.seed}-a{attempt}-{what}.crkp"


def _fill(rows: int, cols: int, block, p: int, workers: int, stage: str, times: dict) -> ranklab.DenseMatrixFp:
    t0 = time.perf_counter()
    m = ranklab.fill_blocks(rows, cols, block, p, workers)
    times[stage] = time.perf_counter() - t0
    log.info("stage=fill matrix=%s rows=%d cols=%d seconds=%.3f", stage, rows, cols, times[stage])
    return m


def _attempt(inst: GenericityInstance, ev: Evaluator, attempt: int, t_terms: int) -> Attempt:
    c = inst.candidate
    p = ev.p
    dim_u, dim_w, n = c.dim_U, c.dim_W, inst.n_points
    times: dict[str, float] = {}

    # (1) x0 = sum xi_j v_j^d
    vs = _vectors(inst, attempt, "x0-covectors", t_terms, p)
    xi = _stream(inst, attempt, "x0-coefficients").nonzero_elements(t_terms, p)[0]

    # (2) u_s^e must form a basis of U
    resamples = 0
    while True:
        us = _vectors(inst, attempt, f"u-basis/{resamples}", dim_u, p)
        pts = _vectors(inst, attempt, f"u-basis-points/{resamples}", dim_u + inst.margin, p)
        t0 = time.perf_counter()
        r = ev.basis_rank(us, pts, inst.workers)
        times["basis"] = time.perf_counter() - t0
        if r == dim_u:
            break
        resamples += 1
        if resamples > 8:
            raise RuntimeError(f"could not sample a basis of U after {resamples} tries (rank {r} < {dim_u})")

    # (3) A: rows sweep U, columns are evaluation functionals
    pa = _vectors(inst, attempt, "A-points-p", n, p)
    qa = _vectors(inst, attempt, "A-points-q", n, p)
    rows, cols, block = ev.contraction(us, vs, xi, pa, qa, "v")
    A = _fill(rows, cols, block, p, inst.workers, "A", times)

    # (4) rank and left kernel
    t0 = time.perf_counter()
    rank_a = ranklab.rank_fp(A, workers=inst.workers, checkpoint_path=_ckpt(inst, attempt, "A")).rank
    times["rankA"] = time.perf_counter() - t0
    if rank_a > dim_w:
        raise AssertionError(f"rank A = {rank_a} exceeds dim W = {dim_w}; the map cannot reach beyond W")
    kernel_dim = dim_u - rank_a
    if rank_a != dim_w:
        log.info("stage=kernel rankA=%d dimW=%d result=short", rank_a, dim_w)
        return Attempt(attempt, t_terms, resamples, rank_a, kernel_dim, None, None, times)
    t0 = time.perf_counter()
    ker = ranklab.nullspace_fp(A.transpose(), workers=inst.workers)
    times["kernel"] = time.perf_counter() - t0
    if len(ker) != 1:
        raise AssertionError(f"left kernel has dimension {len(ker)}, expected 1")
    eta = ker[0]
    log.info("stage=kernel rankA=%d kernelDim=1 seconds=%.3f", rank_a, times["kernel"])

    # (5) N: fresh v' and fresh points, contracted against y0 = sum eta_s u_s^e
    vn = _vectors(inst, attempt, "N-covectors", n, p)
    pn = _vectors(inst, attempt, "N-points-p", n, p)
    qn = _vectors(inst, attempt, "N-points-q", n, p)
    rows, cols, block = ev.contraction(us, vn, eta, pn, qn, "u")
    N = _fill(rows, cols, block, p, inst.workers, "N", times)
    t0 = time.perf_counter()
    rank_n = ranklab.rank_fp(N, workers=inst.workers, checkpoint_path=_ckpt(inst, attempt, "N")).rank
    times["rankN"] = time.perf_counter() - t0

    # (6) psi(x0, y0) at fresh points
    t0 = time.perf_counter()
    pz = _vectors(inst, attempt, "zero-points-p", ZERO_CHECK_POINTS, p)
    qz = _vectors(inst, attempt, "zero-points-q", ZERO_CHECK_POINTS, p)
    rows, cols, block = ev.contraction(us, vs, xi, pz, qz, "v")
    Z = block(0, rows)
    vals = ranklab.matmul_mod(eta[None, :], Z, p)[0]
    zero_ok = not vals.any()
    times["verify"] = time.perf_counter() - t0
    log.info("stage=verify rankN=%d zeroCheck=%s seconds=%.3f", rank_n, zero_ok, times["verify"])
    return Attempt(attempt, t_terms, resamples, rank_a, kernel_dim, rank_n, zero_ok, times)


def run_check(inst: GenericityInstance, evaluator: Evaluator | None = None) -> Verdict:
    c = inst.candidate
    t_start = time.perf_counter()
    if evaluator is None:
        chi = chi_poly(c.e, c.d, c.components)
        check_admissible(chi, inst.p)
        t0 = time.perf_counter()
        tbl = reduce_chi(chi, inst.p)
        log.info("stage=chi e=%d f=%d prime=%d seconds=%.3f", c.e, c.d, inst.p, time.perf_counter() - t0)
        evaluator = PsiEvaluator(tbl)
    elif isinstance(evaluator, PsiEvaluator):
        t = evaluator.tbl
        if (t.e, t.f) != (c.e, c.d) or (t.components and tuple(t.components) != tuple(c.components)):
            raise ValueError(f"chi data for ({t.e}, {t.f}, {t.components}) does not match candidate {c.to_json()}")
    if evaluator.p != inst.p:
        raise ValueError(f"evaluator works mod {evaluator.p}, instance asks for {inst.p}")

    attempts: list[Attempt] = []
    t_terms = inst.t_terms
    for k in range(inst.max_retries + 1):
        a = _attempt(inst, evaluator, k, t_terms)
        attempts.append(a)
        if a.rank_A == c.dim_W and a.rank_N == c.dim_W and a.zero_check:
            break
        t_terms = max(1, 2 * t_terms)
    last = attempts[-1]
    passed = last.rank_A == c.dim_W and last.kernel_dim == 1 and last.rank_N == c.dim_W and last.zero_check is True
    return Verdict(
        candidate=c,
        prime=inst.p,
        seed=inst.seed,
        n_points=inst.n_points,
        t_terms=last.t_terms,
        rank_A=last.rank_A,
        kernel_dim=last.kernel_dim,
        rank_N=last.rank_N,
        zero_check=last.zero_check,
        status=PASS if passed else INCONCLUSIVE,
        retries=len(attempts) - 1,
        attempts=attempts,
        wall_seconds=time.perf_counter() - t_start,
        error_bound=float((Fraction(2 * c.d, inst.p)) ** ZERO_CHECK_POINTS),
    )


# ---------------------------------------------------------------------------
# transpose consistency


def _random_int_vectors(rng: np.random.Generator, count: int, lo: int = -5, hi: int = 6) -> list[tuple[int, ...]]:
    out = []
    while len(out) < count:
        v = tuple(int(x) for x in rng.integers(lo, hi, size=3))
        if any(v):
            out.append(v)
    return out


def transpose_consistency(
    r: int, s: int, t: int, e: int = 1, f: int = 1, components=(1,), seed: int = 0
) -> bool:
    """Check (N^i)_{kj} = (M^k)_{ij} for psi on u_i^e (x) v_j^f at points k.

    M^k is built by projecting the bihomogeneous tensor u^e (x) v^f and
    evaluating it; N^i is built from the closed chi formula with the roles of
    the indices exchanged.  Both are exact rationals.
    """
    if e + f > 6:
        raise ValueError("transpose_consistency is meant for e + f <= 6")
    rng = np.random.default_rng(seed)
    us = _random_int_vectors(rng, r)
    vs = _random_int_vectors(rng, s)
    pts = list(zip(_random_int_vectors(rng, t), _random_int_vectors(rng, t)))
    comps = tuple(components)
    mus = [projector_coeffs(e, f, i).mu for i in comps]

    M = []
    for pk, qk in pts:
        mk = []
        for u in us:
            row = []
            for v in vs:
                tensor = BiForm.from_powers(u, v, e, f)
                proj = BiForm.zero(e, f)
                for mu in mus:
                    proj = proj + apply_projector(tensor, mu)
                row.append(Fraction(proj.evaluate(pk, qk)))
            mk.append(row)
        M.append(mk)

    chi = chi_poly(e, f, comps)
    N = []
    for u in us:
        N.append([[Fraction(psi_exact(chi, u, v, pk, qk)) for v in vs] for pk, qk in pts])

    return all(N[i][k][j] == M[k][i][j] for i in range(r) for j in range(s) for k in range(t))
