"""Dominance check for the degree-4 covariants on one fiber.

Forms are sums of powers of linear forms, sum_t a_t L_t^d.  The covariant is
the symbolic expression

    sum over ordered quadruples  a a a a * I(L, L, L, L)^n * (L L L L)^w

with I the product of the four 3x3 brackets, n = (d - w) / 3, w = 1 for the
quartic-valued case (d = 1 mod 3) and w = 2 for the octic-valued case
(d = 2 mod 3).  Fiber points f(c) + g come from Lagrange interpolation in the
pencil spanned by x = x1 and y = lam*x2 + mu*x3.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from fractions import Fraction
from math import factorial
from typing import Sequence

import numba
import numpy as np
import sympy

from . import ranklab
from .ffcore import DEFAULT_PRIME, SampleStream

log = logging.getLogger(__name__)

PASS = "PASS"
INCONCLUSIVE = "INCONCLUSIVE"
DEFAULT_G_TERMS = 20
G_TERMS_STEP = 10
MAX_ESCALATIONS = 2


class DuplicateNode(ValueError):
    pass


class CollidingC(ValueError):
    pass


LinForm = tuple[int, int, int]


# ---------------------------------------------------------------------------
# monomials and ternary forms


def monomials(g: int) -> list[tuple[int, int, int]]:
    """Exponent triples of degree g in descending lexicographic order."""
    return [(i, j, g - i - j) for i in range(g, -1, -1) for j in range(g - i, -1, -1)]


def _mono_index(g: int) -> np.ndarray:
    # idx[i, j] = position of x1^i x2^j x3^(g-i-j)
    idx = np.full((g + 1, g + 1), -1, dtype=np.int64)
    for k, (i, j, _) in enumerate(monomials(g)):
        idx[i, j] = k
    return idx


@dataclass
class TernaryForm:
    degree: int
    coeffs: np.ndarray
    p: int

    def __post_init__(self) -> None:
        self.coeffs = np.asarray(self.coeffs, dtype=np.int64) % self.p
        n = (self.degree + 1) * (self.degree + 2) // 2
        if self.coeffs.shape != (n,):
            raise ValueError(f"degree {self.degree} form needs {n} coefficients, got {self.coeffs.shape}")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TernaryForm):
            return NotImplemented
        return self.degree == other.degree and self.p == other.p and np.array_equal(self.coeffs, other.coeffs)

    def is_zero(self) -> bool:
        return not self.coeffs.any()

    def scale(self, s: int) -> "TernaryForm":
        return TernaryForm(self.degree, self.coeffs * (s % self.p) % self.p, self.p)

    def __add__(self, other: "TernaryForm") -> "TernaryForm":
        return TernaryForm(self.degree, (self.coeffs + other.coeffs) % self.p, self.p)

    def __sub__(self, other: "TernaryForm") -> "TernaryForm":
        return TernaryForm(self.degree, (self.coeffs - other.coeffs) % self.p, self.p)

    def substitute(self, A: Sequence[Sequence[int]]) -> "TernaryForm":
        """The form x -> F(A x)."""
        p, g = self.p, self.degree
        rows = [[int(a) % p for a in r] for r in A]
        idx = _mono_index(g)
        out = np.zeros_like(self.coeffs)
        for k, (i, j, l) in enumerate(monomials(g)):
            c = int(self.coeffs[k])
            if c == 0:
                continue
            poly = {(0, 0): c}
            for r, times in zip(rows, (i, j, l)):
                for _ in range(times):
                    nxt: dict[tuple[int, int], int] = {}
                    for (a, b), v in poly.items():
                        for key, coef in (((a + 1, b), r[0]), ((a, b + 1), r[1]), ((a, b), r[2])):
                            if coef:
                                nxt[key] = (nxt.get(key, 0) + v * coef) % p
                    poly = nxt
            for (a, b), v in poly.items():
                out[idx[a, b]] += v
        return TernaryForm(g, out % p, p)


# ---------------------------------------------------------------------------
# power sums


@dataclass
class PowerSumForm:
    """sum_t coeff_t * L_t^degree."""

    degree: int
    terms: list[tuple[int | Fraction, LinForm]]

    def __post_init__(self) -> None:
        if self.degree < 1:
            raise ValueError("degree must be positive")
        if not self.terms:
            raise ValueError("a power sum needs at least one term")

    def __add__(self, other: "PowerSumForm") -> "PowerSumForm":
        if self.degree != other.degree:
            raise ValueError("degree mismatch")
        return PowerSumForm(self.degree, list(self.terms) + list(other.terms))

    def arrays(self, p: int) -> tuple[np.ndarray, np.ndarray]:
        L = np.array([[int(x) % p for x in lf] for _, lf in self.terms], dtype=np.int64)
        a = np.array([_to_fp(c, p) for c, _ in self.terms], dtype=np.int64)
        return L, a

    def expand(self, p: int | None = None) -> dict[tuple[int, int, int], int | Fraction]:
        """Dense expansion, exactly (p None) or mod p; only nonzero coefficients are kept."""
        d = self.degree
        monos = monomials(d)
        mult = np.array([factorial(d) // (factorial(i) * factorial(j) * factorial(k)) for i, j, k in monos], dtype=object)
        ex = np.array(monos, dtype=np.int64)
        total = np.zeros(len(monos), dtype=object)
        for c, lf in self.terms:
            pw = []
            for coord in range(3):
                base = lf[coord] if p is None else int(lf[coord]) % p
                col = [1]
                for _ in range(d):
                    col.append(col[-1] * base if p is None else col[-1] * base % p)
                pw.append(np.array(col, dtype=object))
            cc = c if p is None else _to_fp(c, p)
            total = total + cc * (pw[0][ex[:, 0]] * pw[1][ex[:, 1]] * pw[2][ex[:, 2]])
            if p is not None:
                total = total % p
        total = total * mult
        if p is not None:
            total = total % p
        return {m: v for m, v in zip(monos, total) if v != 0}


def _to_fp(c, p: int) -> int:
    if isinstance(c, Fraction):
        return c.numerator % p * pow(c.denominator % p, p - 2, p) % p
    return int(c) % p


# ---------------------------------------------------------------------------
# interpolation data


@dataclass
class InterpolationData:
    b: tuple[int, ...]
    lam: int
    mu: int
    c: int
    p: int | None = None

    def __post_init__(self) -> None:
        norm = (lambda z: z % self.p) if self.p else (lambda z: z)
        if len(set(norm(x) for x in self.b)) != len(self.b):
            raise DuplicateNode(f"interpolation nodes are not distinct: {self.b}")
        if norm(self.c) in {norm(x) for x in self.b}:
            raise CollidingC(f"c = {self.c} coincides with a node")
        if norm(self.lam) == 0 and norm(self.mu) == 0:
            raise ValueError("(lam, mu) must not both vanish")

    @property
    def K(self) -> int:
        return len(self.b)

    def lines(self) -> list[LinForm]:
        return [(bi, self.lam, self.mu) for bi in self.b]

    def base_line(self) -> LinForm:
        return (self.c, self.lam, self.mu)


def interp_weights(b: Sequence[int], c: int, p: int | None = None) -> list:
    """Lagrange cardinal polynomials on the nodes b, evaluated at c."""
    K = len(b)
    if p is not None:
        b = [x % p for x in b]
        c %= p
    if len(set(b)) != K:
        raise DuplicateNode(f"interpolation nodes are not distinct: {list(b)}")
    if c in set(b):
        raise CollidingC(f"c = {c} coincides with a node")
    out = []
    for i in range(K):
        num, den = 1, 1
        for j in range(K):
            if j != i:
                num *= c - b[j]
                den *= b[i] - b[j]
        if p is None:
            out.append(Fraction(num, den))
        else:
            out.append(num % p * pow(den % p, p - 2, p) % p)
    return out


def case_of(d: int) -> tuple[int, int, int]:
    """(n, w, K) for degree d."""
    if d % 3 == 1:
        n, w = (d - 1) // 3, 1
        return n, w, 2 * n + 3
    if d % 3 == 2:
        n, w = (d - 2) // 3, 2
        return n, w, 2 * n + 5
    raise ValueError(f"d = {d} is divisible by 3; no covariant is used there")


def build_fc(data: InterpolationData, d: int) -> PowerSumForm:
    """f(c) = sum_i p_i(c) l_i^d - (c x + y)^d, divisible by x^K."""
    if d < data.K:
        raise ValueError(f"need d >= K, got d = {d}, K = {data.K}")
    w = interp_weights(data.b, data.c, data.p)
    terms = [(wi, li) for wi, li in zip(w, data.lines())]
    terms.append((-1, data.base_line()))
    return PowerSumForm(d, terms)


# ---------------------------------------------------------------------------
# compiled kernels


@numba.njit(cache=True)
def _det3(L, i, j, k, p):
    a = L[i, 0] * ((L[j, 1] * L[k, 2] - L[j, 2] * L[k, 1]) % p)
    b = L[i, 1] * ((L[j, 0] * L[k, 2] - L[j, 2] * L[k, 0]) % p)
    c = L[i, 2] * ((L[j, 0] * L[k, 1] - L[j, 1] * L[k, 0]) % p)
    return ((a % p) - (b % p) + (c % p)) % p


@numba.njit(cache=True)
def _bracket_I(L, i, j, k, l, p):
    v = _det3(L, i, j, k, p)
    if v == 0:
        return 0
    v = v * _det3(L, i, j, l, p) % p
    if v == 0:
        return 0
    v = v * _det3(L, i, k, l, p) % p
    if v == 0:
        return 0
    return v * _det3(L, j, k, l, p) % p


@numba.njit(cache=True)
def _powm(b, n, p):
    r = 1
    while n > 0:
        if n & 1:
            r = r * b % p
        b = b * b % p
        n >>= 1
    return r


@numba.njit(cache=True)
def _accumulate_product(L, quad, w, scal, p, idx, buf, tmp, out):
    # out += scal * prod_{t in quad} L_t^w, using a (g+1)^2 scratch grid keyed by (exp x1, exp x2)
    g = 4 * w
    for a in range(g + 1):
        for b in range(g + 1):
            buf[a, b] = 0
    buf[0, 0] = scal
    deg = 0
    for _ in range(w):
        for q in range(4):
            t = quad[q]
            l0, l1, l2 = L[t, 0], L[t, 1], L[t, 2]
            for a in range(deg + 2):
                for b in range(deg + 2 - a):
                    s = 0
                    if b <= deg - a:
                        s += l2 * buf[a, b]
                    if a > 0 and b <= deg + 1 - a:
                        s += l0 * buf[a - 1, b]
                    if b > 0:
                        s += l1 * buf[a, b - 1]
                    tmp[a, b] = s % p
            deg += 1
            for a in range(deg + 1):
                for b in range(deg + 1 - a):
                    buf[a, b] = tmp[a, b]
    for a in range(g + 1):
        for b in range(g + 1 - a):
            k = idx[a, b]
            out[k] = (out[k] + buf[a, b]) % p


@numba.njit(cache=True)
def _quad_sum(L, coef, n, w, p, idx, out):
    m = L.shape[0]
    g = 4 * w
    buf = np.zeros((g + 1, g + 1), dtype=np.int64)
    tmp = np.zeros((g + 1, g + 1), dtype=np.int64)
    quad = np.zeros(4, dtype=np.int64)
    for t1 in range(m):
        for t2 in range(m):
            if t2 == t1:
                continue
            for t3 in range(m):
                if t3 == t1 or t3 == t2:
                    continue
                for t4 in range(m):
                    if t4 == t1 or t4 == t2 or t4 == t3:
                        continue
                    v = _bracket_I(L, t1, t2, t3, t4, p)
                    if v == 0:
                        continue
                    s = _powm(v, n, p)
                    s = s * coef[t1] % p * coef[t2] % p * coef[t3] % p * coef[t4] % p
                    if s == 0:
                        continue
                    quad[0] = t1
                    quad[1] = t2
                    quad[2] = t3
                    quad[3] = t4
                    _accumulate_product(L, quad, w, s, p, idx, buf, tmp, out)


@numba.njit(cache=True)
def _cross_sum(L, coef, n_first, n, w, p, idx, out):
    # rows [0, n_first) are the single slot; the ordered distinct triple ranges over the rest
    m = L.shape[0]
    g = 4 * w
    buf = np.zeros((g + 1, g + 1), dtype=np.int64)
    tmp = np.zeros((g + 1, g + 1), dtype=np.int64)
    quad = np.zeros(4, dtype=np.int64)
    for i in range(n_first):
        if coef[i] == 0:
            continue
        for j in range(n_first, m):
            for k in range(n_first, m):
                if k == j:
                    continue
                for l in range(n_first, m):
                    if l == j or l == k:
                        continue
                    v = _bracket_I(L, i, j, k, l, p)
                    if v == 0:
                        continue
                    s = _powm(v, n, p)
                    s = s * coef[i] % p * coef[j] % p * coef[k] % p * coef[l] % p
                    if s == 0:
                        continue
                    quad[0] = i
                    quad[1] = j
                    quad[2] = k
                    quad[3] = l
                    _accumulate_product(L, quad, w, s, p, idx, buf, tmp, out)


# ---------------------------------------------------------------------------
# public evaluation


def bracket_I(L1: LinForm, L2: LinForm, L3: LinForm, L4: LinForm, p: int | None = None) -> int:
    """(123)(124)(134)(234); exact over Z when p is None."""
    M = [L1, L2, L3, L4]

    def det(i, j, k):
        a, b, c = M[i], M[j], M[k]
        return (
            a[0] * (b[1] * c[2] - b[2] * c[1])
            - a[1] * (b[0] * c[2] - b[2] * c[0])
            + a[2] * (b[0] * c[1] - b[1] * c[0])
        )

    v = det(0, 1, 2) * det(0, 1, 3) * det(0, 2, 3) * det(1, 2, 3)
    return v if p is None else v % p


def _check_degree(d: int, n: int, w: int) -> None:
    if w not in (1, 2):
        raise ValueError("w must be 1 or 2")
    if d != 3 * n + w:
        raise ValueError(f"form degree {d} does not match 3n + w = {3 * n + w}")


def cov_quad(fm: PowerSumForm, n: int, w: int, p: int = DEFAULT_PRIME) -> TernaryForm:
    _check_degree(fm.degree, n, w)
    L, a = fm.arrays(p)
    out = np.zeros((4 * w + 1) * (4 * w + 2) // 2, dtype=np.int64)
    _quad_sum(L, a, n, w, p, _mono_index(4 * w), out)
    return TernaryForm(4 * w, out, p)


CROSS_MULTIPLICITY = 4  # positions a single pencil line can take in an ordered quadruple


def eval_cov_fiber(
    data: InterpolationData,
    g: PowerSumForm,
    n: int,
    w: int,
    p: int = DEFAULT_PRIME,
    cross_multiplicity: int = CROSS_MULTIPLICITY,
    g_cov: TernaryForm | None = None,
) -> TernaryForm:
    """Covariant of f(c) + g from the split: cross terms plus the covariant of -(cx+y)^d + g.

    Quadruples with two or more pencil lines cancel by the interpolation
    identities, so only one line l_i ever meets three terms of g.
    """
    d = g.degree
    _check_degree(d, n, w)
    if d < data.K:
        raise ValueError(f"need d >= K, got d = {d}, K = {data.K}")
    weights = interp_weights(data.b, data.c, p)
    lines = np.array([[x % p for x in lf] for lf in data.lines()], dtype=np.int64)
    Lg, ag = g.arrays(p)
    L = np.vstack([lines, Lg])
    coef = np.concatenate([np.array(weights, dtype=np.int64), ag])
    idx = _mono_index(4 * w)
    cross = np.zeros((4 * w + 1) * (4 * w + 2) // 2, dtype=np.int64)
    _cross_sum(L, coef, data.K, n, w, p, idx, cross)
    cross_part = TernaryForm(4 * w, cross * (cross_multiplicity % p) % p, p)
    if g_cov is None:
        rest = PowerSumForm(d, [(-1, data.base_line())] + list(g.terms))
        return cross_part + cov_quad(rest, n, w, p)
    # same value: the quadruples of -(cx+y)^d + g are those of g plus the ones using the base line once
    Lh = np.vstack([np.array([[x % p for x in data.base_line()]], dtype=np.int64), Lg])
    ch = np.concatenate([np.array([p - 1], dtype=np.int64), ag])
    base = np.zeros_like(cross)
    _cross_sum(Lh, ch, 1, n, w, p, idx, base)
    return cross_part + TernaryForm(4 * w, base * 4 % p, p) + g_cov


# ---------------------------------------------------------------------------
# span check


@dataclass
class SpanReport:
    d: int
    case_tag: str
    prime: int
    seed: int
    samples: int
    g_terms: int
    rank: int
    needed: int
    status: str
    wall_seconds: float
    escalations: list[dict] = field(default_factory=list)

    def to_json(self, timings: bool = True) -> dict:
        out = {
            "d": self.d,
            "caseTag": self.case_tag,
            "prime": self.prime,
            "seed": self.seed,
            "samples": self.samples,
            "gTerms": self.g_terms,
            "rank": self.rank,
            "needed": self.needed,
            "status": self.status,
            "escalations": self.escalations,
        }
        if timings:
            out["wallSeconds"] = round(self.wall_seconds, 3)
        return out


def span_case(d: int) -> tuple[str, int, int, int, int]:
    """(tag, n, w, K, target dimension), rejecting degrees outside the method's range."""
    if d % 3 == 1 and d >= 19:
        n, w, K = case_of(d)
        return "S", n, w, K, 15
    if d % 3 == 2 and d >= 35:
        n, w, K = case_of(d)
        return "T", n, w, K, 45
    raise ValueError(f"d = {d} is outside the covariant method's range (d = 1 mod 3, d >= 19 or d = 2 mod 3, d >= 35)")


def _distinct(stream: SampleStream, count: int, p: int, avoid: set[int]) -> list[int]:
    out: list[int] = []
    seen = set(avoid)
    pos = 0
    while len(out) < count:
        for x in stream.elements(pos, 2 * count + 4, p):
            x = int(x)
            if x not in seen:
                seen.add(x)
                out.append(x)
                if len(out) == count:
                    break
        pos += 2 * count + 4
    return out


def sample_fiber_data(d: int, K: int, p: int, seed: int, index: int) -> InterpolationData:
    s = SampleStream(seed, f"cov/d{d}/sample{index}")
    b = _distinct(s, K + 1, p, set())
    lam, mu = (int(x) for x in SampleStream(seed, f"cov/d{d}/pencil{index}").vectors(1, p)[0][0][:2])
    if lam == 0 and mu == 0:
        lam = 1
    return InterpolationData(tuple(b[:K]), lam, mu, b[K], p)


def fixed_g(d: int, g_terms: int, p: int, seed: int) -> PowerSumForm:
    vs = SampleStream(seed, f"cov/d{d}/g{g_terms}").vectors(g_terms, p)[0]
    return PowerSumForm(d, [(1, tuple(int(x) for x in v)) for v in vs])


def span_check(
    d: int,
    prime: int = DEFAULT_PRIME,
    seed: int = 0,
    samples: int | None = None,
    g_terms: int = DEFAULT_G_TERMS,
    max_escalations: int = MAX_ESCALATIONS,
    workers: int = 1,
) -> SpanReport:
    tag, n, w, K, target = span_case(d)
    if samples is None:
        samples = 2 * target
    if samples < target:
        raise ValueError(f"samples = {samples} cannot reach rank {target}")
    if prime <= d or not sympy.isprime(prime):
        raise ValueError(f"prime {prime} must be a prime larger than d")
    t0 = time.perf_counter()
    history = []
    gt = g_terms
    for esc in range(max_escalations + 1):
        g = fixed_g(d, gt, prime, seed)
        g_cov = cov_quad(g, n, w, prime)
        rows = np.zeros((samples, (4 * w + 1) * (4 * w + 2) // 2), dtype=np.int64)
        ts = time.perf_counter()
        for s in range(samples):
            data = sample_fiber_data(d, K, prime, seed, s)
            rows[s] = eval_cov_fiber(data, g, n, w, prime, g_cov=g_cov).coeffs
        log.info("stage=fill case=%s d=%d samples=%d gTerms=%d seconds=%.3f", tag, d, samples, gt, time.perf_counter() - ts)
        rank = ranklab.rank_fp(ranklab.DenseMatrixFp(prime, rows), workers=workers).rank
        history.append({"gTerms": gt, "rank": rank})
        if rank == target or esc == max_escalations:
            break
        gt += G_TERMS_STEP
    return SpanReport(
        d=d,
        case_tag=tag,
        prime=prime,
        seed=seed,
        samples=samples,
        g_terms=gt,
        rank=rank,
        needed=target,
        status=PASS if rank == target else INCONCLUSIVE,
        wall_seconds=time.perf_counter() - t0,
        escalations=history[:-1],
    )
