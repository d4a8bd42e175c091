"""Exact calculus of the contraction Delta and multiplication delta on S^a (x) D^b.

A :class:`BiForm` is a bihomogeneous polynomial in the symbols e1, e2, e3
(the S side) and x1, x2, x3 (the D side).  The projector onto
V(e - i, f - i) inside S^e (x) D^f is a polynomial in the operators
delta^j Delta^j; :func:`projector_coeffs` computes those coefficients and
:func:`chi_poly` packages them into the binary form that evaluates the
corresponding bilinear map on pure powers.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from fractions import Fraction
from math import factorial
from typing import Iterable, Mapping, Sequence

import sympy

Exp = tuple[int, int, int]
Mono = tuple[Exp, Exp]

_E = ((1, 0, 0), (0, 1, 0), (0, 0, 1))


def _compositions(n: int) -> list[Exp]:
    """Exponent triples of total degree n, lexicographically descending."""
    return [(i, j, n - i - j) for i in range(n, -1, -1) for j in range(n - i, -1, -1)]


class BiForm:
    """Sparse element of S^a (x) D^b with exact rational coefficients."""

    __slots__ = ("a", "b", "terms")

    def __init__(self, a: int, b: int, terms: Mapping[Mono, Fraction | int] | None = None):
        if a < 0 or b < 0:
            raise ValueError("bidegree must be non-negative")
        self.a = a
        self.b = b
        clean: dict[Mono, Fraction | int] = {}
        for (ea, xb), c in (terms or {}).items():
            if sum(ea) != a or sum(xb) != b or min(ea) < 0 or min(xb) < 0:
                raise ValueError(f"monomial {(ea, xb)} does not have bidegree ({a}, {b})")
            if c:
                clean[(tuple(ea), tuple(xb))] = c
        self.terms = clean

    @classmethod
    def zero(cls, a: int, b: int) -> "BiForm":
        return cls(a, b)

    @classmethod
    def one(cls) -> "BiForm":
        return cls(0, 0, {((0, 0, 0), (0, 0, 0)): 1})

    @classmethod
    def monomial(cls, ea: Exp, xb: Exp, coeff: Fraction | int = 1) -> "BiForm":
        return cls(sum(ea), sum(xb), {(tuple(ea), tuple(xb)): coeff})

    @classmethod
    def from_powers(cls, u: Sequence, v: Sequence, a: int, b: int) -> "BiForm":
        """Expand u^a (x) v^b, u a vector (in the e's) and v a covector (in the x's)."""
        left = _power_coeffs(u, a)
        right = _power_coeffs(v, b)
        return cls(a, b, {(ea, xb): ca * cb for ea, ca in left.items() for xb, cb in right.items()})

    @classmethod
    def basis(cls, a: int, b: int) -> list["BiForm"]:
        return [cls.monomial(ea, xb) for ea in _compositions(a) for xb in _compositions(b)]

    def copy(self) -> "BiForm":
        return BiForm(self.a, self.b, self.terms)

    def is_zero(self) -> bool:
        return not self.terms

    def _check_same(self, other: "BiForm") -> None:
        if (self.a, self.b) != (other.a, other.b):
            raise ValueError(f"bidegree mismatch: ({self.a},{self.b}) vs ({other.a},{other.b})")

    def __add__(self, other: "BiForm") -> "BiForm":
        self._check_same(other)
        out = dict(self.terms)
        for m, c in other.terms.items():
            out[m] = out.get(m, 0) + c
        return BiForm(self.a, self.b, out)

    def __sub__(self, other: "BiForm") -> "BiForm":
        return self + other.scale(-1)

    def scale(self, c: Fraction | int) -> "BiForm":
        return BiForm(self.a, self.b, {m: c * v for m, v in self.terms.items()})

    __rmul__ = scale

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BiForm):
            return NotImplemented
        return (self.a, self.b) == (other.a, other.b) and self.terms == other.terms

    def __repr__(self) -> str:
        return f"BiForm({self.a}, {self.b}, {len(self.terms)} terms)"

    def coeff(self, ea: Exp, xb: Exp) -> Fraction | int:
        return self.terms.get((tuple(ea), tuple(xb)), 0)

    def evaluate(self, p: Sequence, q: Sequence):
        """Value at the covector p (pairs with the e's) and the vector q (pairs with the x's)."""
        total = 0
        for (ea, xb), c in self.terms.items():
            total += c * p[0] ** ea[0] * p[1] ** ea[1] * p[2] ** ea[2] * q[0] ** xb[0] * q[1] ** xb[1] * q[2] ** xb[2]
        return total

    def coefficient_vector(self) -> list:
        return [self.coeff(ea, xb) for ea in _compositions(self.a) for xb in _compositions(self.b)]


def _power_coeffs(u: Sequence, n: int) -> dict[Exp, object]:
    out = {}
    for ex in _compositions(n):
        mult = factorial(n) // (factorial(ex[0]) * factorial(ex[1]) * factorial(ex[2]))
        out[ex] = mult * u[0] ** ex[0] * u[1] ** ex[1] * u[2] ** ex[2]
    return out


def apply_Delta(t: BiForm) -> BiForm:
    """sum_i d/de_i (x) d/dx_i."""
    if t.a == 0 or t.b == 0:
        return BiForm.zero(max(t.a - 1, 0), max(t.b - 1, 0))
    out: dict[Mono, Fraction | int] = {}
    for (ea, xb), c in t.terms.items():
        for i in range(3):
            if ea[i] and xb[i]:
                m = (
                    tuple(ea[k] - _E[i][k] for k in range(3)),
                    tuple(xb[k] - _E[i][k] for k in range(3)),
                )
                out[m] = out.get(m, 0) + c * ea[i] * xb[i]
    return BiForm(t.a - 1, t.b - 1, out)


def apply_delta(t: BiForm) -> BiForm:
    """Multiplication by e1 x1 + e2 x2 + e3 x3."""
    out: dict[Mono, Fraction | int] = {}
    for (ea, xb), c in t.terms.items():
        for i in range(3):
            m = (
                tuple(ea[k] + _E[i][k] for k in range(3)),
                tuple(xb[k] + _E[i][k] for k in range(3)),
            )
            out[m] = out.get(m, 0) + c
    return BiForm(t.a + 1, t.b + 1, out)


def apply_delta_Delta_power(t: BiForm, j: int) -> BiForm:
    """delta^j Delta^j t."""
    for _ in range(j):
        t = apply_Delta(t)
    for _ in range(j):
        t = apply_delta(t)
    return t


# ---------------------------------------------------------------------------
# projector coefficients


@dataclass(frozen=True)
class ProjectorCoeffs:
    e: int
    f: int
    i: int
    mu: tuple[Fraction, ...]

    def apply(self, t: BiForm) -> BiForm:
        return apply_projector(t, self.mu)


def apply_projector(t: BiForm, mu: Sequence[Fraction]) -> BiForm:
    """sum_j mu[j] delta^j Delta^j t, sharing the Delta chain between terms."""
    chain = [t]
    for _ in range(1, len(mu)):
        chain.append(apply_Delta(chain[-1]))
    out = BiForm.zero(t.a, t.b)
    for j, c in enumerate(mu):
        if c == 0:
            continue
        s = chain[j]
        for _ in range(j):
            s = apply_delta(s)
        if s.a == t.a and s.b == t.b:
            out = out + s.scale(c)
    return out


class _Memo:
    """Lazily extended tables keyed by bidegree; writes are serialized."""

    def __init__(self) -> None:
        self.lock = threading.RLock()
        # (a, b) -> delta^K h for h = e1^a (x) x3^b, K = len(hw_scalars[(a, b)])
        self.hw_top: dict[tuple[int, int], BiForm] = {}
        # (a, b) -> [c_1, c_2, ...] with Delta delta^k h = c_k delta^(k-1) h
        self.hw_scalars: dict[tuple[int, int], list[Fraction]] = {}
        # (e, f) -> rows mu_i, i = 0..min(e, f)
        self.mu_rows: dict[tuple[int, int], tuple[tuple[Fraction, ...], ...]] = {}


_memo = _Memo()


def highest_weight_tensor(a: int, b: int) -> BiForm:
    """e1^a (x) x3^b, annihilated by Delta."""
    return BiForm.monomial((a, 0, 0), (0, 0, b))


def _hw_scalar(a: int, b: int, k: int) -> Fraction:
    """Scalar c_k with Delta(delta^k h) = c_k delta^(k-1) h for h = e1^a (x) x3^b.

    Read off symbolically at the monomial e1^(a+k-1) x1^(k-1) x3^b, whose
    coefficient in delta^(k-1) h is 1.
    """
    with _memo.lock:
        scalars = _memo.hw_scalars.setdefault((a, b), [])
        while len(scalars) < k:
            kk = len(scalars) + 1
            top = apply_delta(_memo.hw_top.get((a, b)) or highest_weight_tensor(a, b))
            ea, xb = (a + kk - 1, 0, 0), (kk - 1, 0, b)
            val = 0
            for i in range(3):
                src = (
                    tuple(ea[m] + _E[i][m] for m in range(3)),
                    tuple(xb[m] + _E[i][m] for m in range(3)),
                )
                val += top.terms.get(src, 0) * (ea[i] + 1) * (xb[i] + 1)
            scalars.append(Fraction(val))
            _memo.hw_top[(a, b)] = top
        return scalars[k - 1]


def inverse_lambda(e: int, f: int, i: int) -> Fraction:
    """1/lambda_i: the scalar by which Delta^i delta^i acts on V(e - i, f - i)."""
    a, b = e - i, f - i
    out = Fraction(1)
    for k in range(1, i + 1):
        out *= _hw_scalar(a, b, k)
    return out


def _mu_rows(e: int, f: int) -> tuple[tuple[Fraction, ...], ...]:
    key = (e, f)
    with _memo.lock:
        cached = _memo.mu_rows.get(key)
        if cached is not None:
            return cached
        M = min(e, f)
        rows: list[list[Fraction]] = [[Fraction(0)] * (M + 1) for _ in range(M + 1)]
        for i in range(1, M + 1):
            lam = 1 / inverse_lambda(e, f, i)
            nu = _mu_rows(e - i, f - i)[0]
            for j, c in enumerate(nu):
                rows[i][i + j] = lam * c
        rows[0][0] = Fraction(1)
        for i in range(1, M + 1):
            for j in range(M + 1):
                rows[0][j] -= rows[i][j]
        frozen = tuple(tuple(r) for r in rows)
        _memo.mu_rows[key] = frozen
        return frozen


def projector_coeffs(e: int, f: int, i: int) -> ProjectorCoeffs:
    if e < 0 or f < 0 or not 0 <= i <= min(e, f):
        raise IndexError(f"component index {i} out of range for S^{e} (x) D^{f}")
    return ProjectorCoeffs(e, f, i, _mu_rows(e, f)[i])


# ---------------------------------------------------------------------------
# chi polynomial


def falling(n: int, j: int) -> int:
    """n (n-1) ... (n-j+1)."""
    out = 1
    for k in range(j):
        out *= n - k
    return out


@dataclass(frozen=True)
class ChiPoly:
    """chi(x, y) = sum_j coeffs[j] x^j y^(e-j)."""

    e: int
    f: int
    components: tuple[int, ...]
    coeffs: tuple[Fraction, ...]

    @property
    def denominator_lcm(self) -> int:
        out = 1
        for c in self.coeffs:
            out = out * c.denominator // _gcd(out, c.denominator)
        return out

    @property
    def denominator_prime_bound(self) -> int:
        """Largest prime dividing any coefficient denominator (1 if all integral)."""
        primes = sympy.factorint(self.denominator_lcm)
        return max(primes, default=1)

    def evaluate(self, x, y):
        return sum(c * x**j * y ** (self.e - j) for j, c in enumerate(self.coeffs))

    def to_json(self) -> dict:
        return {
            "e": self.e,
            "f": self.f,
            "components": list(self.components),
            "coeffs": [[str(c.numerator), str(c.denominator)] for c in self.coeffs],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ChiPoly":
        return cls(
            e=obj["e"],
            f=obj["f"],
            components=tuple(obj["components"]),
            coeffs=tuple(Fraction(int(n), int(d)) for n, d in obj["coeffs"]),
        )


def _gcd(a: int, b: int) -> int:
    while b:
        a, b = b, a % b
    return a


def chi_poly(e: int, f: int, components: Iterable[int]) -> ChiPoly:
    comps = tuple(sorted(set(components)))
    if e > f:
        raise ValueError(f"chi polynomial needs e <= f, got e={e}, f={f}")
    if comps and (comps[0] < 0 or comps[-1] > min(e, f)):
        raise IndexError(f"components {comps} out of range for S^{e} (x) D^{f}")
    rows = _mu_rows(e, f)
    coeffs = []
    for j in range(e + 1):
        s = sum((rows[i][j] for i in comps), Fraction(0))
        coeffs.append(s * falling(e, j) * falling(f, j))
    return ChiPoly(e, f, comps, tuple(coeffs))


def eval_delta_power(a: int, b: int, i: int, u, v, p, q):
    """(delta^i Delta^i (u^a (x) v^b))(p, q) in closed form."""
    if not 0 <= i <= min(a, b):
        raise IndexError(f"i = {i} out of range for bidegree ({a}, {b})")
    dpq = sum(pk * qk for pk, qk in zip(p, q))
    vu = sum(vk * uk for vk, uk in zip(v, u))
    up = sum(uk * pk for uk, pk in zip(u, p))
    vq = sum(vk * qk for vk, qk in zip(v, q))
    return falling(a, i) * falling(b, i) * dpq**i * vu**i * up ** (a - i) * vq ** (b - i)


def psi_exact(chi: ChiPoly, u, v, p, q):
    """v(q)^(f-e) chi(delta(p,q) v(u), u(p) v(q)), exact."""
    dpq = sum(pk * qk for pk, qk in zip(p, q))
    vu = sum(vk * uk for vk, uk in zip(v, u))
    up = sum(uk * pk for uk, pk in zip(u, p))
    vq = sum(vk * qk for vk, qk in zip(v, q))
    return vq ** (chi.f - chi.e) * chi.evaluate(dpq * vu, up * vq)
