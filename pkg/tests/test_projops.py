import random
from fractions import Fraction

import pytest
import sympy
from hypothesis import given, settings
from hypothesis import strategies as st

from planecurves.projops import (
    BiForm,
    ChiPoly,
    apply_Delta,
    apply_delta,
    apply_delta_Delta_power,
    apply_projector,
    chi_poly,
    eval_delta_power,
    falling,
    highest_weight_tensor,
    inverse_lambda,
    projector_coeffs,
    psi_exact,
    _hw_scalar,
)

E = sympy.symbols("e1 e2 e3")
X = sympy.symbols("x1 x2 x3")


def random_biform(rng, a, b, density=0.6):
    terms = {}
    for m in BiForm.basis(a, b):
        if rng.random() < density:
            (mono,) = m.terms
            terms[mono] = Fraction(rng.randint(-9, 9), rng.randint(1, 4))
    return BiForm(a, b, terms)


def to_sympy(t):
    out = 0
    for (ea, xb), c in t.terms.items():
        mono = sympy.Rational(c.numerator, c.denominator) if isinstance(c, Fraction) else c
        for s, k in zip(E + X, ea + xb):
            mono *= s**k
        out += mono
    return sympy.expand(out)


def pairs(max_sum):
    return [(a, b) for a in range(max_sum + 1) for b in range(max_sum + 1 - a)]


def subsets(n):
    return [tuple(i for i in range(n) if mask >> i & 1) for mask in range(1 << n)]


# ---------------------------------------------------------------------------
# Delta and delta


def test_Delta_on_pure_powers():
    u, v = (2, -1, 3), (1, 4, -2)
    e, f = 3, 2
    vu = sum(a * b for a, b in zip(u, v))
    lhs = apply_Delta(BiForm.from_powers(u, v, e, f))
    rhs = BiForm.from_powers(u, v, e - 1, f - 1).scale(e * f * vu)
    assert lhs == rhs


def test_Delta_disjoint_variables():
    assert apply_Delta(highest_weight_tensor(4, 3)).is_zero()
    assert apply_Delta(BiForm.from_powers((1, 2, 3), (1, 1, 1), 0, 3)) == BiForm.zero(0, 2)


@pytest.mark.parametrize("a, b", [(1, 1), (2, 1), (1, 3), (2, 2), (3, 3), (2, 4)])
def test_Delta_matches_sympy(a, b):
    rng = random.Random(a * 10 + b)
    for _ in range(5):
        t = random_biform(rng, a, b)
        want = sympy.expand(sum(sympy.diff(to_sympy(t), E[i], X[i]) for i in range(3)))
        assert to_sympy(apply_Delta(t)) == want


def test_delta_examples():
    assert apply_delta(BiForm.one()) == BiForm(
        1, 1, {((1, 0, 0), (1, 0, 0)): 1, ((0, 1, 0), (0, 1, 0)): 1, ((0, 0, 1), (0, 0, 1)): 1}
    )
    got = apply_delta(BiForm.monomial((1, 0, 0), (0, 0, 1)))
    assert got == BiForm(
        2, 2, {((2, 0, 0), (1, 0, 1)): 1, ((1, 1, 0), (0, 1, 1)): 1, ((1, 0, 1), (0, 0, 2)): 1}
    )


@pytest.mark.parametrize("a, b", [ab for ab in pairs(8)])
def test_commutator(a, b):
    rng = random.Random(1000 + 17 * a + b)
    for _ in range(3 if a + b > 5 else 10):
        t = random_biform(rng, a, b, density=0.3)
        # Delta kills bidegrees with a zero side, so the second term vanishes there
        back = apply_delta(apply_Delta(t)) if min(a, b) else BiForm.zero(a, b)
        lhs = apply_Delta(apply_delta(t)) - back
        assert lhs == t.scale(a + b + 3)


def test_biform_rejects_wrong_bidegree():
    with pytest.raises(ValueError):
        BiForm(1, 1, {((1, 0, 0), (0, 2, 0)): 1})


# ---------------------------------------------------------------------------
# projectors


def projector(e, f, i):
    return projector_coeffs(e, f, i)


def test_trivial_projector():
    for e in range(6):
        assert projector(e, 0, 0).mu == (Fraction(1),)


@pytest.mark.parametrize("e, f", [(1, 1), (2, 3), (5, 4), (10, 7), (20, 25)])
def test_lambda_one(e, f):
    assert inverse_lambda(e, f, 1) == e + f + 1


@given(st.integers(0, 12), st.integers(0, 12), st.integers(1, 8))
@settings(max_examples=60, deadline=None)
def test_hw_scalar_closed_form(a, b, k):
    assert _hw_scalar(a, b, k) == k * (a + b + k + 2)


def test_inverse_lambda_matches_direct_application():
    # apply pi_{e-i,f-i} . Delta^i . delta^i to the highest weight tensor and read the scalar
    for e, f, i in [(2, 2, 1), (2, 2, 2), (3, 2, 2), (4, 3, 3)]:
        a, b = e - i, f - i
        h = highest_weight_tensor(a, b)
        t = h
        for _ in range(i):
            t = apply_delta(t)
        for _ in range(i):
            t = apply_Delta(t)
        t = apply_projector(t, projector(a, b, 0).mu)
        assert t == h.scale(inverse_lambda(e, f, i))


def test_projectors_2_2():
    rng = random.Random(22)
    mus = [projector(2, 2, i).mu for i in range(3)]
    assert len(BiForm.basis(2, 2)) == 36
    for i in range(3):
        for j in range(3):
            for _ in range(4):
                t = random_biform(rng, 2, 2)
                once = apply_projector(t, mus[j])
                twice = apply_projector(once, mus[i])
                assert twice == (once if i == j else BiForm.zero(2, 2))


@pytest.mark.parametrize("e, f", [ab for ab in pairs(8) if 0 < min(ab)])
def test_projector_algebra(e, f):
    rng = random.Random(7 * e + f)
    M = min(e, f)
    mus = [projector(e, f, i).mu for i in range(M + 1)]
    t = random_biform(rng, e, f, density=0.25 if e + f > 6 else 0.5)
    parts = [apply_projector(t, mu) for mu in mus]
    total = BiForm.zero(e, f)
    for part in parts:
        total = total + part
    assert total == t
    assert apply_Delta(parts[0]).is_zero()
    for i in range(M + 1):
        for j in range(M + 1):
            again = apply_projector(parts[j], mus[i])
            assert again == (parts[j] if i == j else BiForm.zero(e, f))


def test_projector_index_errors():
    with pytest.raises(IndexError):
        projector_coeffs(2, 1, 2)
    with pytest.raises(IndexError):
        projector_coeffs(2, 2, -1)


# ---------------------------------------------------------------------------
# chi


def test_chi_full_components():
    for e, f in [(0, 0), (1, 1), (2, 3), (4, 4), (3, 7)]:
        chi = chi_poly(e, f, range(min(e, f) + 1))
        assert chi.coeffs[0] == 1 and all(c == 0 for c in chi.coeffs[1:])


def test_chi_1_1_1():
    chi = chi_poly(1, 1, (1,))
    assert chi.coeffs == (Fraction(0), Fraction(1, 3))


def test_chi_formula():
    e, f, I = 3, 5, (0, 2)
    chi = chi_poly(e, f, I)
    for j in range(e + 1):
        want = sum(projector(e, f, i).mu[j] for i in I) * falling(e, j) * falling(f, j)
        assert chi.coeffs[j] == want


def test_chi_errors():
    with pytest.raises(ValueError):
        chi_poly(3, 2, (0,))
    with pytest.raises(IndexError):
        chi_poly(2, 3, (3,))


def rand_vec(rng):
    return tuple(Fraction(rng.randint(-6, 6), rng.randint(1, 3)) for _ in range(3))


CHI_CASES = [(e, f, I) for e in range(0, 5) for f in range(e, 9 - e) for I in subsets(e + 1) if I]


@pytest.mark.parametrize("e, f, I", CHI_CASES)
def test_chi_evaluation_matches_projection(e, f, I):
    rng = random.Random(hash((e, f, I)) & 0xFFFF)
    chi = chi_poly(e, f, I)
    mus = [projector(e, f, i).mu for i in I]
    for _ in range(3):
        u, v, p, q = (rand_vec(rng) for _ in range(4))
        t = BiForm.from_powers(u, v, e, f)
        proj = BiForm.zero(e, f)
        for mu in mus:
            proj = proj + apply_projector(t, mu)
        assert psi_exact(chi, u, v, p, q) == proj.evaluate(p, q)


def test_chi_denominator_bound():
    chi = chi_poly(27, 30, (22,))
    lcm = chi.denominator_lcm
    assert all((c * lcm).denominator == 1 for c in chi.coeffs)
    bound = chi.denominator_prime_bound
    assert all(q <= bound for q in sympy.factorint(lcm))
    assert chi_poly(2, 2, (0, 1, 2)).denominator_prime_bound == 1


def test_chi_json_round_trip():
    chi = chi_poly(6, 9, (2, 4))
    assert ChiPoly.from_json(chi.to_json()) == chi
    assert all(isinstance(n, str) and isinstance(d, str) for n, d in chi.to_json()["coeffs"])


# ---------------------------------------------------------------------------
# closed-form delta power evaluation


def test_eval_delta_power_trivial_cases():
    u, v, p, q = (1, 2, 3), (2, -1, 0), (1, 0, 1), (3, 1, 1)
    up = sum(a * b for a, b in zip(u, p))
    vq = sum(a * b for a, b in zip(v, q))
    assert eval_delta_power(3, 2, 0, u, v, p, q) == up**3 * vq**2
    assert eval_delta_power(3, 2, 1, u, v, p, q) == 0  # v(u) = 0
    with pytest.raises(IndexError):
        eval_delta_power(1, 2, 2, u, v, p, q)


@pytest.mark.parametrize("a, b, i", [(a, b, i) for a, b in pairs(6) for i in range(min(a, b) + 1)])
def test_eval_delta_power_matches_symbolic(a, b, i):
    rng = random.Random(a * 100 + b * 10 + i)
    u, v, p, q = (rand_vec(rng) for _ in range(4))
    t = apply_delta_Delta_power(BiForm.from_powers(u, v, a, b), i)
    assert eval_delta_power(a, b, i, u, v, p, q) == t.evaluate(p, q)
