"""Combinatorics of SL3 irreducibles and the double-bundle candidate search.

V(a, b) denotes the irreducible SL3 module with highest weight a*w1 + b*w2.
S^e (x) D^f splits multiplicity-free into V(e - i, f - i), 0 <= i <= min(e, f).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

DEFAULT_KAPPA = 19


@dataclass(frozen=True, order=True)
class Weight:
    a: int
    b: int

    def __post_init__(self) -> None:
        if self.a < 0 or self.b < 0:
            raise ValueError(f"weight labels must be non-negative, got ({self.a}, {self.b})")

    def __str__(self) -> str:
        return f"V({self.a},{self.b})"


def _as_weight(w) -> Weight:
    return w if isinstance(w, Weight) else Weight(*w)


def dim_irrep(w: Weight | tuple[int, int]) -> int:
    """Weyl dimension of V(a, b)."""
    w = _as_weight(w)
    return (w.a + 1) * (w.b + 1) * (w.a + w.b + 2) // 2


@dataclass(frozen=True)
class RepSum:
    """A direct sum of irreducibles with multiplicities.

    Components are kept in descending (a, b) order, which is the order in which
    the summands V(e - i, f - i) appear for increasing i.
    """

    components: tuple[tuple[Weight, int], ...]

    def __post_init__(self) -> None:
        merged: dict[Weight, int] = {}
        for w, m in self.components:
            w = _as_weight(w)
            if m < 1:
                raise ValueError(f"multiplicity of {w} must be positive, got {m}")
            merged[w] = merged.get(w, 0) + m
        ordered = tuple(sorted(merged.items(), reverse=True))
        object.__setattr__(self, "components", ordered)

    @classmethod
    def of(cls, *weights: Weight | tuple[int, int]) -> "RepSum":
        return cls(tuple((_as_weight(w), 1) for w in weights))

    @property
    def dim(self) -> int:
        return sum(dim_irrep(w) * m for w, m in self.components)

    def weights(self) -> list[Weight]:
        return [w for w, _ in self.components]

    def __str__(self) -> str:
        parts = [str(w) if m == 1 else f"{m}*{w}" for w, m in self.components]
        return " + ".join(parts) if parts else "0"


def decompose_tensor(e: int, f: int) -> RepSum:
    if e < 0 or f < 0:
        raise ValueError("e and f must be non-negative")
    return RepSum.of(*[(e - i, f - i) for i in range(min(e, f) + 1)])


def double_bundle_conditions(U: RepSum, V: RepSum, W: RepSum, kappa: int) -> list[str]:
    """Return the violated numeric hypotheses of the double-bundle theorem.

    An empty list means dim U - dim W = 1 and dim V - dim U > kappa both hold.
    """
    problems = []
    if U.dim - W.dim != 1:
        problems.append(f"dim U - dim W = {U.dim} - {W.dim} = {U.dim - W.dim}, expected 1")
    if not V.dim - U.dim > kappa:
        problems.append(f"dim V - dim U = {V.dim} - {U.dim} = {V.dim - U.dim}, not > {kappa}")
    return problems


@dataclass(frozen=True)
class Candidate:
    """U = V(e, 0), V = V(0, d), W = sum of V(e - i, d - i) for i in ``components``."""

    d: int
    e: int
    components: tuple[int, ...]
    dim_U: int
    dim_V: int
    dim_W: int
    kappa: int = DEFAULT_KAPPA

    @classmethod
    def build(cls, d: int, e: int, components: Iterable[int], kappa: int = DEFAULT_KAPPA) -> "Candidate":
        comps = tuple(components)
        return cls(
            d=d,
            e=e,
            components=comps,
            dim_U=dim_irrep((e, 0)),
            dim_V=dim_irrep((0, d)),
            dim_W=sum(dim_irrep((e - i, d - i)) for i in comps),
            kappa=kappa,
        )

    @property
    def U(self) -> RepSum:
        return RepSum.of((self.e, 0))

    @property
    def V(self) -> RepSum:
        return RepSum.of((0, self.d))

    @property
    def W(self) -> RepSum:
        return RepSum.of(*[(self.e - i, self.d - i) for i in self.components])

    def violations(self) -> list[str]:
        problems = []
        if self.d < 1:
            problems.append("d must be positive")
        if not 0 <= self.e <= self.d:
            problems.append(f"e = {self.e} outside [0, d]")
        comps = list(self.components)
        if not comps:
            problems.append("empty component set")
        if any(b <= a for a, b in zip(comps, comps[1:])):
            problems.append("components not strictly increasing")
        if comps and (comps[0] < 0 or comps[-1] > min(self.e, self.d)):
            problems.append("component index outside [0, min(e, d)]")
        if problems:
            return problems
        if self.dim_U != dim_irrep((self.e, 0)):
            problems.append("dim_U disagrees with V(e,0)")
        if self.dim_V != dim_irrep((0, self.d)):
            problems.append("dim_V disagrees with V(0,d)")
        if self.dim_W != self.W.dim:
            problems.append("dim_W disagrees with the component sum")
        problems.extend(double_bundle_conditions(self.U, self.V, self.W, self.kappa))
        return problems

    def validate(self) -> None:
        problems = self.violations()
        if problems:
            raise ValueError("invalid candidate: " + "; ".join(problems))

    def to_json(self) -> dict:
        return {
            "d": self.d,
            "e": self.e,
            "components": list(self.components),
            "dimU": self.dim_U,
            "dimV": self.dim_V,
            "dimW": self.dim_W,
            "kappa": self.kappa,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Candidate":
        return cls(
            d=obj["d"],
            e=obj["e"],
            components=tuple(obj["components"]),
            dim_U=obj["dimU"],
            dim_V=obj["dimV"],
            dim_W=obj["dimW"],
            kappa=obj["kappa"],
        )


def default_e_max(d: int, kappa: int) -> int:
    """Largest e with dim V(e, 0) < dim V(0, d) - kappa (0 if none)."""
    bound = dim_irrep((0, d)) - kappa
    e = 0
    while dim_irrep((e + 1, 0)) < bound:
        e += 1
    return e


def _subset_sums(values: Sequence[int], target: int) -> list[tuple[int, ...]]:
    # suffix reachability table, then a DFS that never enters a dead branch
    n = len(values)
    reach = [bytearray(target + 1) for _ in range(n + 1)]
    reach[n][0] = 1
    for k in range(n - 1, -1, -1):
        nxt, cur, v = reach[k + 1], reach[k], values[k]
        cur[:] = nxt
        for s in range(v, target + 1):
            if nxt[s - v]:
                cur[s] = 1
    if not reach[0][target]:
        return []
    out: list[tuple[int, ...]] = []
    stack: list[tuple[int, int, tuple[int, ...]]] = [(0, target, ())]
    while stack:
        k, rem, chosen = stack.pop()
        if k == n:
            out.append(chosen)
            continue
        if rem >= values[k] and reach[k + 1][rem - values[k]]:
            stack.append((k + 1, rem - values[k], chosen + (k,)))
        if reach[k + 1][rem]:
            stack.append((k + 1, rem, chosen))
    return sorted(out)


def search_candidates(
    d: int, kappa: int = DEFAULT_KAPPA, e_range: tuple[int, int] | None = None
) -> list[Candidate]:
    """All (e, I) with sum_{i in I} dim V(e-i, d-i) = dim V(e,0) - 1 and dim V(0,d) - dim V(e,0) > kappa."""
    if d < 1:
        raise ValueError("d must be positive")
    if kappa < 1:
        raise ValueError("kappa must be positive")
    lo, hi = e_range if e_range is not None else (1, default_e_max(d, kappa))
    lo, hi = max(lo, 0), min(hi, d)
    dim_v = dim_irrep((0, d))
    found = []
    for e in range(lo, hi + 1):
        dim_u = dim_irrep((e, 0))
        if not dim_v - dim_u > kappa:
            continue
        dims = [dim_irrep((e - i, d - i)) for i in range(min(e, d) + 1)]
        for comps in _subset_sums(dims, dim_u - 1):
            if comps:
                found.append(Candidate.build(d, e, comps, kappa))
    return found


def candidates_to_json(cands: Iterable[Candidate]) -> str:
    return json.dumps([c.to_json() for c in cands], indent=2)
