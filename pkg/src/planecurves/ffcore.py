"""GF(p) arithmetic, chi lookup tables, keyed sample streams and fast psi evaluation.

The bilinear map psi evaluates on pure powers through

    psi(u^e (x) v^f)(p, q) = v(q)^(f-e) * chi(delta(p,q) v(u), u(p) v(q)),

and since chi is homogeneous of degree e this becomes a single table lookup
``u(p)^e v(q)^f * table[delta(p,q) v(u) / (u(p) v(q))]`` whenever
u(p) v(q) != 0.
"""

from __future__ import annotations

import hashlib
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numba
import numpy as np
import sympy

from .projops import ChiPoly

log = logging.getLogger(__name__)

DEFAULT_PRIME = 1048573  # largest prime below 2**20
MAX_PRIME = 2**31


class BadPrime(ValueError):
    """The prime is not usable for the requested computation."""


def prime_ladder(start: int = DEFAULT_PRIME, count: int = 16) -> list[int]:
    """``count`` primes in descending order, beginning at the largest prime <= start."""
    out = []
    p = start if sympy.isprime(start) else sympy.prevprime(start)
    while len(out) < count and p >= 2:
        out.append(int(p))
        p = sympy.prevprime(p) if p > 2 else 1
    return out


@dataclass(frozen=True)
class PrimeField:
    p: int

    def __post_init__(self) -> None:
        if not 2 <= self.p < MAX_PRIME:
            raise BadPrime(f"p = {self.p} outside [2, 2^31)")
        if not sympy.isprime(self.p):
            raise BadPrime(f"p = {self.p} is not prime")

    def __call__(self, x) -> int:
        return int(x) % self.p

    def add(self, a: int, b: int) -> int:
        return (a + b) % self.p

    def sub(self, a: int, b: int) -> int:
        return (a - b) % self.p

    def mul(self, a: int, b: int) -> int:
        return a * b % self.p

    def neg(self, a: int) -> int:
        return -a % self.p

    def pow(self, a: int, n: int) -> int:
        return pow(a, n, self.p)

    def inv(self, a: int) -> int:
        if a % self.p == 0:
            raise ZeroDivisionError("zero has no inverse")
        return pow(a, -1, self.p)

    def from_rational(self, r) -> int:
        """Reduce a Fraction (or int); raises BadPrime if p divides the denominator."""
        num, den = (r.numerator, r.denominator) if hasattr(r, "denominator") else (int(r), 1)
        if den % self.p == 0:
            raise BadPrime(f"p = {self.p} divides denominator {den}")
        return num * pow(den, -1, self.p) % self.p


def check_admissible(chi: ChiPoly, p: int) -> None:
    PrimeField(p)
    if p <= chi.f:
        raise BadPrime(f"p = {p} must exceed f = {chi.f}")
    den = chi.denominator_lcm
    if den % p == 0:
        raise BadPrime(f"p = {p} divides a chi denominator (lcm {den})")


def first_admissible(chi: ChiPoly, primes: Sequence[int]) -> int:
    for p in primes:
        try:
            check_admissible(chi, p)
        except BadPrime as exc:
            log.info("stage=prime rejected p=%d reason=%s", p, exc)
            continue
        return p
    raise BadPrime("no admissible prime in the list")


# ---------------------------------------------------------------------------
# chi tables

_CHIT_MAGIC = b"CHIT"
_CHIT_VERSION = 1


@dataclass(frozen=True, eq=False)
class ChiTable:
    p: int
    e: int
    f: int
    table: np.ndarray  # table[z] = chi(z, 1) mod p
    lead: int  # chi(1, 0) mod p
    components: tuple[int, ...] = ()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ChiTable):
            return NotImplemented
        return (self.p, self.e, self.f, self.lead) == (other.p, other.e, other.f, other.lead) and np.array_equal(
            self.table, other.table
        )

    def chi(self, x: int, y: int) -> int:
        p = self.p
        x %= p
        y %= p
        if y == 0:
            return self.lead * pow(x, self.e, p) % p
        return pow(y, self.e, p) * int(self.table[x * pow(y, -1, p) % p]) % p

    def save(self, path: str | Path) -> None:
        header = struct.pack("<4sIQII", _CHIT_MAGIC, _CHIT_VERSION, self.p, self.e, self.f)
        payload = np.empty(self.p + 1, dtype="<u8")
        payload[: self.p] = self.table
        payload[self.p] = self.lead
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(payload.tobytes())

    @classmethod
    def load(cls, path: str | Path, components: tuple[int, ...] = ()) -> "ChiTable":
        with open(path, "rb") as fh:
            raw = fh.read()
        hsize = struct.calcsize("<4sIQII")
        if len(raw) < hsize:
            raise ValueError(f"{path}: truncated chi table header")
        magic, version, p, e, f = struct.unpack_from("<4sIQII", raw)
        if magic != _CHIT_MAGIC or version != _CHIT_VERSION:
            raise ValueError(f"{path}: not a chi table (magic {magic!r}, version {version})")
        body = np.frombuffer(raw, dtype="<u8", offset=hsize)
        if body.size != p + 1:
            raise ValueError(f"{path}: expected {p + 1} entries, found {body.size}")
        table = body[:p].astype(np.int64)
        return cls(p=p, e=e, f=f, table=table, lead=int(body[p]), components=components)


def reduce_chi(chi: ChiPoly, p: int) -> ChiTable:
    check_admissible(chi, p)
    field_ = PrimeField(p)
    cs = [field_.from_rational(c) for c in chi.coeffs]
    z = np.arange(p, dtype=np.int64)
    acc = np.zeros(p, dtype=np.int64)
    # Horner in z for chi(z, 1) = sum_j c_j z^j
    for c in reversed(cs):
        acc *= z
        acc += c
        acc %= p
    return ChiTable(p=p, e=chi.e, f=chi.f, table=acc, lead=cs[chi.e], components=chi.components)


def eval_psi(u: Sequence[int], v: Sequence[int], pt: tuple[Sequence[int], Sequence[int]], tbl: ChiTable, f: int | None = None) -> int:
    """psi(u^e (x) v^f)(p, q) mod p for a single point pair ``pt = (pcov, qvec)``."""
    f = tbl.f if f is None else f
    P = tbl.p
    pcov, qvec = pt
    dpq = sum(int(a) * int(b) for a, b in zip(pcov, qvec)) % P
    vu = sum(int(a) * int(b) for a, b in zip(v, u)) % P
    up = sum(int(a) * int(b) for a, b in zip(u, pcov)) % P
    vq = sum(int(a) * int(b) for a, b in zip(v, qvec)) % P
    return pow(vq, f - tbl.e, P) * tbl.chi(dpq * vu, up * vq) % P


# ---------------------------------------------------------------------------
# deterministic sample streams


class SampleStream:
    """Counter-based stream: element k depends only on (seed, label, k).

    Backed by Philox4x64, so any window of the stream can be generated
    without producing the elements before it.
    """

    def __init__(self, seed: int, label: str):
        self.seed = int(seed)
        self.label = label
        digest = hashlib.blake2b(label.encode(), digest_size=8).digest()
        self._key = np.array([self.seed & (2**64 - 1), int.from_bytes(digest, "little")], dtype=np.uint64)

    def raw(self, start: int, count: int) -> np.ndarray:
        if count <= 0:
            return np.zeros(0, dtype=np.uint64)
        gen = np.random.Philox(key=self._key, counter=np.zeros(4, dtype=np.uint64))
        gen.advance(start // 4)
        off = start % 4
        return gen.random_raw(count + off)[off:]

    def elements(self, start: int, count: int, p: int) -> np.ndarray:
        return (self.raw(start, count) % np.uint64(p)).astype(np.int64)

    def nonzero_elements(self, count: int, p: int) -> tuple[np.ndarray, int]:
        """The first ``count`` nonzero residues of the stream, plus the skip count."""
        return self._filtered(count, p, width=1)

    def vectors(self, count: int, p: int) -> tuple[np.ndarray, int]:
        """``count`` nonzero vectors in GF(p)^3 (consecutive triples), plus the skip count."""
        return self._filtered(count, p, width=3)

    def _filtered(self, count: int, p: int, width: int) -> tuple[np.ndarray, int]:
        taken: list[np.ndarray] = []
        have = skipped = pos = 0
        chunk = count + 8
        while have < count:
            block = self.elements(pos * width, chunk * width, p).reshape(chunk, width)
            ok = np.flatnonzero(block.any(axis=1))
            need = count - have
            if ok.size >= need:
                skipped += int(ok[need - 1]) + 1 - need
                ok = ok[:need]
            else:
                skipped += chunk - ok.size
            taken.append(block[ok])
            have += ok.size
            pos += chunk
        vals = np.vstack(taken) if taken else np.zeros((0, width), dtype=np.int64)
        return (vals if width > 1 else vals[:, 0]), skipped


def sample_stream(seed: int, label: str) -> SampleStream:
    return SampleStream(seed, label)


# ---------------------------------------------------------------------------
# vectorized helpers


def dot3(a: np.ndarray, b: np.ndarray, p: int) -> np.ndarray:
    """(a @ b.T) mod p for (n, 3) and (m, 3) int64 arrays of residues, overflow-safe."""
    out = np.zeros((a.shape[0], b.shape[0]), dtype=np.int64)
    for k in range(3):
        out += np.multiply.outer(a[:, k], b[:, k]) % p
    return out % p


def powmod_array(x: np.ndarray, n: int, p: int) -> np.ndarray:
    result = np.ones_like(x)
    base = x % p
    while n:
        if n & 1:
            result = result * base % p
        base = base * base % p
        n >>= 1
    return result


def invmod_array(x: np.ndarray, p: int) -> np.ndarray:
    """Elementwise inverse with 0 mapped to 0."""
    return powmod_array(x, p - 2, p)


# ---------------------------------------------------------------------------
# numba kernels


@numba.njit(inline="always")
def _mulmod(a, b, p, pinv):
    # branch-free float-Barrett reduction, valid for a, b < p < 2^31
    x = a * b
    q = np.int64(np.float64(x) * pinv)
    r = x - q * p
    r += p & (r >> 63)
    r -= p & ((p - 1 - r) >> 63)
    return r


@numba.njit(inline="always")
def _powmod(a, n, p, pinv):
    r = np.int64(1)
    b = a
    while n > 0:
        if n & 1:
            r = _mulmod(r, b, p, pinv)
        b = _mulmod(b, b, p, pinv)
        n >>= 1
    return r


@numba.njit(cache=True, nogil=True)
def _slow_term(up, vq, dl, vu, e, f, table, lead, p, pinv):
    x = _mulmod(dl, vu, p, pinv)
    if up != 0 and vq != 0:
        y = _mulmod(up, vq, p, pinv)
        z = _mulmod(x, _powmod(y, p - 2, p, pinv), p, pinv)
        return _mulmod(_mulmod(_powmod(up, e, p, pinv), _powmod(vq, f, p, pinv), p, pinv), table[z], p, pinv)
    return _mulmod(_mulmod(_powmod(vq, f - e, p, pinv), lead, p, pinv), _powmod(x, e, p, pinv), p, pinv)


@numba.njit(cache=True, nogil=True)
def _sum_over_v_rows(r0, r1, up, up_e, iup, vq, vq_f, ivq_t, w_t, dl, vu, coef, e, f, table, lead, p, out):
    """out[s - r0, k] = sum_j coef[j] psi(u_s^e (x) v_j^f)(pt_k) for s in [r0, r1)."""
    pinv = 1.0 / p
    J = vu.shape[1]
    K = dl.shape[0]
    limit = (2**62) // ((p - 1) * (p - 1) + 1)
    for s in range(r0, r1):
        for k in range(K):
            acc = np.int64(0)
            if up[s, k] == 0:
                for j in range(J):
                    t = _slow_term(0, vq[j, k], dl[k], vu[s, j], e, f, table, lead, p, pinv)
                    acc = (acc + _mulmod(coef[j], t, p, pinv)) % p
                out[s - r0, k] = acc
                continue
            base = _mulmod(dl[k], iup[s, k], p, pinv)
            cnt = 0
            for j in range(J):
                idx = _mulmod(_mulmod(base, vu[s, j], p, pinv), ivq_t[k, j], p, pinv)
                acc += w_t[k, j] * table[idx]
                cnt += 1
                if cnt == limit:
                    acc %= p
                    cnt = 0
            acc = _mulmod(up_e[s, k], acc % p, p, pinv)
            if e == f and f > 0:
                # v(q) = 0 contributes lead * (delta v(u))^e when f == e
                for j in range(J):
                    if vq[j, k] == 0:
                        t = _slow_term(up[s, k], 0, dl[k], vu[s, j], e, f, table, lead, p, pinv)
                        acc = (acc + _mulmod(coef[j], t, p, pinv)) % p
            out[s - r0, k] = acc


@numba.njit(cache=True, nogil=True)
def _sum_over_u_rows(r0, r1, up, iup_t, w_t, vq, vq_f, ivq, dl, vu, coef, e, f, table, lead, p, out):
    """out[j - r0, k] = sum_s coef[s] psi(u_s^e (x) v_j^f)(pt_k) for j in [r0, r1)."""
    pinv = 1.0 / p
    S = vu.shape[0]
    K = dl.shape[0]
    limit = (2**62) // ((p - 1) * (p - 1) + 1)
    for j in range(r0, r1):
        for k in range(K):
            acc = np.int64(0)
            if vq[j, k] == 0:
                for s in range(S):
                    t = _slow_term(up[s, k], 0, dl[k], vu[s, j], e, f, table, lead, p, pinv)
                    acc = (acc + _mulmod(coef[s], t, p, pinv)) % p
                out[j - r0, k] = acc
                continue
            base = _mulmod(dl[k], ivq[j, k], p, pinv)
            cnt = 0
            for s in range(S):
                idx = _mulmod(_mulmod(base, vu[s, j], p, pinv), iup_t[k, s], p, pinv)
                acc += w_t[k, s] * table[idx]
                cnt += 1
                if cnt == limit:
                    acc %= p
                    cnt = 0
            acc = _mulmod(vq_f[j, k], acc % p, p, pinv)
            # u(p) = 0 terms: chi(x, 0) = lead * x^e
            for s in range(S):
                if e > 0 and up[s, k] == 0:
                    t = _slow_term(0, vq[j, k], dl[k], vu[s, j], e, f, table, lead, p, pinv)
                    acc = (acc + _mulmod(coef[s], t, p, pinv)) % p
            out[j - r0, k] = acc


@dataclass
class PsiContraction:
    """Row-block generator for a matrix of contracted psi values.

    ``mode == "v"``: rows index u's, entry = sum_j coef[j] psi(u_s^e (x) v_j^f)(pt_k).
    ``mode == "u"``: rows index v's, entry = sum_s coef[s] psi(u_s^e (x) v_j^f)(pt_k).
    """

    tbl: ChiTable
    us: np.ndarray
    vs: np.ndarray
    coef: np.ndarray
    pcov: np.ndarray
    qvec: np.ndarray
    mode: str
    _pre: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if self.mode not in ("u", "v"):
            raise ValueError("mode must be 'u' or 'v'")
        p, e, f = self.tbl.p, self.tbl.e, self.tbl.f
        us, vs = np.asarray(self.us, np.int64) % p, np.asarray(self.vs, np.int64) % p
        pc, qv = np.asarray(self.pcov, np.int64) % p, np.asarray(self.qvec, np.int64) % p
        coef = np.asarray(self.coef, np.int64) % p
        up = dot3(us, pc, p)
        vq = dot3(vs, qv, p)
        dl = (pc * qv % p).sum(axis=1) % p
        vu = dot3(us, vs, p)
        pre = dict(up=up, vq=vq, dl=np.ascontiguousarray(dl), vu=vu, coef=coef)
        if self.mode == "v":
            up_e = powmod_array(up, e, p)
            vq_f = powmod_array(vq, f, p)
            pre.update(
                up_e=up_e,
                iup=invmod_array(up, p),
                vq_f=vq_f,
                ivq_t=np.ascontiguousarray(invmod_array(vq, p).T),
                w_t=np.ascontiguousarray((vq_f * coef[:, None] % p).T),
            )
        else:
            up_e = powmod_array(up, e, p)
            pre.update(
                iup_t=np.ascontiguousarray(invmod_array(up, p).T),
                w_t=np.ascontiguousarray((up_e * coef[:, None] % p).T),
                vq_f=powmod_array(vq, f, p),
                ivq=invmod_array(vq, p),
            )
        self._pre = pre

    @property
    def rows(self) -> int:
        return self._pre["up"].shape[0] if self.mode == "v" else self._pre["vq"].shape[0]

    @property
    def cols(self) -> int:
        return self._pre["dl"].shape[0]

    def block(self, r0: int, r1: int) -> np.ndarray:
        t = self.tbl
        pre = self._pre
        out = np.empty((r1 - r0, self.cols), dtype=np.int64)
        table = t.table
        if self.mode == "v":
            _sum_over_v_rows(
                r0, r1, pre["up"], pre["up_e"], pre["iup"], pre["vq"], pre["vq_f"], pre["ivq_t"], pre["w_t"],
                pre["dl"], pre["vu"], pre["coef"], t.e, t.f, table, t.lead, t.p, out,
            )
        else:
            _sum_over_u_rows(
                r0, r1, pre["up"], pre["iup_t"], pre["w_t"], pre["vq"], pre["vq_f"], pre["ivq"],
                pre["dl"], pre["vu"], pre["coef"], t.e, t.f, table, t.lead, t.p, out,
            )
        return out
