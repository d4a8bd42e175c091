"""Dense exact linear algebra over GF(p).

Elimination runs over column panels (default width 256).  Each panel is
factored recursively, with a compiled unblocked kernel at the leaves, and the
trailing matrix is updated with float64 BLAS products whose inner dimension is
capped so every partial sum stays below 2^53, i.e. exact.  Rows of the trailing
update are split across worker threads.  Between panels the whole state is the
residual trailing matrix, which is what a checkpoint stores.
"""

from __future__ import annotations

import logging
import math
import os
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import crcmod.predefined
import numba
import numpy as np
from threadpoolctl import threadpool_limits

log = logging.getLogger(__name__)

DEFAULT_PANEL = 256
_BASE_WIDTH = 32
_EXACT = 2**53

_crc64 = crcmod.predefined.mkCrcFun("crc-64-we")


class ResourceError(MemoryError):
    def __init__(self, nbytes: int, what: str = "matrix"):
        super().__init__(f"could not allocate {nbytes} bytes for {what}")
        self.nbytes = nbytes


class CorruptCheckpoint(ValueError):
    def __init__(self, path, offset: int, reason: str):
        super().__init__(f"{path}: corrupt checkpoint at byte offset {offset}: {reason}")
        self.offset = offset


@dataclass(eq=False)
class DenseMatrixFp:
    p: int
    data: np.ndarray

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.int64)
        if self.data.ndim != 2:
            raise ValueError("matrix data must be two-dimensional")
        if self.data.size and (self.data.min() < 0 or self.data.max() >= self.p):
            self.data = self.data % self.p

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @classmethod
    def zeros(cls, rows: int, cols: int, p: int) -> "DenseMatrixFp":
        return cls(p, _alloc((rows, cols)))

    @classmethod
    def identity(cls, n: int, p: int) -> "DenseMatrixFp":
        return cls(p, np.eye(n, dtype=np.int64))

    @classmethod
    def random(cls, rows: int, cols: int, p: int, seed: int) -> "DenseMatrixFp":
        rng = np.random.default_rng(seed)
        return cls(p, rng.integers(0, p, size=(rows, cols), dtype=np.int64))

    def transpose(self) -> "DenseMatrixFp":
        return DenseMatrixFp(self.p, np.ascontiguousarray(self.data.T))

    def __matmul__(self, other: "DenseMatrixFp") -> "DenseMatrixFp":
        if self.p != other.p:
            raise ValueError("matrices over different fields")
        return DenseMatrixFp(self.p, matmul_mod(self.data, other.data, self.p))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DenseMatrixFp):
            return NotImplemented
        return self.p == other.p and np.array_equal(self.data, other.data)


@dataclass
class RankReport:
    rank: int
    rows: int
    cols: int
    p: int
    elapsed: float
    panels: int
    checkpoint_id: str | None = None

    def __post_init__(self) -> None:
        if not 0 <= self.rank <= min(self.rows, self.cols):
            raise AssertionError(f"rank {self.rank} outside [0, min({self.rows}, {self.cols})]")


def _alloc(shape: tuple[int, ...], dtype=np.int64) -> np.ndarray:
    nbytes = math.prod(shape) * np.dtype(dtype).itemsize
    try:
        return np.zeros(shape, dtype=dtype)
    except (MemoryError, ValueError) as exc:  # numpy raises ValueError past the address space
        raise ResourceError(nbytes) from exc


# ---------------------------------------------------------------------------
# exact modular products


def _split_product(A: np.ndarray, B: np.ndarray, p: int) -> np.ndarray:
    kmax = max(1, (_EXACT - 1) // ((p - 1) ** 2 if p > 1 else 1))
    n = A.shape[1]
    if n == 0:
        return np.zeros((A.shape[0], B.shape[1]), dtype=np.int64)
    out = None
    for k0 in range(0, n, kmax):
        part = A[:, k0 : k0 + kmax].astype(np.float64) @ B[k0 : k0 + kmax].astype(np.float64)
        part = np.fmod(part, p).astype(np.int64)
        out = part if out is None else (out + part) % p
    return out


def matmul_mod(A: np.ndarray, B: np.ndarray, p: int) -> np.ndarray:
    """Exact (A @ B) mod p for int64 residue matrices."""
    if A.shape[1] != B.shape[0]:
        raise ValueError(f"shape mismatch {A.shape} @ {B.shape}")
    if (p - 1) ** 2 < _EXACT:
        return _split_product(A, B, p)
    # large p: split operands into 16-bit halves so each product stays small
    lo_a, hi_a = A & 0xFFFF, A >> 16
    lo_b, hi_b = B & 0xFFFF, B >> 16
    q = 2**16
    kmax = max(1, (_EXACT - 1) // (q * q))
    def raw(X, Y):
        out = np.zeros((X.shape[0], Y.shape[1]), dtype=np.int64)
        for k0 in range(0, X.shape[1], kmax):
            part = X[:, k0 : k0 + kmax].astype(np.float64) @ Y[k0 : k0 + kmax].astype(np.float64)
            out = (out + np.fmod(part, p).astype(np.int64)) % p
        return out
    s = q % p
    hh, hl, lh, ll = raw(hi_a, hi_b), raw(hi_a, lo_b), raw(lo_a, hi_b), raw(lo_a, lo_b)
    mid = (hl + lh) % p
    return ((hh * s % p) * s % p + mid * s % p + ll) % p


def _row_blocks(m: int, workers: int) -> list[tuple[int, int]]:
    workers = max(1, min(workers, m))
    step = -(-m // workers)
    return [(r, min(m, r + step)) for r in range(0, m, step)]


def _update_rows(C: np.ndarray, L: np.ndarray, T: np.ndarray, p: int, pool: ThreadPoolExecutor | None) -> None:
    """C <- (C - L @ T) mod p in place, rows split over the pool."""
    if C.shape[0] == 0 or C.shape[1] == 0 or L.shape[1] == 0:
        return

    def work(r0: int, r1: int) -> None:
        C[r0:r1] = (C[r0:r1] - matmul_mod(L[r0:r1], T, p)) % p

    if pool is None or C.shape[0] < 64:
        work(0, C.shape[0])
        return
    nw = pool._max_workers  # noqa: SLF001
    list(pool.map(lambda b: work(*b), _row_blocks(C.shape[0], nw)))


def unit_lower_inverse(L: np.ndarray, p: int) -> np.ndarray:
    """Inverse of a unit lower-triangular matrix (only the strict lower part of L is read)."""
    k = L.shape[0]
    if k <= 32:
        X = np.eye(k, dtype=np.int64)
        for i in range(1, k):
            X[i] = (X[i] - matmul_mod(L[i : i + 1, :i], X[:i], p)[0]) % p
        return X
    h = k // 2
    A = unit_lower_inverse(L[:h, :h], p)
    D = unit_lower_inverse(L[h:, h:], p)
    C = matmul_mod(D, matmul_mod(L[h:, :h], A, p), p)
    X = np.zeros((k, k), dtype=np.int64)
    X[:h, :h] = A
    X[h:, h:] = D
    X[h:, :h] = (-C) % p
    return X


def upper_inverse(U: np.ndarray, p: int) -> np.ndarray:
    """Inverse of an invertible upper-triangular matrix mod p."""
    k = U.shape[0]
    if k <= 32:
        X = np.zeros((k, k), dtype=np.int64)
        for i in range(k - 1, -1, -1):
            inv = pow(int(U[i, i]), p - 2, p)
            row = np.zeros(k, dtype=np.int64)
            row[i] = 1
            if i + 1 < k:
                row = (row - matmul_mod(U[i : i + 1, i + 1 :], X[i + 1 :], p)[0]) % p
            X[i] = row * inv % p
        return X
    h = k // 2
    A = upper_inverse(U[:h, :h], p)
    D = upper_inverse(U[h:, h:], p)
    B = matmul_mod(matmul_mod(A, U[:h, h:], p), D, p)
    X = np.zeros((k, k), dtype=np.int64)
    X[:h, :h] = A
    X[h:, h:] = D
    X[:h, h:] = (-B) % p
    return X


# ---------------------------------------------------------------------------
# panel factorization


@numba.njit(cache=True, nogil=True)
def _base_factor(A, r0, c0, c1, p, pivcols):
    """Unblocked elimination of A[r0:, c0:c1]; full rows are swapped, multipliers stored in place."""
    m, n = A.shape
    pinv = 1.0 / p
    r = r0
    k = 0
    for c in range(c0, c1):
        if r >= m:
            break
        piv = -1
        for i in range(r, m):
            if A[i, c] != 0:
                piv = i
                break
        if piv < 0:
            continue
        if piv != r:
            for cc in range(n):
                t = A[piv, cc]
                A[piv, cc] = A[r, cc]
                A[r, cc] = t
        # inverse of the pivot by exponentiation
        inv = np.int64(1)
        b = A[r, c]
        ex = p - 2
        while ex > 0:
            if ex & 1:
                x = inv * b
                inv = x - np.int64(np.float64(x) * pinv) * p
                inv += p & (inv >> 63)
                inv -= p & ((p - 1 - inv) >> 63)
            x = b * b
            b = x - np.int64(np.float64(x) * pinv) * p
            b += p & (b >> 63)
            b -= p & ((p - 1 - b) >> 63)
            ex >>= 1
        for i in range(r + 1, m):
            a = A[i, c]
            if a == 0:
                continue
            x = a * inv
            l = x - np.int64(np.float64(x) * pinv) * p
            l += p & (l >> 63)
            l -= p & ((p - 1 - l) >> 63)
            A[i, c] = l
            for cc in range(c + 1, c1):
                x = l * A[r, cc]
                y = x - np.int64(np.float64(x) * pinv) * p
                y += p & (y >> 63)
                y -= p & ((p - 1 - y) >> 63)
                z = A[i, cc] - y
                z += p & (z >> 63)
                A[i, cc] = z
        pivcols[k] = c
        k += 1
        r += 1
    return k


def _factor(A: np.ndarray, r0: int, c0: int, c1: int, p: int, pool) -> list[int]:
    """Factor columns [c0, c1) of A below row r0; returns pivot columns (rows r0, r0+1, ...)."""
    if r0 >= A.shape[0] or c0 >= c1:
        return []
    if c1 - c0 <= _BASE_WIDTH:
        buf = np.empty(c1 - c0, dtype=np.int64)
        k = _base_factor(A, r0, c0, c1, p, buf)
        return [int(c) for c in buf[:k]]
    cm = (c0 + c1) // 2
    left = _factor(A, r0, c0, cm, p, pool)
    k1 = len(left)
    if k1:
        L = A[r0 : r0 + k1, left]
        top = matmul_mod(unit_lower_inverse(L, p), A[r0 : r0 + k1, cm:c1], p)
        A[r0 : r0 + k1, cm:c1] = top
        _update_rows(A[r0 + k1 :, cm:c1], A[r0 + k1 :, left], top, p, pool)
    right = _factor(A, r0 + k1, cm, c1, p, pool)
    return left + right


# ---------------------------------------------------------------------------
# panel driver with checkpoints

_CKPT_MAGIC = b"CRKP"
_CKPT_VERSION = 1
_CKPT_HEAD = struct.Struct("<4sIQQQII")


class Eliminator:
    """Panel-by-panel rank computation whose state between panels is the residual matrix."""

    def __init__(
        self,
        residual: np.ndarray,
        p: int,
        rows: int | None = None,
        cols: int | None = None,
        rank_so_far: int = 0,
        panels_done: int = 0,
        panel: int = DEFAULT_PANEL,
        workers: int = 1,
        keep_factors: bool = False,
    ):
        self.p = p
        self.R = np.ascontiguousarray(residual, dtype=np.int64)
        self.rows = self.R.shape[0] + rank_so_far if rows is None else rows
        self.cols = self.R.shape[1] if cols is None else cols
        self.rank = rank_so_far
        self.panels_done = panels_done
        self.panel = panel
        self.workers = max(1, workers)
        self.keep_factors = keep_factors
        self.col_offset = self.cols - self.R.shape[1]
        # echelon rows (global column indexing) and pivot columns, when kept
        self.u_rows: list[np.ndarray] = []
        self.pivots: list[int] = []
        self.elapsed = 0.0

    @property
    def done(self) -> bool:
        return self.R.shape[0] == 0 or self.R.shape[1] == 0

    def step(self, pool=None) -> int:
        """Eliminate one panel; returns the number of pivots it found."""
        if self.done:
            return 0
        t0 = time.perf_counter()
        p = self.p
        R = self.R
        w = min(self.panel, R.shape[1])
        piv = _factor(R, 0, 0, w, p, pool)
        k = len(piv)
        if k:
            top = matmul_mod(unit_lower_inverse(R[:k, piv], p), R[:k, w:], p)
            R[:k, w:] = top
            _update_rows(R[k:, w:], R[k:, piv], top, p, pool)
        if self.keep_factors and k:
            for a, c in enumerate(piv):
                row = np.zeros(self.cols, dtype=np.int64)
                row[self.col_offset + c :] = R[a, c:]
                self.u_rows.append(row)
                self.pivots.append(self.col_offset + c)
        self.R = np.ascontiguousarray(R[k:, w:])
        self.rank += k
        self.col_offset += w
        self.panels_done += 1
        self.elapsed += time.perf_counter() - t0
        return k

    def run(
        self,
        max_panels: int | None = None,
        checkpoint_path: str | Path | None = None,
        on_panel: Callable[["Eliminator"], None] | None = None,
    ) -> "Eliminator":
        limits = threadpool_limits(limits=1, user_api="blas")
        pool = ThreadPoolExecutor(self.workers) if self.workers > 1 else None
        try:
            with limits, (pool or nullcontext()):
                steps = 0
                while not self.done and (max_panels is None or steps < max_panels):
                    self.step(pool)
                    steps += 1
                    if checkpoint_path is not None:
                        self.checkpoint(checkpoint_path)
                    if on_panel is not None:
                        on_panel(self)
        finally:
            if pool is not None:
                pool.shutdown()
        return self

    def report(self, checkpoint_id: str | None = None) -> RankReport:
        return RankReport(self.rank, self.rows, self.cols, self.p, self.elapsed, self.panels_done, checkpoint_id)

    # -- persistence -------------------------------------------------------

    def checkpoint(self, path: str | Path) -> None:
        path = Path(path)
        head = _CKPT_HEAD.pack(_CKPT_MAGIC, _CKPT_VERSION, self.p, self.rows, self.cols, self.panels_done, self.rank)
        payload = self.R.astype("<u4").tobytes()
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "wb") as fh:
            fh.write(head)
            fh.write(struct.pack("<Q", _crc64(head)))
            fh.write(payload)
            fh.write(struct.pack("<Q", _crc64(payload)))
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)

    @classmethod
    def resume(cls, path: str | Path, panel: int = DEFAULT_PANEL, workers: int = 1) -> "Eliminator":
        path = Path(path)
        raw = path.read_bytes()
        hs = _CKPT_HEAD.size
        if len(raw) < 4 or raw[:4] != _CKPT_MAGIC:
            raise CorruptCheckpoint(path, 0, "bad magic")
        if len(raw) < hs + 8:
            raise CorruptCheckpoint(path, len(raw), "truncated header")
        head = raw[:hs]
        (stored,) = struct.unpack_from("<Q", raw, hs)
        if stored != _crc64(head):
            raise CorruptCheckpoint(path, hs, "header CRC mismatch")
        _, version, p, rows, cols, panels_done, rank = _CKPT_HEAD.unpack(head)
        if version != _CKPT_VERSION:
            raise CorruptCheckpoint(path, 4, f"unsupported version {version}")
        body_start = hs + 8
        if len(raw) < body_start + 8:
            raise CorruptCheckpoint(path, len(raw), "truncated payload")
        payload = raw[body_start:-8]
        (pcrc,) = struct.unpack_from("<Q", raw, len(raw) - 8)
        if pcrc != _crc64(payload):
            raise CorruptCheckpoint(path, len(raw) - 8, "payload CRC mismatch")
        r_rows = rows - rank
        if len(payload) % 4 or (r_rows and (len(payload) // 4) % r_rows):
            raise CorruptCheckpoint(path, body_start, "payload size inconsistent with header")
        r_cols = (len(payload) // 4) // r_rows if r_rows else 0
        residual = np.frombuffer(payload, dtype="<u4").astype(np.int64).reshape(r_rows, r_cols)
        return cls(residual, p, rows, cols, rank, panels_done, panel=panel, workers=workers)


def rank_fp(
    m: DenseMatrixFp,
    workers: int = 1,
    panel: int = DEFAULT_PANEL,
    checkpoint_path: str | Path | None = None,
) -> RankReport:
    """Exact rank over GF(p)."""
    t0 = time.perf_counter()
    elim = Eliminator(m.data.copy(), m.p, panel=panel, workers=workers)
    elim.run(checkpoint_path=checkpoint_path)
    rep = elim.report(str(checkpoint_path) if checkpoint_path else None)
    rep.elapsed = time.perf_counter() - t0
    log.info("stage=rank rows=%d cols=%d rank=%d panels=%d seconds=%.3f", rep.rows, rep.cols, rep.rank, rep.panels, rep.elapsed)
    return rep


def echelon_fp(m: DenseMatrixFp, workers: int = 1, panel: int = DEFAULT_PANEL) -> tuple[np.ndarray, list[int]]:
    """Row echelon form U (rank x cols) and its pivot columns."""
    elim = Eliminator(m.data.copy(), m.p, panel=panel, workers=workers, keep_factors=True)
    elim.run()
    U = np.array(elim.u_rows, dtype=np.int64).reshape(len(elim.u_rows), m.cols)
    return U, elim.pivots


def nullspace_fp(m: DenseMatrixFp, workers: int = 1) -> list[np.ndarray]:
    """Basis of {x : m x = 0}; every vector is checked before it is returned."""
    p = m.p
    U, piv = echelon_fp(m, workers)
    free = [c for c in range(m.cols) if c not in set(piv)]
    if not free:
        return []
    X = np.zeros((m.cols, len(free)), dtype=np.int64)
    if piv:
        Uinv = upper_inverse(U[:, piv], p)
        X[piv] = (-matmul_mod(Uinv, U[:, free], p)) % p
    X[free, np.arange(len(free))] = 1
    check = matmul_mod(m.data, X, p)
    if check.any():
        raise AssertionError("nullspace verification failed")
    return [X[:, j].copy() for j in range(len(free))]


# ---------------------------------------------------------------------------
# streamed fill


def fill_blocks(
    rows: int,
    cols: int,
    block_gen: Callable[[int, int], np.ndarray],
    p: int,
    workers: int = 1,
    block_rows: int = 32,
) -> DenseMatrixFp:
    """Fill a matrix from a row-block generator ``block_gen(r0, r1)``; the order of blocks is irrelevant."""
    data = _alloc((rows, cols))
    blocks = [(r, min(rows, r + block_rows)) for r in range(0, rows, block_rows)]

    def work(b: tuple[int, int]) -> None:
        r0, r1 = b
        data[r0:r1] = block_gen(r0, r1)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(work, blocks))
    else:
        for b in blocks:
            work(b)
    return DenseMatrixFp(p, data)


def fill_streamed(
    rows: int, cols: int, gen: Callable[[int, int], int], p: int, workers: int = 1
) -> DenseMatrixFp:
    """Fill entry by entry from a pure generator ``gen(i, j)``."""

    def block(r0: int, r1: int) -> np.ndarray:
        out = np.empty((r1 - r0, cols), dtype=np.int64)
        for i in range(r0, r1):
            for j in range(cols):
                out[i - r0, j] = int(gen(i, j)) % p
        return out

    return fill_blocks(rows, cols, block, p, workers)
