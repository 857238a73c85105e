"""Binary LDPC codes: alist I/O, systematic encoding, BPSK mapping and BP decoding.

LLR sign convention used everywhere in the package: a positive LLR favours
bit 0, which is transmitted as +sqrt(P).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

LLR_CLAMP = 30.0


class CodeError(ValueError):
    """Malformed parity-check matrix or infeasible code dimension."""


@dataclass(frozen=True, eq=False)
class ParityCheckMatrix:
    H: np.ndarray                 # (m, n) uint8
    name: str = ""

    def __post_init__(self):
        H = np.asarray(self.H, dtype=np.uint8) & 1
        if H.ndim != 2:
            raise CodeError("parity-check matrix must be 2-D")
        if np.any(H.sum(axis=0) == 0):
            raise CodeError("parity-check matrix has an empty column")
        if np.any(H.sum(axis=1) == 0):
            raise CodeError("parity-check matrix has an empty row")
        object.__setattr__(self, "H", H)

    @property
    def n(self) -> int:
        return self.H.shape[1]

    @property
    def m(self) -> int:
        return self.H.shape[0]

    @property
    def row_degrees(self) -> np.ndarray:
        return self.H.sum(axis=1).astype(int)

    @property
    def col_degrees(self) -> np.ndarray:
        return self.H.sum(axis=0).astype(int)

    def syndrome(self, bits) -> np.ndarray:
        return (self.H.astype(np.int64) @ np.asarray(bits, np.int64)) % 2

    def is_codeword(self, bits) -> bool:
        return not self.syndrome(bits).any()


# ---------------------------------------------------------------- alist I/O

def parse_alist(text: str, name: str = "") -> ParityCheckMatrix:
    tok = text.split()
    try:
        vals = [int(t) for t in tok]
    except ValueError as exc:
        raise CodeError(f"non-integer token in alist: {exc}") from None
    pos = 0

    def take(k):
        nonlocal pos
        if pos + k > len(vals):
            raise CodeError("alist file truncated")
        out = vals[pos:pos + k]
        pos += k
        return out

    n, m = take(2)
    if n <= 0 or m <= 0:
        raise CodeError("alist dimensions must be positive")
    max_col, max_row = take(2)
    col_deg = take(n)
    row_deg = take(m)
    if max(col_deg) != max_col or max(row_deg) != max_row:
        raise CodeError("alist maximum degrees disagree with degree lists")
    if sum(col_deg) != sum(row_deg):
        raise CodeError("alist column and row degree totals differ")
    if min(row_deg) == 0 or min(col_deg) == 0:
        raise CodeError("alist has a node of zero degree")
    H = np.zeros((m, n), np.uint8)
    for j in range(n):
        idx = [v for v in take(max_col) if v != 0]
        if len(idx) != col_deg[j]:
            raise CodeError(f"column {j + 1}: degree {col_deg[j]} but {len(idx)} indices")
        for i in idx:
            if not 1 <= i <= m:
                raise CodeError(f"column {j + 1}: row index {i} out of range")
            H[i - 1, j] = 1
    # row lists are optional in some writers; check them when present
    if pos < len(vals):
        for i in range(m):
            idx = [v for v in take(max_row) if v != 0]
            if len(idx) != row_deg[i]:
                raise CodeError(f"row {i + 1}: degree {row_deg[i]} but {len(idx)} indices")
            if any(not 1 <= j <= n or H[i, j - 1] != 1 for j in idx):
                raise CodeError(f"row {i + 1}: index list inconsistent with column lists")
    if not np.array_equal(H.sum(axis=1), row_deg):
        raise CodeError("row degrees inconsistent with column lists")
    return ParityCheckMatrix(H, name)


def format_alist(pcm: ParityCheckMatrix) -> str:
    H = pcm.H
    m, n = H.shape
    cd, rd = pcm.col_degrees, pcm.row_degrees
    lines = [f"{n} {m}", f"{cd.max()} {rd.max()}",
             " ".join(map(str, cd)), " ".join(map(str, rd))]
    for j in range(n):
        idx = list(np.flatnonzero(H[:, j]) + 1) + [0] * (cd.max() - cd[j])
        lines.append(" ".join(map(str, idx)))
    for i in range(m):
        idx = list(np.flatnonzero(H[i]) + 1) + [0] * (rd.max() - rd[i])
        lines.append(" ".join(map(str, idx)))
    return "\n".join(lines) + "\n"


def load_parity_matrix(path) -> ParityCheckMatrix:
    p = Path(path)
    return parse_alist(p.read_text(), p.stem)


def shipped_code(name: str) -> ParityCheckMatrix:
    """One of the bundled matrices, e.g. ``"ldpc_200_100"``."""
    ref = resources.files("uraccess.codes").joinpath(f"{name}.alist")
    if not ref.is_file():
        raise FileNotFoundError(f"no bundled code named {name!r}")
    return parse_alist(ref.read_text(), name)


def shipped_code_names() -> list[str]:
    return sorted(p.name[:-6] for p in resources.files("uraccess.codes").iterdir()
                  if p.name.endswith(".alist"))


# ---------------------------------------------------------------- encoding

def gf2_rref(A: np.ndarray) -> tuple[np.ndarray, list[int]]:
    R = np.array(A, dtype=bool)
    rows, cols = R.shape
    pivots = []
    r = 0
    for c in range(cols):
        if r == rows:
            break
        nz = np.flatnonzero(R[r:, c])
        if nz.size == 0:
            continue
        p = r + nz[0]
        if p != r:
            R[[r, p]] = R[[p, r]]
        hit = np.flatnonzero(R[:, c])
        hit = hit[hit != r]
        R[hit] ^= R[r]
        pivots.append(c)
        r += 1
    return R[:r], pivots


@dataclass(frozen=True, eq=False)
class Encoder:
    """Systematic encoder obtained by Gaussian elimination over GF(2)."""
    pcm: ParityCheckMatrix
    k: int
    info_positions: np.ndarray = field(init=False)
    parity_positions: np.ndarray = field(init=False)
    _parity_map: np.ndarray = field(init=False)

    def __post_init__(self):
        R, piv = gf2_rref(self.pcm.H)
        n = self.pcm.n
        free = np.array([c for c in range(n) if c not in set(piv)], dtype=int)
        if self.k > len(free):
            raise CodeError(f"rank {len(piv)} leaves dimension {len(free)} < k={self.k}")
        object.__setattr__(self, "info_positions", free[: self.k])
        object.__setattr__(self, "parity_positions", np.array(piv, dtype=int))
        # pivot bit = sum over info bits of R[row, info]; unused free bits are zero
        object.__setattr__(self, "_parity_map", R[:, free[: self.k]].astype(np.uint8))

    @property
    def n(self) -> int:
        return self.pcm.n

    def encode(self, message) -> np.ndarray:
        msg = np.asarray(message, dtype=np.uint8)
        if msg.shape[-1] != self.k:
            raise CodeError(f"message has {msg.shape[-1]} bits, expected {self.k}")
        c = np.zeros(msg.shape[:-1] + (self.n,), np.uint8)
        c[..., self.info_positions] = msg
        c[..., self.parity_positions] = (msg.astype(np.int64) @ self._parity_map.T.astype(np.int64)) % 2
        return c

    def extract(self, codeword) -> np.ndarray:
        return np.asarray(codeword, np.uint8)[..., self.info_positions]


def encode(message, pcm: ParityCheckMatrix, k: int | None = None) -> np.ndarray:
    msg = np.asarray(message)
    return Encoder(pcm, msg.shape[-1] if k is None else k).encode(msg)


def bpsk_map(bits, P: float) -> np.ndarray:
    """0 -> +sqrt(P), 1 -> -sqrt(P); real samples carried as complex."""
    b = np.asarray(bits)
    return (math.sqrt(P) * (1.0 - 2.0 * b)).astype(complex)


# ---------------------------------------------------------------- decoding

@dataclass
class DecodeOutcome:
    bits: np.ndarray
    converged: bool
    iterations_used: int
    posterior: np.ndarray          # channel + check messages
    extrinsic: np.ndarray          # check messages only (what the code adds)


class BpDecoder:
    """Flooding-schedule belief propagation on a fixed Tanner graph.

    Holds per-instance scratch state; share the matrix, not the decoder.
    """

    def __init__(self, pcm: ParityCheckMatrix):
        self.pcm = pcm
        H = pcm.H
        m, n = H.shape
        dmax = int(pcm.row_degrees.max())
        idx = np.zeros((m, dmax), dtype=np.int64)
        mask = np.zeros((m, dmax), dtype=bool)
        for i in range(m):
            cols = np.flatnonzero(H[i])
            idx[i, : len(cols)] = cols
            mask[i, : len(cols)] = True
        self.idx, self.mask = idx, mask
        self._flat_vars = idx[mask]

    def _var_sum(self, msg_cv: np.ndarray) -> np.ndarray:
        return np.bincount(self._flat_vars, weights=msg_cv[self.mask], minlength=self.pcm.n)

    def _syndrome_ok(self, bits: np.ndarray) -> bool:
        par = (bits[self.idx] & self.mask).sum(axis=1) & 1
        return not par.any()

    def _check_sum_product(self, vc: np.ndarray) -> np.ndarray:
        mask = self.mask
        t = np.tanh(0.5 * np.clip(vc, -LLR_CLAMP, LLR_CLAMP))
        neg = (t < 0) & mask
        logabs = np.where(mask, np.log(np.maximum(np.abs(t), 1e-300)), 0.0)
        tot = logabs.sum(axis=1, keepdims=True)
        parity = (neg.sum(axis=1, keepdims=True) & 1).astype(bool)
        sign = np.where(parity ^ neg, -1.0, 1.0)
        prod = sign * np.exp(tot - logabs)
        out = 2.0 * np.arctanh(np.clip(prod, -1 + 1e-15, 1 - 1e-15))
        return np.where(mask, np.clip(out, -LLR_CLAMP, LLR_CLAMP), 0.0)

    def _check_min_sum(self, vc: np.ndarray) -> np.ndarray:
        mask = self.mask
        a = np.where(mask, np.abs(vc), np.inf)
        neg = (vc < 0) & mask
        parity = (neg.sum(axis=1, keepdims=True) & 1).astype(bool)
        sign = np.where(parity ^ neg, -1.0, 1.0)
        j1 = np.argmin(a, axis=1)
        rows = np.arange(a.shape[0])
        m1 = a[rows, j1]
        a2 = a.copy()
        a2[rows, j1] = np.inf
        m2 = a2.min(axis=1)
        mag = np.repeat(m1[:, None], a.shape[1], axis=1)
        mag[rows, j1] = m2
        return np.where(mask, sign * np.minimum(mag, LLR_CLAMP), 0.0)

    def decode(self, llr, max_iters: int = 50, variant: str = "sum-product",
               early_stop: bool = True) -> DecodeOutcome:
        if max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if variant not in ("sum-product", "min-sum"):
            raise ValueError(f"unknown BP variant {variant!r}")
        check = self._check_sum_product if variant == "sum-product" else self._check_min_sum
        L = np.clip(np.asarray(llr, float), -LLR_CLAMP, LLR_CLAMP)
        msg_cv = np.zeros(self.idx.shape)
        converged = False
        it = 0
        for it in range(1, max_iters + 1):
            vc = (L + self._var_sum(msg_cv))[self.idx] - msg_cv
            msg_cv = check(vc)
            ext = self._var_sum(msg_cv)
            post = L + ext
            bits = (post < 0).astype(np.uint8)
            if self._syndrome_ok(bits):
                converged = True
                if early_stop:
                    break
            else:
                converged = False
        return DecodeOutcome(bits, converged, it, post, ext)


def bp_decode(llr, pcm: ParityCheckMatrix, max_iters: int = 50,
              variant: str = "sum-product", early_stop: bool = True) -> DecodeOutcome:
    return BpDecoder(pcm).decode(llr, max_iters, variant, early_stop)


# ---------------------------------------------------------------- construction

def odd_row_degrees(n: int, m: int, col_degree: int) -> np.ndarray:
    """Row-degree targets built from the two odd values around the mean degree."""
    E = n * col_degree
    lo = int(E // m)
    lo = lo if lo % 2 else lo - 1
    hi = lo + 2
    # a*lo + (m-a)*hi = E
    a, rem = divmod(m * hi - E, 2)
    if rem or not 0 <= a <= m or lo < 1:
        raise CodeError(f"cannot give all {m} rows odd degree with {E} edges")
    return np.array([lo] * a + [hi] * (m - a))


def peg_matrix(n: int, m: int, col_degree: int, rng: np.random.Generator,
               row_targets: np.ndarray | None = None) -> np.ndarray:
    """Progressive-edge-growth parity-check matrix with constant column degree.

    Each new edge of a variable goes to a check at maximal graph distance
    from it (or unreachable), ties broken by lowest check degree, then at
    random.  ``row_targets`` caps the final degree of every check.
    """
    cap = np.full(m, n) if row_targets is None else np.asarray(row_targets)
    var_adj: list[list[int]] = [[] for _ in range(n)]
    chk_adj: list[list[int]] = [[] for _ in range(m)]
    chk_deg = np.zeros(m, int)
    for v in range(n):
        for e in range(col_degree):
            if e == 0:
                pool = np.arange(m)
            else:
                reached = np.zeros(m, bool)
                reached[var_adj[v]] = True
                frontier = set(var_adj[v])
                seen_v = {v}
                while True:
                    nv = {u for c in frontier for u in chk_adj[c]} - seen_v
                    seen_v |= nv
                    nc = {c for u in nv for c in var_adj[u] if not reached[c]}
                    if not nc:
                        pool = np.flatnonzero(~reached)      # some checks unreachable
                        break
                    if reached.sum() + len(nc) == m:
                        pool = np.fromiter(nc, int)          # deepest layer
                        break
                    reached[list(nc)] = True
                    frontier = nc
            open_ = np.setdiff1d(np.flatnonzero(chk_deg < cap), var_adj[v])
            pool = np.intersect1d(pool, open_)
            if pool.size == 0:
                pool = open_
            if pool.size == 0:
                raise CodeError("ran out of check capacity")
            slack = cap[pool] - chk_deg[pool]
            cands = pool[slack == slack.max()]
            c = int(rng.choice(cands))
            var_adj[v].append(c)
            chk_adj[c].append(v)
            chk_deg[c] += 1
    H = np.zeros((m, n), np.uint8)
    for v, cs in enumerate(var_adj):
        H[cs, v] = 1
    return H


def construct_code(n: int, k: int, col_degree: int = 3, seed: int = 0,
                   max_tries: int = 200) -> ParityCheckMatrix:
    """Full-rank PEG code in which every check has odd degree.

    Odd checks keep the complement of any codeword far from the code: the
    complement violates every check.  The joint decoder needs this because
    (H, c) and (-H, complement of c) explain the received signal equally well.
    """
    m = n - k
    targets = odd_row_degrees(n, m, col_degree)
    for t in range(max_tries):
        rng = np.random.default_rng([seed, t])
        try:
            H = peg_matrix(n, m, col_degree, rng, rng.permutation(targets))
        except CodeError:
            continue
        if np.any(H.sum(axis=1) % 2 == 0):
            continue
        if len(gf2_rref(H)[1]) != m:
            continue
        return ParityCheckMatrix(H, f"ldpc_{n}_{k}")
    raise CodeError(f"no full-rank [{n},{k}] code found in {max_tries} tries")
