"""T-fold slotted ALOHA: frame simulation, PUPE bounds, operating-point search.

A frame of n channel uses is cut into L slots of n1 = n // L symbols (the
remainder is unused); every active user picks one slot uniformly and sends
at power L*P there, so the energy per frame is unchanged.

Messages are k-bit vectors (M = 2^k) drawn independently per user.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Protocol, Sequence

import numpy as np
from scipy.stats import binom

from .channel import InvalidParameter, db2lin, draw_fading, lin2db, rng_stream, transmit
from .joint_decoder import JointDecoder, JointDecoderConfig
from .ldpc import Encoder, ParityCheckMatrix, bpsk_map

PMF_FLOOR = 1e-15


@dataclass(frozen=True)
class FrameConfig:
    n: int
    L: int
    K_a: int
    T: int
    k: int          # payload bits, M = 2^k
    P: float        # frame-average power per symbol

    def __post_init__(self):
        if self.L < 1 or self.n < 1 or self.n // self.L < 1:
            raise InvalidParameter("need L >= 1 and n // L >= 1")
        if self.K_a < 0 or self.T < 1 or self.k < 1:
            raise InvalidParameter("need K_a >= 0, T >= 1, k >= 1")

    @property
    def n1(self) -> int:
        return self.n // self.L

    @property
    def slot_power(self) -> float:
        return self.L * self.P

    @property
    def M(self) -> int:
        return 2 ** self.k

    @property
    def ebno_db(self) -> float:
        return float(lin2db(self.n * self.P / self.k))


@dataclass
class SlotTally:
    r: int
    hits: int
    misses: int
    false_alarms: int


@dataclass
class FrameResult:
    pupe: float
    errors: int
    tallies: list[SlotTally] = field(default_factory=list)

    @property
    def overfull_slots(self) -> int:
        """Slots whose decoded list was longer than their occupancy."""
        return sum(t.false_alarms > 0 for t in self.tallies)


def assign_slots(K_a: int, L: int, rng: np.random.Generator) -> np.ndarray:
    if L < 1:
        raise InvalidParameter("L must be >= 1")
    return rng.integers(0, L, size=K_a)


# ------------------------------------------------------------------ slot decoders

class SlotDecoder(Protocol):
    decodes_empty_slots: bool

    def decode(self, messages: np.ndarray, slot_power: float, n1: int,
               rng: np.random.Generator) -> list[np.ndarray]:
        """Decoded message list for a slot whose users sent ``messages`` (r, k)."""


class PerfectDecoder:
    decodes_empty_slots = False

    def decode(self, messages, slot_power, n1, rng):
        return list(messages)


class FailingDecoder:
    decodes_empty_slots = False

    def decode(self, messages, slot_power, n1, rng):
        return []


class GenieTableDecoder:
    """Decodes each of r <= T users independently with probability 1 - pe[r-1]."""
    decodes_empty_slots = False

    def __init__(self, pe: Sequence[float], T: int):
        if len(pe) < T:
            raise ValueError("need one error probability per r = 1..T")
        self.pe, self.T = np.asarray(pe, float), T

    def decode(self, messages, slot_power, n1, rng):
        r = len(messages)
        if r == 0 or r > self.T:
            return []
        ok = rng.random(r) >= self.pe[r - 1]
        return [m for m, good in zip(messages, ok) if good]


class LdpcSlotDecoder:
    """Encode with the LDPC code, pass the slot channel, run the joint decoder.

    ``mode`` selects blind decoding (T branches), the known-count hook, or
    the known-fading hook.
    """
    decodes_empty_slots = True

    def __init__(self, pcm: ParityCheckMatrix, k: int, cfg: JointDecoderConfig, mode: str = "blind"):
        if mode not in ("blind", "known-k", "known-h"):
            raise ValueError(f"unknown mode {mode!r}")
        self.pcm, self.enc, self.cfg, self.mode = pcm, Encoder(pcm, k), cfg, mode
        self._decoders: dict[float, JointDecoder] = {}

    def simulate(self, messages, slot_power, rng):
        """(transmitted codewords, decode result) for one slot."""
        n1 = self.pcm.n
        cws = self.enc.encode(messages) if len(messages) else np.zeros((0, n1), np.uint8)
        fad = draw_fading(len(cws), rng)
        y = transmit([bpsk_map(c, slot_power) for c in cws], fad, rng=rng, n1=n1)
        dec = self._decoders.get(slot_power)
        if dec is None:
            dec = self._decoders[slot_power] = JointDecoder(self.pcm, slot_power, self.cfg)
        kw = {}
        if self.mode == "known-k":
            kw["known_count"] = len(cws)
        elif self.mode == "known-h":
            kw["known_fading"] = fad.coefficients
        return cws, dec.decode(y, rng, **kw)

    def decode(self, messages, slot_power, n1, rng):
        if n1 != self.pcm.n:
            raise InvalidParameter(f"slot length {n1} differs from code length {self.pcm.n}")
        _, res = self.simulate(np.asarray(messages), slot_power, rng)
        return [self.enc.extract(c) for c in res.codewords]


# ------------------------------------------------------------------ frame simulation

def draw_messages(K_a: int, k: int, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, 2, size=(K_a, k), dtype=np.uint8)


def run_frame(cfg: FrameConfig, decoder: SlotDecoder, rng: np.random.Generator) -> FrameResult:
    msgs = draw_messages(cfg.K_a, cfg.k, rng)
    slots = assign_slots(cfg.K_a, cfg.L, rng)
    # W_j = W_i for some i != j counts as an error for both users
    _, inv, counts = np.unique(msgs, axis=0, return_inverse=True, return_counts=True)
    collided = counts[inv.ravel()] > 1 if cfg.K_a else np.zeros(0, bool)
    missed = np.zeros(cfg.K_a, bool)
    tallies = []
    for s in range(cfg.L):
        users = np.flatnonzero(slots == s)
        if users.size == 0 and not getattr(decoder, "decodes_empty_slots", True):
            continue
        out = decoder.decode(msgs[users], cfg.slot_power, cfg.n1, rng)
        listed = {bytes(m) for m in out}
        hit = np.array([bytes(msgs[u]) in listed for u in users], bool)
        missed[users[~hit]] = True
        tallies.append(SlotTally(len(users), int(hit.sum()), int((~hit).sum()),
                                 max(0, len(listed) - int(hit.sum()))))
    err = missed | collided
    errors = int(err.sum())
    return FrameResult(errors / cfg.K_a if cfg.K_a else 0.0, errors, tallies)


# ------------------------------------------------------------------ bounds

def _entry(table, r: int, default: float) -> float:
    if callable(table):
        return float(table(r))
    return float(table[r]) if 0 <= r < len(table) else default


def occupancy_pmf(K: int, L: int, r) -> np.ndarray:
    """P{a given slot holds r of K users}."""
    return binom.pmf(r, K, 1.0 / L)


def epsilon_T_genie(K_a: int, L: int, T: int, M: int, pe_genie) -> float:
    """PUPE bound with a genie-aided slot decoder.

    ``pe_genie`` is a sequence with entry r-1 for r = 1..T (or a callable of r).
    """
    if K_a < 1:
        return 0.0
    acc = 0.0
    for r in range(1, min(T, K_a) + 1):
        pe = float(pe_genie(r)) if callable(pe_genie) else float(pe_genie[r - 1])
        acc += (1.0 - pe) * occupancy_pmf(K_a - 1, L, r - 1)
    return float(np.clip(1.0 - acc + K_a / M, 0.0, 1.0))


def epsilon_T_blind(K_a: int, L: int, T: int, M: int, pe, qe, qe_default: float = 1.0) -> float:
    """PUPE bound for a decoder that estimates the slot occupancy itself.

    ``pe`` and ``qe`` are indexed by r (sequences from r = 0 or callables);
    P_e beyond T is 1.  Occupancies whose pmf falls below 1e-15 are lumped
    together and charged Q_e = 1.
    """
    if K_a < 1:
        return 0.0
    acc = 0.0
    for r in range(1, min(T, K_a) + 1):
        acc += (1.0 - _entry(pe, r, 1.0)) * occupancy_pmf(K_a - 1, L, r - 1)
    rs = np.arange(K_a + 1)
    pmf = occupancy_pmf(K_a, L, rs)
    keep = pmf >= PMF_FLOOR
    q = sum(pmf[r] * _entry(qe, r, qe_default) for r in rs[keep])
    q += pmf[~keep].sum()
    q *= L
    return float(np.clip(1.0 - acc + K_a / M + q, 0.0, 1.0))


# ------------------------------------------------------------------ operating point

class PeModel(Protocol):
    def pe(self, r: int, n1: int, slot_power: float) -> float: ...
    def qe(self, r: int, n1: int, slot_power: float) -> float: ...


@dataclass
class NormalApproxModel:
    """Per-slot error from the fading normal approximation; never overfills a list."""
    k: int
    samples: int = 100_000
    seed: int = 0

    def pe(self, r, n1, slot_power):
        from .fbl import normal_approx_pe
        return normal_approx_pe(2 ** self.k, n1, r, slot_power, self.samples,
                                np.random.default_rng([self.seed, r]))

    def qe(self, r, n1, slot_power):
        return 0.0


@dataclass(frozen=True)
class FblSlotModel:
    """Per-slot error from the projection-decoder bound (spherical codebook, K1 = K2 = r).

    Values are cached per (r, n1, slot power), so repeated bisection steps
    over L and P reuse earlier Monte-Carlo runs.
    """
    k: int
    samples: int = 2000
    seed: int = 0

    def pe(self, r, n1, slot_power):
        return _fbl_pe(self.k, self.samples, self.seed, int(r), int(n1), float(slot_power))

    def qe(self, r, n1, slot_power):
        return 0.0


@lru_cache(maxsize=4096)
def _fbl_pe(k, samples, seed, r, n1, slot_power):
    from .fbl import slot_pe_mc
    if r < 1:
        return 0.0
    return slot_pe_mc(n1, k, r, slot_power, samples, rng_stream(seed, (r, n1)))


@dataclass
class TableModel:
    """Measured P_e / Q_e curves for one slot length, interpolated in slot Eb/N0.

    ``pe[r]`` and ``qe[r]`` are arrays over ``ebno_db`` (slot-level n1*P_slot/k).
    Outside the measured range the curve is held at its end values, which is
    conservative above and optimistic below; points below the grid are
    treated as failures instead.
    """
    n1: int
    k: int
    ebno_db: np.ndarray
    pe_curves: dict[int, np.ndarray]
    qe_curves: dict[int, np.ndarray] = field(default_factory=dict)

    def _slot_ebno(self, slot_power):
        return float(lin2db(self.n1 * slot_power / self.k))

    def _interp(self, curves, r, slot_power, default):
        if r not in curves:
            return default
        x = self._slot_ebno(slot_power)
        if x < self.ebno_db[0]:
            return 1.0
        y = np.log(np.maximum(curves[r], 1e-300))
        return float(np.exp(np.interp(x, self.ebno_db, y)))

    def pe(self, r, n1, slot_power):
        if n1 != self.n1:
            return 1.0
        return self._interp(self.pe_curves, r, slot_power, 1.0)

    def qe(self, r, n1, slot_power):
        if n1 != self.n1:
            return 1.0
        return self._interp(self.qe_curves, r, slot_power, 0.0)


@dataclass
class OperatingPoint:
    feasible: bool
    L: int | None = None
    P: float | None = None
    ebno_db: float | None = None
    epsilon: float | None = None


def default_L_grid(n: int, k: int, count: int = 60) -> list[int]:
    """L values giving distinct slot lengths n // L, from n down to about k / 2."""
    n1s = np.unique(np.geomspace(max(1, k // 2), n, count).astype(int))
    return sorted({max(1, n // int(m)) for m in n1s})


def frame_epsilon(n: int, k: int, K_a: int, T: int, L: int, P: float, model: PeModel,
                  genie: bool = False) -> float:
    n1 = n // L
    sp = L * P
    if genie:
        return epsilon_T_genie(K_a, L, T, 2 ** k, lambda r: model.pe(r, n1, sp))
    return epsilon_T_blind(K_a, L, T, 2 ** k, lambda r: model.pe(r, n1, sp) if r >= 1 else 0.0,
                           lambda r: model.qe(r, n1, sp), qe_default=0.0)


def optimize_operating_point(n: int, k: int, K_a: int, T: int, eps: float, model: PeModel,
                             L_grid: Sequence[int] | None = None,
                             ebno_range_db: tuple[float, float] = (-5.0, 40.0),
                             step_db: float = 0.1, genie: bool = False) -> OperatingPoint:
    """Smallest Eb/N0 on a 0.1 dB grid meeting ``eps`` over the L grid.

    For each L the bound is assumed nonincreasing in P, so the first feasible
    grid point is found by bisection.
    """
    grid = np.round(np.arange(ebno_range_db[0], ebno_range_db[1] + step_db / 2, step_db), 10)
    Ls = default_L_grid(n, k) if L_grid is None else list(L_grid)
    best = OperatingPoint(False)
    for L in Ls:
        if n // L < 1:
            continue
        def eps_at(i):
            return frame_epsilon(n, k, K_a, T, L, float(db2lin(grid[i])) * k / n, model, genie)
        if eps_at(len(grid) - 1) > eps:
            continue
        lo, hi = -1, len(grid) - 1          # eps_at(hi) feasible; lo infeasible or off-grid
        if best.feasible:
            # only points strictly better than the incumbent matter
            cut = int(np.searchsorted(grid, best.ebno_db - 1e-9)) - 1
            if cut < 0 or eps_at(cut) > eps:
                continue
            hi = cut
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if eps_at(mid) <= eps:
                hi = mid
            else:
                lo = mid
        P = float(db2lin(grid[hi])) * k / n
        best = OperatingPoint(True, L, P, float(grid[hi]), eps_at(hi))
    return best


def optimize_two_stage(n: int, k: int, K_a: int, T: int, eps: float, select: PeModel,
                       evaluate: PeModel, L_grid: Sequence[int] | None = None,
                       ebno_range_db: tuple[float, float] = (-5.0, 40.0),
                       step_db: float = 0.1, genie: bool = True) -> OperatingPoint:
    """Pick L with a cheap model, then search P at that L with an expensive one."""
    first = optimize_operating_point(n, k, K_a, T, eps, select, L_grid, ebno_range_db, step_db, genie)
    if not first.feasible:
        return first
    return optimize_operating_point(n, k, K_a, T, eps, evaluate, [first.L], ebno_range_db,
                                    step_db, genie)
