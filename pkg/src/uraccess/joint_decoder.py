"""Alternating BP joint decoder for one ALOHA slot.

Up to T users share an LDPC code and transmit BPSK over independent
quasi-static Rayleigh fades.  Each user branch keeps bit beliefs (LLRs) and a
Gaussian-mixture posterior for the real and imaginary parts of its fading
coefficient.  Branches are visited serially; a visit passes

    1. functional -> fading   (per-node likelihood of H_u, one GM per node)
    2. fading -> functional   (product of a random subset of the node messages)
    3. functional -> code     (channel LLRs, Monte-Carlo over fading samples)
    4. LDPC BP

Since x_j is real (+/-sqrt(P)), Re(y) depends only on Re(H) and Im(y) only on
Im(H), so every component carries separate means and variances for the two
parts.  The parts do share component weights: the node message for H_u is
+-(y - interference)/sqrt(P) with one common sign, and splitting the weights
would let the two signs flip independently.

Bit beliefs passed from a user's code to the functional nodes are the BP
extrinsic values (check-node contributions only).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from . import gm as gmlib
from .gm import GaussianMixture, GmConfig
from .ldpc import LLR_CLAMP, BpDecoder, ParityCheckMatrix

HALF = 0.5          # per-part variance of both the fading prior and the noise
KNOWN_H_VAR = 1e-8  # variance of the clamped posterior under the known-fading hook


@dataclass(frozen=True)
class JointDecoderConfig:
    T: int = 4
    outer_iters: int = 25
    inner_iters: int = 50
    attempts: int = 1
    gm: GmConfig = field(default_factory=GmConfig)
    subset_size: int | None = None        # None -> min(32, n1)
    bp_variant: str = "sum-product"
    use_prior: bool = True                # multiply the N(0, 1/2) prior into the fading posterior
    patience: int | None = None           # stop after this many idle outer iterations past the first success

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.attempts < 1:
            raise ValueError("attempts must be >= 1")
        if self.outer_iters < 1 or self.inner_iters < 1:
            raise ValueError("iteration counts must be >= 1")
        if self.subset_size is not None and self.subset_size < 1:
            raise ValueError("subset_size must be >= 1")
        if self.patience is not None and self.patience < 1:
            raise ValueError("patience must be >= 1")

    def subset_for(self, n1: int) -> int:
        s = min(32, n1) if self.subset_size is None else self.subset_size
        if s > n1:
            raise ValueError(f"subset_size {s} exceeds n1={n1}")
        return s


def fading_prior() -> GaussianMixture:
    """N(0, 1/2) on each of the real and imaginary parts."""
    return GaussianMixture.single([0.0, 0.0], HALF)


def point_fading(h: complex, var: float = KNOWN_H_VAR) -> GaussianMixture:
    return GaussianMixture.single([h.real, h.imag], var)


def _ri(z) -> np.ndarray:
    z = np.asarray(z, complex)
    return np.stack([z.real, z.imag], axis=-1)


@dataclass
class UserBranchState:
    llrs: np.ndarray                       # bit beliefs sent to functional nodes
    fading: GaussianMixture                # 2-D (re, im) posterior
    decoded: np.ndarray | None = None      # codeword bits once claimed

    @classmethod
    def initial(cls, n1: int) -> "UserBranchState":
        return cls(np.zeros(n1), fading_prior(), None)

    @property
    def fading_re(self) -> GaussianMixture:
        return self.fading.marginal(0)

    @property
    def fading_im(self) -> GaussianMixture:
        return self.fading.marginal(1)

    def reset(self):
        self.llrs = np.zeros_like(self.llrs)
        self.fading = fading_prior()
        self.decoded = None


@dataclass
class AttemptOutcome:
    codewords: list[np.ndarray]
    outer_iters_used: int


@dataclass
class SlotDecodeResult:
    codewords: np.ndarray                  # (L, n1) uint8, unique rows
    per_attempt: list[AttemptOutcome]

    @property
    def estimated_user_count(self) -> int:
        return self.codewords.shape[0]

    def contains(self, codeword) -> bool:
        c = np.asarray(codeword, np.uint8)
        return bool(np.any(np.all(self.codewords == c, axis=1))) if len(self.codewords) else False


def sign_patterns(m: int) -> np.ndarray:
    """All 2^m sign vectors, shape (2^m, m)."""
    return np.array(list(itertools.product((1.0, -1.0), repeat=m)), float).reshape(2 ** m, m)


def log_bit_probs(llr) -> tuple[np.ndarray, np.ndarray]:
    """(log P(x=+sqrt P), log P(x=-sqrt P)) from LLRs."""
    L = np.asarray(llr, float)
    return -np.logaddexp(0.0, -L), -np.logaddexp(0.0, L)


# ------------------------------------------------------------------ message 1

def interference_patterns(fadings: list[GaussianMixture], P: float,
                          cfg: GmConfig) -> tuple[np.ndarray, list[GaussianMixture]]:
    """Per sign pattern s, the law of sum_j s_j sqrt(P) H_j + z.

    These mixtures do not depend on the functional node; only the pattern
    weights do.  Returns the (2^m, m) sign array and the mixtures.
    """
    m = len(fadings)
    signs = sign_patterns(m)
    sp = math.sqrt(P)
    out = []
    for s in signs:
        acc = GaussianMixture.single(np.zeros(fadings[0].dim if fadings else 2), HALF)
        for sj, f in zip(s, fadings):
            acc = gmlib.reduce(gmlib.convolve(acc, gmlib.affine(f, sj * sp)), cfg)
        out.append(acc)
    return signs, out


def msg1_batch(y: np.ndarray, own_llr: np.ndarray, other_llr: np.ndarray,
               signs: np.ndarray, patterns: list[GaussianMixture], P: float,
               cfg: GmConfig) -> list[GaussianMixture]:
    """Message 1 for a batch of nodes with complex observations ``y``.

    ``other_llr`` has shape (nodes, T-1); ``signs`` and ``patterns`` come from
    :func:`interference_patterns` over the same users in the same order.
    """
    lp, lm = log_bit_probs(other_llr)
    # log weight of each pattern at each node: (nodes, 2^m)
    pos = signs > 0
    logw = np.where(pos[None], lp[:, None, :], lm[:, None, :]).sum(axis=2)
    cat_lw = np.concatenate([g.log_weight for g in patterns])
    cat_mu = np.concatenate([g.mean for g in patterns])
    cat_var = np.concatenate([g.var for g in patterns])
    owner = np.repeat(np.arange(len(patterns)), [len(g) for g in patterns])
    p_own = 1.0 / (1.0 + np.exp(-np.clip(own_llr, -LLR_CLAMP, LLR_CLAMP)))
    inv = 1.0 / math.sqrt(P)
    out = []
    yv = _ri(y)
    for i in range(len(y)):
        w = GaussianMixture(cat_lw + logw[i, owner], yv[i] - cat_mu, cat_var)
        w = gmlib.prune(w, cfg)
        out.append(gmlib.reduce(gmlib.mix_binary(w, float(p_own[i]), inv), cfg))
    return out


def msg1_functional_to_fading(i: int, u: int, states: list[UserBranchState], y_i: complex,
                              P: float, cfg: GmConfig) -> GaussianMixture:
    """Likelihood message for user ``u``'s fading from functional node ``i``."""
    others = [j for j in range(len(states)) if j != u]
    other_llr = np.array([[states[j].llrs[i] for j in others]]).reshape(1, len(others))
    own = np.array([states[u].llrs[i]])
    signs, pats = interference_patterns([states[j].fading for j in others], P, cfg)
    return msg1_batch(np.array([y_i]), own, other_llr, signs, pats, P, cfg)[0]


# ------------------------------------------------------------------ message 2

def msg2_fading_to_functional(messages: list[GaussianMixture], cfg: GmConfig,
                              subset_size: int | None = None,
                              rng: np.random.Generator | None = None,
                              prior: GaussianMixture | None = None) -> GaussianMixture:
    """Product of a random subset of node messages (optionally times a prior)."""
    if not messages:
        raise ValueError("need at least one incoming message")
    s = len(messages) if subset_size is None else min(subset_size, len(messages))
    if rng is None:
        pick = range(s)
    else:
        pick = rng.choice(len(messages), size=s, replace=False)
    fallback = prior if prior is not None else fading_prior()
    pick = list(pick)
    acc = prior if prior is not None else messages[pick[0]].normalized()
    rest = pick if prior is not None else pick[1:]
    try:
        for k in rest:
            acc = gmlib.reduce(gmlib.multiply(acc, messages[k]), cfg)
        return acc
    except gmlib.DegenerateProduct:
        return fallback


# ------------------------------------------------------------------ message 3

def msg3_llrs(y: np.ndarray, u: int, samples: np.ndarray, llrs: np.ndarray, P: float) -> np.ndarray:
    """Channel LLRs for user ``u`` at every functional node.

    ``samples`` is (T, S) complex: S joint fading draws for all T users.
    ``llrs`` is (T, n1); row ``u`` is ignored.  Averages over samples and
    enumerates the 2^(T-1) bit patterns of the other users exactly.
    """
    T, S = samples.shape
    others = [j for j in range(T) if j != u]
    sp = math.sqrt(P)
    signs = sign_patterns(len(others))
    interf = sp * (samples[others].T @ signs.T)               # (S, 2^m)
    lp, lm = log_bit_probs(np.asarray(llrs)[others].T.reshape(len(y), len(others)))
    logw = np.where(signs[None] > 0, lp[:, None, :], lm[:, None, :]).sum(axis=2)  # (n1, 2^m)
    own = sp * samples[u]                                     # (S,)
    base = y[:, None, None] - interf[None]                    # (n1, S, 2^m)
    tp = -np.abs(base - own[None, :, None]) ** 2 + logw[:, None, :]
    tm = -np.abs(base + own[None, :, None]) ** 2 + logw[:, None, :]
    n1 = len(y)
    llr = gmlib.logsumexp(tp.reshape(n1, -1), axis=1) - gmlib.logsumexp(tm.reshape(n1, -1), axis=1)
    return np.clip(llr, -LLR_CLAMP, LLR_CLAMP)


def msg3_functional_to_llr(i: int, u: int, samples: np.ndarray, y_i: complex,
                           states: list[UserBranchState], P: float) -> float:
    llrs = np.array([[s.llrs[i]] for s in states])
    return float(msg3_llrs(np.array([y_i]), u, samples, llrs, P)[0])


# ------------------------------------------------------------------ slot decoding

def sign_hypotheses(f: GaussianMixture, min_weight: float = 0.05) -> list[GaussianMixture]:
    """Split a posterior into its two half-planes when it is sign-ambiguous.

    With weak bit beliefs the posterior of H is (nearly) symmetric under
    H -> -H, and averaging the message-3 expectation over both signs washes
    the channel LLRs out.  The half-plane is taken relative to the heaviest
    component's mean; the heavier half comes first.  Returns an empty list
    when one half carries less than ``min_weight``.
    """
    head = f.mean[np.argmax(f.log_weight)]
    if not np.any(head):
        return []
    side = f.mean @ head >= 0
    w = np.exp(f.log_weight - f.log_total)
    wp = w[side].sum()
    if min(wp, 1 - wp) < min_weight:
        return []
    halves = [GaussianMixture(f.log_weight[m], f.mean[m], f.var[m]).normalized()
              for m in (side, ~side)]
    return halves if wp >= 0.5 else halves[::-1]


def _sample_fading(states: list[UserBranchState], count: int, rng) -> np.ndarray:
    out = np.empty((len(states), count), complex)
    for k, s in enumerate(states):
        d = s.fading.sample(count, rng)
        out[k] = d[:, 0] + 1j * d[:, 1]
    return out


class JointDecoder:
    """Slot decoder bound to one parity-check matrix and power level."""

    def __init__(self, pcm: ParityCheckMatrix, P: float, cfg: JointDecoderConfig):
        self.pcm, self.P, self.cfg = pcm, float(P), cfg
        self.n1 = pcm.n
        self.subset = cfg.subset_for(self.n1)
        self.bp = BpDecoder(pcm)

    def decode(self, y, rng: np.random.Generator, known_count: int | None = None,
               known_fading=None) -> SlotDecodeResult:
        """Decode one slot.

        ``known_count`` replaces T by the true occupancy (known-K hook);
        ``known_fading`` clamps the fading posteriors to the given coefficients
        and implies T = len(known_fading) (known-H hook).
        """
        y = np.asarray(y, complex)
        if y.shape != (self.n1,):
            raise ValueError(f"received length {y.shape} != n1={self.n1}")
        if known_fading is not None:
            known_fading = np.asarray(known_fading, complex)
            T = len(known_fading)
        else:
            T = self.cfg.T if known_count is None else known_count
        found: dict[bytes, np.ndarray] = {}
        outcomes = []
        if T == 0:
            outcomes.append(AttemptOutcome([], 0))
        else:
            for _ in range(self.cfg.attempts):
                out = self._attempt(y, T, rng, known_fading)
                outcomes.append(out)
                for c in out.codewords:
                    found.setdefault(c.tobytes(), c)
        cw = np.array(list(found.values()), np.uint8).reshape(len(found), self.n1)
        return SlotDecodeResult(cw, outcomes)

    def _attempt(self, y, T, rng, known_fading) -> AttemptOutcome:
        cfg = self.cfg
        states = [UserBranchState.initial(self.n1) for _ in range(T)]
        if known_fading is not None:
            for s, h in zip(states, known_fading):
                s.fading = point_fading(h)
        claimed: dict[bytes, int] = {}
        prior = fading_prior() if cfg.use_prior else None
        idle = 0
        it = 0
        for it in range(1, cfg.outer_iters + 1):
            progress = False
            for u in range(T):
                st = states[u]
                if known_fading is None:
                    self._update_fading(y, u, states, rng, prior)
                if st.decoded is not None:
                    continue
                res = self._visit(y, u, states, rng)
                if res.converged:
                    key = res.bits.tobytes()
                    if key in claimed:
                        st.reset()           # another branch owns this word: explore elsewhere
                        continue
                    claimed[key] = u
                    st.decoded = res.bits
                    st.llrs = LLR_CLAMP * (1.0 - 2.0 * res.bits)
                    progress = True
                else:
                    st.llrs = res.extrinsic
            if all(s.decoded is not None for s in states):
                break
            # idle rounds only count once something has been decoded
            idle = 0 if progress or not claimed else idle + 1
            if cfg.patience is not None and idle >= cfg.patience:
                break
        return AttemptOutcome([s.decoded for s in states if s.decoded is not None], it)

    def _visit(self, y, u, states, rng):
        """Messages 3 and 4 for branch ``u``; sign hypotheses tried first."""
        cfg = self.cfg
        samples = _sample_fading(states, cfg.gm.sample_count, rng)
        llrs = np.array([s.llrs for s in states])
        for half in sign_hypotheses(states[u].fading):
            d = half.sample(cfg.gm.sample_count, rng)
            samples[u] = d[:, 0] + 1j * d[:, 1]
            res = self.bp.decode(msg3_llrs(y, u, samples, llrs, self.P), cfg.inner_iters, cfg.bp_variant)
            if res.converged:
                return res
        samples[u] = _sample_fading([states[u]], cfg.gm.sample_count, rng)[0]
        return self.bp.decode(msg3_llrs(y, u, samples, llrs, self.P), cfg.inner_iters, cfg.bp_variant)

    def _update_fading(self, y, u, states, rng, prior):
        gcfg = self.cfg.gm
        nodes = np.sort(rng.choice(self.n1, size=self.subset, replace=False))
        order = rng.permutation(len(nodes))
        others = [j for j in range(len(states)) if j != u]
        own = states[u].llrs[nodes]
        other_llr = np.array([states[j].llrs[nodes] for j in others]).T.reshape(len(nodes), len(others))
        signs, pats = interference_patterns([states[j].fading for j in others], self.P, gcfg)
        msgs = msg1_batch(y[nodes], own, other_llr, signs, pats, self.P, gcfg)
        states[u].fading = msg2_fading_to_functional([msgs[k] for k in order], gcfg, prior=prior)


def decode_slot(y, pcm: ParityCheckMatrix, P: float, cfg: JointDecoderConfig,
                rng: np.random.Generator, known_count: int | None = None,
                known_fading=None) -> SlotDecodeResult:
    return JointDecoder(pcm, P, cfg).decode(y, rng, known_count, known_fading)
