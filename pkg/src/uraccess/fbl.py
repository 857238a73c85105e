"""Finite-blocklength bounds for the quasi-static fading random-access channel.

* projection-decoder achievability (Monte-Carlo over the residual statistic,
  and the analytic variant through order statistics of the fading powers)
* the single-user-based meta-converse
* reference curves: fading normal approximation, treating interference as
  noise, and the crystallized-gain outage bound with weakest-user dropping

Logarithms are natural unless a name says otherwise.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, stats
from scipy.special import gammaln, log_ndtr, logit

from .channel import complex_normal, generate_codebook

LN2 = math.log(2.0)


class DegenerateGeometry(ArithmeticError):
    pass


def log_binom(a, b) -> float:
    """ln C(a, b), valid for huge ``a`` (Python ints are converted exactly enough)."""
    a, b = float(a), float(b)
    if b < 0 or b > a:
        return -math.inf
    return float(gammaln(a + 1) - gammaln(b + 1) - gammaln(a - b + 1))


def log_binom_big(M: int, t: int) -> float:
    """ln C(M, t) for astronomically large M and small t."""
    if t > M:
        return -math.inf
    lm = math.log(M)
    # sum_{i<t} ln(M - i) with M - i ~ M for t << M
    s = sum(lm + math.log1p(-i / M) for i in range(t))
    return s - math.lgamma(t + 1)


# ------------------------------------------------------------------ projection statistic

def _proj_energy(Y: np.ndarray, A: np.ndarray) -> float:
    """||P_span(A) Y||^2 with A given column-wise (n, m)."""
    if A.shape[1] == 0:
        return 0.0
    Q, _ = np.linalg.qr(A)
    return float(np.sum(np.abs(Q.conj().T @ Y) ** 2))


def projection_G(Y, codewords, S0, t: int) -> float:
    """Residual-energy ratio of a candidate error set.

    ``codewords`` holds the K2 transmitted codewords as rows; ``S0`` indexes
    the users assumed missed, and the numerator keeps the best t of them.
    """
    Y = np.asarray(Y, complex)
    C = np.asarray(codewords, complex)
    K2 = C.shape[0]
    S0 = sorted(S0)
    if not 1 <= t <= len(S0):
        raise ValueError("need 1 <= t <= |S0|")
    rest = [i for i in range(K2) if i not in set(S0)]
    yy = float(np.vdot(Y, Y).real)
    den = yy - _proj_energy(Y, C[rest].T)
    if den < 1e-12 * yy:
        raise DegenerateGeometry("residual after the known users vanishes")
    best = max(_proj_energy(Y, C[list(S2) + rest].T) for S2 in itertools.combinations(S0, t))
    return float(np.clip((yy - best) / den, 0.0, 1.0))


def max_G_statistics(n: int, K2: int, K1: int, P: float, samples: int, rng: np.random.Generator,
                     kind: str = "spherical", design_power: float | None = None) -> np.ndarray:
    """Samples of max over S0 of G for each t = 1..K1; shape (samples, K1).

    The codewords of the K2 active users are drawn afresh in every sample
    (random coding), with fading CN(0,1) and unit noise.
    """
    out = np.empty((samples, K1))
    for s in range(samples):
        cb = generate_codebook(K2, n, P, design_power, kind=kind, rng=rng)
        C = cb.codewords
        H = complex_normal(rng, K2)
        Y = H @ C + complex_normal(rng, n)
        for t in range(1, K1 + 1):
            K1t = K2 - K1 + t
            out[s, t - 1] = max(projection_G(Y, C, S0, t)
                                for S0 in itertools.combinations(range(K2), K1t))
    return out


def spurious_share_statistic(n: int, K2: int, K1: int, t: int, P: float, samples: int,
                         rng: np.random.Generator) -> np.ndarray:
    """Residual share captured by t random non-transmitted codewords.

    The known span is [K2] minus S0 (K1 - t transmitted codewords); the share
    of the remaining energy of Y picked up by t independent codewords is
    Beta(t, n - K1).  Returned raw for distributional tests.
    """
    if not 1 <= t <= K1 <= K2:
        raise ValueError("need 1 <= t <= K1 <= K2")
    rest = K1 - t
    out = np.empty(samples)
    for s in range(samples):
        C = complex_normal(rng, (K2, n), P)
        H = complex_normal(rng, K2)
        Y = H @ C + complex_normal(rng, n)
        R = C[:rest].T
        E = complex_normal(rng, (t, n), P).T
        base = _proj_energy(Y, R)
        out[s] = (_proj_energy(Y, np.hstack([E, R])) - base) / (float(np.vdot(Y, Y).real) - base)
    return out


# ------------------------------------------------------------------ achievability

def rate_terms(n: int, M: int, K2: int, K1: int, t: int, delta) -> dict:
    """V_{n,t} and its ingredients for a given delta (array-friendly)."""
    n_prime = n - K1 + t
    s_t = log_binom(n_prime - 1, t - 1) / (n - K1)
    R1 = log_binom_big(M - K2, t) / (n - K1)
    Vt = np.asarray(delta, float) + R1 + s_t
    return {"V": np.exp(-Vt), "V_tilde": Vt, "s_t": s_t, "R1": R1, "n_prime": n_prime}


def kde_tail(samples: np.ndarray, v) -> np.ndarray:
    """Smoothed P{G >= v}: Gaussian kernel on logit(G), Silverman bandwidth."""
    g = np.clip(np.asarray(samples, float), 1e-300, 1 - 1e-16)
    z = logit(g)
    sd = z.std(ddof=1)
    iqr = np.subtract(*np.percentile(z, [75, 25]))
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    h = 0.9 * max(spread, 1e-12) * len(z) ** (-0.2)
    zv = logit(np.clip(np.asarray(v, float), 1e-300, 1 - 1e-16))
    return np.mean(stats.norm.sf((zv[..., None] - z) / h), axis=-1)


def _delta_grid(lo=1e-6, hi=5.0, count=64):
    return np.geomspace(lo, hi, count)


def _refine(fun, grid, vals):
    i = int(np.argmin(vals))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    fine = np.geomspace(a, b, 33) if a > 0 else np.linspace(a, b, 33)
    fv = fun(fine)
    j = int(np.argmin(fv))
    return (fine[j], fv[j]) if fv[j] < vals[i] else (grid[i], vals[i])


@dataclass
class PtBound:
    value: float
    delta: float
    delta1: float | None = None
    delta2: float | None = None


def achievability_pt_mc(G_samples: np.ndarray, n: int, M: int, K2: int, K1: int, t: int) -> PtBound:
    """inf over delta of C(K2, K1t) e^{-(n-K1) delta} + P{max G >= V_{n,t}(delta)}."""
    K1t = K2 - K1 + t
    lc = log_binom(K2, K1t)

    def obj(d):
        V = rate_terms(n, M, K2, K1, t, d)["V"]
        return np.exp(lc - (n - K1) * d) + kde_tail(G_samples, V)

    grid = _delta_grid()
    vals = obj(grid)
    d, v = _refine(obj, grid, vals)
    return PtBound(float(min(v, 1.0)), float(d))


def f_n(delta1, V):
    c = 2 * V / (1 - V) * (1 + delta1)
    return delta1 + 1 + c - np.sqrt(1 + c) * np.sqrt(2 * delta1 + 1 + c)


def order_stat_min_ratio(K2: int, K1: int, t: int, P_design: float, samples: int = 0,
                         rng: np.random.Generator | None = None,
                         g: np.ndarray | None = None) -> np.ndarray:
    """Sorted samples of min_i P'(sum of t consecutive powers)/(1 + P' sum of the next K1t - t).

    Powers are Exp(1) order statistics in decreasing order; pass ``g`` (rows
    sorted decreasingly) to reuse draws.
    """
    K1t = K2 - K1 + t
    if g is None:
        g = -np.sort(-rng.exponential(size=(samples, K2)), axis=1)
    samples = len(g)
    cs = np.concatenate([np.zeros((samples, 1)), np.cumsum(g, axis=1)], axis=1)
    ratios = []
    for i in range(K1 - t + 1):           # zero-based start of the t-block
        num = cs[:, i + t] - cs[:, i]
        den = cs[:, i + K1t] - cs[:, i + t]
        ratios.append(P_design * num / (1 + P_design * den))
    return np.sort(np.min(ratios, axis=0))


def achievability_pt_analytic(n: int, M: int, K2: int, K1: int, t: int, P_design: float,
                              samples: int = 100_000, rng: np.random.Generator | None = None,
                              sorted_ratios: np.ndarray | None = None) -> PtBound:
    """Triple-infimum bound on p_t (Gaussian codebooks)."""
    K1t = K2 - K1 + t
    lc = log_binom(K2, K1t)
    n_prime = n - K1 + t
    if sorted_ratios is None:
        rng = rng if rng is not None else np.random.default_rng(0)
        sorted_ratios = order_stat_min_ratio(K2, K1, t, P_design, samples, rng)
    m = len(sorted_ratios)
    d = _delta_grid()[:, None, None]
    d1 = np.geomspace(1e-4, 50.0, 64)[None, :, None]
    d2 = np.linspace(1e-3, 0.999, 64)[None, None, :]
    V = rate_terms(n, M, K2, K1, t, d)["V"]
    thr = ((1 + d1 * (1 - V)) / V - 1) / (1 - d2)
    prob = np.searchsorted(sorted_ratios, thr, side="right") / m
    with np.errstate(over="ignore"):
        val = np.exp(lc) * (np.exp(-(n - K1) * d) + np.exp(-n_prime * f_n(d1, V))
                            + np.exp(-n_prime * d2 ** 2 / 2)) + prob
    i = np.unravel_index(int(np.argmin(val)), val.shape)
    return PtBound(float(min(val[i], 1.0)), float(d.ravel()[i[0]]), float(d1.ravel()[i[1]]),
                   float(d2.ravel()[i[2]]))


def p0_term(n: int, M: int, K2: int, P: float, P_design: float | None = None,
            kind: str = "spherical") -> float:
    coll = math.exp(log_binom(K2, 2) - math.log(M)) if K2 >= 2 else 0.0
    if kind == "spherical":
        return coll
    return coll + K2 * float(stats.chi2.sf(2 * n * P / P_design, 2 * n))


def achievability_pupe(K2: int, K1: int, p_t, p0: float) -> float:
    """(K2-K1)/K2 + (1/K2) sum_t K_{1,t} p_t + p0, clipped to [0, 1]."""
    p_t = np.asarray(p_t, float)
    if len(p_t) != K1:
        raise ValueError("need one p_t per t = 1..K1")
    K1t = K2 - K1 + np.arange(1, K1 + 1)
    return float(np.clip((K2 - K1) / K2 + np.sum(K1t * p_t) / K2 + p0, 0.0, 1.0))


def slot_pe_mc(n1: int, k: int, r: int, slot_power: float, samples: int = 2000,
               rng: np.random.Generator | None = None, G_samples: np.ndarray | None = None) -> float:
    """Per-slot PUPE bound at K1 = K2 = r with a spherical codebook of 2^k words."""
    rng = rng if rng is not None else np.random.default_rng(0)
    M = 2 ** k
    if G_samples is None:
        G_samples = max_G_statistics(n1, r, r, slot_power, samples, rng)
    pts = [achievability_pt_mc(G_samples[:, t - 1], n1, M, r, r, t).value for t in range(1, r + 1)]
    return achievability_pupe(r, r, pts, p0_term(n1, M, r, slot_power))


def slot_pe_analytic(n1: int, k: int, r: int, slot_power: float, design_ratio: float | None = None,
                     samples: int = 100_000, rng: np.random.Generator | None = None) -> float:
    """Gaussian-codebook slot PUPE bound with K1 = K2 = r.

    The bound holds for every design power P' < P; with ``design_ratio`` unset
    it is minimized over P'/P on a grid (clipping enters through p0).
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    M = 2 ** k
    ratios = np.linspace(0.5, 0.99, 50) if design_ratio is None else [design_ratio]
    g = -np.sort(-rng.exponential(size=(samples, r)), axis=1)   # shared fading draws
    best = 1.0
    for q in ratios:
        Pd = q * slot_power
        p0 = p0_term(n1, M, r, slot_power, Pd, kind="gaussian")
        if p0 >= best:
            continue
        pts = [achievability_pt_analytic(n1, M, r, r, t, Pd,
                                         sorted_ratios=order_stat_min_ratio(r, r, t, Pd, g=g)).value
               for t in range(1, r + 1)]
        best = min(best, achievability_pupe(r, r, pts, p0))
    return best


# ------------------------------------------------------------------ converse

def _lr_tail(n: int, sig2: np.ndarray, b2: float, x: np.ndarray, lower: bool) -> np.ndarray:
    """log P{X <= x} (lower) or log P{X >= x} for X = sum_{i<=n} |W_i|^2, W_i ~ CN(b, sig2).

    Lugannani-Rice saddlepoint approximation; relative error O(1/n).
    """
    with np.errstate(all="ignore"):
        return _lr_tail_impl(n, sig2, b2, x, lower)


def _lr_tail_impl(n, sig2, b2, x, lower):
    sig2 = np.asarray(sig2, float)
    x = np.asarray(x, float)
    # u = 1 / (1 - s sig2), the positive root of b2 u^2 + sig2 u = x / n (rationalized)
    u = 2 * (x / n) / (sig2 + np.sqrt(sig2 ** 2 + 4 * b2 * x / n))
    s = (1 - 1 / u) / sig2
    K = n * (np.log(u) + s * b2 * u)
    K2 = n * (sig2 ** 2 * u ** 2 + 2 * b2 * sig2 * u ** 3)
    w = np.sign(s) * np.sqrt(np.maximum(2 * (s * x - K), 0.0))
    v = s * np.sqrt(K2)
    # evaluate the tail away from the mean: the lower one when w < 0, else the upper one
    ww, vv = -np.abs(w), -np.abs(v)
    log_phi = -0.5 * ww ** 2 - 0.5 * math.log(2 * math.pi)
    mills = np.exp(log_ndtr(ww) - log_phi)              # Phi(w) / phi(w)
    corr = mills + 1 / ww - 1 / vv
    small = np.where(corr > 0, log_phi + np.log(np.maximum(corr, 1e-300)), log_ndtr(ww))
    z = (x - n * (sig2 + b2)) / np.sqrt(n * (sig2 ** 2 + 2 * b2 * sig2))
    small = np.where(np.abs(w) < 1e-3, log_ndtr(-np.abs(z)), small)
    small = np.minimum(small, math.log(0.5))
    same_side = (w < 0) == bool(lower)
    out = np.where(same_side, small, np.log1p(-np.exp(small)))
    return np.minimum(out, 0.0)


def _saddle(n: int, sig2, b2: float, x):
    """Saddlepoint s and u = 1/(1 - s sig2) of sum |W_i|^2, W_i ~ CN(b, sig2), at x."""
    u = 2 * (x / n) / (sig2 + np.sqrt(sig2 ** 2 + 4 * b2 * x / n))
    return (1 - 1 / u) / sig2, u


@dataclass
class ConverseResult:
    log2M: float           # upper bound on log2 M
    gamma: float           # gamma_n (nats per channel use)
    log_tail: float        # ln P{L_n >= n gamma_n}
    widened: bool = False  # tail estimate too noisy; log_tail lowered to a safe value


def meta_converse(n: int, P: float, K_a: int, eps: float, samples: int = 100_000,
                      rng: np.random.Generator | None = None, G: np.ndarray | None = None,
                      method: str = "conditional") -> ConverseResult:
    """Meta-converse bound on log2 M for the quasi-static fading channel.

    Given the fading power G, both sums are scaled noncentral chi-square
    variables.  ``method="conditional"`` evaluates their probabilities given G
    (saddlepoint) and averages over the fading draws; ``method="mc"`` samples
    S_n and L_n directly and falls back to exponentially tilted sampling when
    too few draws land in the L_n tail.
    """
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if method not in ("conditional", "mc"):
        raise ValueError(f"unknown method {method!r}")
    rng = rng if rng is not None else np.random.default_rng(0)
    if G is None:
        G = rng.exponential(size=samples)
    a2 = P * G
    c = n * np.log1p(a2) + n
    if method == "mc":
        return _converse_mc(n, a2, c, K_a, eps, rng)

    # S_n <= n gamma  <=>  sum |aZ - 1|^2 >= (1 + PG)(c - n gamma)
    def log_eps(gamma):
        x = (1 + a2) * (c - n * gamma)
        lp = np.where(x <= 0, 0.0, _lr_tail(n, a2, 1.0, np.maximum(x, 1e-300), lower=False))
        return float(np.log(np.mean(np.exp(lp))))

    target = math.log(eps)
    lo, hi = 0.0, float(np.log1p(a2).max()) + 1.0
    while log_eps(lo) > target:
        lo -= 1.0
    gamma = optimize.brentq(lambda g: log_eps(g) - target, lo, hi, xtol=1e-12)

    # L_n >= n gamma  <=>  sum |aZ - b|^2 <= c - n gamma, b^2 = 1 + PG (per draw)
    x = c - n * gamma
    lt = np.full(len(G), -np.inf)
    ok = x > 0
    b2 = 1 + a2[ok]
    # divide by b^2 so that W/b ~ CN(1, a2/b2)
    lt[ok] = _lr_tail(n, a2[ok] / b2, 1.0, x[ok] / b2, lower=True)
    m = lt.max()
    log_tail = float(m + np.log(np.mean(np.exp(lt - m))))
    return ConverseResult((math.log(K_a) - log_tail) / LN2, float(gamma), log_tail)


def _sum_sq(rng, n, sig2, b2, u=1.0):
    """Draws of sum_{i<=n} |W_i|^2 with W_i ~ CN(b u, sig2 u)."""
    s = sig2 * u
    return 0.5 * s * rng.noncentral_chisquare(2 * n, 2 * n * b2 * u * u / s)


def _converse_mc(n, a2, c, K_a, eps, rng) -> ConverseResult:
    S = (c - _sum_sq(rng, n, a2, 1.0) / (1 + a2)) / n
    gamma = float(np.quantile(S, eps))
    b2 = 1 + a2
    thr = c - n * gamma                      # L_n >= n gamma  <=>  X <= thr
    X = _sum_sq(rng, n, a2 / b2, 1.0) * b2
    hits = X <= thr
    widened = False
    if hits.sum() >= 1000:
        log_tail = float(np.log(hits.mean()))
    else:
        # tilt each conditional law to its saddlepoint at the threshold
        ok = thr > 0
        w = np.zeros(len(a2))
        sig2 = a2[ok] / b2[ok]
        xt = thr[ok] / b2[ok]
        s, u = _saddle(n, sig2, 1.0, xt)
        Xt = _sum_sq(rng, n, sig2, 1.0, u)
        K = n * (np.log(u) + s * u)
        lw = np.where(Xt <= xt, K - s * Xt, -np.inf)
        m = lw.max() if np.isfinite(lw.max()) else 0.0
        w[ok] = np.exp(lw - m)
        mean = w.mean()
        se = w.std(ddof=1) / math.sqrt(len(w))
        if not mean > 0:
            return ConverseResult(math.inf, gamma, -math.inf, True)
        if se > 0.5 * mean:
            widened = True
            mean = max(mean - 2 * se, 0.1 * mean)
        log_tail = float(m + math.log(mean))
    return ConverseResult((math.log(K_a) - log_tail) / LN2, gamma, log_tail, widened)


def converse_min_ebno_db(n: int, k: int, K_a: int, eps: float, samples: int = 100_000,
                         seed: int = 0, lo_db: float = -5.0, hi_db: float = 40.0,
                         tol_db: float = 0.05) -> float:
    """Smallest Eb/N0 (dB) at which the converse admits log2 M >= k."""
    G = np.random.default_rng(seed).exponential(size=samples)

    def ok(db):
        P = 10 ** (db / 10) * k / n
        return meta_converse(n, P, K_a, eps, G=G).log2M >= k

    if not ok(hi_db):
        return math.inf
    if ok(lo_db):
        return lo_db
    while hi_db - lo_db > tol_db:
        mid = 0.5 * (lo_db + hi_db)
        if ok(mid):
            hi_db = mid
        else:
            lo_db = mid
    return hi_db


def converse_min_eps(n: int, k: int, K_a: int, P: float, samples: int = 100_000, seed: int = 0,
                     rel_tol: float = 1e-3) -> float:
    """Smallest eps at which the converse admits log2 M >= k (power P fixed)."""
    G = np.random.default_rng(seed).exponential(size=samples)

    def ok(e):
        return meta_converse(n, P, K_a, e, G=G).log2M >= k

    lo, hi = math.log(1e-8), math.log(1 - 1e-9)
    if not ok(math.exp(hi)):
        return 1.0
    if ok(math.exp(lo)):
        return math.exp(lo)
    while hi - lo > rel_tol:
        mid = 0.5 * (lo + hi)
        if ok(math.exp(mid)):
            hi = mid
        else:
            lo = mid
    return math.exp(hi)


# ------------------------------------------------------------------ reference curves

def awgn_capacity(x):
    return np.log1p(x)


def awgn_dispersion(x):
    return 1.0 - 1.0 / (1.0 + x) ** 2


def _q_normal(n1, x, log_m):
    with np.errstate(divide="ignore", invalid="ignore"):
        arg = (n1 * awgn_capacity(x) - log_m) / np.sqrt(n1 * awgn_dispersion(x))
    return stats.norm.sf(np.where(x > 0, arg, -np.inf))


def normal_approx_pe(M: int, n1: int, r: int, slot_power: float, samples: int = 100_000,
                     rng: np.random.Generator | None = None) -> float:
    """Fading normal approximation of the per-slot error with r users."""
    if r < 1:
        raise ValueError("r must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(0)
    g = rng.exponential(size=(samples, r)).sum(axis=1)
    return float(np.mean(_q_normal(n1, slot_power * g, math.log(M))))


def tin_pe(n: int, k: int, P: float, T: int, samples: int = 100_000,
           rng: np.random.Generator | None = None) -> float:
    """Normal approximation when the other T-1 users are treated as noise."""
    rng = rng if rng is not None else np.random.default_rng(0)
    g = rng.exponential(size=(samples, T))
    sinr = P * g[:, 0] / (1 + P * g[:, 1:].sum(axis=1))
    return float(np.mean(_q_normal(n, sinr, k * LN2)))


def tin_min_ebno_db(n: int, k: int, K_a: int, eps: float, samples: int = 100_000, seed: int = 0,
                    lo_db: float = -10.0, hi_db: float = 60.0, tol_db: float = 0.05) -> float:
    """Least Eb/N0 (dB) at which all K_a users, sharing the frame, meet eps under TIN."""
    def ok(db):
        return tin_pe(n, k, 10 ** (db / 10) * k / n, K_a, samples, np.random.default_rng(seed)) <= eps

    if not ok(hi_db):
        return math.inf
    while hi_db - lo_db > tol_db:
        mid = 0.5 * (lo_db + hi_db)
        if ok(mid):
            hi_db = mid
        else:
            lo_db = mid
    return hi_db


def crystallized_gains(K: int) -> np.ndarray:
    """Exp(1) quantiles at j/(K+1), strongest first."""
    j = np.arange(1, K + 1)
    return -np.log(j / (K + 1))


def decodable(gains_desc: np.ndarray, m: int, P: float, rate: float) -> bool:
    """Are the m strongest users jointly decodable with the rest as noise?"""
    noise = 1 + P * gains_desc[m:].sum()
    if m == 0:
        return True
    weakest_first = gains_desc[:m][::-1]
    cum = np.cumsum(weakest_first)
    s = np.arange(1, m + 1)
    return bool(np.all(s * rate <= np.log1p(P * cum / noise) + 1e-15))


def outage_fraction(K: int, P: float, rate: float) -> float:
    g = crystallized_gains(K)
    m = K
    while m > 0 and not decodable(g, m, P, rate):
        m -= 1
    return (K - m) / K


def shamai_bettesh(K_a: int, n: int, k: int, eps: float = 0.1, lo_db: float = -10.0,
                   hi_db: float = 60.0, tol_db: float = 0.01) -> float:
    """Minimum Eb/N0 (dB) with dropped fraction <= eps under crystallized gains."""
    rate = k * LN2 / n

    def ok(db):
        return outage_fraction(K_a, 10 ** (db / 10) * k / n, rate) <= eps

    if not ok(hi_db):
        return math.inf
    while hi_db - lo_db > tol_db:
        mid = 0.5 * (lo_db + hi_db)
        if ok(mid):
            hi_db = mid
        else:
            lo_db = mid
    return hi_db
