"""Energy-per-bit bounds in the many-user limit K_a = mu n, n -> infinity.

E = P_tot / (mu log2 M1), reported in dB.  Every other logarithm is natural.
Quantities of order 1/M1 are carried multiplied by M1, since M1 = 2^100 is far
beyond what can be added to 1 in double precision.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize, stats

from .channel import InvalidParameter

LN2 = math.log(2.0)


@dataclass(frozen=True)
class AsymptoticParams:
    mu: float        # user density K_a / n
    k: float         # log2 M1, payload bits per user
    eps: float       # target PUPE

    def __post_init__(self):
        if not 0 < self.mu < 1:
            raise InvalidParameter("mu must lie in (0, 1)")
        if not self.k > 1:
            raise InvalidParameter("need M1 > 2")
        if not 0 < self.eps < 1:
            raise InvalidParameter("eps must lie in (0, 1)")

    @property
    def M1(self) -> float:
        return 2.0 ** self.k

    @property
    def log_M1(self) -> float:
        return self.k * LN2

    def ebno_db(self, P_tot) -> np.ndarray | float:
        return 10 * np.log10(np.asarray(P_tot) / (self.mu * self.k))

    def p_tot(self, ebno_db) -> np.ndarray | float:
        return self.mu * self.k * 10 ** (np.asarray(ebno_db) / 10)


# ------------------------------------------------------------------ helpers

def _xlogx(a):
    a = np.asarray(a, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(a > 0, a * np.log(np.where(a > 0, a, 1.0)), 0.0)


def alpha(a, b):
    """a ln a - b ln b + b - a, with 0 ln 0 = 0."""
    if np.any(np.asarray(a) < 0) or np.any(np.asarray(b) < 0):
        raise InvalidParameter("alpha needs nonnegative arguments")
    return _xlogx(a) - _xlogx(b) + np.asarray(b, float) - np.asarray(a, float)


def h(p):
    """Binary entropy in nats."""
    p = np.asarray(p, float)
    return -_xlogx(p) - _xlogx(1 - p)


def h2(p):
    """Binary entropy in bits."""
    return h(p) / LN2


def scaled_h(x, N):
    """N h(x / N) for 0 <= x <= N, accurate when N is huge."""
    x = np.asarray(x, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        head = np.where(x > 0, x * (math.log(N) - np.log(np.where(x > 0, x, 1.0))), 0.0)
    rest = N - x
    with np.errstate(divide="ignore", invalid="ignore"):
        tail = np.where(rest > 0, rest * np.log1p(-x / N), 0.0)
    return head - tail


def _bisect_vec(fun, lo, hi, iters=200):
    """Vectorized bisection for increasing ``fun`` with fun(lo) < 0 < fun(hi)."""
    lo, hi = np.array(lo, float), np.array(hi, float)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        up = fun(mid) > 0
        hi = np.where(up, mid, hi)
        lo = np.where(up, lo, mid)
    return 0.5 * (lo + hi)


# ------------------------------------------------------------------ achievability

def delta2_star(q):
    """Smallest x in (0, 1) with -ln(1 - x) - x > q (0 when q = 0)."""
    q = np.asarray(q, float)
    g = lambda x: -np.log1p(-x) - x - q
    return np.where(q > 0, _bisect_vec(g, np.zeros_like(q), np.full_like(q, 1 - 1e-16)), 0.0)


def search_point(p: AsymptoticParams, nu, theta, xi) -> dict:
    """All derived quantities of one (nu, theta, xi) point; arrays broadcast."""
    mu = p.mu
    nu, theta, xi = np.broadcast_arrays(*(np.asarray(v, float) for v in (nu, theta, xi)))
    hh = h(1 - nu * (1 - theta))
    d_star = mu * hh / (1 - mu * nu)
    v_tilde = (d_star
               + mu * scaled_h(theta * nu, p.M1 - 1) / (1 - mu * nu)
               + (1 - mu * nu * (1 - theta)) / (1 - mu * nu)
               * h(theta * mu * nu / (1 - mu * nu * (1 - theta))))
    V = np.exp(-v_tilde)
    c = 2 * V / (1 - V)
    q = mu * hh / (1 - mu * nu * (1 - theta))
    d1 = q * (1 + c) + np.sqrt(q ** 2 * (c ** 2 + 2 * c) + 2 * q * (1 + c))
    d2 = delta2_star(q)
    f = ((1 + d1 * (1 - V)) / V - 1) / (1 - d2)
    with np.errstate(divide="ignore", invalid="ignore"):
        f_hat = f / alpha(xi, xi + nu * theta)
        den = 1 - f_hat * alpha(xi + nu * theta, xi + 1 - nu * (1 - theta))
        P = np.where((den > 0) & np.isfinite(f_hat), f_hat / den, np.inf)
    return {"V_tilde": v_tilde, "V": V, "c": c, "q": q, "delta": d_star, "delta1": d1,
            "delta2": d2, "f": f, "f_hat": f_hat, "P_tot": P}


def _sup_over_theta_xi(p: AsymptoticParams, nu: float, n_theta=256, n_xi=64, levels=2) -> float:
    """sup of P_tot,nu over theta in (t_lo, 1] and xi in [0, nu (1 - theta)].

    theta is parameterized by its distance to the open end t_lo on a log
    grid, since the supremum is typically approached as theta -> t_lo.
    """
    t_lo = (p.eps - (1 - nu)) / nu
    ld = np.linspace(-12, 0, n_theta)            # log10 of (theta - t_lo) / (1 - t_lo)
    uu = np.linspace(0, 1, n_xi)                 # xi / (nu (1 - theta))
    best = -np.inf
    step_d, step_u = ld[1] - ld[0], uu[1] - uu[0]
    for _ in range(levels + 1):
        D, U = np.meshgrid(ld, uu, indexing="ij")
        T = t_lo + (1 - t_lo) * 10.0 ** D
        P = search_point(p, nu, T, U * nu * (1 - T))["P_tot"]
        if not np.all(np.isfinite(P)):
            return math.inf
        i, j = np.unravel_index(int(np.argmax(P)), P.shape)
        best = max(best, float(P[i, j]))
        ld = np.clip(ld[i] + step_d * np.linspace(-1, 1, 33), -12, 0)
        uu = np.clip(uu[j] + step_u * np.linspace(-1, 1, 17), 0, 1)
        step_d, step_u = step_d / 16, step_u / 8
    return best


@dataclass
class AchResult:
    ebno_db: float
    P_tot: float
    nu: float
    feasible: bool


def ach_projection(p: AsymptoticParams, n_nu: int = 32) -> AchResult:
    """Projection-decoder achievability, minimized over the decoded fraction nu."""
    nus = 1 - p.eps + p.eps * np.arange(1, n_nu + 1) / n_nu
    vals = np.array([_sup_over_theta_xi(p, nu) for nu in nus])
    i = int(np.argmin(vals))
    if not np.isfinite(vals[i]):
        return AchResult(math.inf, math.inf, float(nus[i]), False)
    return AchResult(float(p.ebno_db(vals[i])), float(vals[i]), float(nus[i]), True)


# ------------------------------------------------------------------ replica prediction

def _mi_scaled(tau: float, log_p: float) -> float:
    """M1 I(X; X + sqrt(tau) Z) for X ~ p CN(0,1) + (1-p) delta_0, in nats.

    Write X = B H with B ~ Bernoulli(p).  Then I(X;Y) = I(B;Y) + p ln(1 + 1/tau),
    and since both conditional laws of |Y|^2 are exponential (means 1 + tau
    and tau), I(B;Y) = p D(g1||f) + (1-p) D(g0||f) with one-dimensional
    integrals over r = |Y|^2.
    """
    p = math.exp(log_p)
    s = tau
    log_q = math.log1p(-p)
    ell0, slope = math.log(s / (1 + s)), 1 / (s * (1 + s))

    def d1(r):
        ell = ell0 + slope * r
        return math.exp(-r / (1 + s)) / (1 + s) * -np.logaddexp(log_p, log_q - ell)

    def d0(r):
        ell = ell0 + slope * r
        if log_p + ell < -20:
            val = -math.log1p(p * math.expm1(ell)) / p
        else:
            val = -np.logaddexp(log_q, log_p + ell) / p
        return math.exp(-r / s) / s * val

    r_star = max((-log_p - ell0) / slope, 0.0)
    edges = sorted({0.0, s, 10 * s, 0.5 * r_star, r_star, r_star + 20 * s * (1 + s),
                    r_star + 40 * (1 + s)})
    tot = 0.0
    for fun in (d1, d0):
        w = 1.0 if fun is d1 else (1 - p)
        acc = sum(integrate.quad(fun, a, b, limit=200, epsabs=1e-13, epsrel=1e-11)[0]
                  for a, b in zip(edges[:-1], edges[1:]) if b > a)
        acc += integrate.quad(fun, edges[-1], np.inf, limit=200, epsabs=1e-13)[0]
        tot += w * acc
    return tot + math.log1p(1 / s)


def mutual_information(tau: float, p: float) -> float:
    """I(X; X + sqrt(tau) Z) in nats."""
    return p * _mi_scaled(tau, math.log(p))


def replica_objective(p: AsymptoticParams, P_tot: float, tau):
    """M1 times the replica free-energy objective; minimized over tau."""
    tau = np.atleast_1d(np.asarray(tau, float))
    lp = -p.log_M1
    return np.array([(math.log(t) + p.log_M1) / p.mu + 1 / (t * P_tot) + _mi_scaled(t, lp)
                     for t in tau])


def posterior_active(r, tau: float, log_p: float):
    """P{X != 0 | |Y|^2 = r} for the scalar channel."""
    r = np.asarray(r, float)
    a = log_p - np.log1p(tau) - r / (1 + tau)
    b = math.log1p(-math.exp(log_p)) - math.log(tau) - r / tau
    return np.exp(a - np.logaddexp(a, b))


@dataclass
class ReplicaState:
    tau_grid: np.ndarray
    objective: np.ndarray
    sigma2: float
    radius: float          # |Y|^2 threshold equivalent to the posterior cutoff
    threshold: float       # posterior cutoff T
    pupe: float
    flat: bool             # competing minimizers within 1e-9


def replica_state(p: AsymptoticParams, P_tot: float, n_tau: int = 96) -> ReplicaState:
    # the interference-free minimizer sits near mu / P_tot
    grid = np.geomspace(min(1e-7, 1e-2 * p.mu / P_tot), 1e2, n_tau)
    obj = replica_objective(p, P_tot, grid)
    i = int(np.argmin(obj))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, n_tau - 1)]
    res = optimize.minimize_scalar(lambda lt: replica_objective(p, P_tot, math.exp(lt))[0],
                                   bounds=(math.log(lo), math.log(hi)), method="bounded",
                                   options={"xatol": 1e-10})
    s2 = float(math.exp(res.x)) if res.fun <= obj[i] else float(grid[i])
    best = min(float(res.fun), float(obj[i]))
    # another local minimum (away from the chosen one) as good as the best -> flag
    far = np.abs(np.log(grid / s2)) > 1.0
    loc = (np.r_[True, obj[1:] < obj[:-1]] & np.r_[obj[:-1] < obj[1:], True]) & far
    flat = bool(np.any(np.abs(obj[loc] - best) <= 1e-9 * max(1.0, abs(best))))
    r, T, pupe = _threshold(s2, -p.log_M1)
    return ReplicaState(grid, obj, s2, r, T, pupe, flat)


def _threshold(s2: float, log_p: float):
    """Radius r with P{|Y|^2 > r} = p; returns (r, posterior cutoff, PUPE)."""
    log_q = math.log1p(-math.exp(log_p))

    def g(r):   # log P{|Y|^2 > r} - log p
        return float(np.logaddexp(log_p - r / (1 + s2), log_q - r / s2)) - log_p

    hi = (1 + s2) * 1.0 + s2 * (-log_p) + 1.0
    while g(hi) > 0:
        hi *= 2
    r = optimize.brentq(g, 0.0, hi, xtol=1e-300, rtol=1e-15)
    T = float(posterior_active(r, s2, log_p))
    return r, T, float(-math.expm1(-r / (1 + s2)))


@dataclass
class BoundResult:
    ebno_db: float
    P_tot: float


def replica_optimal(p: AsymptoticParams, lo_db: float = -10.0, hi_db: float = 100.0,
                    tol_db: float = 0.01) -> BoundResult:
    """Least E at which the replica-symmetric PUPE is at most eps."""
    ok = lambda db: replica_state(p, float(p.p_tot(db))).pupe <= p.eps
    if not ok(hi_db):
        return BoundResult(math.inf, math.inf)
    while hi_db - lo_db > tol_db:
        mid = 0.5 * (lo_db + hi_db)
        if ok(mid):
            hi_db = mid
        else:
            lo_db = mid
    return BoundResult(hi_db, float(p.p_tot(hi_db)))


# ------------------------------------------------------------------ converses

def _check_conv(p: AsymptoticParams):
    if p.eps > 1 - 1 / p.M1:
        raise InvalidParameter("eps must not exceed 1 - 1/M1")


def conv_fano(p: AsymptoticParams) -> BoundResult:
    """Genie plus Fano converse.

    For each theta the constraint is linear in P_tot after exponentiating,
    so the least feasible P_tot is the maximum over theta of the per-theta
    requirement (grid of 1000 points, then a bounded refinement).
    """
    _check_conv(p)
    mu = p.mu
    rhs0 = p.eps * mu * (p.log_M1 + math.log1p(-1 / p.M1)) + mu * float(h(p.eps))

    def need(theta):
        lhs = mu * theta * p.log_M1 - rhs0
        a = alpha(1 - theta, 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(lhs > 0, np.expm1(lhs) / a, 0.0)

    th = np.linspace(0, 1, 1001)
    v = need(th)
    i = int(np.argmax(v))
    if v[i] <= 0:
        return BoundResult(-math.inf, 0.0)
    a, b = th[max(i - 1, 0)], th[min(i + 1, 1000)]
    r = optimize.minimize_scalar(lambda t: -float(need(t)), bounds=(a, b), method="bounded",
                                 options={"xatol": 1e-12})
    P = max(float(v[i]), -float(r.fun))
    return BoundResult(float(p.ebno_db(P)), P)


def single_user_failure(p: AsymptoticParams, P_tot: float) -> float:
    """1 - E[Q(Q^{-1}(1/M1) - sqrt(2 P_tot G / mu))] with G ~ Exp(1)."""
    a = float(stats.norm.isf(1 / p.M1))
    c = math.sqrt(2 * P_tot / p.mu)
    # E[Phi(a - c sqrt(G))]; substitute g = x^2 to smooth the integrand
    f = lambda x: 2 * x * math.exp(-x * x) * stats.norm.cdf(a - c * x)
    x0 = a / c
    val = sum(integrate.quad(f, lo, hi, epsabs=1e-14, limit=200)[0]
              for lo, hi in ((0, x0), (x0, x0 + 10 / c + 10)))
    return val


def conv_single_user(p: AsymptoticParams) -> BoundResult:
    _check_conv(p)
    g = lambda ldb: single_user_failure(p, float(p.p_tot(ldb))) - p.eps
    lo, hi = -40.0, 80.0
    if g(lo) <= 0:
        return BoundResult(lo, float(p.p_tot(lo)))
    db = optimize.brentq(g, lo, hi, xtol=1e-9)
    return BoundResult(db, float(p.p_tot(db)))


def conv(p: AsymptoticParams) -> BoundResult:
    a, b = conv_fano(p), conv_single_user(p)
    return a if a.ebno_db >= b.ebno_db else b


def F_iid(r, gamma):
    """(1/4)(sqrt(g (sqrt r + 1)^2 + 1) - sqrt(g (sqrt r - 1)^2 + 1))^2, cancellation-free."""
    r, g = np.asarray(r, float), np.asarray(gamma, float)
    S = np.sqrt(g * (np.sqrt(r) + 1) ** 2 + 1) + np.sqrt(g * (np.sqrt(r) - 1) ** 2 + 1)
    return 4 * g ** 2 * r / S ** 2


def V_iid(r, gamma):
    return r * _V_over_r(r, gamma)


def _V_over_r(r, gamma):
    """V(r, gamma) / r, finite as r -> 0."""
    r, g = np.asarray(r, float), np.asarray(gamma, float)
    S = np.sqrt(g * (np.sqrt(r) + 1) ** 2 + 1) + np.sqrt(g * (np.sqrt(r) - 1) ** 2 + 1)
    F = 4 * g ** 2 * r / S ** 2
    c = g - 4 * g ** 2 / S ** 2          # (r g - F) / r
    return np.log(1 + g - F) + np.log1p(r * c) / r - 4 * g / S ** 2


def conv_iid(p: AsymptoticParams) -> BoundResult:
    """Converse for iid codebooks.

    The iid-specific condition carries no fading term, so at small mu it can
    fall below the general converse; the latter holds for iid codebooks too,
    and the larger of the two is returned.
    """
    a, b = conv_iid_raw(p), conv(p)
    return a if a.ebno_db >= b.ebno_db else b


def conv_iid_raw(p: AsymptoticParams) -> BoundResult:
    """The iid-codebook condition alone (both sides multiplied by M1)."""
    _check_conv(p)
    lhs = float(scaled_h(1.0, p.M1) - h(p.eps) - scaled_h(p.eps, p.M1 - 1))

    def slack(ldb):
        P = float(p.p_tot(ldb))
        rhs = _V_over_r(1 / (p.mu * p.M1), P) / p.mu - V_iid(1 / p.mu, P)
        return float(rhs) - lhs

    lo, hi = -40.0, 80.0
    if slack(lo) >= 0:
        return BoundResult(lo, float(p.p_tot(lo)))
    db = optimize.brentq(slack, lo, hi, xtol=1e-9)
    return BoundResult(db, float(p.p_tot(db)))
