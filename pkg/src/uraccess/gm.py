"""Gaussian mixtures for fading-coefficient posteriors.

Weights are kept as natural logs throughout; a mixture is an immutable value.
Components are either scalar (``mean``/``var`` of shape (nu,)) or
diagonal-covariance vectors (shape (nu, d)); every operation works on both.
The joint decoder uses d = 2 for (real, imaginary) parts that share component
weights, which keeps the sign coupling between the two parts.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LOG_2PI = math.log(2 * math.pi)


def logsumexp(a, axis=None):
    """log(sum(exp(a))) without the generality (and overhead) of scipy's version."""
    a = np.asarray(a, float)
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return out.item() if axis is None else np.squeeze(out, axis=axis)


class DegenerateProduct(ArithmeticError):
    """All component weights of a product underflowed."""


@dataclass(frozen=True)
class GmConfig:
    max_components: int = 500
    merge_distance: float | None = 1.0   # None disables merging
    prune_cum_weight: float = 1e-3
    sample_count: int = 20

    def __post_init__(self):
        if self.max_components < 1:
            raise ValueError("max_components must be >= 1")
        if self.merge_distance is not None and self.merge_distance < 0:
            raise ValueError("merge_distance must be >= 0")
        if not 0 <= self.prune_cum_weight < 1:
            raise ValueError("prune_cum_weight must lie in [0, 1)")
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")


SINGLE_COMPONENT = GmConfig(max_components=1, merge_distance=None, prune_cum_weight=1e-3)


def _dsum(x: np.ndarray) -> np.ndarray:
    """Sum over the coordinate axis when components are vectors."""
    return x.sum(axis=-1) if x.ndim == 2 else x


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    log_weight: np.ndarray
    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        lw = np.atleast_1d(np.asarray(self.log_weight, dtype=float))
        mu = np.atleast_1d(np.asarray(self.mean, dtype=float))
        var = np.atleast_1d(np.asarray(self.var, dtype=float))
        object.__setattr__(self, "log_weight", lw)
        object.__setattr__(self, "mean", mu)
        object.__setattr__(self, "var", var)
        if lw.ndim != 1 or mu.ndim > 2 or mu.shape != var.shape or len(mu) != len(lw) or len(lw) == 0:
            raise ValueError("component arrays must be equal, nonempty length")

    @classmethod
    def single(cls, mean=0.0, var=1.0) -> "GaussianMixture":
        mu = np.asarray(mean, float)
        v = np.broadcast_to(np.asarray(var, float), mu.shape)
        return cls(np.zeros(1), mu[None], v[None].copy())

    @classmethod
    def from_weights(cls, weights, means, variances) -> "GaussianMixture":
        with np.errstate(divide="ignore"):
            lw = np.log(np.asarray(weights, float))
        return cls(lw, means, variances).normalized()

    def __len__(self) -> int:
        return len(self.log_weight)

    @property
    def dim(self) -> int:
        return 1 if self.mean.ndim == 1 else self.mean.shape[1]

    def marginal(self, axis: int) -> "GaussianMixture":
        """Scalar mixture of one coordinate (weights shared)."""
        if self.mean.ndim == 1:
            if axis != 0:
                raise IndexError("scalar mixture has a single coordinate")
            return self
        return GaussianMixture(self.log_weight, self.mean[:, axis], self.var[:, axis])

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weight)

    @property
    def log_total(self) -> float:
        return float(logsumexp(self.log_weight))

    def normalized(self) -> "GaussianMixture":
        tot = logsumexp(self.log_weight)
        if not np.isfinite(tot):
            raise DegenerateProduct("mixture has no mass")
        return GaussianMixture(self.log_weight - tot, self.mean, self.var)

    def pdf(self, x) -> np.ndarray:
        """Density at ``x``; for vector mixtures the last axis of ``x`` holds coordinates."""
        x = np.asarray(x, float)
        if self.mean.ndim == 1:
            x = x[..., None]
            lp = (self.log_weight - 0.5 * (LOG_2PI + np.log(self.var))
                  - 0.5 * (x - self.mean) ** 2 / self.var)
        else:
            x = x[..., None, :]
            lp = self.log_weight - 0.5 * np.sum(LOG_2PI + np.log(self.var)
                                                 + (x - self.mean) ** 2 / self.var, axis=-1)
        return np.exp(logsumexp(lp, axis=-1))

    def moments(self):
        """(mean, variance): floats for scalar mixtures, per-coordinate arrays otherwise."""
        w = np.exp(self.log_weight - logsumexp(self.log_weight))
        m = w @ self.mean
        v = w @ (self.var + (self.mean - m) ** 2)
        if self.mean.ndim == 1:
            return float(m), float(v)
        return m, v

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        w = np.exp(self.log_weight - logsumexp(self.log_weight))
        idx = rng.choice(len(w), size=count, p=w / w.sum())
        mu, var = self.mean[idx], self.var[idx]
        return mu + np.sqrt(var) * rng.standard_normal(mu.shape)

    def sorted(self) -> "GaussianMixture":
        """Canonical component order, for set comparisons."""
        mu = self.mean if self.mean.ndim == 1 else self.mean[:, 0]
        var = self.var if self.var.ndim == 1 else self.var[:, 0]
        order = np.lexsort((var, mu, -self.log_weight))
        return GaussianMixture(self.log_weight[order], self.mean[order], self.var[order])


def _outer(a: np.ndarray, b: np.ndarray, op) -> np.ndarray:
    out = op(a[:, None], b[None, :])
    return out.reshape((-1,) + out.shape[2:])


def convolve(a: GaussianMixture, b: GaussianMixture) -> GaussianMixture:
    """Density of the sum of independent variables with laws ``a`` and ``b``."""
    lw = _outer(a.log_weight, b.log_weight, np.add)
    return GaussianMixture(lw, _outer(a.mean, b.mean, np.add),
                           _outer(a.var, b.var, np.add)).normalized()


def multiply_unnormalized(a: GaussianMixture, b: GaussianMixture) -> GaussianMixture:
    s = _outer(a.var, b.var, np.add)
    d = _outer(a.mean, b.mean, np.subtract)
    lw = _outer(a.log_weight, b.log_weight, np.add) - 0.5 * _dsum(LOG_2PI + np.log(s) + d * d / s)
    var = _outer(a.var, b.var, np.multiply) / s
    mu = var * _outer(a.mean / a.var, b.mean / b.var, np.add)
    return GaussianMixture(lw, mu, var)


def multiply(a: GaussianMixture, b: GaussianMixture) -> GaussianMixture:
    """Pointwise product of two densities, renormalized."""
    return multiply_unnormalized(a, b).normalized()


def affine(a: GaussianMixture, scale: float, shift=0.0) -> GaussianMixture:
    """Law of ``scale * X + shift``."""
    if scale == 0:
        raise ValueError("scale must be nonzero")
    return GaussianMixture(a.log_weight, scale * a.mean + shift, scale * scale * a.var)


def mix_binary(a: GaussianMixture, p_plus: float, scale: float) -> GaussianMixture:
    """Law of ``X * S`` with ``S = +scale`` w.p. ``p_plus`` and ``-scale`` otherwise."""
    if not 0.0 <= p_plus <= 1.0:
        raise ValueError("p_plus must be a probability")
    branches = []
    if p_plus > 0:
        branches.append((math.log(p_plus), scale))
    if p_plus < 1:
        branches.append((math.log1p(-p_plus), -scale))
    lw = np.concatenate([a.log_weight + l for l, _ in branches])
    mu = np.concatenate([s * a.mean for _, s in branches])
    var = np.concatenate([scale * scale * a.var for _ in branches])
    return GaussianMixture(lw, mu, var)


def prune(a: GaussianMixture, cfg: GmConfig) -> GaussianMixture:
    """Drop the lightest components whose cumulative weight stays below the threshold."""
    thr = cfg.prune_cum_weight
    if thr <= 0 or len(a) == 1:
        return a.normalized()
    lw = a.log_weight - logsumexp(a.log_weight)
    order = np.argsort(lw)
    cum = np.cumsum(np.exp(lw[order]))
    drop = int(np.searchsorted(cum, thr, side="left"))   # cum[:drop] < thr
    drop = min(drop, len(a) - 1)
    keep = np.sort(order[drop:])
    return GaussianMixture(lw[keep], a.mean[keep], a.var[keep]).normalized()


def merge(a: GaussianMixture, cfg: GmConfig) -> GaussianMixture:
    """Greedy moment-matching merge from the heaviest component, then a hard cap.

    Distance to the head is (mu - mu_h)^2 / var_h, summed over coordinates
    for vector mixtures.
    """
    lw = a.log_weight - logsumexp(a.log_weight)
    mu, var = a.mean, a.var
    if cfg.merge_distance is not None and len(a) > 1:
        order = np.argsort(-lw, kind="stable")
        lw, mu, var = lw[order], mu[order], var[order]
        alive = np.ones(len(lw), bool)
        out_lw, out_mu, out_var = [], [], []
        dmin = cfg.merge_distance
        while True:
            live = np.flatnonzero(alive)
            if live.size == 0:
                break
            h = live[0]
            members = live[_dsum((mu[live] - mu[h]) ** 2 / var[h]) <= dmin]
            alive[members] = False
            if members.size == 1:
                out_lw.append(lw[h]); out_mu.append(mu[h]); out_var.append(var[h])
                continue
            lwm = lw[members]
            tot = logsumexp(lwm)
            w = np.exp(lwm - tot)
            m = w @ mu[members]
            v = w @ (var[members] + (mu[members] - m) ** 2)
            out_lw.append(tot); out_mu.append(m); out_var.append(v)
        lw, mu, var = np.array(out_lw), np.array(out_mu), np.array(out_var)
    if len(lw) > cfg.max_components:
        keep = np.argsort(-lw, kind="stable")[: cfg.max_components]
        lw, mu, var = lw[keep], mu[keep], var[keep]
    return GaussianMixture(lw, mu, var).normalized()


def reduce(a: GaussianMixture, cfg: GmConfig) -> GaussianMixture:
    """Prune, merge, cap."""
    return merge(prune(a, cfg), cfg)


def total_variation(a: GaussianMixture, b: GaussianMixture, grid: np.ndarray) -> float:
    """TV distance of two scalar mixtures estimated by the trapezoid rule on ``grid``."""
    return 0.5 * float(np.trapezoid(np.abs(a.pdf(grid) - b.pdf(grid)), grid))
