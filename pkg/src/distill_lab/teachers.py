"""Analytic Gaussian-mixture teachers: exact densities, marginal scores,
posterior-mean x-predictions, and classifier-free-guidance combination.

Everything here is plain numpy and carries no gradient: the teacher is frozen
by construction, so its outputs re-enter the tape as constants.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .diffusion import NoiseSchedule

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class MixtureDensity:
    """One-dimensional Gaussian mixture with positive weights summing to 1."""

    weights: tuple
    means: tuple
    stds: tuple

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights)
        m = tuple(float(x) for x in self.means)
        s = tuple(float(x) for x in self.stds)
        if not (len(w) == len(m) == len(s)) or not w:
            raise ValueError("weights, means, stds must be equal-length and non-empty")
        if any(x <= 0 for x in w):
            raise ValueError(f"weights must be positive, got {w}")
        if abs(sum(w) - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got sum={sum(w)!r}")
        if any(x <= 0 for x in s):
            raise ValueError(f"stds must be positive, got {s}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "stds", s)

    @property
    def n_components(self) -> int:
        return len(self.weights)

    def subset(self, indices) -> "MixtureDensity":
        """Renormalized sub-mixture; models a 'conditional' teacher."""
        idx = list(indices)
        w = np.array([self.weights[i] for i in idx])
        w = w / w.sum()
        return MixtureDensity(
            tuple(w),
            tuple(self.means[i] for i in idx),
            tuple(self.stds[i] for i in idx),
        )

    def _component_logpdf(self, x: np.ndarray) -> np.ndarray:
        # stacked along the last axis: (..., n_components)
        x = np.asarray(x, dtype=np.float64)[..., None]
        mu = np.array(self.means)
        sd = np.array(self.stds)
        z = (x - mu) / sd
        return np.log(np.array(self.weights)) - 0.5 * z * z - np.log(sd) - 0.5 * _LOG_2PI

    def logdensity(self, x) -> np.ndarray:
        lp = self._component_logpdf(x)
        top = lp.max(axis=-1, keepdims=True)
        return (top + np.log(np.exp(lp - top).sum(axis=-1, keepdims=True)))[..., 0]

    def density(self, x) -> np.ndarray:
        return np.exp(self.logdensity(x))

    def score(self, x) -> np.ndarray:
        """d/dx log p(x): responsibility-weighted component scores."""
        x = np.asarray(x, dtype=np.float64)
        lp = self._component_logpdf(x)
        top = lp.max(axis=-1, keepdims=True)
        resp = np.exp(lp - top)
        resp /= resp.sum(axis=-1, keepdims=True)
        comp_scores = (np.array(self.means) - x[..., None]) / np.array(self.stds) ** 2
        return (resp * comp_scores).sum(axis=-1)

    def mean(self) -> float:
        return float(np.dot(self.weights, self.means))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        comp = rng.choice(self.n_components, size=n, p=np.array(self.weights))
        return np.array(self.means)[comp] + np.array(self.stds)[comp] * rng.standard_normal(n)


def push_forward(p: MixtureDensity, a: float, noise_std: float) -> MixtureDensity:
    """Law of a*X + noise_std*eps for X ~ p: closed-form linear-Gaussian push."""
    means = tuple(a * m for m in p.means)
    stds = tuple(float(np.sqrt(a * a * s * s + noise_std * noise_std)) for s in p.stds)
    return MixtureDensity(p.weights, means, stds)


def gmm_marginal(p: MixtureDensity, schedule: NoiseSchedule, t: float) -> MixtureDensity:
    """Noisy-state marginal at level t under x_t = alpha x0 + sigma eps."""
    t = schedule.check_t(t)
    return push_forward(p, schedule.alpha(t), schedule.sigma(t))


def gmm_logdensity(p: MixtureDensity, x) -> np.ndarray:
    return p.logdensity(x)


def gmm_score(p: MixtureDensity, x) -> np.ndarray:
    return p.score(x)


@dataclass(frozen=True)
class ProductMixture:
    """Independent per-dimension mixtures; operates on (batch, dim) arrays."""

    dims: tuple

    def __post_init__(self):
        if not self.dims or not all(isinstance(d, MixtureDensity) for d in self.dims):
            raise ValueError("ProductMixture needs at least one MixtureDensity per dim")
        object.__setattr__(self, "dims", tuple(self.dims))

    @property
    def dim(self) -> int:
        return len(self.dims)

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ValueError(f"expected (batch, {self.dim}) array, got shape {x.shape}")
        return x

    def logdensity(self, x) -> np.ndarray:
        x = self._check(x)
        return sum(d.logdensity(x[:, j]) for j, d in enumerate(self.dims))

    def score(self, x) -> np.ndarray:
        x = self._check(x)
        return np.stack([d.score(x[:, j]) for j, d in enumerate(self.dims)], axis=1)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return np.stack([d.sample(n, rng) for d in self.dims], axis=1)

    def marginal(self, schedule: NoiseSchedule, t: float) -> "ProductMixture":
        return ProductMixture(tuple(gmm_marginal(d, schedule, t) for d in self.dims))


def _posterior_mean_1d(p: MixtureDensity, schedule: NoiseSchedule, xt: np.ndarray, t: float) -> np.ndarray:
    """E[x0 | x_t] = sum_i resp_i(x_t) * (mu_i + a s_i^2 (x_t - a mu_i)/(a^2 s_i^2 + sigma^2)).

    Responsibility-weighted per-component linear-Gaussian posterior means;
    equal to converting the marginal score to an x-prediction, but defined at
    alpha = 0 too (it degenerates to the prior mean there).
    """
    a, s = schedule.alpha(t), schedule.sigma(t)
    marg = gmm_marginal(p, schedule, t)
    lp = marg._component_logpdf(xt)
    top = lp.max(axis=-1, keepdims=True)
    resp = np.exp(lp - top)
    resp /= resp.sum(axis=-1, keepdims=True)
    mu = np.array(p.means)
    var = np.array(p.stds) ** 2
    gain = a * var / (a * a * var + s * s)
    comp_means = mu + gain * (xt[..., None] - a * mu)
    return (resp * comp_means).sum(axis=-1)


def teacher_xpred(p, schedule: NoiseSchedule, xt: np.ndarray, t: float) -> np.ndarray:
    """mu_base(x_t, t): the exact posterior mean E[x0 | x_t]."""
    t = schedule.check_t(t)
    xt = np.asarray(xt, dtype=np.float64)
    if isinstance(p, ProductMixture):
        xt = p._check(xt)
        return np.stack(
            [_posterior_mean_1d(d, schedule, xt[:, j], t) for j, d in enumerate(p.dims)],
            axis=1,
        )
    return _posterior_mean_1d(p, schedule, xt, t)


def cfg_combine(xpred_cond, xpred_uncond, cfg_scale: float):
    """x_cond + cfg_scale * (x_cond - x_uncond)."""
    xpred_cond = np.asarray(xpred_cond, dtype=np.float64)
    xpred_uncond = np.asarray(xpred_uncond, dtype=np.float64)
    if xpred_cond.shape != xpred_uncond.shape:
        raise ValueError(
            f"guidance operands differ in shape: {xpred_cond.shape} vs {xpred_uncond.shape}"
        )
    return xpred_cond + cfg_scale * (xpred_cond - xpred_uncond)


@dataclass(frozen=True)
class GuidanceConfig:
    """Optional classifier-free guidance: a conditional teacher plus a scale.

    With no conditional mixture (or scale 0) the base teacher is used as-is.
    """

    cfg_scale: float = 0.0
    conditional: Optional[object] = None

    def __post_init__(self):
        if self.cfg_scale < 0:
            raise ValueError(f"cfg_scale must be >= 0, got {self.cfg_scale}")

    def xpred(self, base, schedule: NoiseSchedule, xt, t: float) -> np.ndarray:
        uncond = teacher_xpred(base, schedule, xt, t)
        if self.conditional is None:
            return cfg_combine(uncond, uncond, self.cfg_scale)
        cond = teacher_xpred(self.conditional, schedule, xt, t)
        return cfg_combine(cond, uncond, self.cfg_scale)
