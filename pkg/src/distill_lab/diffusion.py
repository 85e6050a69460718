"""Linear noise schedule, forward noising, x-prediction/score conversions, and
the deterministic few-step Euler sampler."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Value, concat, stop_gradient, wrap

DEFAULT_LADDER = (1.0, 0.96, 0.889, 0.727)
# training-time noise levels: the sampler ladder with t=1 swapped for 0.98,
# since alpha(1)=0 makes c(t)=0 and kills the Fisher signal at that level
DEFAULT_TRAIN_T = (0.727, 0.889, 0.96, 0.98)


@dataclass(frozen=True)
class NoiseSchedule:
    """alpha(t) = 1 - t, sigma(t) = t, clamped away from the noiseless end."""

    t_min: float = 0.02
    train_timesteps: tuple = field(default_factory=lambda: DEFAULT_LADDER)

    def __post_init__(self):
        if not (0.0 < self.t_min < 1.0):
            raise ValueError(f"t_min must lie in (0,1), got {self.t_min}")
        ladder = tuple(float(t) for t in self.train_timesteps)
        if not ladder:
            raise ValueError("timestep ladder is empty")
        if any(b >= a for a, b in zip(ladder, ladder[1:])):
            raise ValueError(f"timestep ladder must be strictly descending, got {ladder}")
        if any(t < self.t_min or t > 1.0 for t in ladder):
            raise ValueError(f"ladder values must lie in [t_min, 1], got {ladder}")
        object.__setattr__(self, "train_timesteps", ladder)

    def alpha(self, t: float) -> float:
        return 1.0 - t

    def sigma(self, t: float) -> float:
        return float(t)

    def check_t(self, t: float) -> float:
        t = float(t)
        if t < self.t_min or t > 1.0:
            raise ValueError(f"t={t} outside [{self.t_min}, 1]")
        return t

    def c_weight(self, t: float) -> float:
        """Fisher weighting alpha^2 / sigma^4."""
        t = self.check_t(t)
        return self.alpha(t) ** 2 / self.sigma(t) ** 4


def forward_noise(schedule: NoiseSchedule, x0, t: float, eps):
    """x_t = alpha(t) x0 + sigma(t) eps. Works on Values and plain arrays."""
    t = schedule.check_t(t)
    a, s = schedule.alpha(t), schedule.sigma(t)
    if isinstance(x0, Value) or isinstance(eps, Value):
        return ad.scale(wrap(x0), a) + ad.scale(wrap(eps), s)
    return a * np.asarray(x0, dtype=np.float64) + s * np.asarray(eps, dtype=np.float64)


def score_from_xpred(schedule: NoiseSchedule, mu, xt, t: float):
    """s = (alpha * mu - x_t) / sigma^2."""
    t = schedule.check_t(t)
    a, s = schedule.alpha(t), schedule.sigma(t)
    if isinstance(mu, Value) or isinstance(xt, Value):
        return ad.scale(ad.scale(wrap(mu), a) - wrap(xt), 1.0 / s**2)
    return (a * np.asarray(mu) - np.asarray(xt)) / s**2


def xpred_from_score(schedule: NoiseSchedule, score, xt, t: float):
    """mu = (x_t + sigma^2 * score) / alpha; exact inverse of score_from_xpred."""
    t = schedule.check_t(t)
    a, s = schedule.alpha(t), schedule.sigma(t)
    if isinstance(score, Value) or isinstance(xt, Value):
        return ad.scale(wrap(xt) + ad.scale(wrap(score), s**2), 1.0 / a)
    return (np.asarray(xt) + s**2 * np.asarray(score)) / a


def euler_sample(generator, schedule: NoiseSchedule, z, active_step=None):
    """Run the few-step sampler along schedule.train_timesteps.

    At each ladder point the generator predicts x0 from (x_t, t); the state is
    then re-noised deterministically with the implied noise,
    x_{t'} = alpha(t') x0p + sigma(t') (x_t - alpha(t) x0p) / sigma(t),
    and the final x0 prediction is returned. The whole unroll stays on the
    tape, so gradients flow into the generator.

    active_step: if given, every ladder index except this one evaluates the
    generator with frozen parameters (generator.frozen), so the parameters
    receive gradient from exactly one step while state gradients still flow
    through the whole chain. Summed over all choices of active_step this
    recovers the full-unroll gradient.
    """
    ladder = schedule.train_timesteps
    if active_step is not None:
        if not hasattr(generator, "frozen"):
            raise TypeError("truncated unroll needs a generator with a .frozen(x, t) view")
        if not (0 <= active_step < len(ladder)):
            raise ValueError(f"active_step {active_step} outside ladder of {len(ladder)} steps")
    x = wrap(z)
    for i, t in enumerate(ladder):
        if active_step is None or i == active_step:
            x0p = generator(x, t)
        else:
            x0p = generator.frozen(x, t)
        if i + 1 == len(ladder):
            return x0p
        t_next = ladder[i + 1]
        a, s = schedule.alpha(t), schedule.sigma(t)
        a_next, s_next = schedule.alpha(t_next), schedule.sigma(t_next)
        eps_implied = ad.scale(x - ad.scale(x0p, a), 1.0 / s)
        x = ad.scale(x0p, a_next) + ad.scale(eps_implied, s_next)


class XPredMlp:
    """x0-prediction network mu(x_t, t): an Mlp over [x_t, t] columns.

    Stands in for both the few-step generator and the fake-score model.
    """

    def __init__(self, dim: int, hidden, rng: np.random.Generator):
        self.dim = int(dim)
        self.hidden = tuple(int(h) for h in hidden)
        self.net = ad.Mlp([self.dim + 1, *self.hidden, self.dim], rng)

    def params(self):
        return self.net.params()

    def __call__(self, x, t: float) -> Value:
        return self._forward(x, t, frozen=False)

    def frozen(self, x, t: float) -> Value:
        """Evaluate with parameters detached; input gradients still flow."""
        return self._forward(x, t, frozen=True)

    def _forward(self, x, t, frozen):
        x = wrap(x)
        t_col = Value(np.full((x.data.shape[0], 1), float(t)))
        h = concat([x, t_col], axis=1)
        last = len(self.net.layers) - 1
        for i, (w, b) in enumerate(self.net.layers):
            if frozen:
                w, b = stop_gradient(w), stop_gradient(b)
            h = ad.matmul(h, w) + b
            if i < last:
                h = ad.tanh(h)
        return h

    def copy_from(self, other: "XPredMlp"):
        self.net.copy_from(other.net)
