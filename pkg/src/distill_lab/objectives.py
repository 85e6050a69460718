"""Distillation losses and gradient-injection rules with exact stop-gradient
placement: the Fisher matching term, fake-score regression, reverse-KL gradient
injection, implicit-matching terms and their reweighted variant, and the
negative-residual / residual-contraction dual potentials.

Conventions: batches are (B, dim) arrays, one shared noise level t per batch,
and every loss is the batch mean of a per-sample norm, so identities such as
"the x_fake-gradient of the NR potential is exactly r" hold verbatim at B=1
and up to the 1/B factor otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Value, backward_seeded, sqnorm, stop_gradient, wrap
from .diffusion import NoiseSchedule, forward_noise, score_from_xpred
from .teachers import GuidanceConfig, teacher_xpred


@dataclass
class ObjectiveConfig:
    tracking_weight: float = 0.1  # lambda: balances matching vs tracking correction
    sid_alpha: float = 1.0
    dmd_normalize: bool = False
    fake_update_ratio: int = 1

    def __post_init__(self):
        if self.tracking_weight <= 0:
            raise ValueError(f"tracking_weight must be > 0, got {self.tracking_weight}")
        if self.fake_update_ratio < 1:
            raise ValueError(f"fake_update_ratio must be >= 1, got {self.fake_update_ratio}")


@dataclass
class ScorePair:
    """Per-batch bundle threading all losses.

    x_real is a plain array: the teacher is evaluated on detached data and its
    prediction re-enters the tape as a constant, so no gradient can reach any
    teacher input. delta = x_fake - x_real; r = sg[x0] - x_fake. Pairs are
    built fresh every step and never reused across parameter updates.
    """

    x0: Value
    eps: np.ndarray
    t: float
    xt: Value
    x_fake: Value
    x_real: np.ndarray
    delta: Value
    r: Value
    c: float
    schedule: NoiseSchedule
    x_fake_frozen_input: Optional[Value] = None

    @property
    def batch_size(self) -> int:
        return self.x0.data.shape[0]


def make_score_pair(
    schedule: NoiseSchedule,
    teacher,
    fake_fn,
    x0: Value,
    t: float,
    eps: np.ndarray,
    guidance: Optional[GuidanceConfig] = None,
    with_frozen_input: bool = False,
) -> ScorePair:
    """Noise the generator output, evaluate both x0-predictors, and bundle.

    with_frozen_input additionally evaluates the fake net on stop_gradient(x_t)
    (needed by the implicit-matching losses, which cut that input path).
    """
    t = schedule.check_t(t)
    x0 = wrap(x0)
    xt = forward_noise(schedule, x0, t, eps)
    x_fake = fake_fn(xt, t)
    if guidance is not None:
        x_real = guidance.xpred(teacher, schedule, xt.data, t)
    else:
        x_real = teacher_xpred(teacher, schedule, xt.data, t)
    pair = ScorePair(
        x0=x0,
        eps=np.asarray(eps, dtype=np.float64),
        t=t,
        xt=xt,
        x_fake=x_fake,
        x_real=x_real,
        delta=x_fake - x_real,
        r=stop_gradient(x0) - x_fake,
        c=schedule.c_weight(t),
        schedule=schedule,
    )
    if with_frozen_input:
        pair.x_fake_frozen_input = fake_fn(stop_gradient(xt), t)
    return pair


def synthetic_pair(x0, x_fake, x_real, t: float, schedule=None) -> ScorePair:
    """Build a pair from raw arrays/leaves (for identity and gradient checks)."""
    schedule = schedule or NoiseSchedule()
    x0 = wrap(x0)
    x_fake = wrap(x_fake)
    x_real = np.asarray(x_real, dtype=np.float64)
    return ScorePair(
        x0=x0,
        eps=np.zeros_like(x0.data),
        t=float(t),
        xt=wrap(x0.data.copy()),
        x_fake=x_fake,
        x_real=x_real,
        delta=x_fake - x_real,
        r=stop_gradient(x0) - x_fake,
        c=schedule.c_weight(t),
        schedule=schedule,
        x_fake_frozen_input=x_fake,
    )


def fisher_loss(pair: ScorePair) -> Value:
    """(1/2) c(t) ||delta||^2, batch-mean; the teacher sees a detached x_t, so
    the gradient on x_fake is exactly c(t) * delta (per sample)."""
    return ad.scale(sqnorm(pair.delta), 0.5 * pair.c / pair.batch_size)


def fake_regression_loss(pair: ScorePair) -> Value:
    """||mu(x_t, t) - x0||^2 with x0 frozen; trains the fake net only.

    Uses the frozen-input evaluation so no gradient leaks to the generator
    through x_t.
    """
    if pair.x_fake_frozen_input is None:
        raise ValueError("fake_regression_loss needs a pair built with_frozen_input=True")
    resid = pair.x_fake_frozen_input - stop_gradient(pair.x0)
    return ad.scale(sqnorm(resid), 1.0 / pair.batch_size)


def nr_loss(pair: ScorePair) -> Value:
    """Negative-residual potential -1/2 ||r||^2 (generator side)."""
    return ad.scale(sqnorm(pair.r), -0.5 / pair.batch_size)


def rc_loss(pair: ScorePair) -> Value:
    """Residual-contraction potential +1/2 ||r||^2 (fake-score side)."""
    return ad.scale(sqnorm(pair.r), 0.5 / pair.batch_size)


def sgmd_outer_loss(pair: ScorePair, tracking_weight: float) -> Value:
    """Generator objective: Fisher matching plus weighted negative-residual."""
    if tracking_weight <= 0:
        raise ValueError(f"tracking_weight must be > 0, got {tracking_weight}")
    return fisher_loss(pair) + ad.scale(nr_loss(pair), tracking_weight)


def sgmd_inner_loss(pair: ScorePair, tracking_weight: float) -> Value:
    """Fake-score objective: weighted residual contraction."""
    if tracking_weight <= 0:
        raise ValueError(f"tracking_weight must be > 0, got {tracking_weight}")
    return ad.scale(rc_loss(pair), tracking_weight)


def sim_losses(pair: ScorePair):
    """Explicit and implicit matching terms.

    L1 = 1/2 c ||delta||^2 with the live x_t path (same form as fisher_loss).
    L2 = c <delta_f, x0 - x_fake_f> where x_fake_f is the frozen-input
    evaluation: the only generator path in L2 runs through x0.
    """
    if pair.x_fake_frozen_input is None:
        raise ValueError("sim_losses need a pair built with_frozen_input=True")
    l1 = fisher_loss(pair)
    xf = pair.x_fake_frozen_input
    delta_f = xf - pair.x_real
    l2 = ad.scale((delta_f * (pair.x0 - xf)).sum(), pair.c / pair.batch_size)
    return l1, l2


def sid_loss(pair: ScorePair, alpha: float) -> Value:
    """L1 + alpha * L2; alpha=1 recovers the plain implicit-matching sum,
    alpha=0 the explicit term alone."""
    l1, l2 = sim_losses(pair)
    return l1 + ad.scale(l2, float(alpha))


def dmd_generator_grad(pair: ScorePair, normalize: bool = False) -> np.ndarray:
    """Inject the reverse-KL matching gradient.

    Seeds g = (s_fake - s_real) / B on x_t, so the generator parameters receive
    E[(s_fake - s_real) * alpha_t * dG/dtheta] through the noising path. With
    normalize, g is rescaled per sample by 1/(mean|x_real - x0| + 1e-8).
    Runs one backward pass; returns the seed actually applied.
    """
    s_fake = score_from_xpred(pair.schedule, pair.x_fake.data, pair.xt.data, pair.t)
    s_real = score_from_xpred(pair.schedule, pair.x_real, pair.xt.data, pair.t)
    g = (s_fake - s_real) / pair.batch_size
    if normalize:
        per_sample = np.mean(np.abs(pair.x_real - pair.x0.data), axis=-1, keepdims=True)
        g = g / (per_sample + 1e-8)
    backward_seeded(pair.xt, g)
    return g


def reference_losses_numpy(schedule, fake_fn, gen_fn, z, eps, t: float, base: dict) -> dict:
    """Plain-numpy twins of every loss with the stop-gradient arguments made
    explicit: frozen quantities are read from `base` (captured at the
    unperturbed parameters) and live quantities are recomputed. Central
    differences over these twins are the oracle for the tape's sg placement.
    """
    a, s = schedule.alpha(t), schedule.sigma(t)
    c = schedule.c_weight(t)
    x0 = gen_fn(z)
    batch = x0.shape[0]
    xt = a * x0 + s * eps
    x_fake = fake_fn(xt, t).data
    x_fake_in_frozen = fake_fn(base["xt"], t).data

    delta = x_fake - base["x_real"]
    r = base["x0"] - x_fake
    fisher = 0.5 * c / batch * float(np.sum(delta**2))
    nr = -0.5 / batch * float(np.sum(r**2))
    rc = -nr
    delta_f = x_fake_in_frozen - base["x_real"]
    l2 = c / batch * float(np.sum(delta_f * (x0 - x_fake_in_frozen)))
    return {
        "fisher": fisher,
        "fake_regression": float(np.sum((x_fake_in_frozen - base["x0"]) ** 2)) / batch,
        "nr": nr,
        "rc": rc,
        "sim": fisher + l2,
        "sid": lambda alpha: fisher + alpha * l2,
        "l2": l2,
    }


def nr_effective_grad_check(pair: ScorePair, fake_fn, jac_h=1e-6):
    """Compare the two routes to the generator-side gradient of the NR potential.

    (a) autodiff through x0 -> x_t -> x_fake; (b) the explicit map
    alpha_t * J_mu(x_t, t)^T (x0 - x_fake) with J_mu estimated by central
    differences on the fake net. Returns both gradients and the max relative
    error over samples.
    """
    schedule = pair.schedule
    x0 = Value(pair.x0.data.copy(), op="param")
    xt = forward_noise(schedule, x0, pair.t, pair.eps)
    x_fake = fake_fn(xt, pair.t)
    loss = ad.scale(sqnorm(stop_gradient(x0) - x_fake), -0.5 / pair.batch_size)
    ad.backward(loss)
    autodiff_grad = x0.grad.copy()

    alpha = schedule.alpha(pair.t)
    batch, dim = xt.data.shape
    explicit = np.zeros_like(autodiff_grad)
    resid = (pair.x0.data - x_fake.data) / pair.batch_size
    for b in range(batch):
        jac = np.zeros((dim, dim))
        for j in range(dim):
            hi = xt.data.copy()
            hi[b, j] += jac_h
            lo = xt.data.copy()
            lo[b, j] -= jac_h
            jac[:, j] = (fake_fn(hi, pair.t).data[b] - fake_fn(lo, pair.t).data[b]) / (2 * jac_h)
        explicit[b] = alpha * jac.T @ resid[b]

    denom = np.maximum(np.abs(explicit), 1e-8)
    max_rel_err = float(np.max(np.abs(autodiff_grad - explicit) / denom))
    return {"autodiff": autodiff_grad, "explicit": explicit, "max_rel_err": max_rel_err}
