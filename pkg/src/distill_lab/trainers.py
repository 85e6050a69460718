"""The five training loops over toy targets: the two-potential two-step scheme,
the alternating reverse-KL baseline with K fake updates, Fisher-only matching,
and the implicit-matching pair (plain and reweighted), plus logging,
checkpoints, and the sample-based evaluation metric.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, Value, backward, rng_stream
from .diffusion import DEFAULT_LADDER, DEFAULT_TRAIN_T, NoiseSchedule, XPredMlp, euler_sample
from .objectives import (
    dmd_generator_grad,
    fake_regression_loss,
    fisher_loss,
    make_score_pair,
    nr_loss,
    rc_loss,
    sid_loss,
)
from .teachers import GuidanceConfig, MixtureDensity, ProductMixture, teacher_xpred

METHODS = ("sgmd", "dmd2", "tsg_fisher", "tsg_sim", "sid")

LOG_COLUMNS = (
    "iteration",
    "loss_gen",
    "loss_fake",
    "fisher",
    "residual_norm",
    "delta_norm",
    "energy_distance",
)


def default_teacher_2d() -> ProductMixture:
    """Two well-separated modes along the first axis."""
    return ProductMixture(
        (
            MixtureDensity((0.5, 0.5), (-2.0, 2.0), (0.5, 0.5)),
            MixtureDensity((1.0,), (0.0,), (0.7,)),
        )
    )


@dataclass
class TrainerConfig:
    method: str = "sgmd"
    teacher: ProductMixture = field(default_factory=default_teacher_2d)
    iterations: int = 500
    batch_size: int = 32
    seed: int = 0
    hidden: tuple = (32, 32)
    eta_theta: float = 1e-3
    eta_psi: float = 1e-3
    beta1: float = 0.0
    beta2: float = 0.999
    ladder: tuple = DEFAULT_LADDER
    train_t: tuple = DEFAULT_TRAIN_T
    t_min: float = 0.02
    truncation: str = "full_unroll"  # full_unroll | last_step
    tracking_weight: Optional[float] = None  # lambda; sgmd only
    sid_alpha: Optional[float] = None  # sid only
    fake_updates: Optional[int] = None  # K; dmd2 / tsg_fisher only
    dmd_normalize: bool = False
    cfg_scale: float = 0.0
    conditional_components: Optional[tuple] = None  # per-dim component subset
    init_steps: int = 400
    init_batch: int = 256
    init_lr: float = 2e-3
    eval_samples: int = 10_000
    snapshot_every: int = 0  # 0 = metric only at the end
    checkpoint_every: int = 0  # 0 = initial + final only
    log_every: int = 1
    resolved: bool = field(default=False, repr=False, compare=False)

    def resolve(self) -> "TrainerConfig":
        """Fill method-dependent defaults and reject misapplied fields.
        Idempotent: resolving a resolved config returns it unchanged."""
        if self.resolved:
            return self
        if self.method not in METHODS:
            raise ValueError(f"method: unknown {self.method!r}, expected one of {METHODS}")
        bad = []
        if self.method != "sgmd" and self.tracking_weight is not None:
            bad.append("tracking_weight (only meaningful for method=sgmd)")
        if self.method != "sid" and self.sid_alpha is not None:
            bad.append("sid_alpha (only meaningful for method=sid)")
        if self.method in ("sgmd", "tsg_sim", "sid") and self.fake_updates not in (None, 1):
            bad.append(f"fake_updates (method {self.method} performs exactly 1)")
        if bad:
            raise ValueError("invalid config fields: " + "; ".join(bad))
        if self.iterations < 0:
            raise ValueError("iterations: must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size: must be >= 1")
        if self.truncation not in ("full_unroll", "last_step"):
            raise ValueError(f"truncation: unknown {self.truncation!r}")
        if self.eta_theta <= 0 or self.eta_psi <= 0:
            raise ValueError("eta_theta/eta_psi: must be positive")
        resolved = replace(
            self,
            tracking_weight=0.1 if self.tracking_weight is None else self.tracking_weight,
            sid_alpha=1.0 if self.sid_alpha is None else self.sid_alpha,
            fake_updates=(
                self.fake_updates
                if self.fake_updates is not None
                else (5 if self.method in ("dmd2", "tsg_fisher") else 1)
            ),
            resolved=True,
        )
        if resolved.tracking_weight <= 0:
            raise ValueError("tracking_weight: must be > 0")
        if resolved.fake_updates < 1:
            raise ValueError("fake_updates: must be >= 1")
        return resolved

    def expected_backwards(self) -> int:
        if self.method == "sgmd":
            return 2
        if self.method in ("dmd2", "tsg_fisher"):
            return 1 + (self.fake_updates or 1)
        return 2  # tsg_sim, sid: one generator + one fake backward

    def guidance(self) -> Optional[GuidanceConfig]:
        if self.cfg_scale == 0.0 and self.conditional_components is None:
            return None
        cond = None
        if self.conditional_components is not None:
            dims = tuple(
                d.subset(idx) for d, idx in zip(self.teacher.dims, self.conditional_components)
            )
            cond = ProductMixture(dims)
        return GuidanceConfig(cfg_scale=self.cfg_scale, conditional=cond)


@dataclass
class TrainerState:
    config: TrainerConfig
    schedule: NoiseSchedule
    generator: XPredMlp
    fake: XPredMlp
    opt_theta: Adam
    opt_psi: Adam
    iteration: int = 0


def pretrain_surrogate(config: TrainerConfig, schedule: NoiseSchedule) -> XPredMlp:
    """Regress an x0-prediction net onto the analytic teacher; both networks
    start from this copy (the analog of initializing from the base model)."""
    dim = config.teacher.dim
    net = XPredMlp(dim, config.hidden, rng_stream(config.seed, "init-net"))
    opt = Adam(net.params(), lr=config.init_lr, beta1=0.9, beta2=0.999)
    # cover the noise levels both networks will see; the analytic x-prediction
    # is undefined at t=1 (alpha=0), so the top level trains at 0.98
    t_pool = sorted(set(config.train_t) | {min(t, 0.98) for t in config.ladder})
    for step in range(config.init_steps):
        rng = rng_stream(config.seed, "init", step)
        x0 = config.teacher.sample(config.init_batch, rng)
        t = float(t_pool[rng.integers(len(t_pool))])
        eps = rng.standard_normal(x0.shape)
        xt = schedule.alpha(t) * x0 + schedule.sigma(t) * eps
        target = teacher_xpred(config.teacher, schedule, xt, t)
        opt.zero_grad()
        loss = ad.scale(ad.sqnorm(net(xt, t) - target), 1.0 / config.init_batch)
        backward(loss)
        opt.step()
    return net


def init_state(config: TrainerConfig) -> TrainerState:
    config = config.resolve()
    schedule = NoiseSchedule(t_min=config.t_min, train_timesteps=config.ladder)
    surrogate = pretrain_surrogate(config, schedule)
    dim = config.teacher.dim
    generator = XPredMlp(dim, config.hidden, rng_stream(config.seed, "gen-net"))
    fake = XPredMlp(dim, config.hidden, rng_stream(config.seed, "fake-net"))
    generator.copy_from(surrogate)
    fake.copy_from(surrogate)
    return TrainerState(
        config=config,
        schedule=schedule,
        generator=generator,
        fake=fake,
        opt_theta=Adam(generator.params(), lr=config.eta_theta, beta1=config.beta1, beta2=config.beta2),
        opt_psi=Adam(fake.params(), lr=config.eta_psi, beta1=config.beta1, beta2=config.beta2),
    )


def _draw_iteration(state: TrainerState):
    cfg = state.config
    k = state.iteration
    z = rng_stream(cfg.seed, "z", k).standard_normal((cfg.batch_size, cfg.teacher.dim))
    t = float(cfg.train_t[rng_stream(cfg.seed, "t", k).integers(len(cfg.train_t))])
    eps = rng_stream(cfg.seed, "eps", k).standard_normal((cfg.batch_size, cfg.teacher.dim))
    active = None
    if cfg.truncation == "last_step":
        active = int(rng_stream(cfg.seed, "trunc", k).integers(len(cfg.ladder)))
    return z, t, eps, active


def _generate(state: TrainerState, z, active):
    return euler_sample(state.generator, state.schedule, z, active_step=active)


def _norms(pair):
    r = np.mean(np.linalg.norm(pair.r.data, axis=-1))
    d = np.mean(np.linalg.norm(pair.delta.data, axis=-1))
    return float(r), float(d)


def _fresh_fake_pair(state: TrainerState, x0_data: np.ndarray, j: int):
    """Regression pair for one inner fake update: fixed x0, fresh (t, eps)."""
    cfg = state.config
    k = state.iteration
    t = float(cfg.train_t[rng_stream(cfg.seed, "fake-t", k, j).integers(len(cfg.train_t))])
    eps = rng_stream(cfg.seed, "fake-eps", k, j).standard_normal(x0_data.shape)
    return make_score_pair(
        state.schedule,
        cfg.teacher,
        state.fake,
        Value(x0_data, op="const"),
        t,
        eps,
        guidance=cfg.guidance(),
        with_frozen_input=True,
    )


def _fake_regression_updates(state: TrainerState, x0_data: np.ndarray, count: int) -> float:
    last = np.nan
    for j in range(count):
        pair = _fresh_fake_pair(state, x0_data, j)
        loss = fake_regression_loss(pair)
        _check_finite_losses(state, loss_fake=float(loss.data))
        state.opt_psi.zero_grad()
        ad.zero_grads(state.generator.params())
        backward(loss)
        state.opt_psi.step()
        last = float(loss.data)
    return last



def _check_finite_losses(state: TrainerState, **losses):
    for name, val in losses.items():
        if not np.isfinite(val):
            raise FloatingPointError(
                f"non-finite {name} ({val}) at iteration {state.iteration}"
            )

def sgmd_step(state: TrainerState) -> dict:
    """One two-potential iteration: generator update on Fisher + lambda*NR with
    the fake net treated as fixed, then fake update on lambda*RC against the
    pre-update generator output. Exactly two backward passes."""
    cfg = state.config
    lam = cfg.tracking_weight
    z, t, eps, active = _draw_iteration(state)
    x0 = _generate(state, z, active)
    pair = make_score_pair(state.schedule, cfg.teacher, state.fake, x0, t, eps, guidance=cfg.guidance())

    fish = fisher_loss(pair)
    outer = fish + ad.scale(nr_loss(pair), lam)
    inner = ad.scale(rc_loss(pair), lam)
    _check_finite_losses(state, loss_gen=float(outer.data), loss_fake=float(inner.data))

    state.opt_theta.zero_grad()
    state.opt_psi.zero_grad()
    backward(outer)
    theta_grads = [p.grad for p in state.generator.params()]
    state.opt_psi.zero_grad()
    backward(inner)
    # restore the outer-pass theta grads (the inner backward also deposits a
    # theta contribution, which the algorithm discards: theta is detached there)
    for p, g in zip(state.generator.params(), theta_grads):
        p.grad = g
    state.opt_theta.step()
    state.opt_psi.step()

    rn, dn = _norms(pair)
    return {
        "loss_gen": float(outer.data),
        "loss_fake": float(inner.data),
        "fisher": float(fish.data),
        "residual_norm": rn,
        "delta_norm": dn,
    }


def dmd2_step(state: TrainerState) -> dict:
    """Alternating baseline: one matching-gradient generator update, then K
    regression updates of the fake net on fresh noise draws (1+K backwards)."""
    cfg = state.config
    z, t, eps, active = _draw_iteration(state)
    x0 = _generate(state, z, active)
    pair = make_score_pair(state.schedule, cfg.teacher, state.fake, x0, t, eps, guidance=cfg.guidance())

    state.opt_theta.zero_grad()
    ad.zero_grads(state.fake.params())
    seed = dmd_generator_grad(pair, normalize=cfg.dmd_normalize)
    _check_finite_losses(state, matching_seed=float(np.sum(seed**2)))
    state.opt_theta.step()
    loss_fake = _fake_regression_updates(state, x0.data, cfg.fake_updates)

    rn, dn = _norms(pair)
    return {
        "loss_gen": float(0.5 * np.sum(seed**2) * pair.batch_size),
        "loss_fake": loss_fake,
        "fisher": float(fisher_loss(pair).data),
        "residual_norm": rn,
        "delta_norm": dn,
    }


def tsg_fisher_step(state: TrainerState) -> dict:
    """Fisher-only generator update plus K fake regression updates."""
    cfg = state.config
    z, t, eps, active = _draw_iteration(state)
    x0 = _generate(state, z, active)
    pair = make_score_pair(state.schedule, cfg.teacher, state.fake, x0, t, eps, guidance=cfg.guidance())

    fish = fisher_loss(pair)
    _check_finite_losses(state, loss_gen=float(fish.data))
    state.opt_theta.zero_grad()
    ad.zero_grads(state.fake.params())
    backward(fish)
    state.opt_theta.step()
    loss_fake = _fake_regression_updates(state, x0.data, cfg.fake_updates)

    rn, dn = _norms(pair)
    return {
        "loss_gen": float(fish.data),
        "loss_fake": loss_fake,
        "fisher": float(fish.data),
        "residual_norm": rn,
        "delta_norm": dn,
    }


def sid_step(state: TrainerState, alpha: Optional[float] = None) -> dict:
    """Reweighted implicit-matching generator update plus one fake regression
    update; alpha=1 reproduces the plain implicit-matching trainer bit for bit."""
    cfg = state.config
    alpha = cfg.sid_alpha if alpha is None else alpha
    z, t, eps, active = _draw_iteration(state)
    x0 = _generate(state, z, active)
    pair = make_score_pair(
        state.schedule, cfg.teacher, state.fake, x0, t, eps,
        guidance=cfg.guidance(), with_frozen_input=True,
    )

    loss = sid_loss(pair, alpha)
    _check_finite_losses(state, loss_gen=float(loss.data))
    state.opt_theta.zero_grad()
    ad.zero_grads(state.fake.params())
    backward(loss)
    state.opt_theta.step()
    loss_fake = _fake_regression_updates(state, x0.data, 1)

    rn, dn = _norms(pair)
    return {
        "loss_gen": float(loss.data),
        "loss_fake": loss_fake,
        "fisher": float(fisher_loss(pair).data),
        "residual_norm": rn,
        "delta_norm": dn,
    }


def tsg_sim_step(state: TrainerState) -> dict:
    """Plain implicit matching: the alpha=1 special case."""
    return sid_step(state, alpha=1.0)


STEP_FNS = {
    "sgmd": sgmd_step,
    "dmd2": dmd2_step,
    "tsg_fisher": tsg_fisher_step,
    "tsg_sim": tsg_sim_step,
    "sid": sid_step,
}


def train_step(state: TrainerState) -> dict:
    """Dispatch one iteration and enforce the per-method backward-pass budget."""
    before = ad.backward_calls()
    row = STEP_FNS[state.config.method](state)
    used = ad.backward_calls() - before
    expected = state.config.expected_backwards()
    if used != expected:
        raise RuntimeError(
            f"{state.config.method}: {used} backward passes in one iteration, expected {expected}"
        )
    for key in ("loss_gen", "loss_fake"):
        if not np.isfinite(row[key]):
            raise FloatingPointError(
                f"non-finite {key} at iteration {state.iteration} ({row[key]})"
            )
    state.iteration += 1
    return row


def sample_generator(state: TrainerState, n: int, rng) -> np.ndarray:
    z = rng.standard_normal((n, state.config.teacher.dim))
    return euler_sample(state.generator, state.schedule, z).data


def energy_distance(x: np.ndarray, y: np.ndarray, block: int = 2048) -> float:
    """2 E||X-Y|| - E||X-X'|| - E||Y-Y'|| between empirical samples.

    All three terms are V-statistics (all ordered pairs), which keeps the
    statistic non-negative and exactly zero for identical samples.
    """

    def sum_dists(a, b, b_sq):
        total = 0.0
        for i in range(0, len(a), block):
            chunk = a[i : i + block]
            d_sq = (chunk * chunk).sum(1)[:, None] + b_sq[None, :] - 2.0 * (chunk @ b.T)
            total += np.sqrt(np.maximum(d_sq, 0.0)).sum()
        return total

    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    x_sq = (x * x).sum(1)
    y_sq = (y * y).sum(1)
    nx, ny = len(x), len(y)
    cross = sum_dists(x, y, y_sq) / (nx * ny)
    within_x = sum_dists(x, x, x_sq) / (nx * nx)
    within_y = sum_dists(y, y, y_sq) / (ny * ny)
    return float(2.0 * cross - within_x - within_y)


def eval_energy_distance(state: TrainerState, n: Optional[int] = None) -> float:
    cfg = state.config
    n = cfg.eval_samples if n is None else n
    gen_samples = sample_generator(state, n, rng_stream(cfg.seed, "eval-z"))
    teacher_samples = cfg.teacher.sample(n, rng_stream(cfg.seed, "eval-teacher"))
    return energy_distance(gen_samples, teacher_samples)


CHECKPOINT_MAGIC = "DISTILL-LAB-CKPT v1"


def save_checkpoint(path, state: TrainerState):
    """Text header (magic, metadata, shape manifest) + little-endian float64
    payload in manifest order."""
    named = []
    for prefix, net in (("generator", state.generator), ("fake", state.fake)):
        for li, (w, b) in enumerate(net.net.layers):
            named.append((f"{prefix}.layer{li}.w", w.data))
            named.append((f"{prefix}.layer{li}.b", b.data))
    lines = [
        CHECKPOINT_MAGIC,
        f"seed={state.config.seed}",
        f"iteration={state.iteration}",
    ]
    for name, arr in named:
        dims = "x".join(str(d) for d in arr.shape)
        lines.append(f"array {name} {dims}")
    lines.append("end-header")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        for _, arr in named:
            fh.write(arr.astype("<f8").tobytes())
    return path


def load_checkpoint(path):
    """Returns (metadata dict, {name: array})."""
    raw = Path(path).read_bytes()
    header_end = raw.index(b"end-header\n") + len(b"end-header\n")
    lines = raw[: header_end - 1].decode("ascii").split("\n")
    if lines[0] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: bad checkpoint magic {lines[0]!r}")
    meta = {}
    manifest = []
    for line in lines[1:-1]:
        if line.startswith("array "):
            _, name, dims = line.split(" ")
            shape = tuple(int(d) for d in dims.split("x"))
            manifest.append((name, shape))
        else:
            key, val = line.split("=", 1)
            meta[key] = val
    arrays = {}
    offset = header_end
    for name, shape in manifest:
        n = int(np.prod(shape))
        arrays[name] = np.frombuffer(raw, dtype="<f8", count=n, offset=offset).reshape(shape).copy()
        offset += n * 8
    return meta, arrays


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_log_csv(path, rows):
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(row.get(col, "")) for col in LOG_COLUMNS])
    return path


@dataclass
class TrainResult:
    config: TrainerConfig
    state: TrainerState
    log_rows: list
    final_energy_distance: float
    checkpoints: list


def train(config: TrainerConfig, out_dir=None) -> TrainResult:
    """Run the configured method to completion; optionally write the CSV log
    and checkpoints under out_dir. Fully deterministic for a given seed."""
    state = init_state(config)
    cfg = state.config
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    checkpoints = []

    def checkpoint(tag):
        if out_dir is not None:
            checkpoints.append(save_checkpoint(out_dir / f"ckpt_{tag}.bin", state))

    checkpoint("initial")
    rows = []
    for k in range(cfg.iterations):
        row = train_step(state)
        row["iteration"] = k
        if cfg.snapshot_every and (k + 1) % cfg.snapshot_every == 0:
            row["energy_distance"] = eval_energy_distance(state, n=min(cfg.eval_samples, 2000))
        rows.append(row)
        if cfg.checkpoint_every and (k + 1) % cfg.checkpoint_every == 0:
            checkpoint(f"iter{k + 1:06d}")

    final_energy = float("nan")
    if cfg.iterations > 0:
        final_energy = eval_energy_distance(state)
        rows[-1]["energy_distance"] = final_energy
        checkpoint("final")
    if out_dir is not None:
        write_log_csv(out_dir / "log.csv", rows)
    return TrainResult(
        config=cfg,
        state=state,
        log_rows=rows,
        final_energy_distance=final_energy,
        checkpoints=checkpoints,
    )
