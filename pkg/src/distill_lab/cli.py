"""Command-line front end: experiment orchestration and all on-disk artifacts.

Subcommands: distill, toy1d, recursion, identity, cost, gradcheck. Each run
resolves its configuration (defaults < config file < flags), writes everything
under one output directory (CSV + JSON report + resolved config + figures),
and is byte-reproducible for a fixed seed.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import autodiff as ad, plots
from .analysis import (
    APP_TARGET_1D,
    CostModel,
    QuadratureGrid,
    RecursionParams,
    bounds,
    cost_model,
    count_interior_minima,
    identity_suite,
    lambda_sweep,
    residual_recursion,
    toy_fit,
    verify_bounds,
)
from .config import (
    ConfigError,
    RunConfig,
    load_config,
    parse_bool,
    parse_floats,
    parse_ints,
    parse_per_dim,
    save_resolved,
)
from .diffusion import NoiseSchedule, XPredMlp
from .objectives import (
    fake_regression_loss,
    fisher_loss,
    make_score_pair,
    nr_loss,
    rc_loss,
    reference_losses_numpy,
    sgmd_inner_loss,
    sgmd_outer_loss,
    sid_loss,
    sim_losses,
)
from .teachers import MixtureDensity, ProductMixture
from .trainers import TrainerConfig, default_teacher_2d, train

SEED_ENV_VAR = "DISTILL_LAB_SEED"


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return path


def assertion(name, observed, expected=None, tolerance=None, passed=None):
    if passed is None:
        passed = bool(observed == expected) if tolerance is None else bool(abs(observed - expected) <= tolerance)
    return {
        "name": name,
        "expected": expected,
        "observed": observed,
        "tolerance": tolerance,
        "passed": bool(passed),
    }


def write_report(path, seed, assertions):
    doc = {
        "version": __version__,
        "seed": seed,
        "assertions": assertions,
        "passed": all(a["passed"] for a in assertions),
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return doc


class Runtime:
    """Resolved global settings shared by every subcommand."""

    def __init__(self, args, command: str):
        self.cfg = load_config(args.config) if args.config else RunConfig()
        g = self.cfg.section("global")
        if args.seed is not None:
            seed = args.seed
        elif "seed" in g:
            seed = int(g["seed"])
        elif os.environ.get(SEED_ENV_VAR):
            seed = int(os.environ[SEED_ENV_VAR])
        else:
            seed = 0
        self.seed = seed
        out = args.out or g.get("output_dir") or f"runs/{command}"
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.strict = args.strict or parse_bool(g.get("strict", "false"))
        self.figures = (not args.no_figures) and parse_bool(g.get("figures", "true"))
        self.log_every = args.log_every or int(g.get("log_every", "50"))
        self.cfg.set("global", "seed", seed)
        self.cfg.set("global", "output_dir", str(self.out))
        self.cfg.set("global", "log_every", self.log_every)

    def override(self, section, key, value):
        """CLI flag wins over the config file; None means 'not given'."""
        if value is None:
            return
        if isinstance(value, bool):
            value = "true" if value else "false"
        self.cfg.set(section, key, value)

    def finish(self, assertions) -> int:
        save_resolved(self.cfg, self.out / "resolved.cfg")
        doc = write_report(self.out / "report.json", self.seed, assertions)
        status = "PASS" if doc["passed"] else "FAIL"
        print(f"report: {self.out / 'report.json'} [{status}]")
        if self.strict and not doc["passed"]:
            return 1
        return 0


def build_teacher(cfg: RunConfig):
    t = cfg.section("teacher")
    if not t:
        return default_teacher_2d()
    missing = [k for k in ("weights", "means", "stds") if k not in t]
    if missing:
        raise ConfigError(f"[teacher] needs weights, means, stds (missing {missing})")
    weights = parse_per_dim(t["weights"])
    means = parse_per_dim(t["means"])
    stds = parse_per_dim(t["stds"])
    if not (len(weights) == len(means) == len(stds)):
        raise ConfigError("[teacher] per-dimension lists differ in length")
    dims = tuple(MixtureDensity(w, m, s) for w, m, s in zip(weights, means, stds))
    return ProductMixture(dims)


def build_trainer_config(rt: Runtime) -> TrainerConfig:
    t = rt.cfg.section("trainer")
    kwargs = {"teacher": build_teacher(rt.cfg), "seed": rt.seed}
    simple = {
        "method": str,
        "iterations": int,
        "batch_size": int,
        "eta_theta": float,
        "eta_psi": float,
        "beta1": float,
        "beta2": float,
        "t_min": float,
        "truncation": str,
        "sid_alpha": float,
        "fake_updates": int,
        "cfg_scale": float,
        "init_steps": int,
        "init_batch": int,
        "init_lr": float,
        "eval_samples": int,
        "snapshot_every": int,
        "checkpoint_every": int,
    }
    for key, cast in simple.items():
        if key in t:
            kwargs[key] = cast(t[key])
    if "lambda" in t:
        kwargs["tracking_weight"] = float(t["lambda"])
    if "hidden" in t:
        kwargs["hidden"] = parse_ints(t["hidden"])
    if "ladder" in t:
        kwargs["ladder"] = parse_floats(t["ladder"])
    if "train_t" in t:
        kwargs["train_t"] = parse_floats(t["train_t"])
    if "dmd_normalize" in t:
        kwargs["dmd_normalize"] = parse_bool(t["dmd_normalize"])
    if "conditional_components" in t:
        kwargs["conditional_components"] = tuple(
            tuple(int(i) for i in dim) for dim in parse_per_dim(t["conditional_components"])
        )
    return TrainerConfig(**kwargs)


def cmd_distill(args) -> int:
    rt = Runtime(args, "distill")
    for key in (
        "method",
        "iterations",
        "batch_size",
        "hidden",
        "eta_theta",
        "eta_psi",
        "ladder",
        "train_t",
        "truncation",
        "sid_alpha",
        "fake_updates",
        "cfg_scale",
        "eval_samples",
        "snapshot_every",
        "checkpoint_every",
        "init_steps",
    ):
        rt.override("trainer", key, getattr(args, key))
    rt.override("trainer", "lambda", args.tracking_weight)
    rt.override("trainer", "dmd_normalize", args.dmd_normalize or None)
    rt.override("teacher", "weights", args.teacher_weights)
    rt.override("teacher", "means", args.teacher_means)
    rt.override("teacher", "stds", args.teacher_stds)

    tcfg = build_trainer_config(rt).resolve()
    print(f"training method={tcfg.method} iterations={tcfg.iterations} seed={tcfg.seed}")
    result = train(tcfg, out_dir=rt.out)
    for row in result.log_rows:
        if row["iteration"] % rt.log_every == 0 or row["iteration"] + 1 == tcfg.iterations:
            print(
                f"  iter {row['iteration']:>6d}  gen {row['loss_gen']:+.6f}  "
                f"fake {row['loss_fake']:.6f}  |r| {row['residual_norm']:.4f}"
            )
    ed = result.final_energy_distance
    print(f"final energy distance: {ed}")

    assertions = [
        assertion("losses_finite", bool(all(np.isfinite(r["loss_gen"]) and np.isfinite(r["loss_fake"]) for r in result.log_rows)), expected=True),
        assertion(
            "final_energy_distance_finite",
            bool(np.isfinite(ed)) if tcfg.iterations > 0 else True,
            expected=True,
        ),
        assertion("final_energy_distance", ed if tcfg.iterations > 0 else None, passed=True),
        assertion("iterations_completed", len(result.log_rows), expected=tcfg.iterations),
    ]
    if rt.figures and result.log_rows:
        plots.plot_training_curves(result.log_rows, rt.out / "training.png")
        from .autodiff import rng_stream
        from .trainers import sample_generator

        gen_samples = sample_generator(result.state, 2000, rng_stream(rt.seed, "fig-z"))
        teacher_samples = tcfg.teacher.sample(2000, rng_stream(rt.seed, "fig-teacher"))
        plots.plot_samples(gen_samples, teacher_samples, rt.out / "samples.png")
    return rt.finish(assertions)


def _toy_target(cfg: RunConfig):
    t = cfg.section("toy1d")
    if all(k in t for k in ("target_weights", "target_means", "target_stds")):
        return MixtureDensity(
            parse_floats(t["target_weights"]),
            parse_floats(t["target_means"]),
            parse_floats(t["target_stds"]),
        )
    return APP_TARGET_1D


def cmd_toy1d(args) -> int:
    rt = Runtime(args, "toy1d")
    rt.override("toy1d", "objective", args.objective)
    rt.override("toy1d", "steps", args.steps)
    rt.override("toy1d", "lr", args.lr)
    if args.grid:
        lo, hi, points = args.grid.split(":")
        rt.override("toy1d", "grid_lo", lo)
        rt.override("toy1d", "grid_hi", hi)
        rt.override("toy1d", "grid_points", points)
    if args.init:
        m0, s0 = parse_floats(args.init)
        rt.override("toy1d", "init_m", m0)
        rt.override("toy1d", "init_s", s0)

    t = rt.cfg.section("toy1d")
    objective = t.get("objective", "both")
    steps = int(t.get("steps", "2500"))
    lr = float(t.get("lr", "0.05"))
    beta1 = float(t.get("beta1", "0.0"))
    beta2 = float(t.get("beta2", "0.999"))
    grid = QuadratureGrid(
        lo=float(t.get("grid_lo", "-7.0")),
        hi=float(t.get("grid_hi", "7.0")),
        points=int(t.get("grid_points", "4001")),
    )
    init = (float(t.get("init_m", "1.0")), float(t.get("init_s", "1.2")))
    target = _toy_target(rt.cfg)
    names = ("fisher", "reverse_kl") if objective == "both" else (objective,)

    results = {}
    for name in names:
        print(f"fitting objective={name} steps={steps} lr={lr}")
        res = toy_fit(name, target=target, grid=grid, steps=steps, lr=lr, init=init, beta1=beta1, beta2=beta2)
        results[name] = res
        write_csv(
            rt.out / f"trajectory_{name}.csv",
            ("step", "m", "s", "objective"),
            [tuple(row) for row in res.trajectory],
        )
        print(f"  final m={res.model.m:.6f} s={res.model.s:.6f} kl={res.final_kl:.6f} fisher={res.final_fisher:.6f}")

    assertions = []
    for name, res in results.items():
        assertions.append(assertion(f"{name}_final_kl", res.final_kl, passed=bool(np.isfinite(res.final_kl))))
        assertions.append(
            assertion(f"{name}_final_fisher", res.final_fisher, passed=bool(np.isfinite(res.final_fisher)))
        )
        assertions.append(assertion(f"{name}_s_clamped", res.s_clamped, expected=False))
    if len(results) == 2:
        kl_fit, fisher_fit = results["reverse_kl"], results["fisher"]
        assertions.append(
            assertion(
                "reverse_kl_wins_its_own_metric",
                bool(kl_fit.final_kl < fisher_fit.final_kl),
                expected=True,
            )
        )
        assertions.append(
            assertion(
                "fisher_wins_its_own_metric",
                bool(fisher_fit.final_fisher < kl_fit.final_fisher),
                expected=True,
            )
        )

    if rt.figures:
        x = grid.x
        fits = {
            name: (res.model.as_mixture().density(x), res.trajectory) for name, res in results.items()
        }
        plots.plot_toy1d(x, target.density(x), fits, rt.out / "toy1d.png")
    return rt.finish(assertions)


def cmd_recursion(args) -> int:
    rt = Runtime(args, "recursion")
    for key in ("eta_theta", "eta_psi", "A", "B", "r0", "drive", "steps", "draws", "burn_in"):
        rt.override("recursion", key, getattr(args, key))
    rt.override("recursion", "lambda", args.lam)
    rt.override("recursion", "lambda_sweep", args.lambda_sweep)

    r = rt.cfg.section("recursion")
    params = RecursionParams(
        eta_theta=float(r.get("eta_theta", "0.1")),
        eta_psi=float(r.get("eta_psi", "0.1")),
        lam=float(r.get("lambda", "0.1")),
        A=float(r.get("A", "1.0")),
        B=float(r.get("B", "1.0")),
        r0=float(r.get("r0", "1.0")),
        drive=r.get("drive", "bounded_random"),
    )
    steps = int(r.get("steps", "10000"))
    draws = int(r.get("draws", "100"))
    burn_in = int(r.get("burn_in", "1000"))

    assertions = []

    traj = residual_recursion(params, steps, ad.rng_stream(rt.seed, "recursion-drive"))
    write_csv(rt.out / "trajectory.csv", ("step", "residual"), list(enumerate(traj)))
    b = bounds(params)
    post = np.abs(traj[min(burn_in, len(traj) - 1) :])
    assertions.append(
        assertion(
            "post_burn_in_residual_within_steady_state_bound",
            float(post.max()),
            expected=b["steady_state"],
            passed=bool(post.max() <= b["steady_state"] + 1e-9 or abs(params.r0) > b["steady_state"]),
        )
    )
    if params.drive == "zero":
        ratios = traj[1:][traj[:-1] != 0] / traj[:-1][traj[:-1] != 0]
        assertions.append(
            assertion(
                "zero_drive_contraction_ratio",
                float(np.max(np.abs(ratios - params.contraction))) if len(ratios) else 0.0,
                expected=0.0,
                tolerance=1e-15,
            )
        )

    verify = verify_bounds(steps=steps, draws=draws, burn_in=burn_in, seed=rt.seed)
    assertions.append(
        assertion(
            "random_draws_within_bounds",
            f"{draws - len(verify['violations'])}/{draws}",
            expected=f"{draws}/{draws}",
            passed=verify["passed"],
        )
    )

    sweep_spec = r.get("lambda_sweep")
    if sweep_spec:
        lo, hi, n = sweep_spec.split(":")
        sweep = lambda_sweep(float(lo), float(hi), int(n))
        write_csv(
            rt.out / "lambda_sweep.csv",
            ("lambda", "steady_state", "staleness", "error_proxy"),
            [tuple(row) for row in sweep],
        )
        n_minima = count_interior_minima(sweep[:, 3])
        assertions.append(assertion("error_proxy_interior_minima", n_minima, expected=1))
        if rt.figures:
            plots.plot_lambda_sweep(sweep, rt.out / "lambda_sweep.png")
    if rt.figures:
        plots.plot_recursion(traj, b["steady_state"], rt.out / "recursion.png")
    return rt.finish(assertions)


def cmd_identity(args) -> int:
    rt = Runtime(args, "identity")
    rt.override("identity", "tuples", args.tuples)
    rt.override("identity", "dim", args.dim)
    rt.override("identity", "alphas", args.alphas)
    sec = rt.cfg.section("identity")
    alphas = parse_floats(sec.get("alphas", "0.0,0.3,1.0,2.0"))
    report = identity_suite(
        n_tuples=int(sec.get("tuples", "50")),
        seed=rt.seed,
        dim=int(sec.get("dim", "4")),
        alphas=alphas,
    )
    checks = [k for k in report if isinstance(report[k], dict) and "max_abs_err" in report[k]]
    write_csv(
        rt.out / "identity.csv",
        ("check", "max_abs_err", "tolerance", "passed"),
        [
            (k, report[k]["max_abs_err"], report[k]["tol"], report[k]["max_abs_err"] <= report[k]["tol"])
            for k in checks
        ],
    )
    assertions = [
        assertion(k, report[k]["max_abs_err"], expected=0.0, tolerance=report[k]["tol"])
        for k in checks
    ]
    for item in report["offending"][:5]:
        print(f"identity violation: {item}")
    return rt.finish(assertions)


def cmd_cost(args) -> int:
    rt = Runtime(args, "cost")
    for key in ("t_fwd", "t_short_bwd", "t_long_bwd", "K", "unroll_factor"):
        rt.override("cost", key, getattr(args, key))
    sec = rt.cfg.section("cost")
    cm = CostModel(
        t_fwd=float(sec.get("t_fwd", "5.0")),
        t_short_bwd=float(sec.get("t_short_bwd", "15.0")),
        t_long_bwd=float(sec.get("t_long_bwd", "30.0")),
        K=int(sec.get("K", "5")),
        unroll_factor=float(sec.get("unroll_factor", "2.5")),
    )
    table = cost_model(cm)
    header = f"{'scheme':<10} {'F':>6} {'B_short':>8} {'B_long':>7} {'T [s]':>8}"
    print(header)
    print("-" * len(header))
    for name in ("two_step", "baseline"):
        row = table[name]
        print(f"{name:<10} {row['F']:>6.1f} {row['B_short']:>8d} {row['B_long']:>7d} {row['T']:>8.1f}")
    print(f"speedup: {table['speedup']:.4f}x")

    write_csv(
        rt.out / "cost.csv",
        ("scheme", "forwards", "short_backwards", "long_backwards", "seconds"),
        [
            (name, table[name]["F"], table[name]["B_short"], table[name]["B_long"], table[name]["T"])
            for name in ("two_step", "baseline")
        ],
    )
    assertions = [
        assertion("two_step_seconds", table["two_step"]["T"], passed=True),
        assertion("baseline_seconds", table["baseline"]["T"], passed=True),
        assertion("speedup", table["speedup"], passed=True),
    ]
    if rt.figures:
        plots.plot_cost(table, rt.out / "cost.png")
    return rt.finish(assertions)


def cmd_gradcheck(args) -> int:
    rt = Runtime(args, "gradcheck")
    rt.override("gradcheck", "points", args.points)
    rt.override("gradcheck", "dim", args.dim)
    rt.override("gradcheck", "batch", args.batch)
    rt.override("gradcheck", "hidden", args.hidden)
    sec = rt.cfg.section("gradcheck")
    points = int(sec.get("points", "20"))
    dim = int(sec.get("dim", "2"))
    batch = int(sec.get("batch", "2"))
    hidden = parse_ints(sec.get("hidden", "3"))

    losses = {
        "fisher": fisher_loss,
        "fake_regression": fake_regression_loss,
        "nr": nr_loss,
        "rc": rc_loss,
        "sim": lambda p: sim_losses(p)[0] + sim_losses(p)[1],
        "sid_0.3": lambda p: sid_loss(p, 0.3),
        "sgmd_outer": lambda p: sgmd_outer_loss(p, 0.1),
        "sgmd_inner": lambda p: sgmd_inner_loss(p, 0.1),
    }
    ref_keys = {
        "fisher": "fisher",
        "fake_regression": "fake_regression",
        "nr": "nr",
        "rc": "rc",
        "sim": "sim",
    }
    schedule = NoiseSchedule()
    teacher = default_teacher_2d() if dim == 2 else ProductMixture(
        tuple(MixtureDensity((0.6, 0.4), (-1.0, 1.5), (0.6, 0.9)) for _ in range(dim))
    )
    worst = {name: 0.0 for name in losses}
    rows = []
    for trial in range(points):
        gen = XPredMlp(dim, hidden, ad.rng_stream(rt.seed, "gc-gen", trial))
        fake = XPredMlp(dim, hidden, ad.rng_stream(rt.seed, "gc-fake", trial))
        rng = ad.rng_stream(rt.seed, "gc-data", trial)
        z = rng.standard_normal((batch, dim))
        eps = rng.standard_normal((batch, dim))
        t = float(rng.uniform(0.4, 0.98))
        params = gen.params() + fake.params()
        vec0 = ad.get_param_vector(params)
        pair0 = make_score_pair(schedule, teacher, fake, gen(z, 1.0), t, eps, with_frozen_input=True)
        base = {"x0": pair0.x0.data, "xt": pair0.xt.data, "x_real": pair0.x_real}

        def ref_value(name, vec):
            ad.set_param_vector(params, vec)
            ref = reference_losses_numpy(
                schedule, fake, lambda zz: gen(zz, 1.0).data, z, eps, t, base
            )
            if name == "sid_0.3":
                return ref["sid"](0.3)
            if name == "sgmd_outer":
                return ref["fisher"] + 0.1 * ref["nr"]
            if name == "sgmd_inner":
                return 0.1 * ref["rc"]
            return ref[ref_keys[name]]

        for name, build in losses.items():
            want = ad.finite_diff_grad(lambda v: ref_value(name, v), vec0.copy(), h=1e-5)
            ad.set_param_vector(params, vec0)
            ad.zero_grads(params)
            pair = make_score_pair(schedule, teacher, fake, gen(z, 1.0), t, eps, with_frozen_input=True)
            ad.backward(build(pair))
            got = ad.grad_vector(params)
            rel = float(np.max(np.abs(got - want) / np.maximum(np.abs(want), 1e-6)))
            worst[name] = max(worst[name], rel)
            rows.append((name, trial, rel))

    write_csv(rt.out / "gradcheck.csv", ("loss", "draw", "max_rel_err"), rows)
    assertions = [
        assertion(f"grad_{name}", err, expected=0.0, tolerance=1e-4) for name, err in worst.items()
    ]
    for name, err in sorted(worst.items()):
        print(f"  {name:<16} worst rel err {err:.3e}")
    return rt.finish(assertions)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="distill-lab",
        description="Desk-scale laboratory for few-step diffusion distillation on analytic targets.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="config file ([section] headers, key = value lines)")
        p.add_argument("--out", help="output directory (default runs/<command>)")
        p.add_argument("--seed", type=int, help=f"RNG seed (fallback: ${SEED_ENV_VAR}, then 0)")
        p.add_argument("--strict", action="store_true", help="exit nonzero if any report assertion fails")
        p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
        p.add_argument("--log-every", type=int, help="progress print cadence")

    p = sub.add_parser("distill", help="train a few-step generator against the analytic teacher")
    common(p)
    p.add_argument("--method", choices=("sgmd", "dmd2", "tsg_fisher", "tsg_sim", "sid"))
    p.add_argument("--iters", dest="iterations", type=int)
    p.add_argument("--batch", dest="batch_size", type=int)
    p.add_argument("--hidden", help="comma-separated layer widths, e.g. 32,32")
    p.add_argument("--eta-theta", dest="eta_theta", type=float)
    p.add_argument("--eta-psi", dest="eta_psi", type=float)
    p.add_argument("--ladder", help="comma-separated descending sampler timesteps")
    p.add_argument("--train-t", dest="train_t", help="comma-separated training noise levels")
    p.add_argument("--truncation", choices=("full_unroll", "last_step"))
    p.add_argument("--lambda", dest="tracking_weight", type=float, help="tracking weight (sgmd)")
    p.add_argument("--sid-alpha", dest="sid_alpha", type=float)
    p.add_argument("--fake-updates", "-K", dest="fake_updates", type=int)
    p.add_argument("--dmd-normalize", dest="dmd_normalize", action="store_true")
    p.add_argument("--cfg-scale", dest="cfg_scale", type=float)
    p.add_argument("--teacher-weights", help="per-dim weights, e.g. '0.5,0.5;1.0'")
    p.add_argument("--teacher-means", help="per-dim means")
    p.add_argument("--teacher-stds", help="per-dim stds")
    p.add_argument("--eval-samples", dest="eval_samples", type=int)
    p.add_argument("--snapshot-every", dest="snapshot_every", type=int)
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    p.add_argument("--init-steps", dest="init_steps", type=int)
    p.set_defaults(fn=cmd_distill)

    p = sub.add_parser("toy1d", help="1D mixture fit: reverse-KL vs Fisher matching")
    common(p)
    p.add_argument("--objective", choices=("fisher", "reverse_kl", "both"))
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--grid", help="lo:hi:points (default -7:7:4001)")
    p.add_argument("--init", help="m,s initialization (default 1.0,1.2)")
    p.set_defaults(fn=cmd_toy1d)

    p = sub.add_parser("recursion", help="tracking-residual recursion, bounds, lambda sweep")
    common(p)
    p.add_argument("--eta-theta", dest="eta_theta", type=float)
    p.add_argument("--eta-psi", dest="eta_psi", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--A", type=float)
    p.add_argument("--B", type=float)
    p.add_argument("--r0", type=float)
    p.add_argument("--drive", choices=("zero", "constant", "bounded_random"))
    p.add_argument("--steps", type=int)
    p.add_argument("--draws", type=int)
    p.add_argument("--burn-in", dest="burn_in", type=int)
    p.add_argument("--lambda-sweep", dest="lambda_sweep", help="lo:hi:n")
    p.set_defaults(fn=cmd_recursion)

    p = sub.add_parser("identity", help="algebraic identity checks for the matching rewrites")
    common(p)
    p.add_argument("--tuples", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--alphas", help="comma-separated reweighting coefficients")
    p.set_defaults(fn=cmd_identity)

    p = sub.add_parser("cost", help="per-iteration operator counts and wall-clock estimate")
    common(p)
    p.add_argument("--t-fwd", dest="t_fwd", type=float)
    p.add_argument("--t-short-bwd", dest="t_short_bwd", type=float)
    p.add_argument("--t-long-bwd", dest="t_long_bwd", type=float)
    p.add_argument("-K", dest="K", type=int)
    p.add_argument("--unroll-factor", dest="unroll_factor", type=float)
    p.set_defaults(fn=cmd_cost)

    p = sub.add_parser("gradcheck", help="finite-difference oracle over every loss")
    common(p)
    p.add_argument("--points", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--hidden", help="comma-separated widths for the check nets")
    p.set_defaults(fn=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
