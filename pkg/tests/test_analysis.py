import numpy as np
import pytest

from distill_lab.analysis import (
    APP_TARGET_1D,
    CostModel,
    QuadratureGrid,
    RecursionParams,
    SymmetricPairModel,
    bounds,
    cost_model,
    count_interior_minima,
    fisher_divergence_quadrature,
    identity_suite,
    lambda_sweep,
    residual_recursion,
    reverse_kl_quadrature,
    toy_fit,
    verify_bounds,
)
from distill_lab.autodiff import rng_stream
from distill_lab.teachers import MixtureDensity

GRID = QuadratureGrid()


def normal(mu, s):
    return MixtureDensity((1.0,), (mu,), (s,))


class TestQuadratureGrid:
    def test_defaults(self):
        assert (GRID.lo, GRID.hi, GRID.points) == (-7.0, 7.0, 4001)
        assert GRID.spacing == pytest.approx(14.0 / 4000)

    def test_trapezoid_weights_sum_to_span(self):
        assert GRID.weights.sum() == pytest.approx(14.0, abs=1e-10)

    def test_bad_grid_rejected(self):
        with pytest.raises(ValueError):
            QuadratureGrid(lo=1.0, hi=-1.0)


class TestReverseKl:
    def test_identical_densities(self):
        assert abs(reverse_kl_quadrature(APP_TARGET_1D, APP_TARGET_1D, GRID)) < 1e-10

    def test_gaussian_closed_form(self):
        # KL(N(0,1) || N(0,4)) = log 2 + 1/8 - 1/2
        want = np.log(2.0) + 0.125 - 0.5
        got = reverse_kl_quadrature(normal(0, 1), normal(0, 2), GRID)
        assert got == pytest.approx(want, abs=1e-6)

    def test_nonnegative_on_random_pairs(self):
        rng = rng_stream(1, "klpos")
        for _ in range(100):
            q = normal(float(rng.uniform(-2, 2)), float(rng.uniform(0.3, 1.5)))
            p = normal(float(rng.uniform(-2, 2)), float(rng.uniform(0.3, 1.5)))
            assert reverse_kl_quadrature(q, p, GRID) >= -1e-9


class TestFisherDivergence:
    def test_identical_densities(self):
        assert abs(fisher_divergence_quadrature(APP_TARGET_1D, APP_TARGET_1D, GRID)) < 1e-12

    def test_mean_shift_closed_form(self):
        # scores of N(0,1) and N(mu,1) differ by the constant mu -> integral mu^2
        for mu in (0.5, 1.0, -1.7):
            got = fisher_divergence_quadrature(normal(0, 1), normal(mu, 1), GRID)
            assert got == pytest.approx(mu**2, rel=1e-6)

    def test_nonnegative_on_random_pairs(self):
        rng = rng_stream(2, "fpos")
        for _ in range(100):
            q = normal(float(rng.uniform(-2, 2)), float(rng.uniform(0.3, 1.5)))
            p = normal(float(rng.uniform(-2, 2)), float(rng.uniform(0.3, 1.5)))
            assert fisher_divergence_quadrature(q, p, GRID) >= 0.0


class TestToyFit:
    def test_zero_steps_reports_initialization_divergences(self):
        r = toy_fit("fisher", steps=0)
        q0 = SymmetricPairModel(1.0, 1.2).as_mixture()
        assert r.trajectory.shape[0] == 1
        assert r.final_kl == pytest.approx(reverse_kl_quadrature(q0, APP_TARGET_1D, GRID), abs=1e-12)
        assert r.final_fisher == pytest.approx(
            fisher_divergence_quadrature(q0, APP_TARGET_1D, GRID), abs=1e-12
        )
        # frozen oracle values for the common initialization
        assert r.final_kl == pytest.approx(0.5506203896338584, abs=1e-9)
        assert r.final_fisher == pytest.approx(4.058547392193403, abs=1e-9)

    def test_objective_column_matches_quadrature_oracle(self):
        r = toy_fit("reverse_kl", steps=3)
        for step, m, s, val in r.trajectory:
            q = SymmetricPairModel(m, s).as_mixture()
            assert val == pytest.approx(reverse_kl_quadrature(q, APP_TARGET_1D, GRID), abs=1e-9)

    def test_fisher_self_consistency_recovers_family_member(self):
        target = SymmetricPairModel(1.5, 0.7).as_mixture()
        r = toy_fit("fisher", target=target, steps=3000, lr=5e-3)
        assert abs(r.model.m - 1.5) < 1e-3
        assert abs(r.model.s - 0.7) < 1e-3

    def test_unknown_objective_rejected(self):
        with pytest.raises(ValueError, match="objective"):
            toy_fit("forward_kl", steps=1)

    def test_trajectory_is_deterministic(self):
        a = toy_fit("reverse_kl", steps=5)
        b = toy_fit("reverse_kl", steps=5)
        assert np.array_equal(a.trajectory, b.trajectory)


class TestResidualRecursion:
    def test_zero_drive_geometric_decay_exact(self):
        p = RecursionParams(eta_theta=0.1, eta_psi=0.2, lam=0.5, r0=3.0, drive="zero")
        r = residual_recursion(p, 50)
        rho = 1.0 - 0.2 * 0.5
        # per-step ratio is exactly the contraction factor
        assert np.array_equal(r[1:], rho * r[:-1])
        # power-form oracle agrees to the accumulation of rounding
        want = 3.0 * rho ** np.arange(51)
        assert np.allclose(r, want, rtol=1e-13, atol=0)

    def test_constant_drive_reaches_affine_fixed_point(self):
        p = RecursionParams(eta_theta=0.1, eta_psi=0.2, lam=0.5, r0=0.0, drive="constant")
        r = residual_recursion(p, 2000)
        fixed_point = p.step_bound / (p.eta_psi * p.lam)
        assert r[-1] == pytest.approx(fixed_point, rel=1e-10)
        assert bounds(p)["steady_state"] == pytest.approx(fixed_point, rel=1e-15)

    def test_full_contraction_copies_the_drive(self):
        p = RecursionParams(eta_theta=0.3, eta_psi=2.0, lam=0.5, r0=5.0, drive="constant")
        assert p.contraction == 0.0
        r = residual_recursion(p, 4)
        assert np.array_equal(r[1:], np.full(4, p.step_bound))

    def test_contraction_precondition_enforced(self):
        with pytest.raises(ValueError, match="contraction precondition"):
            RecursionParams(eta_psi=3.0, lam=0.5)
        with pytest.raises(ValueError, match="contraction precondition"):
            RecursionParams(lam=0.0)


class TestBounds:
    def test_plugin_value(self):
        p = RecursionParams(eta_theta=0.1, eta_psi=0.1, lam=0.1, A=1.0, B=1.0)
        assert bounds(p)["steady_state"] == pytest.approx(11.0, rel=1e-12)

    def test_a_zero_is_lambda_independent(self):
        vals = [
            bounds(RecursionParams(eta_theta=0.2, eta_psi=0.4, lam=lam, A=0.0, B=1.5))["steady_state"]
            for lam in (0.05, 0.1, 0.7, 2.0)
        ]
        want = 0.2 * 1.5 / 0.4
        assert np.allclose(vals, want, atol=1e-14)

    def test_error_proxy_u_shape_with_unique_interior_minimum(self):
        sweep = lambda_sweep(0.01, 1.0, 50)
        proxy = sweep[:, 3]
        assert count_interior_minima(proxy) == 1
        assert 0 < np.argmin(proxy) < len(proxy) - 1
        # calculus oracle: argmin of C1/x + C2 x is sqrt(C1/C2)
        p = RecursionParams(eta_theta=0.1, eta_psi=1.0, lam=0.1, A=1.0, B=10.0)
        b = bounds(p)
        lam_star = np.sqrt(b["C1"] / b["C2"])
        assert 0.01 < lam_star < 1.0
        k = np.argmin(np.abs(sweep[:, 0] - lam_star))
        assert np.argmin(proxy) == k

    def test_staleness_is_step_bound(self):
        p = RecursionParams(eta_theta=0.3, eta_psi=0.1, lam=0.2, A=1.0, B=2.0)
        assert bounds(p)["staleness"] == pytest.approx(0.3 * (1.0 + 0.2 * 2.0), rel=1e-15)


class TestVerifyBounds:
    def test_hundred_random_draws_within_bounds(self):
        report = verify_bounds(steps=10_000, draws=100, burn_in=1000, seed=0)
        assert report["passed"], report["violations"][:3]
        # the adversarial constant drive saturates its bound exactly, so the
        # margin may be a rounding ulp below zero
        assert report["worst_margin"] >= -1e-9

    def test_zero_drive_trivially_within(self):
        p = RecursionParams(drive="zero", r0=0.5)
        r = residual_recursion(p, 5000)
        assert np.max(np.abs(r[1000:])) <= bounds(p)["steady_state"] + 1e-9

    def test_adversarial_constant_drive_saturates_exactly_at_bound(self):
        p = RecursionParams(eta_theta=0.5, eta_psi=0.5, lam=0.4, drive="constant", r0=0.0)
        r = residual_recursion(p, 20_000)
        b = bounds(p)["steady_state"]
        assert r[-1] == pytest.approx(b, rel=1e-12)
        assert np.max(r) <= b + 1e-9


class TestIdentitySuite:
    def test_all_checks_pass_at_tolerance(self):
        report = identity_suite(n_tuples=50, seed=0)
        assert report["passed"], report["offending"][:3]
        assert report["rewrite_vs_terms"]["max_abs_err"] <= 1e-10
        assert report["reweighted_rewrite_vs_terms"]["max_abs_err"] <= 1e-10
        assert report["alpha_one_matches_plain_sum"]["max_abs_err"] == 0.0
        assert report["linear_coupling_decomposition"]["max_abs_err"] <= 1e-9


class TestCostModel:
    def test_headline_numbers(self):
        out = cost_model(CostModel())
        assert out["two_step"]["T"] == pytest.approx(77.5, abs=1e-12)
        assert out["baseline"]["T"] == pytest.approx(255.0, abs=1e-12)
        assert out["two_step"]["F"] == pytest.approx(6.5)
        assert out["baseline"]["F"] == pytest.approx(33.0)
        assert out["baseline"]["B_short"] == 6
        assert 3.25 <= out["speedup"] <= 3.35

    def test_k_equal_one(self):
        out = cost_model(CostModel(K=1))
        assert out["baseline"]["T"] == pytest.approx(55.0 + 30.0)

    def test_free_forwards(self):
        out = cost_model(CostModel(t_fwd=0.0))
        assert out["two_step"]["T"] == pytest.approx(45.0)
        assert out["baseline"]["T"] == pytest.approx(90.0)

    def test_validation(self):
        with pytest.raises(ValueError):
            CostModel(K=0)
        with pytest.raises(ValueError):
            CostModel(t_fwd=-1.0)
