import dataclasses
import math

import numpy as np
import pytest

from dasgd.core import HyperParams, RngStream
from dasgd.objectives import NoisyQuadratic
from dasgd.theory import (
    AssumptionParams,
    BoundInapplicable,
    CapUndefined,
    corollary_bound,
    empirical_vs_bound,
    lr_caps,
    seed_averaged_trajectories,
    theorem_bound,
    warmup_gradient_term,
)


def params(**kw):
    args = dict(eta=0.01, tau=2, d=1, xi=0.25, M=2, B_l=1, K=100)
    args.update(kw)
    return HyperParams(**args)


def ap(**kw):
    args = dict(L=1.0, beta=0.0, sigma_sq=0.1, F1=1.0, F_inf=0.0, G0=0.0)
    args.update(kw)
    return AssumptionParams(**args)


class TestLrCaps:
    def test_frozen_manual_substitution(self):
        # exact rationals worked out by hand for
        # (L=1, beta=0, xi=1/4, d=1, tau=2, M=2, K=100):
        # a = 32/48183, b = 4/32025
        caps = lr_caps(ap(), params())
        assert caps.a == pytest.approx(32 / 48183, rel=1e-14)
        assert caps.b == pytest.approx(4 / 32025, rel=1e-14)
        assert caps.eta_max == pytest.approx(math.sqrt(4 / 32025), rel=1e-14)
        assert not caps.xi_zero_fallback

    def test_huge_curvature_kills_the_cap(self):
        caps = lr_caps(ap(L=1e12), params())
        assert caps.eta_max < 1e-9

    def test_doubling_K_strictly_decreases(self):
        prev = lr_caps(ap(), params(K=100)).eta_max
        for K in (200, 400, 800):
            cur = lr_caps(ap(), params(K=K)).eta_max
            assert cur < prev
            prev = cur

    @pytest.mark.parametrize("field,values", [
        ("L", [0.5, 1.0, 2.0, 4.0]),
        ("tau", [2, 3, 5, 8]),
        ("K", [50, 100, 500]),
    ])
    def test_monotone_nonincreasing(self, field, values):
        outs = []
        for v in values:
            if field == "L":
                outs.append(lr_caps(ap(L=v), params()).eta_max)
            else:
                outs.append(lr_caps(ap(), params(**{field: v})).eta_max)
        assert all(a >= b for a, b in zip(outs, outs[1:]))

    def test_xi_zero_falls_back_to_cap_a(self):
        caps = lr_caps(ap(), params(xi=0.0))
        assert caps.b == 0.0
        assert caps.xi_zero_fallback
        assert caps.eta_max == math.sqrt(caps.a)

    def test_xi_one_undefined(self):
        with pytest.raises(CapUndefined):
            lr_caps(ap(), params(xi=1.0))


class TestTheoremBound:
    def test_frozen_manual_substitution(self):
        # exact rationals by hand for (M=2, tau=2, d=1, xi=1/4, L=1,
        # sigma^2=1/10, beta=0, F1-F_inf=1, K=1e4, eta=1/100, G0=0):
        # term1 = 177/10000, term3 = 17/2.5e9
        with pytest.warns(BoundInapplicable):
            bound = theorem_bound(ap(), params(K=10_000), 0.01)
        assert bound == pytest.approx(177 / 10_000 + 17 / 2_500_000_000,
                                      rel=1e-13)

    def test_noise_free_reduces_to_first_term(self):
        a = ap(sigma_sq=0.0, F1=3.0)
        p = params(K=1000)
        eta = 1e-4
        s = p.xi * p.d + p.tau - p.d
        expected = 2 * p.M * 3.0 / (eta * p.M * p.K * s)
        assert theorem_bound(a, p, eta) == pytest.approx(expected, rel=1e-14)

    def test_xi_zero_third_term_closed_form(self):
        a = ap(F1=0.0)
        p = params(xi=0.0, K=1000)
        eta = 1e-4
        got = theorem_bound(a, p, eta)
        tau_minus_d = p.tau - p.d
        t1 = 2 * p.K * a.L * eta ** 2 * a.sigma_sq * tau_minus_d / (eta * p.K * tau_minus_d)
        t3 = 6 * eta ** 4 * a.L ** 2 * a.sigma_sq * tau_minus_d
        assert got == pytest.approx(t1 + t3, rel=1e-14)

    def test_warns_above_cap(self):
        with pytest.warns(BoundInapplicable):
            theorem_bound(ap(), params(), 1.0)

    def test_zero_eta_is_infinite(self):
        assert theorem_bound(ap(), params(), 0.0) == math.inf

    def test_xi_one_rejected(self):
        with pytest.raises(CapUndefined):
            theorem_bound(ap(), params(xi=1.0), 1e-4)

    @pytest.mark.parametrize("field", ["sigma_sq", "F1", "G0"])
    def test_monotone_nondecreasing_in_noise_and_gap(self, field):
        rng = RngStream(11, purpose="test").generator()
        for _ in range(30):
            tau = int(rng.integers(2, 6))
            p = params(tau=tau, d=int(rng.integers(0, tau)),
                       K=int(rng.integers(10, 1000)))
            eta = float(rng.uniform(1e-5, 1e-3))
            lo, hi = sorted(rng.uniform(0.0, 5.0, size=2))
            b_lo = theorem_bound(ap(**{field: lo}), p, eta)
            b_hi = theorem_bound(ap(**{field: hi}), p, eta)
            assert b_hi >= b_lo


class TestExactRationalCrossCheck:
    """Re-derive caps and bound in exact rational arithmetic and compare."""

    @pytest.mark.filterwarnings("ignore::dasgd.theory.BoundInapplicable")
    def test_against_symbolic_evaluation(self):
        sympy = pytest.importorskip("sympy")
        R = sympy.Rational
        rng = RngStream(20, purpose="test").generator()
        for _ in range(25):
            tau = int(rng.integers(1, 6))
            d = int(rng.integers(0, tau))
            xi = R(int(rng.integers(0, 4)), 4)          # 0, 1/4, 1/2, 3/4
            M = int(rng.integers(1, 9))
            K = int(rng.integers(2, 5000))
            L = R(int(rng.integers(1, 9)), 2)
            beta = R(int(rng.integers(0, 5)), 4)
            s2 = R(int(rng.integers(0, 9)), 4)
            dF = R(int(rng.integers(0, 9)), 2)
            G0 = R(int(rng.integers(0, 9)), 2)
            eta = R(1, int(rng.integers(50, 5000)))

            inner = (beta + K * tau) + (beta + 1) * (1 - xi)
            head = 2 * L * xi ** 2 * (beta + 1) * (1 - xi)
            a = 1 / (head + 6 * L ** 2 * (d * xi + tau - d) * inner)
            b = (xi * M * (1 - xi)
                 / (head + 3 * L ** 2 * M * (tau - d) * (2 * beta + 2 * K * tau)
                    + 6 * d * M * xi * L ** 2 * inner))
            s = xi * d + tau - d
            geo = xi ** 2 / (1 - xi ** 2)
            t1 = (2 * M * dF + 2 * M * K * L * eta ** 2 * s2
                  * (xi ** 2 * d + tau - d)) / (eta * M * K * s)
            t2 = (3 * eta ** 4 * xi * L ** 2 * (tau - d + d * xi)
                  / (M * K * s)) * geo * G0
            t3 = (6 * eta ** 4 * L ** 2 * s2 / s) * (
                tau * geo * (tau - d + xi * d) + (tau - d) ** 2
                + xi * d * (tau - 1))

            p = params(tau=tau, d=d, xi=float(xi), M=M, K=K)
            apv = ap(L=float(L), beta=float(beta), sigma_sq=float(s2),
                     F1=float(dF), F_inf=0.0, G0=float(G0))
            caps = lr_caps(apv, p)
            assert caps.a == pytest.approx(float(a), rel=1e-12)
            if xi == 0:
                assert caps.b == 0.0
            else:
                assert caps.b == pytest.approx(float(b), rel=1e-12)
            got = theorem_bound(apv, p, float(eta))
            assert got == pytest.approx(float(t1 + t2 + t3), rel=1e-11)


class TestCorollaryBound:
    @pytest.mark.filterwarnings("ignore::dasgd.theory.BoundInapplicable")
    def test_matches_theorem_at_scaled_eta(self):
        rng = RngStream(12, purpose="test").generator()
        for _ in range(40):
            tau = int(rng.integers(1, 6))
            d = int(rng.integers(0, tau))
            p = params(tau=tau, d=d, xi=float(rng.uniform(0, 0.9)),
                       M=int(rng.integers(1, 9)), K=int(rng.integers(2, 10_000)))
            a = ap(sigma_sq=float(rng.uniform(0, 2.0)),
                   G0=float(rng.uniform(0, 3.0)))
            A = float(rng.uniform(0.01, 2.0))
            full, asym = corollary_bound(a, p, A)
            direct = theorem_bound(a, p, A / math.sqrt(p.K))
            assert abs(full - direct) <= 1e-12 * abs(full)
            assert asym <= full

    def test_asymptotic_scaling_is_exactly_half(self):
        a = ap(sigma_sq=0.7)
        for K in (100, 1024, 9_999):
            _, asym_K = corollary_bound(a, params(K=K), 0.3)
            _, asym_4K = corollary_bound(a, params(K=4 * K), 0.3)
            assert asym_4K / asym_K == 0.5

    def test_tail_terms_decay_quadratically(self):
        a = ap(sigma_sq=1.0, G0=2.0)
        gaps = []
        for K in (10 ** 2, 10 ** 4, 10 ** 6):
            full, asym = corollary_bound(a, params(K=K, d=1, tau=2), 0.5)
            gaps.append(full - asym)
        # each 100x in K shrinks the tail by ~1e4
        assert gaps[0] / gaps[1] == pytest.approx(1e4, rel=0.05)
        assert gaps[1] / gaps[2] == pytest.approx(1e4, rel=0.05)

    def test_noise_free_closed_form(self):
        a = ap(sigma_sq=0.0, F1=2.0)
        p = params(K=400)
        A = 0.25
        full, asym = corollary_bound(a, p, A)
        s = p.xi * p.d + p.tau - p.d
        expected = 2 * p.M * 2.0 / (A * p.M * math.sqrt(p.K) * s)
        assert full == pytest.approx(expected, rel=1e-14)
        assert asym == full

    def test_requires_positive_A(self):
        with pytest.raises(ValueError):
            corollary_bound(ap(), params(), 0.0)


class TestEmpiricalVsBound:
    @pytest.fixture
    def quad(self):
        return NoisyQuadratic.diagonal(
            [0.5, 1.0], noise_sigma=1.0, x0=np.array([0.4, 0.4]))

    def test_bound_holds_on_quadratic(self, quad):
        a = AssumptionParams.from_quadratic(quad)
        p = params(K=400, M=2)
        eta = lr_caps(a, p).eta_max
        trajs = seed_averaged_trajectories(
            dataclasses.replace(p, eta=eta), quad, range(16))
        report = empirical_vs_bound(trajs, a, p, eta)
        assert report.satisfied
        assert report.seeds == 16

    def test_few_seeds_warn(self, quad):
        a = AssumptionParams.from_quadratic(quad)
        p = params(K=50)
        trajs = seed_averaged_trajectories(p, quad, range(2))
        with pytest.warns(UserWarning, match="2 seeds"):
            report = empirical_vs_bound(trajs, a, p, p.eta)
        assert report.seeds == 2

    def test_zero_eta_degenerate(self, quad):
        a = AssumptionParams.from_quadratic(quad)
        p = params(K=50)
        trajs = seed_averaged_trajectories(p, quad, range(16))
        report = empirical_vs_bound(trajs, a, p, 0.0)
        assert report.degenerate and report.satisfied
        assert report.bound == math.inf

    def test_report_dict_fields(self, quad):
        a = AssumptionParams.from_quadratic(quad)
        p = params(K=50)
        trajs = seed_averaged_trajectories(p, quad, range(16))
        report = empirical_vs_bound(trajs, a, p, 1e-4)
        payload = report.to_dict(a, p)
        assert set(payload) == {"params", "assumption_params", "eta",
                                "eta_max", "empirical", "bound", "satisfied",
                                "seeds"}


class TestWarmupTerm:
    def test_zero_for_small_delay(self):
        quad = NoisyQuadratic.diagonal([1.0], noise_sigma=0.1)
        assert warmup_gradient_term(params(d=0, tau=2), quad) == 0.0
        assert warmup_gradient_term(params(d=1, tau=2), quad) == 0.0

    def test_positive_and_deterministic_for_d2(self):
        quad = NoisyQuadratic.diagonal([1.0, 2.0], noise_sigma=0.1,
                                       x0=np.array([1.0, 1.0]))
        p = params(d=2, tau=4, M=3)
        a = warmup_gradient_term(p, quad)
        b = warmup_gradient_term(p, quad)
        assert a == b > 0.0

    def test_scales_with_delay_squared_accumulation(self):
        quad = NoisyQuadratic.diagonal([1.0], noise_sigma=0.0,
                                       x0=np.array([2.0]))
        # noise-free scalar: G0 = (d-1)^2 * M * (lam * x_{d-1})^2
        p = params(d=3, tau=4, M=2, eta=0.1)
        x2 = 2.0 * 0.9 * 0.9
        expected = 4 * 2 * x2 ** 2
        assert warmup_gradient_term(p, quad) == pytest.approx(expected, rel=1e-12)


class TestAssumptionParams:
    def test_from_quadratic_closed_forms(self):
        quad = NoisyQuadratic.diagonal([0.5, 2.0], noise_sigma=0.3,
                                       x0=np.array([1.0, -1.0]))
        a = AssumptionParams.from_quadratic(quad)
        assert a.L == 2.0
        assert a.beta == 0.0
        assert a.sigma_sq == pytest.approx(2 * 0.09, rel=1e-12)
        assert a.F1 == pytest.approx(quad.full_loss(np.array([1.0, -1.0])))
        assert a.F1 - a.F_inf == pytest.approx(quad.gap(np.array([1.0, -1.0])))

    @pytest.mark.parametrize("kw", [
        {"L": 0.0}, {"beta": -1.0}, {"sigma_sq": -0.1},
        {"F1": -1.0, "F_inf": 0.0}, {"G0": -2.0},
    ])
    def test_validation(self, kw):
        with pytest.raises(ValueError):
            ap(**kw)
