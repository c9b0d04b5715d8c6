import math

import numpy as np
import pytest

from d2ibc import (
    InversionConfig,
    NormConstants,
    PidGains,
    SimulationTrace,
    StabilityConstants,
    check_assumptions,
    check_error_recursion,
    check_finite_gain,
    compute_error_bound,
    estimate_delta_bar,
    estimate_gamma_xi,
    estimate_gamma_y,
    estimate_inversion_constants,
    fit_inversion_constants,
    get_plant,
    load_certificate,
    recompute_derived,
    save_certificate,
    verify_tracking_bound,
)
from d2ibc.errors import AssumptionViolationError, DegenerateDomainError
from d2ibc.stability import CertifySpec, OperatingPointSampler, certify, residue_fn, symmetric_box
from helpers import make_scalar_linear_model


def make_trace(e, y=None, r=None, xi=None, u_bar=1.0):
    e = np.atleast_2d(np.asarray(e, dtype=float)).reshape(-1, 1)
    T = len(e)
    y = np.zeros((T, 1)) if y is None else np.asarray(y, dtype=float).reshape(-1, 1)
    r = y + e if r is None else np.asarray(r, dtype=float).reshape(-1, 1)
    xi = np.zeros((T, 1)) if xi is None else np.asarray(xi, dtype=float).reshape(-1, 1)
    zeros = np.zeros((T, 1))
    return SimulationTrace(t=np.arange(T), r=r, y=y, u_nl=zeros, u_lin=zeros,
                           u=zeros, xi=xi, e=e, u_bar=u_bar)


class TestGammaY:
    def test_linear_residue_exact(self):
        delta = lambda y, u: 0.3 * y
        got = estimate_gamma_y(delta, symmetric_box(1.0, 1), symmetric_box(1.0, 1),
                               grid=9, safety_factor=1.2)
        assert got == pytest.approx(0.3 * 1.2, abs=1e-9)

    def test_zero_residue(self):
        delta = lambda y, u: np.zeros(1)
        assert estimate_gamma_y(delta, symmetric_box(1.0, 1), symmetric_box(1.0, 1),
                                grid=5) == 0.0

    def test_quadratic_residue_near_boundary_slope(self):
        delta = lambda y, u: 0.1 * y**2
        got = estimate_gamma_y(delta, symmetric_box(1.0, 1), symmetric_box(1.0, 1),
                               grid=33, safety_factor=1.0)
        assert got >= 0.19
        assert got <= 0.2  # never exceeds the true Lipschitz constant

    def test_nested_grids_monotone(self):
        delta = lambda y, u: 0.05 * np.sin(3.0 * y)
        prev = 0.0
        for grid in (3, 5, 9, 17, 33):  # each linspace refines the previous one
            got = estimate_gamma_y(delta, symmetric_box(1.0, 1),
                                   symmetric_box(1.0, 1), grid=grid, safety_factor=1.0)
            assert got >= prev - 1e-15
            prev = got

    def test_degenerate_box(self):
        delta = lambda y, u: 0.3 * y
        with pytest.raises(DegenerateDomainError):
            estimate_gamma_y(delta, symmetric_box(0.0, 1), symmetric_box(1.0, 1), grid=5)

    def test_sampled_bracket_for_registry_residue(self):
        plant = get_plant("residue_siso")
        delta = residue_fn(plant, plant.base_model)
        gamma_true = plant.analytic_gamma_y
        raw = estimate_gamma_y(delta, symmetric_box(1.5, 1), symmetric_box(1.0, 1),
                               grid=17, safety_factor=1.0)
        assert gamma_true * (1 - 1e-9) <= raw <= gamma_true + 1e-12
        inflated = estimate_gamma_y(delta, symmetric_box(1.5, 1),
                                    symmetric_box(1.0, 1), grid=17, safety_factor=1.2)
        assert inflated >= gamma_true  # default inflation upper-bounds the truth


class TestGammaXi:
    def test_additive_disturbance_gain(self):
        p = get_plant("linear_siso", xi_bar=0.5)
        got = estimate_gamma_xi(p, y_bar=1.0, grid=5, safety_factor=1.2)
        assert got == pytest.approx(0.1 * 1.2, abs=1e-9)

    def test_zero_xi_bar(self):
        p = get_plant("linear_siso", xi_bar=0.0)
        assert estimate_gamma_xi(p, y_bar=1.0, grid=5) == 0.0

    def test_xi_independent_plant(self):
        p = get_plant("linear_siso", xi_bar=0.5, xi_gain=0.0)
        assert estimate_gamma_xi(p, y_bar=1.0, grid=5) == 0.0


class TestDeltaBar:
    def test_constant_residue(self):
        delta = lambda y, u: np.full(1, -0.7)
        assert estimate_delta_bar(delta, symmetric_box(1.0, 1), 5, y_dim=1) == 0.7

    def test_linear_in_y_vanishes(self):
        delta = lambda y, u: 0.3 * y
        assert estimate_delta_bar(delta, symmetric_box(1.0, 1), 9, y_dim=1) == 0.0

    def test_quadratic_input_residue(self):
        delta = lambda y, u: 0.05 * u**2
        got = estimate_delta_bar(delta, symmetric_box(1.0, 1), 9, y_dim=1)
        assert got == pytest.approx(0.05, abs=1e-12)


class TestFitInversionConstants:
    def test_single_constant_sample(self):
        got = fit_inversion_constants([0.2], [0.0], [0.0], r_bar=1.0)
        np.testing.assert_allclose(got, [0.0, 0.0, 0.2], atol=1e-10)

    def test_reference_tracking_dominates_for_large_r_bar(self):
        # e_hat == |r_next| samples: Gamma_s = 1 covers them tightly, and with
        # r_bar = 5 its weight 0.1/5 beats Lambda_e covering max|e| = 5
        rng = np.random.default_rng(0)
        r = rng.uniform(-5, 5, 200)
        got = fit_inversion_constants(np.abs(r), np.zeros(200), np.abs(r), r_bar=5.0)
        assert got[0] == pytest.approx(0.0, abs=1e-9)
        assert got[1] == pytest.approx(1.0, abs=1e-9)
        assert got[2] == pytest.approx(0.0, abs=1e-9)

    def test_feasibility_of_result(self):
        rng = np.random.default_rng(4)
        e = rng.uniform(0, 2, 50)
        a = rng.uniform(0, 3, 50)
        b = rng.uniform(0, 1, 50)
        gy, gs, le = fit_inversion_constants(e, a, b, r_bar=1.0)
        assert (gy * a + gs * b + le >= e - 1e-8).all()

    def test_empty_samples(self):
        with pytest.raises(ValueError):
            fit_inversion_constants([], [], [], r_bar=1.0)


class TestEstimateInversionConstants:
    def test_exact_model_zero_pid(self, unit_norm):
        # achievable references and exact inversion: all three constants vanish
        f = make_scalar_linear_model(0.2, 1.0)
        cfg = InversionConfig(zeta=[1.0], mu=[0.0], lam=[0.0], norm=unit_norm)
        sampler = OperatingPointSampler(n=1, n_u=1, n_y=1, y_bar=0.5, r_bar=0.3,
                                        u_bar=1.0, u_lin_bound=0.0, count=60, seed=1)
        gy, gs, le = estimate_inversion_constants(f, cfg, PidGains.zeros(1, 1, 1), sampler)
        assert gy <= 1e-6 and gs <= 1e-6 and le <= 1e-6

    def test_blind_model_tracks_reference_magnitude(self, unit_norm):
        # model == 0 predicts nothing, so e_hat = r_next at every sample
        f = make_scalar_linear_model(0.0, 0.0)
        cfg = InversionConfig(zeta=[1.0], mu=[0.0], lam=[0.0], norm=unit_norm)
        sampler = OperatingPointSampler(n=1, n_u=1, n_y=1, y_bar=1.0, r_bar=5.0,
                                        u_bar=1.0, u_lin_bound=0.0, count=150, seed=2)
        gy, gs, le = estimate_inversion_constants(f, cfg, PidGains.zeros(1, 1, 1), sampler)
        assert gy == pytest.approx(0.0, abs=1e-9)
        assert gs == pytest.approx(1.0, abs=1e-6)
        assert le <= 1e-6

    def test_determinism(self, unit_norm):
        f = make_scalar_linear_model(0.2, 1.0)
        cfg = InversionConfig(zeta=[1.0], mu=[0.01], lam=[0.0], norm=unit_norm)
        g = PidGains(np.array([[[0.2]], [[-0.05]]]))
        sampler = OperatingPointSampler(n=1, n_u=1, n_y=1, y_bar=1.0, r_bar=0.2,
                                        u_bar=1.0, count=40, seed=5)
        assert estimate_inversion_constants(f, cfg, g, sampler) == \
               estimate_inversion_constants(f, cfg, g, sampler)


def primaries(**kw):
    base = dict(gamma_y=0.0, gamma_xi=0.0, delta_bar=0.0, Gamma_y=0.0,
                Gamma_s=0.0, Lambda_e=0.0, r_bar=1.0, xi_bar=0.0)
    base.update(kw)
    return StabilityConstants(**base)


class TestErrorBound:
    def test_hand_evaluation(self):
        c = compute_error_bound(
            primaries(gamma_y=0.5, Gamma_s=0.1, gamma_xi=0.2, Lambda_e=0.08),
            r_bar=1.0, xi_bar=0.1)
        assert c.lambda_y == 0.5 and c.lambda_r == 0.6
        assert c.e_bar == pytest.approx(1.4, abs=1e-12)
        assert c.w == pytest.approx(0.7, abs=1e-12)
        # finite-gain constants populated alongside
        assert c.Gamma_r == pytest.approx(1.0 + 0.6 / 0.5, abs=1e-12)
        assert c.Gamma_xi == pytest.approx(0.4, abs=1e-12)
        assert c.Lambda == pytest.approx(0.16, abs=1e-12)

    def test_exact_modeling_gives_zero(self):
        c = compute_error_bound(primaries(), r_bar=1.0, xi_bar=0.0)
        assert c.e_bar == 0.0

    def test_lambda_y_one_raises(self):
        with pytest.raises(AssumptionViolationError, match="lambda_y"):
            compute_error_bound(primaries(gamma_y=1.0), r_bar=1.0, xi_bar=0.0)

    def test_derived_fields_recompute_bitexact(self):
        c = compute_error_bound(
            primaries(gamma_y=0.21, gamma_xi=0.13, delta_bar=0.02, Gamma_y=0.05,
                      Gamma_s=0.4, Lambda_e=0.7), r_bar=0.3, xi_bar=0.01)
        again = recompute_derived(c)
        assert again == c  # dataclass equality: every float identical


class TestAssumptions:
    def test_margins(self):
        c = recompute_derived(primaries(gamma_y=0.3, Gamma_y=0.5, r_bar=0.0))
        rep = check_assumptions(c, y_bar=10.0, r_bar=0.0)
        assert rep.a2_model_accuracy and rep.margin_a2 == pytest.approx(0.7)
        assert rep.a3_inversion and rep.margin_a3 == pytest.approx(0.2)
        assert rep.verdict == (rep.a2_model_accuracy and rep.a3_inversion and rep.a4_domain)

    def test_inaccurate_model_fails(self):
        c = recompute_derived(primaries(gamma_y=1.2))
        rep = check_assumptions(c, y_bar=10.0, r_bar=0.1)
        assert not rep.a2_model_accuracy
        assert not rep.verdict
        assert rep.margin_a4 == -math.inf  # e_bar degenerated to infinity

    def test_domain_exploration_fails(self):
        # gamma_y=0.5, Lambda_e=0.15: e_bar = (0.5*0.8 + 0.15)/0.5 = 1.1... pick
        # numbers giving e_bar = 0.3 exactly: Lambda_e=0.15, r_bar=0 -> 0.3
        c = compute_error_bound(primaries(gamma_y=0.5, Lambda_e=0.15),
                                r_bar=0.0, xi_bar=0.0)
        assert c.e_bar == pytest.approx(0.3, abs=1e-12)
        rep = check_assumptions(c, y_bar=1.0, r_bar=0.8)
        assert not rep.a4_domain
        assert rep.margin_a4 == pytest.approx(-0.1, abs=1e-12)


class TestTrackingBound:
    def test_zero_error_zero_bound(self):
        assert verify_tracking_bound(make_trace([0, 0, 0]), 0.0).satisfied

    def test_violation_reported(self):
        check = verify_tracking_bound(make_trace([0, 0.5, 0.1]), 0.4)
        assert not check.satisfied
        assert check.max_error == 0.5

    def test_initial_row_excluded(self):
        # the t=0 row is the initialization artifact e_0 = 0 anyway
        check = verify_tracking_bound(make_trace([0.0, 0.2]), 0.25)
        assert check.satisfied and check.max_error == 0.2


class TestErrorRecursion:
    def test_zero_errors_hold(self):
        steps = check_error_recursion(make_trace([0] * 5), 0.5, 0.1, n=1, y_bar=1.0)
        assert all(s.holds and s.applicable for s in steps)

    def test_injected_spike_fails(self):
        steps = check_error_recursion(make_trace([0.0, 0.0, 0.9, 0.0]),
                                       0.5, 0.1, n=1, y_bar=1.0)
        assert not steps[1].holds   # 0.9 > 0.5*0 + 0.1
        assert steps[0].holds and steps[2].holds

    def test_out_of_box_marked_not_applicable(self):
        tr = make_trace([0.0, 0.0, 0.0], y=[0.0, 5.0, 0.0])
        steps = check_error_recursion(tr, 0.5, 0.1, n=1, y_bar=1.0)
        assert steps[0].applicable
        assert not steps[1].applicable

    def test_window_norm_used(self):
        # e = (0.4, 0.0, 0.21): with n=2 the window max at t=1 is 0.4, so
        # 0.21 <= 0.5*0.4 + 0.01 holds; with n=1 it fails
        tr = make_trace([0.4, 0.0, 0.21])
        wide = check_error_recursion(tr, 0.5, 0.01, n=2, y_bar=1.0)
        narrow = check_error_recursion(tr, 0.5, 0.01, n=1, y_bar=1.0)
        assert wide[1].holds
        assert not narrow[1].holds


class TestFiniteGain:
    def test_certificate_gain_inequality(self):
        c = compute_error_bound(primaries(gamma_y=0.2, Lambda_e=0.1),
                                r_bar=0.5, xi_bar=0.1)
        tr = make_trace([0.0, 0.1, 0.05], y=[0.0, 0.4, 0.45], xi=[0.1, -0.1, 0.0])
        check = check_finite_gain(tr, c)
        assert check.lhs == 0.45
        assert check.satisfied


class TestCertificate:
    def make_cert(self, trace=None, residue_gain=0.2):
        plant = get_plant("residue_siso", residue_gain=residue_gain)
        cfg = InversionConfig(zeta=[1.0], mu=[0.0], lam=[0.0],
                              norm=NormConstants.ones(1, 1))
        spec = CertifySpec(y_bar=1.5, r_bar=0.2, grid=9, samples=40, seed=0,
                           u_lin_bound=0.2)
        return certify(plant, plant.base_model, cfg, PidGains.zeros(1, 1, 1),
                       spec, trace=trace)

    def test_verdict_and_provenance(self):
        cert = self.make_cert()
        assert cert.verdict
        assert cert.constants.gamma_y == pytest.approx(0.24, abs=1e-9)
        assert cert.provenance["grid"] == 9
        assert cert.provenance["u_lin_bound"] == 0.2
        assert "not formal bounds" in cert.soundness_note
        assert cert.schema_version == 1

    def test_unstable_residue_fails_a2(self):
        cert = self.make_cert(residue_gain=1.5)
        assert not cert.verdict
        assert not cert.report.a2_model_accuracy
        assert math.isinf(cert.constants.e_bar)

    def test_json_round_trip(self, tmp_path):
        tr = make_trace([0.0, 0.01, 0.02])
        cert = self.make_cert(trace=tr)
        assert cert.bound_check is not None and cert.bound_check.satisfied
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        save_certificate(cert, a)
        again = load_certificate(a)
        save_certificate(again, b)
        assert a.read_bytes() == b.read_bytes()
        assert again.constants == cert.constants
        assert again.report == cert.report

    def test_infinite_bound_serializes(self, tmp_path):
        cert = self.make_cert(residue_gain=1.5)
        path = tmp_path / "cert.json"
        save_certificate(cert, path)
        again = load_certificate(path)
        assert math.isinf(again.constants.e_bar)
        assert again.report.margin_a4 == -math.inf
