import json

import numpy as np
import pytest

from d2ibc import (
    PidGains,
    ReferenceModel,
    initial_pid_state,
    load_gains,
    pid_step,
    save_gains,
    simulate_reference_model,
    virtual_reference,
    vrft_fit,
)
from d2ibc.errors import InsufficientDataError, SingularFitError


def run_pid(gains, errors):
    state = initial_pid_state(gains)
    out = np.zeros((len(errors), gains.n_u))
    for t, e in enumerate(errors):
        out[t], state = pid_step(gains, state, np.atleast_1d(e))
    return out


class TestPidStep:
    def test_zero_gains_identity(self):
        g = PidGains.zeros(2, 1, 1)
        s = initial_pid_state(g)
        u, s2 = pid_step(g, s, [1.0])
        assert u.tolist() == [0.0]
        u, _ = pid_step(g, s2, [5.0])
        assert u.tolist() == [0.0]

    def test_hand_case(self):
        # B0 = 1, B1 = -0.5, u_lin_prev = 0, updated history (e_t, e_{t-1}) = (1, 1)
        from d2ibc import PidState

        g = PidGains(np.array([[[1.0]], [[-0.5]]]))
        s = PidState(np.zeros(1), np.array([[1.0], [0.0]]))  # e_{t-1} = 1
        u, s2 = pid_step(g, s, [1.0])
        assert u[0] == pytest.approx(0.5, abs=1e-15)
        assert s2.e_hist[:, 0].tolist() == [1.0, 1.0]
        assert s2.u_lin_prev[0] == u[0]

    def test_constant_zero_error_rests(self):
        g = PidGains(np.array([[[0.8]], [[0.2]]]))
        u = run_pid(g, [0.0] * 10)
        assert not u.any()

    def test_doubling_is_exact(self):
        g = PidGains(np.array([[[0.3, -0.1]], [[0.2, 0.05]]]))  # n_u=1, n_y=2
        rng = np.random.default_rng(1)
        errs = rng.standard_normal((6, 2))
        assert np.array_equal(run_pid(g, 2.0 * errs), 2.0 * run_pid(g, errs))

    def test_dimension_check(self):
        g = PidGains.zeros(0, 2, 3)
        with pytest.raises(ValueError):
            pid_step(g, initial_pid_state(g), [1.0])

    def test_theta_layout(self):
        b = np.arange(12, dtype=float).reshape(2, 2, 3)
        g = PidGains(b)
        assert g.theta.tolist() == list(range(12))
        assert g.n_theta == 1 and g.n_u == 2 and g.n_y == 3


class TestReferenceModel:
    def test_pole_validation(self):
        with pytest.raises(ValueError):
            ReferenceModel([1.0])
        with pytest.raises(ValueError):
            ReferenceModel([0.5, -1.2])

    def test_delay_when_pole_zero(self):
        m = ReferenceModel([0.0])
        r = np.arange(5, dtype=float)[:, None]
        y = simulate_reference_model(m, r)
        assert y[1:, 0].tolist() == r[:-1, 0].tolist()
        assert y[0, 0] == 0.0

    def test_step_sequence(self):
        m = ReferenceModel([0.5])
        r = np.ones((5, 1))
        y = simulate_reference_model(m, r)
        np.testing.assert_allclose(y[:, 0], [0.0, 0.5, 0.75, 0.875, 0.9375], atol=1e-15)

    def test_zero_reference(self):
        m = ReferenceModel([0.7])
        assert not simulate_reference_model(m, np.zeros((8, 1))).any()

    def test_unit_static_gain(self):
        m = ReferenceModel([0.9])
        y = simulate_reference_model(m, np.ones((400, 1)))
        assert y[-1, 0] == pytest.approx(1.0, abs=1e-15)


class TestVirtualReference:
    def test_inverse_of_delay(self):
        m = ReferenceModel([0.0])
        y = np.array([[0.0], [1.0], [2.0], [3.0]])
        r_v, valid = virtual_reference(m, y)
        assert valid == 3
        assert r_v[:, 0].tolist() == [1.0, 2.0, 3.0]

    def test_hand_inversion(self):
        m = ReferenceModel([0.5])
        r_v, valid = virtual_reference(m, np.array([[0.0], [1.0], [1.0]]))
        assert valid == 2
        assert r_v[:, 0].tolist() == [2.0, 1.0]

    def test_round_trip_identity(self):
        m = ReferenceModel([0.5, -0.3])
        rng = np.random.default_rng(0)
        r = rng.uniform(-2, 2, (60, 2))
        y = simulate_reference_model(m, r)
        r_v, valid = virtual_reference(m, y)
        assert np.abs(r_v - r[:valid]).max() <= 1e-12

    def test_too_short(self):
        with pytest.raises(InsufficientDataError):
            virtual_reference(ReferenceModel([0.5]), np.array([[1.0]]))


class TestVrftFit:
    def test_recovers_generating_pid(self):
        # loop where a known PID exactly achieves the target dynamics:
        # y = M(r) makes the virtual reference reproduce r, so feeding the
        # real error through theta* generates consistent (u, y) data
        m = ReferenceModel([0.5])
        rng = np.random.default_rng(7)
        r = rng.uniform(-1, 1, (200, 1))
        y = simulate_reference_model(m, r)
        g_true = PidGains(np.array([[[0.4]], [[-0.15]]]))
        u = run_pid(g_true, r - y)
        g_fit = vrft_fit(m, u, y, n_theta=1)
        assert np.abs(g_fit.B - g_true.B).max() <= 1e-6
        assert g_fit.fit_residual <= 1e-10

    def test_zero_inputs_zero_gains(self):
        m = ReferenceModel([0.5])
        rng = np.random.default_rng(2)
        y = rng.uniform(-1, 1, (40, 1))
        g = vrft_fit(m, np.zeros((40, 1)), y, n_theta=2)
        assert not g.B.any()
        assert g.fit_residual == 0.0

    def test_one_parameter_hand_case(self):
        # constant virtual error of 1 and increments of 0.3 -> B0 = 0.3
        m = ReferenceModel([0.0])  # r_v = y[t+1], e_v = y[t+1] - y[t]
        y = np.cumsum(np.full(10, 1.0))[:, None] - 1.0  # e_v == 1
        u = 0.3 * np.arange(10, dtype=float)[:, None]   # du == 0.3
        g = vrft_fit(m, u, y, n_theta=0)
        assert g.B[0, 0, 0] == pytest.approx(0.3, abs=1e-12)

    def test_insufficient_data(self):
        m = ReferenceModel([0.5])
        with pytest.raises(InsufficientDataError):
            vrft_fit(m, np.zeros((2, 1)), np.ones((2, 1)), n_theta=1)

    def test_singular_regressor(self):
        # y follows the target dynamics for r == 0 => virtual error is zero,
        # while the inputs still move: no gain can explain them
        m = ReferenceModel([0.5])
        y = np.zeros((30, 1))
        u = np.sin(np.arange(30))[:, None]
        with pytest.raises(SingularFitError):
            vrft_fit(m, u, y, n_theta=1)

    def test_mimo_recovery(self):
        m = ReferenceModel([0.4, 0.6])
        rng = np.random.default_rng(11)
        r = rng.uniform(-1, 1, (300, 2))
        y = simulate_reference_model(m, r)
        g_true = PidGains(np.array([[[0.3, -0.1], [0.05, 0.25]],
                                    [[-0.12, 0.02], [0.0, -0.2]]]))
        u = run_pid(g_true, r - y)
        g_fit = vrft_fit(m, u, y, n_theta=1)
        assert np.abs(g_fit.B - g_true.B).max() <= 1e-6


class TestGainsSerialization:
    def test_round_trip(self, tmp_path):
        g = PidGains(np.array([[[0.4, -0.1]], [[0.2, 0.3]]]))
        path = tmp_path / "pid.json"
        save_gains(g, path)
        g2 = load_gains(path)
        assert np.array_equal(g.B, g2.B)
        payload = json.loads(path.read_text())
        assert sorted(payload) == ["B", "n_theta"]
        assert payload["n_theta"] == 1

    def test_double_save_identical(self, tmp_path):
        g = PidGains(np.array([[[1 / 3]]]))
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        save_gains(g, a)
        save_gains(load_gains(a), b)
        assert a.read_bytes() == b.read_bytes()
