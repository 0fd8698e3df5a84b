"""Tests for the causal controller realization and closed-loop rollout."""

import numpy as np
import pytest

from polysls import (
    AlphaParams,
    ControllerState,
    Poly,
    PolyVec,
    alpha_skeleton,
    build_clms,
    build_g_table,
    controller_step,
    impulse_response,
    scalar_polynomial,
    simulate,
    write_trajectory_csv,
)
from polysls.errors import DivergenceError


def make_clms(model, T, alpha_value=None, seed=0):
    skel = alpha_skeleton(model, T)
    if alpha_value is None:
        rng = np.random.default_rng(seed)
        alpha = skel.from_vector(rng.uniform(0, 1, len(skel)))
    else:
        alpha = AlphaParams({s: alpha_value for s in skel.slots})
    gt = build_g_table(model, T, alpha)
    return build_clms(model, gt, alpha)


def test_first_step_from_rest_is_zero(scalar_quadratic):
    clms = make_clms(scalar_quadratic, 2, seed=1)
    ctrl = ControllerState.initial(2, 1)
    u0 = controller_step(ctrl, clms, scalar_quadratic, np.zeros(1))
    assert u0 == pytest.approx(np.zeros(1))


def test_full_cancellation_impulse(scalar_quadratic):
    """With weight 1 everywhere, the input after a kick d is -f(d) and the
    state is clean from step 2 on."""
    clms = make_clms(scalar_quadratic, 2, alpha_value=1.0)
    d = 0.6
    traj = impulse_response(scalar_quadratic, clms, d, horizon=8)
    assert traj.states[1, 0] == pytest.approx(d)
    f_d = scalar_quadratic.f([d])[0]
    assert traj.inputs[1, 0] == pytest.approx(-f_d, abs=1e-12)
    assert np.abs(traj.states[2:]).max() <= 1e-12


def test_reconstruction_matches_injected_noise(model_matrix):
    rng = np.random.default_rng(9)
    for model in model_matrix:
        clms = make_clms(model, 2, seed=3)
        w = rng.uniform(-1, 1, size=(20, model.n))
        traj = simulate(model, clms, w, 20)
        # the window head at step t is the disturbance injected at t-1
        assert np.abs(traj.reconstructed[1:] - w[:19]).max() <= 1e-10
        assert np.abs(traj.reconstructed[0]).max() == 0.0


def test_states_match_state_map_on_reconstructed_windows(scalar_quadratic):
    clms = make_clms(scalar_quadratic, 2, seed=4)
    rng = np.random.default_rng(10)
    w = rng.uniform(-1, 1, size=(23, 1))
    traj = simulate(scalar_quadratic, clms, w, 23)
    window = np.zeros((3, 1))
    for t in range(23):
        window[1:] = window[:-1]
        window[0] = traj.reconstructed[t]
        assert traj.states[t, 0] == pytest.approx(
            clms.psi_x.evaluate(window)[0], abs=1e-8
        )


def test_zero_noise_zero_trajectory(cylinder_wake):
    clms = make_clms(cylinder_wake, 1, seed=5)
    traj = simulate(cylinder_wake, clms, np.zeros((10, 3)), 10)
    assert np.abs(traj.states).max() == 0.0
    assert np.abs(traj.inputs).max() == 0.0


def test_impulse_fir_property(model_matrix):
    for model in model_matrix:
        for T in (1, 2):
            clms = make_clms(model, T, seed=6)
            traj = impulse_response(model, clms, 0.8, horizon=T + 6)
            assert np.abs(traj.states[T + 2 :]).max() <= 1e-9


def test_impulse_zero_magnitude(scalar_linear):
    clms = make_clms(scalar_linear, 2, seed=0)
    traj = impulse_response(scalar_linear, clms, 0.0)
    assert np.abs(traj.states).max() == 0.0


def test_impulse_magnitude_guard(scalar_linear):
    clms = make_clms(scalar_linear, 2, seed=0)
    with pytest.raises(ValueError, match="basin"):
        impulse_response(scalar_linear, clms, 1.5)


def test_impulse_coordinate_selection(cylinder_wake):
    clms = make_clms(cylinder_wake, 1, alpha_value=1.0)
    traj = impulse_response(cylinder_wake, clms, 0.5, coord=2, horizon=5)
    assert traj.states[1] == pytest.approx([0.0, 0.0, 0.5])
    assert np.abs(traj.states[2:]).max() <= 1e-12


def test_causality_future_noise_cannot_affect_past_inputs(scalar_quadratic):
    clms = make_clms(scalar_quadratic, 2, seed=7)
    rng = np.random.default_rng(11)
    w1 = rng.uniform(-1, 1, size=(15, 1))
    w2 = w1.copy()
    w2[10:] = rng.uniform(-1, 1, size=(5, 1))  # change only the future
    t1 = simulate(scalar_quadratic, clms, w1, 15)
    t2 = simulate(scalar_quadratic, clms, w2, 15)
    # u_t depends on w_0..w_{t-1}; steps 0..10 see identical histories
    assert np.array_equal(t1.inputs[:11], t2.inputs[:11])
    assert not np.array_equal(t1.inputs[11:], t2.inputs[11:])


def test_divergence_guard_fires_for_wrong_maps():
    unstable = scalar_polynomial("unstable_linear", [2.0])
    clms = make_clms(unstable, 2, alpha_value=0.5)
    broken = type(clms)(
        psi_x=clms.psi_x,
        psi_u=PolyVec([Poly.zero()]),  # controller that never acts
        T=clms.T,
        alpha=clms.alpha,
        model=clms.model,
    )
    w = np.ones((60, 1))
    with pytest.raises(DivergenceError):
        simulate(unstable, broken, w, 60)


def test_simulate_checks_sequence_length(scalar_linear):
    clms = make_clms(scalar_linear, 1, seed=0)
    with pytest.raises(ValueError, match="disturbance sequence"):
        simulate(scalar_linear, clms, np.zeros((5, 1)), 10)


def test_stage_costs_use_given_weights(scalar_linear):
    clms = make_clms(scalar_linear, 1, seed=2)
    w = np.full((6, 1), 0.3)
    traj = simulate(scalar_linear, clms, w, 6, Q=[[2.0]], R=[[3.0]])
    for t in range(6):
        x, u = traj.states[t, 0], traj.inputs[t, 0]
        assert traj.stage_costs[t] == pytest.approx(2 * x * x + 3 * u * u)


def test_trajectory_csv_format(tmp_path, scalar_quadratic):
    clms = make_clms(scalar_quadratic, 2, seed=8)
    rng = np.random.default_rng(12)
    traj = simulate(scalar_quadratic, clms, rng.uniform(-1, 1, (5, 1)), 5)
    path = tmp_path / "traj.csv"
    write_trajectory_csv(traj, path, fingerprint="cafe", seed=12)
    lines = path.read_text().splitlines()
    assert lines[0] == "# fingerprint=cafe seed=12"
    assert lines[1] == "t,x_0,u_0,w_0,stage_cost"
    assert len(lines) == 2 + 5
    first = lines[2].split(",")
    assert first[0] == "0"
    assert float(first[4]) == traj.stage_costs[0]
    # 17 significant digits round-trip exactly
    assert float(lines[3].split(",")[1]) == traj.states[1, 0]


def test_trajectory_csv_deterministic(tmp_path, scalar_quadratic):
    clms = make_clms(scalar_quadratic, 2, seed=8)
    rng = np.random.default_rng(12)
    w = rng.uniform(-1, 1, (8, 1))
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_trajectory_csv(simulate(scalar_quadratic, clms, w, 8), a, "fp", 1)
    write_trajectory_csv(simulate(scalar_quadratic, clms, w, 8), b, "fp", 1)
    assert a.read_bytes() == b.read_bytes()
