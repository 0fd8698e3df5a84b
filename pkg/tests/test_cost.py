"""Tests for cost estimation, worst-case search, sweeps, and descent."""

import numpy as np
import pytest

from polysls import (
    AlphaParams,
    CostSpec,
    DisturbanceModel,
    OptimizeOptions,
    alpha_skeleton,
    build_clms,
    build_g_table,
    mc_cost,
    optimize,
    scalar_polynomial,
    simulate,
    sweep,
    trajectory_cost,
    verify_achievability,
    worst_case_cost,
    write_sweep_csv,
)
from polysls.errors import ConfigError
from polysls.simulate import TrajectoryRecord


def make_clms(model, T, alpha_value=None, seed=0):
    skel = alpha_skeleton(model, T)
    if alpha_value is None:
        rng = np.random.default_rng(seed)
        alpha = skel.from_vector(rng.uniform(0, 1, len(skel)))
    else:
        alpha = AlphaParams({s: alpha_value for s in skel.slots})
    gt = build_g_table(model, T, alpha)
    return build_clms(model, gt, alpha), alpha


# ----------------------------------------------------------------------
# spec validation


def test_cost_spec_rejects_indefinite_q():
    with pytest.raises(ConfigError, match="Q"):
        CostSpec(Q=[[-1.0]], R=[[1.0]])


def test_cost_spec_rejects_semidefinite_r():
    with pytest.raises(ConfigError, match="R"):
        CostSpec(Q=[[1.0]], R=[[0.0]])


def test_cost_spec_rejects_asymmetric():
    with pytest.raises(ConfigError, match="symmetric"):
        CostSpec(Q=[[1.0, 0.5], [0.0, 1.0]], R=np.eye(2))


def test_disturbance_model_validation():
    with pytest.raises(ConfigError, match="low < high"):
        DisturbanceModel(kind="uniform", low=1.0, high=-1.0)
    with pytest.raises(ConfigError, match="kind"):
        DisturbanceModel(kind="gaussian")
    with pytest.raises(ConfigError, match="values"):
        DisturbanceModel(kind="fixed")


# ----------------------------------------------------------------------
# Monte-Carlo estimate


def test_mc_cost_linear_full_cancellation_matches_moment(scalar_linear):
    """With the state map reduced to the fresh disturbance, the expected
    state cost is the second moment of U(-1,1)."""
    clms, _ = make_clms(scalar_linear, 2, alpha_value=1.0)
    spec = CostSpec(Q=[[1.0]], R=[[1e-9]], trials=400, trial_length=50)
    est = mc_cost(clms, spec, DisturbanceModel(seed=21))
    assert est.total == pytest.approx(1.0 / 3.0, abs=4 * est.stderr + 1e-6)


def test_mc_cost_zero_disturbance(scalar_quadratic):
    clms, _ = make_clms(scalar_quadratic, 2, seed=1)
    spec = CostSpec(Q=[[1.0]], R=[[1.0]], trials=5, trial_length=10)
    dist = DisturbanceModel(kind="uniform", low=-1e-13, high=1e-13, seed=0)
    est = mc_cost(clms, spec, dist)
    assert est.total == pytest.approx(0.0, abs=1e-20)


def test_mc_cost_deterministic(scalar_quadratic):
    clms, _ = make_clms(scalar_quadratic, 2, seed=2)
    spec = CostSpec(Q=[[1.0]], R=[[1.0]], trials=50, trial_length=23)
    dist = DisturbanceModel(seed=5)
    a = mc_cost(clms, spec, dist)
    b = mc_cost(clms, spec, dist)
    assert a == b  # bit-identical dataclasses


def test_mc_cost_stderr_scales_with_trials(scalar_quadratic):
    clms, _ = make_clms(scalar_quadratic, 2, seed=3)
    dist = DisturbanceModel(seed=9)
    small = mc_cost(clms, CostSpec(Q=[[1.0]], R=[[1.0]], trials=100, trial_length=10), dist)
    big = mc_cost(clms, CostSpec(Q=[[1.0]], R=[[1.0]], trials=10_000, trial_length=10), dist)
    ratio = small.stderr / big.stderr
    assert 10 / 3 <= ratio <= 10 * 3


# ----------------------------------------------------------------------
# trajectory cost


def test_trajectory_cost_zero():
    traj = TrajectoryRecord(
        states=np.zeros((4, 1)),
        inputs=np.zeros((3, 1)),
        disturbances=np.zeros((3, 1)),
        reconstructed=np.zeros((3, 1)),
        stage_costs=np.zeros(3),
    )
    assert trajectory_cost(traj, CostSpec(Q=[[1.0]], R=[[1.0]])) == 0.0


def test_trajectory_cost_single_step():
    traj = TrajectoryRecord(
        states=np.array([[1.0], [0.0]]),
        inputs=np.array([[2.0]]),
        disturbances=np.zeros((1, 1)),
        reconstructed=np.zeros((1, 1)),
        stage_costs=np.array([5.0]),
    )
    assert trajectory_cost(traj, CostSpec(Q=[[1.0]], R=[[1.0]])) == pytest.approx(5.0)


def test_trajectory_cost_matches_per_window_integrand(scalar_quadratic):
    """Simulated states/inputs are the maps evaluated at the reconstructed
    windows, so the rollout cost equals the summed per-window form."""
    clms, _ = make_clms(scalar_quadratic, 2, seed=4)
    spec = CostSpec(Q=[[1.3]], R=[[0.7]])
    rng = np.random.default_rng(0)
    w = rng.uniform(-1, 1, (23, 1))
    traj = simulate(scalar_quadratic, clms, w, 23, Q=spec.Q, R=spec.R)
    window = np.zeros((3, 1))
    total = 0.0
    for t in range(23):
        window[1:] = window[:-1]
        window[0] = traj.reconstructed[t]
        x = clms.psi_x.evaluate(window)
        u = clms.psi_u.evaluate(window)
        total += x @ spec.Q @ x + u @ spec.R @ u
    assert trajectory_cost(traj, spec) == pytest.approx(total, rel=1e-9)
    assert traj.stage_costs.sum() == pytest.approx(total, rel=1e-9)


# ----------------------------------------------------------------------
# worst case


def test_worst_case_linear_identity_map(scalar_linear):
    clms, _ = make_clms(scalar_linear, 2, alpha_value=1.0)
    spec = CostSpec(Q=[[1.0]], R=[[1.0]], C=[[1.0]], D=[[0.0]])
    res = worst_case_cost(clms, spec, starts=8, iterations=150, seed=0)
    assert res.value == pytest.approx(1.0, abs=1e-7)
    assert abs(res.window[0, 0]) == pytest.approx(1.0, abs=1e-7)


def test_worst_case_zero_output_maps(scalar_linear):
    clms, _ = make_clms(scalar_linear, 1, alpha_value=0.5)
    spec = CostSpec(Q=[[1.0]], R=[[1.0]], C=[[0.0]], D=[[0.0]])
    res = worst_case_cost(clms, spec, starts=4, iterations=20, seed=0)
    assert res.value == 0.0


def test_worst_case_dominates_random_sampling(scalar_quadratic):
    clms, _ = make_clms(scalar_quadratic, 2, seed=5)
    spec = CostSpec(Q=[[1.0]], R=[[1.0]], C=[[1.0]], D=[[0.5]])
    res = worst_case_cost(clms, spec, starts=12, iterations=200, seed=3)
    rng = np.random.default_rng(17)
    samples = rng.uniform(-1, 1, size=(10_000, 3, 1))
    x = clms.psi_x.evaluate_many(samples)
    u = clms.psi_u.evaluate_many(samples)
    vals = np.abs(1.0 * x + 0.5 * u).max(axis=1)
    assert res.value >= vals.max() - 1e-9


# ----------------------------------------------------------------------
# sweep


def test_sweep_single_point_equals_mc_cost(scalar_quadratic):
    skel = alpha_skeleton(scalar_quadratic, 2, default=0.5)
    spec = CostSpec(Q=[[1.0]], R=[[1.0]], trials=40, trial_length=23)
    dist = DisturbanceModel(seed=3)
    [row] = sweep(scalar_quadratic, 2, skel, (0, 2), [0.25], spec, dist)
    alpha = skel.with_value((0, 2), 0.25)
    gt = build_g_table(scalar_quadratic, 2, alpha)
    clms = build_clms(scalar_quadratic, gt, alpha)
    est = mc_cost(clms, spec, dist)
    assert row.total_cost == est.total
    assert row.state_cost == est.state_cost
    assert row.stderr == est.stderr


def test_sweep_rejects_unknown_slot(scalar_quadratic):
    skel = alpha_skeleton(scalar_quadratic, 2)
    spec = CostSpec(Q=[[1.0]], R=[[1.0]], trials=5, trial_length=5)
    with pytest.raises(ConfigError, match="slot"):
        sweep(scalar_quadratic, 2, skel, (5, 1), [0.5], spec, DisturbanceModel())


def test_sweep_rejects_out_of_box_grid(scalar_quadratic):
    skel = alpha_skeleton(scalar_quadratic, 2)
    spec = CostSpec(Q=[[1.0]], R=[[1.0]], trials=5, trial_length=5)
    with pytest.raises(ConfigError, match="outside"):
        sweep(scalar_quadratic, 2, skel, (0, 1), [1.5], spec, DisturbanceModel())


def test_sweep_candidates_remain_achievable(scalar_quadratic):
    """Every weight setting visited stays realizable by a causal controller."""
    skel = alpha_skeleton(scalar_quadratic, 2, default=0.4)
    for v in np.linspace(0, 1, 5):
        alpha = skel.with_value((0, 2), float(v))
        gt = build_g_table(scalar_quadratic, 2, alpha)
        clms = build_clms(scalar_quadratic, gt, alpha)
        assert verify_achievability(clms, scalar_quadratic, trials=200, seed=1) <= 1e-9


def test_sweep_threaded_matches_sequential(scalar_quadratic, monkeypatch):
    skel = alpha_skeleton(scalar_quadratic, 2, default=0.5)
    spec = CostSpec(Q=[[1.0]], R=[[1.0]], trials=20, trial_length=10)
    dist = DisturbanceModel(seed=6)
    grid = [0.0, 0.5, 1.0]
    seq = sweep(scalar_quadratic, 2, skel, (0, 2), grid, spec, dist)
    monkeypatch.setenv("POLYSLS_THREADS", "3")
    par = sweep(scalar_quadratic, 2, skel, (0, 2), grid, spec, dist)
    assert seq == par


def test_sweep_csv_format(tmp_path, scalar_quadratic):
    skel = alpha_skeleton(scalar_quadratic, 2, default=0.5)
    spec = CostSpec(Q=[[1.0]], R=[[1.0]], trials=10, trial_length=10)
    rows = sweep(scalar_quadratic, 2, skel, (0, 2), [0.0, 1.0], spec, DisturbanceModel(seed=1))
    path = tmp_path / "sweep.csv"
    write_sweep_csv(rows, path, fingerprint="beef", seed=1)
    lines = path.read_text().splitlines()
    assert lines[0] == "# fingerprint=beef seed=1"
    assert lines[1] == "slot,value,total_cost,state_cost,input_cost,stderr"
    assert len(lines) == 4
    assert lines[2].startswith("0:2,0,")


# ----------------------------------------------------------------------
# optimize


def test_optimizer_prefers_late_cancellation_when_input_is_expensive():
    """Cheap state, expensive input: let a contracting mode decay and cancel
    at the closure, pushing the weight to the bottom of the box."""
    model = scalar_polynomial("lin09", [0.9])
    skel = alpha_skeleton(model, 2, default=0.5)
    spec = CostSpec(Q=[[0.01]], R=[[10.0]], trials=60, trial_length=23)
    dist = DisturbanceModel(seed=2)
    res = optimize(model, 2, skel, spec, dist, OptimizeOptions(max_iterations=60))
    vec = res.alpha.vector()
    # grid-search oracle on the first slot confirms the direction
    grids = []
    for v in np.linspace(0, 1, 11):
        alpha = skel.updated({s: v for s in skel.slots})
        gt = build_g_table(model, 2, alpha)
        clms = build_clms(model, gt, alpha)
        grids.append(mc_cost(clms, spec, dist).total)
    assert np.argmin(grids) == 0
    assert vec.max() < 0.2


def test_optimizer_prefers_immediate_cancellation_when_state_is_expensive():
    model = scalar_polynomial("lin09", [0.9])
    skel = alpha_skeleton(model, 2, default=0.5)
    spec = CostSpec(Q=[[10.0]], R=[[0.01]], trials=60, trial_length=23)
    dist = DisturbanceModel(seed=2)
    res = optimize(model, 2, skel, spec, dist, OptimizeOptions(max_iterations=60))
    assert res.alpha.get(0, 1) > 0.8


def test_optimizer_best_cost_nonincreasing(scalar_quadratic):
    skel = alpha_skeleton(scalar_quadratic, 2, default=0.5)
    spec = CostSpec(Q=[[1.0]], R=[[1.0]], trials=30, trial_length=23)
    res = optimize(
        scalar_quadratic, 2, skel, spec, DisturbanceModel(seed=4),
        OptimizeOptions(max_iterations=15),
    )
    costs = [p.cost for p in res.trace]
    assert all(a >= b for a, b in zip(costs, costs[1:]))


def test_optimizer_fixed_point_returns_quickly():
    """Started at a box-constrained optimum, no descent step helps and the
    initial weights come back unchanged."""
    model = scalar_polynomial("lin09", [0.9])
    skel = alpha_skeleton(model, 1, default=0.0)
    spec = CostSpec(Q=[[0.001]], R=[[100.0]], trials=40, trial_length=23)
    dist = DisturbanceModel(seed=3)
    res = optimize(model, 1, skel, spec, dist, OptimizeOptions(max_iterations=50))
    assert res.alpha.vector() == pytest.approx(skel.vector())
    assert res.trace[-1].iteration <= 2


def test_optimizer_deterministic(scalar_quadratic):
    skel = alpha_skeleton(scalar_quadratic, 1, default=0.5)
    spec = CostSpec(Q=[[1.0]], R=[[1.0]], trials=25, trial_length=23)
    r1 = optimize(scalar_quadratic, 1, skel, spec, DisturbanceModel(seed=8),
                  OptimizeOptions(max_iterations=10))
    r2 = optimize(scalar_quadratic, 1, skel, spec, DisturbanceModel(seed=8),
                  OptimizeOptions(max_iterations=10))
    assert r1 == r2


def test_optimizer_requires_full_slot_cover(scalar_quadratic):
    spec = CostSpec(Q=[[1.0]], R=[[1.0]], trials=5, trial_length=5)
    with pytest.raises(ConfigError, match="missing"):
        optimize(scalar_quadratic, 2, AlphaParams({(0, 1): 0.5}), spec, DisturbanceModel())
