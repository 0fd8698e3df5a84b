"""Causal realization of the closed-loop maps and closed-loop rollout.

The controller never sees the disturbance directly: it reconstructs the one
that acted last step by subtracting the expected state from the observed
state, keeps a rolling window of the last ``T+1`` reconstructions, and
evaluates the input map on that window.  Time bookkeeping: the disturbance
that the dynamics injects between ``t`` and ``t+1`` enters the window one
step later, as its newest element at time ``t+1``.  This module owns that
translation; everything upstream indexes windows only.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import DivergenceError
from .synthesis import ClosedLoopMaps, SystemModel

#: A simulated state beyond this sup-norm aborts the rollout; correctly
#: synthesized maps keep states bounded by the window response, so hitting
#: it means the maps do not belong to the model.
DIVERGENCE_LIMIT = 1e9

#: Largest impulse magnitude accepted by default; polynomial closed loops
#: need not behave far outside the unit disturbance box.
DEFAULT_BASIN_GUARD = 1.0


@dataclass
class ControllerState:
    """Mutable per-loop controller memory (single owner, not shared).

    ``window[0]`` is the newest reconstructed disturbance.  Before the first
    step everything is zero, matching the rest-at-origin convention.
    """

    window: np.ndarray
    prev_x: np.ndarray
    prev_u: np.ndarray
    t: int = 0

    @staticmethod
    def initial(T: int, n: int) -> "ControllerState":
        return ControllerState(
            window=np.zeros((T + 1, n)),
            prev_x=np.zeros(n),
            prev_u=np.zeros(n),
        )


def controller_step(ctrl: ControllerState, clms: ClosedLoopMaps,
                    model: SystemModel, x_obs) -> np.ndarray:
    """Advance the controller one step and return the input to apply.

    Reconstructs the disturbance that produced ``x_obs`` from the previous
    state and input, pushes it into the window, and evaluates the input map.
    """
    x_obs = np.asarray(x_obs, dtype=float).reshape(-1)
    n = model.n
    if x_obs.shape != (n,):
        raise ValueError(f"observed state has shape {x_obs.shape}, expected ({n},)")
    w_rec = x_obs - model.f(ctrl.prev_x) - ctrl.prev_u
    ctrl.window[1:] = ctrl.window[:-1]
    ctrl.window[0] = w_rec
    u = clms.psi_u.evaluate(ctrl.window)
    ctrl.prev_x = x_obs.copy()
    ctrl.prev_u = u.copy()
    ctrl.t += 1
    return u


@dataclass
class TrajectoryRecord:
    """Everything a closed-loop rollout produced.

    ``states`` has one more row than the rest (the final state).
    ``reconstructed`` holds the controller's window heads, i.e. the
    disturbance estimates it actually acted on.
    """

    states: np.ndarray        # (H+1, n)
    inputs: np.ndarray        # (H, n)
    disturbances: np.ndarray  # (H, n), as injected by the dynamics
    reconstructed: np.ndarray  # (H, n)
    stage_costs: np.ndarray   # (H,)

    @property
    def horizon(self) -> int:
        return len(self.inputs)

    @property
    def n(self) -> int:
        return self.states.shape[1]

    def total_cost(self) -> float:
        return float(self.stage_costs.sum())


def simulate(model: SystemModel, clms: ClosedLoopMaps, disturbances,
             horizon: int, Q=None, R=None) -> TrajectoryRecord:
    """Roll the closed loop from the origin under a disturbance sequence.

    ``disturbances[t]`` acts between steps ``t`` and ``t+1``.  Stage cost at
    step ``t`` is ``x_t'Qx_t + u_t'Ru_t`` (identity weights by default).
    Raises :class:`DivergenceError` if a state leaves the sanity envelope.
    """
    n = model.n
    w = np.asarray(disturbances, dtype=float)
    if w.ndim == 1:
        w = w[:, None]
    if w.shape[0] < horizon or w.shape[1] != n:
        raise ValueError(
            f"need a ({horizon},{n}) disturbance sequence, got {w.shape}"
        )
    Q = np.eye(n) if Q is None else np.asarray(Q, dtype=float)
    R = np.eye(n) if R is None else np.asarray(R, dtype=float)

    ctrl = ControllerState.initial(clms.T, n)
    states = np.zeros((horizon + 1, n))
    inputs = np.zeros((horizon, n))
    reconstructed = np.zeros((horizon, n))
    stage = np.zeros(horizon)

    x = np.zeros(n)
    for t in range(horizon):
        u = controller_step(ctrl, clms, model, x)
        inputs[t] = u
        reconstructed[t] = ctrl.window[0]
        stage[t] = x @ Q @ x + u @ R @ u
        x = model.f(x) + u + w[t]
        if np.abs(x).max() > DIVERGENCE_LIMIT:
            raise DivergenceError(
                f"state blew past {DIVERGENCE_LIMIT:g} at step {t + 1}; "
                f"the maps do not stabilize this model"
            )
        states[t + 1] = x

    return TrajectoryRecord(
        states=states,
        inputs=inputs,
        disturbances=w[:horizon].copy(),
        reconstructed=reconstructed,
        stage_costs=stage,
    )


def impulse_response(model: SystemModel, clms: ClosedLoopMaps, magnitude: float,
                     coord: int = 0, horizon: int | None = None,
                     basin_guard: float = DEFAULT_BASIN_GUARD) -> TrajectoryRecord:
    """Response to a single disturbance kick on one coordinate.

    The kick acts between steps 0 and 1; all later disturbances are zero, so
    the state must return to zero once the kick leaves the window.
    """
    if abs(magnitude) > basin_guard:
        raise ValueError(
            f"impulse magnitude {magnitude} exceeds the basin guard {basin_guard}"
        )
    if not 0 <= coord < model.n:
        raise ValueError(f"coordinate {coord} out of range for n={model.n}")
    if horizon is None:
        horizon = clms.T + 4
    w = np.zeros((horizon, model.n))
    w[0, coord] = magnitude
    return simulate(model, clms, w, horizon)


def write_trajectory_csv(traj: TrajectoryRecord, path, fingerprint: str = "",
                         seed: int | None = None) -> None:
    """Write one row per step: ``t,x_*,u_*,w_*,stage_cost``.

    Values carry 17 significant digits so rewriting a run is byte-identical;
    the leading comment embeds the configuration fingerprint and seed.
    """
    n = traj.n
    header = (
        ["t"]
        + [f"x_{i}" for i in range(n)]
        + [f"u_{i}" for i in range(n)]
        + [f"w_{i}" for i in range(n)]
        + ["stage_cost"]
    )
    with open(path, "w", newline="") as fh:
        fh.write(f"# fingerprint={fingerprint} seed={seed}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for t in range(traj.horizon):
            row = (
                [str(t)]
                + [_fmt(v) for v in traj.states[t]]
                + [_fmt(v) for v in traj.inputs[t]]
                + [_fmt(v) for v in traj.disturbances[t]]
                + [_fmt(traj.stage_costs[t])]
            )
            writer.writerow(row)


def _fmt(v: float) -> str:
    return format(float(v), ".17g")
