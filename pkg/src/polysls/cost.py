"""Cost evaluation and weight optimization for closed-loop maps.

Two cost notions are supported: an expected quadratic form of the state and
input maps under a disturbance distribution, estimated by Monte Carlo with
per-trial random substreams, and a worst-case induced norm over the unit
disturbance ball, lower-bounded by multi-start projected gradient ascent.
Weight optimization is projected gradient descent on the unit box with
finite-difference gradients; every cost evaluation inside one run reuses the
same seed (common random numbers), so the objective is a deterministic
function of the weights.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError
from .poly import MAX_DEGREE
from .synthesis import (
    AlphaParams,
    ClosedLoopMaps,
    SystemModel,
    alpha_skeleton,
    build_clms,
    build_g_table,
)
from .simulate import TrajectoryRecord

#: Environment variable capping the worker count for embarrassingly
#: parallel evaluations (sweep grid points).  Unset or 1 means sequential.
THREADS_ENV = "POLYSLS_THREADS"

_PSD_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class CostSpec:
    """Quadratic weights and sampling protocol for cost evaluation.

    ``Q`` must be symmetric positive-semidefinite and ``R`` symmetric
    positive-definite (eigenvalue sign test with tolerance 1e-10).  ``C``
    and ``D`` are the output maps of the worst-case norm; ``norm`` selects
    the vector norm and matching unit ball (``"inf"`` or ``2``).
    """

    Q: np.ndarray
    R: np.ndarray
    C: np.ndarray | None = None
    D: np.ndarray | None = None
    norm: str | int = "inf"
    trials: int = 100
    trial_length: int = 23

    def __post_init__(self):
        object.__setattr__(self, "Q", _check_weight(self.Q, "Q", definite=False))
        object.__setattr__(self, "R", _check_weight(self.R, "R", definite=True))
        if self.C is not None:
            object.__setattr__(self, "C", np.atleast_2d(np.asarray(self.C, dtype=float)))
        if self.D is not None:
            object.__setattr__(self, "D", np.atleast_2d(np.asarray(self.D, dtype=float)))
        if self.norm not in ("inf", 2):
            raise ConfigError(f"norm must be 'inf' or 2, got {self.norm!r}")
        if self.trials < 1 or self.trial_length < 1:
            raise ConfigError("trials and trial_length must be positive")

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    @property
    def norm_ord(self):
        return np.inf if self.norm == "inf" else 2


def _check_weight(M, name: str, definite: bool) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise ConfigError(f"{name} must be square, got shape {M.shape}")
    if not np.allclose(M, M.T, atol=_PSD_TOL):
        raise ConfigError(f"{name} must be symmetric")
    eigs = np.linalg.eigvalsh(0.5 * (M + M.T))
    if definite and eigs.min() <= _PSD_TOL:
        raise ConfigError(f"{name} must be positive definite (min eig {eigs.min():.3g})")
    if not definite and eigs.min() < -_PSD_TOL:
        raise ConfigError(f"{name} must be positive semidefinite (min eig {eigs.min():.3g})")
    return M


@dataclass(frozen=True)
class DisturbanceModel:
    """How disturbance sequences are produced.

    ``uniform`` draws coordinates iid from U(low, high); ``impulse`` is one
    kick at step 0; ``fixed`` replays a given sequence.  ``seed`` feeds a
    SeedSequence so trials get independent, reproducible substreams.
    """

    kind: str = "uniform"
    low: float = -1.0
    high: float = 1.0
    seed: int = 0
    magnitude: float = 1.0
    coord: int = 0
    values: tuple[tuple[float, ...], ...] = ()

    def __post_init__(self):
        if self.kind not in ("uniform", "impulse", "fixed"):
            raise ConfigError(f"unknown disturbance kind {self.kind!r}")
        if self.kind == "uniform" and not self.low < self.high:
            raise ConfigError(f"uniform bounds need low < high, got [{self.low}, {self.high}]")
        if self.kind == "fixed" and not self.values:
            raise ConfigError("fixed disturbance model needs a non-empty 'values' sequence")

    def sequence(self, length: int, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "uniform":
            return rng.uniform(self.low, self.high, size=(length, n))
        if self.kind == "impulse":
            w = np.zeros((length, n))
            if not 0 <= self.coord < n:
                raise ConfigError(f"impulse coord {self.coord} out of range for n={n}")
            w[0, self.coord] = self.magnitude
            return w
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.shape[0] < length or vals.shape[1] != n:
            raise ConfigError(
                f"fixed disturbance sequence of shape {vals.shape} cannot "
                f"supply ({length},{n})"
            )
        return vals[:length].copy()

    def reseeded(self, seed: int) -> "DisturbanceModel":
        return replace(self, seed=seed)


# ----------------------------------------------------------------------
# Monte-Carlo expected cost


@dataclass(frozen=True)
class CostEstimate:
    """Expected per-step cost with its split and Monte-Carlo standard error."""

    total: float
    state_cost: float
    input_cost: float
    stderr: float
    trials: int
    windows_per_trial: int


def mc_cost(clms: ClosedLoopMaps, spec: CostSpec, dist: DisturbanceModel) -> CostEstimate:
    """Estimate the expected quadratic cost of the maps under ``dist``.

    Each trial draws a sequence of ``trial_length + T`` steps from its own
    substream and evaluates both maps on every full sliding window, so the
    estimate is the stationary per-window expectation (no startup padding).
    The standard error comes from the spread of per-trial means.
    Deterministic for a fixed seed: substreams are spawned in order and
    accumulated in order.
    """
    T = clms.T
    n = clms.model.n
    if spec.Q.shape[0] != n:
        raise ConfigError(f"Q is {spec.Q.shape[0]}x{spec.Q.shape[0]} but the model has n={n}")
    children = np.random.SeedSequence(dist.seed).spawn(spec.trials)
    state_means = np.zeros(spec.trials)
    input_means = np.zeros(spec.trials)
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        seq = dist.sequence(spec.trial_length + T, n, rng)
        wins = _sliding_windows(seq, T)
        x = clms.psi_x.evaluate_many(wins)
        u = clms.psi_u.evaluate_many(wins)
        state_means[i] = np.einsum("si,ij,sj->s", x, spec.Q, x).mean()
        input_means[i] = np.einsum("si,ij,sj->s", u, spec.R, u).mean()
    totals = state_means + input_means
    stderr = float(totals.std(ddof=1) / np.sqrt(spec.trials)) if spec.trials > 1 else 0.0
    return CostEstimate(
        total=float(totals.mean()),
        state_cost=float(state_means.mean()),
        input_cost=float(input_means.mean()),
        stderr=stderr,
        trials=spec.trials,
        windows_per_trial=spec.trial_length,
    )


def _sliding_windows(seq: np.ndarray, T: int) -> np.ndarray:
    """All full windows of a time-ascending sequence, newest entry first."""
    length = seq.shape[0] - T
    wins = np.lib.stride_tricks.sliding_window_view(seq, T + 1, axis=0)
    # sliding_window_view yields (length, n, T+1) oldest-last; reorder to
    # (length, T+1, n) with lag 0 in front.
    return wins.transpose(0, 2, 1)[:, ::-1][:length]


def trajectory_cost(traj: TrajectoryRecord, spec: CostSpec) -> float:
    """Total quadratic cost of a recorded rollout."""
    x = traj.states[: traj.horizon]
    u = traj.inputs
    return float(
        np.einsum("si,ij,sj->", x, spec.Q, x) + np.einsum("si,ij,sj->", u, spec.R, u)
    )


# ----------------------------------------------------------------------
# worst-case induced norm


@dataclass(frozen=True)
class WorstCaseResult:
    """A certified lower bound on the induced norm and its witness window."""

    value: float
    window: np.ndarray


def worst_case_cost(clms: ClosedLoopMaps, spec: CostSpec, *, starts: int = 32,
                    iterations: int = 500, step: float = 1e-2,
                    fd_step: float = 1e-6, seed: int = 0) -> WorstCaseResult:
    """Largest output norm found over the unit disturbance ball.

    Multi-start projected gradient ascent with finite-difference gradients
    and backtracking on the step size.  The returned value is attained at
    the returned window, hence a certified lower bound on the true maximum;
    global maximization of a polynomial is not attempted.
    """
    T, n = clms.T, clms.model.n
    C = spec.C if spec.C is not None else np.eye(n)
    D = spec.D if spec.D is not None else np.zeros((C.shape[0], n))
    if C.shape[1] != n or D.shape[1] != n:
        raise ConfigError(f"C/D must have {n} columns for this model")
    ord_ = spec.norm_ord

    def objective(wflat: np.ndarray) -> float:
        w = wflat.reshape(T + 1, n)
        y = C @ clms.psi_x.evaluate(w) + D @ clms.psi_u.evaluate(w)
        return float(np.linalg.norm(y, ord_))

    def project(wflat: np.ndarray) -> np.ndarray:
        if ord_ is np.inf:
            return np.clip(wflat, -1.0, 1.0)
        nrm = np.linalg.norm(wflat)
        return wflat if nrm <= 1.0 else wflat / nrm

    dim = (T + 1) * n
    rng = np.random.default_rng(seed)
    best_val = -np.inf
    best_w = np.zeros(dim)
    for _ in range(starts):
        w = project(rng.uniform(-1.0, 1.0, dim))
        val = objective(w)
        rate = step
        for _ in range(iterations):
            grad = np.empty(dim)
            for i in range(dim):
                e = np.zeros(dim)
                e[i] = fd_step
                grad[i] = (objective(w + e) - objective(w - e)) / (2 * fd_step)
            improved = False
            while rate > 1e-12:
                cand = project(w + rate * grad)
                cand_val = objective(cand)
                if cand_val > val:
                    w, val = cand, cand_val
                    improved = True
                    break
                rate *= 0.5
            if not improved:
                break
        if val > best_val:
            best_val, best_w = val, w
    return WorstCaseResult(value=best_val, window=best_w.reshape(T + 1, n))


# ----------------------------------------------------------------------
# weight sweeps


@dataclass(frozen=True)
class SweepPoint:
    slot: tuple[int, int]
    value: float
    total_cost: float
    state_cost: float
    input_cost: float
    stderr: float


def sweep(model: SystemModel, T: int, alpha_base: AlphaParams, slot: tuple[int, int],
          grid: Sequence[float], spec: CostSpec, dist: DisturbanceModel, *,
          max_degree: int = MAX_DEGREE) -> list[SweepPoint]:
    """Resynthesize and cost the maps along a one-weight grid.

    All grid points share the disturbance seed, so the curve is a smooth
    deterministic function of the weight value.  Points run concurrently
    when ``POLYSLS_THREADS`` allows; results keep grid order either way.
    """
    skeleton = alpha_skeleton(model, T, max_degree=max_degree)
    slot = (int(slot[0]), int(slot[1]))
    if slot not in skeleton:
        raise ConfigError(f"slot {slot} is not a weight slot of this model at T={T}")
    grid = [float(v) for v in grid]
    for v in grid:
        if not 0.0 <= v <= 1.0:
            raise ConfigError(f"grid value {v} outside [0, 1]")

    def point(v: float) -> SweepPoint:
        alpha = alpha_base.with_value(slot, v)
        gtable = build_g_table(model, T, alpha, max_degree=max_degree)
        clms = build_clms(model, gtable, alpha)
        est = mc_cost(clms, spec, dist)
        return SweepPoint(
            slot=slot,
            value=v,
            total_cost=est.total,
            state_cost=est.state_cost,
            input_cost=est.input_cost,
            stderr=est.stderr,
        )

    workers = _worker_count()
    if workers > 1 and len(grid) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(point, grid))
    return [point(v) for v in grid]


def write_sweep_csv(points: Sequence[SweepPoint], path, fingerprint: str = "",
                    seed: int | None = None) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# fingerprint={fingerprint} seed={seed}\n")
        fh.write("slot,value,total_cost,state_cost,input_cost,stderr\n")
        for p in points:
            fh.write(
                f"{p.slot[0]}:{p.slot[1]},{p.value:.17g},{p.total_cost:.17g},"
                f"{p.state_cost:.17g},{p.input_cost:.17g},{p.stderr:.17g}\n"
            )


def _worker_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


# ----------------------------------------------------------------------
# projected gradient descent over the weight box


@dataclass(frozen=True)
class OptimizeOptions:
    learning_rate: float = 0.05
    max_iterations: int = 200
    fd_step: float = 1e-4
    min_rate: float = 1e-8


@dataclass(frozen=True)
class TracePoint:
    iteration: int
    alpha: tuple[float, ...]
    cost: float
    step_size: float


@dataclass(frozen=True)
class OptimizeResult:
    alpha: AlphaParams
    cost: float
    trace: tuple[TracePoint, ...]


def optimize(model: SystemModel, T: int, alpha_init: AlphaParams, spec: CostSpec,
             dist: DisturbanceModel, options: OptimizeOptions | None = None, *,
             max_degree: int = MAX_DEGREE) -> OptimizeResult:
    """Minimize the expected cost over the weight box by projected descent.

    Gradients are central finite differences (one-sided at the box faces);
    the learning rate halves whenever a step fails to decrease the cost and
    the run stops when no decrease is possible above ``min_rate``.  The
    Monte-Carlo seed is fixed for the whole run, so the recorded best cost
    is nonincreasing and the result is reproducible.
    """
    opts = options or OptimizeOptions()
    slots = alpha_init.slots
    skeleton = alpha_skeleton(model, T, max_degree=max_degree)
    missing = [s for s in skeleton.slots if s not in alpha_init]
    if missing:
        raise ConfigError(f"initial weights missing slots {missing[:4]}")

    def cost_at(vec: np.ndarray) -> float:
        alpha = AlphaParams(dict(zip(slots, (float(v) for v in vec))))
        gtable = build_g_table(model, T, alpha, max_degree=max_degree)
        clms = build_clms(model, gtable, alpha)
        return mc_cost(clms, spec, dist).total

    theta = np.clip(alpha_init.vector(), 0.0, 1.0)
    cost = cost_at(theta)
    rate = opts.learning_rate
    trace = [TracePoint(0, tuple(theta), cost, rate)]

    for it in range(1, opts.max_iterations + 1):
        grad = np.empty(len(theta))
        h = opts.fd_step
        for i in range(len(theta)):
            up = min(theta[i] + h, 1.0)
            dn = max(theta[i] - h, 0.0)
            e = theta.copy()
            e[i] = up
            c_up = cost_at(e)
            e[i] = dn
            c_dn = cost_at(e)
            grad[i] = (c_up - c_dn) / (up - dn) if up > dn else 0.0
        moved = False
        while rate >= opts.min_rate:
            cand = np.clip(theta - rate * grad, 0.0, 1.0)
            cand_cost = cost_at(cand)
            if cand_cost < cost:
                theta, cost = cand, cand_cost
                moved = True
                break
            rate *= 0.5
        trace.append(TracePoint(it, tuple(theta), cost, rate))
        if not moved:
            break

    best = AlphaParams(dict(zip(slots, (float(v) for v in theta))))
    return OptimizeResult(alpha=best, cost=cost, trace=tuple(trace))
