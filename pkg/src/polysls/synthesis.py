"""Construction of FIR closed-loop maps for polynomial dynamics.

The state and input are expressed as polynomial maps of the last ``T+1``
disturbances.  The construction groups the recursive response of the
dynamics into lag levels: level 0 is the dynamics applied to the newest
disturbance, and level ``m`` collects the monomials whose oldest disturbance
is exactly ``m`` steps back.  Each monomial at levels ``0..T-1`` carries a
cancellation weight in ``[0, 1]``: weight 1 removes it through the input
immediately, weight 0 lets it propagate one more step through the dynamics.
Level ``T`` is cancelled unconditionally, which closes the window and makes
the disturbance response finite.

Weight slots are indexed ``(level, j)`` where ``j`` is the 1-based position
of the monomial pattern in canonical order.  Patterns are enumerated by a
sign-free probe of the same recursion (absolute-valued coefficients), so the
slot layout depends only on the model and horizon, never on the weights;
entries whose coefficient happens to vanish at a particular weight setting
keep their slot with a zero value.
"""

from __future__ import annotations

import functools
import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple

import numpy as np

from .errors import AlphaMismatchError, FingerprintMismatchError, MissingAlphaError
from .poly import MAX_DEGREE, ExponentKey, Monomial, Poly, PolyVec, canonicalize

Slot = tuple[int, int]


# ----------------------------------------------------------------------
# system model


@dataclass(frozen=True)
class SystemModel:
    """Polynomial dynamics ``x+ = f(x) + u + w`` with full actuation.

    ``dynamics`` holds ``f`` as one polynomial per state coordinate, written
    over lag-0 state variables ``(0, coord)``.  ``f`` must vanish at the
    origin (no constant terms) so that 0 is the target equilibrium.
    """

    name: str
    n: int
    dynamics: PolyVec
    params: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"state dimension must be positive, got {self.n}")
        if self.dynamics.n != self.n:
            raise ValueError(
                f"dynamics has {self.dynamics.n} components for n={self.n}"
            )
        for i, p in enumerate(self.dynamics):
            for m in p.terms:
                if not m.exponents:
                    raise ValueError(
                        f"dynamics[{i}] has a constant term; f(0) must be 0"
                    )
                for lag, coord, _ in m.exponents:
                    if lag != 0:
                        raise ValueError(
                            f"dynamics[{i}] uses lag {lag}; state variables are lag-0"
                        )
                    if coord >= self.n:
                        raise ValueError(
                            f"dynamics[{i}] uses coordinate {coord} but n={self.n}"
                        )
                if not np.isfinite(m.coefficient):
                    raise ValueError(f"dynamics[{i}] has a non-finite coefficient")

    @property
    def degree(self) -> int:
        return self.dynamics.degree

    def to_doc(self) -> dict:
        return {
            "name": self.name,
            "n": self.n,
            "params": dict(self.params),
            "dynamics": self.dynamics.to_doc(),
        }

    @staticmethod
    def from_doc(doc: Mapping) -> "SystemModel":
        return SystemModel(
            name=str(doc["name"]),
            n=int(doc["n"]),
            dynamics=PolyVec.from_doc(doc["dynamics"]),
            params=tuple(sorted((str(k), float(v)) for k, v in doc.get("params", {}).items())),
        )

    @property
    def fingerprint(self) -> str:
        blob = json.dumps(self.to_doc(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def f(self, x) -> np.ndarray:
        """Evaluate the drift at a state vector."""
        x = np.asarray(x, dtype=float).reshape(1, self.n)
        return self.dynamics.evaluate(x)


# ----------------------------------------------------------------------
# cancellation weights


class AlphaParams:
    """Per-monomial cancellation weights, keyed ``(level, index)``.

    Values are clamped into ``[0, 1]`` on construction.  Instances are
    immutable; ``with_value`` returns an updated copy.
    """

    __slots__ = ("_values",)

    def __init__(self, values: Mapping[Slot, float] | Iterable[tuple[Slot, float]] = ()):
        items = values.items() if isinstance(values, Mapping) else values
        store = {}
        for (k, j), v in items:
            if k < 0 or j < 1:
                raise ValueError(f"invalid weight slot ({k},{j})")
            store[(int(k), int(j))] = min(1.0, max(0.0, float(v)))
        self._values = store

    def get(self, level: int, index: int, *, strict: bool = True, default: float = 1.0) -> float:
        got = self._values.get((level, index))
        if got is None:
            if strict:
                raise MissingAlphaError(
                    f"no weight for slot ({level},{index}); "
                    f"supply it or build in lenient mode"
                )
            return default
        return got

    @property
    def slots(self) -> tuple[Slot, ...]:
        return tuple(sorted(self._values))

    def items(self) -> tuple[tuple[Slot, float], ...]:
        return tuple(sorted(self._values.items()))

    def __len__(self) -> int:
        return len(self._values)

    def __contains__(self, slot: Slot) -> bool:
        return tuple(slot) in self._values

    def with_value(self, slot: Slot, value: float) -> "AlphaParams":
        if tuple(slot) not in self._values:
            raise KeyError(f"slot {tuple(slot)} is not in this weight set")
        new = dict(self._values)
        new[tuple(slot)] = value
        return AlphaParams(new)

    def updated(self, values: Mapping[Slot, float]) -> "AlphaParams":
        new = dict(self._values)
        new.update({tuple(s): v for s, v in values.items()})
        return AlphaParams(new)

    def vector(self) -> np.ndarray:
        return np.array([self._values[s] for s in self.slots])

    def from_vector(self, vec: np.ndarray) -> "AlphaParams":
        slots = self.slots
        if len(vec) != len(slots):
            raise ValueError(f"expected {len(slots)} values, got {len(vec)}")
        return AlphaParams(dict(zip(slots, (float(v) for v in vec))))

    def to_doc(self) -> dict[str, float]:
        return {f"{k}:{j}": v for (k, j), v in self.items()}

    @staticmethod
    def from_doc(doc: Mapping[str, float]) -> "AlphaParams":
        values = {}
        for key, v in doc.items():
            k, _, j = key.partition(":")
            values[(int(k), int(j))] = float(v)
        return AlphaParams(values)

    def __eq__(self, other) -> bool:
        return isinstance(other, AlphaParams) and self._values == other._values

    def __hash__(self) -> int:
        return hash(self.items())

    def __repr__(self) -> str:
        inner = ", ".join(f"({k},{j})={v:g}" for (k, j), v in self.items())
        return f"<AlphaParams {inner}>"


# ----------------------------------------------------------------------
# monomial table


class GEntry(NamedTuple):
    """One monomial response function: a pattern with per-coordinate weights."""

    index: int                 # 1-based position in the level's canonical order
    exponents: ExponentKey     # the monomial pattern over lagged disturbances
    coeffs: tuple[float, ...]  # one coefficient per state coordinate

    @property
    def is_zero(self) -> bool:
        return all(c == 0.0 for c in self.coeffs)

    def polyvec(self) -> PolyVec:
        return PolyVec(
            canonicalize([Monomial(c, self.exponents)]) for c in self.coeffs
        )


@dataclass(frozen=True)
class GTable:
    """Per-level monomial response functions of the disturbance window.

    ``levels[k]`` lists every pattern whose oldest disturbance is exactly
    ``k`` steps back, in canonical order with stable 1-based indices; the
    level lengths are the term counts ``c_k``.  The table is tied to the
    weights it was built with.
    """

    model: SystemModel
    T: int
    levels: tuple[tuple[GEntry, ...], ...]
    alpha: AlphaParams

    @property
    def counts(self) -> tuple[int, ...]:
        return tuple(len(lv) for lv in self.levels)

    def level_sum(self, k: int) -> PolyVec:
        """The level-``k`` response as one polynomial vector."""
        return _sum_entries(self.levels[k], self.model.n)

    def entry(self, level: int, index: int) -> GEntry:
        e = self.levels[level][index - 1]
        assert e.index == index
        return e


# ----------------------------------------------------------------------
# closed-loop maps


@dataclass(frozen=True)
class ClosedLoopMaps:
    """State and input as polynomial maps of the last ``T+1`` disturbances."""

    psi_x: PolyVec
    psi_u: PolyVec
    T: int
    alpha: AlphaParams
    model: SystemModel


# ----------------------------------------------------------------------
# construction

def _sum_entries(entries: Iterable[GEntry], n: int, *, weight=None, shift: int = 0) -> PolyVec:
    """Combine whole-level entry lists into one polynomial vector.

    Patterns within a level are distinct, so this is a gather-and-sort, not
    a term-by-term merge.  ``weight`` maps an entry to a scalar factor
    (entries weighted to 0 are skipped); ``shift`` ages every variable.
    """
    per_coord: list[list[Monomial]] = [[] for _ in range(n)]
    for e in entries:
        w = 1.0 if weight is None else weight(e)
        if w == 0.0 or e.is_zero:
            continue
        key = (
            e.exponents
            if shift == 0
            else tuple((lag + shift, coord, p) for lag, coord, p in e.exponents)
        )
        for i, c in enumerate(e.coeffs):
            if c:
                per_coord[i].append(Monomial(w * c, key))
    return PolyVec(canonicalize(ts) for ts in per_coord)


@functools.lru_cache(maxsize=64)
def _structural_levels(model: SystemModel, T: int, max_degree: int) -> tuple[tuple[ExponentKey, ...], ...]:
    """Enumerate the monomial patterns each level can carry.

    Runs the recursion with absolute-valued coefficients and weight 0
    everywhere.  Every intermediate coefficient is then positive, so no two
    contributions can cancel and the result is the pattern set of a generic
    weight assignment, ordered canonically.  It depends only on the model
    and horizon, never on the weights.
    """
    abs_dyn = PolyVec(
        Poly(tuple(Monomial(abs(mo.coefficient), mo.exponents) for mo in p.terms))
        for p in model.dynamics
    )
    n = model.n
    psi = PolyVec.coordinates(n)
    levels: list[tuple[ExponentKey, ...]] = []
    groups: list[PolyVec] = []
    for m in range(T + 1):
        if m > 0:
            # probe weight 0 -> factor (1 - 0) = 1 on the whole level
            psi = psi + groups[m - 1].shift(1)
        comp = abs_dyn.compose(psi, max_degree)
        group = comp.split_by_max_lag().get(m, PolyVec.zero(n))
        groups.append(group)
        patterns = sorted(
            {mo.exponents for p in group for mo in p.terms},
            key=lambda e: (sum(t[2] for t in e), e),
        )
        levels.append(tuple(patterns))
    return tuple(levels)


def alpha_skeleton(model: SystemModel, T: int, default: float = 1.0,
                   max_degree: int = MAX_DEGREE) -> AlphaParams:
    """Enumerate every weight slot the horizon needs, filled with ``default``.

    Slots cover levels ``0..T-1``; level ``T`` is closed unconditionally and
    takes no weight.  Enumeration is deterministic for a given model and
    horizon.
    """
    if T < 1:
        raise ValueError(f"horizon must be >= 1, got {T}")
    patterns = _structural_levels(model, T, max_degree)
    return AlphaParams(
        {(k, j): default for k in range(T) for j in range(1, len(patterns[k]) + 1)}
    )


def build_g_table(model: SystemModel, T: int, alpha: AlphaParams, *,
                  strict: bool = True, max_degree: int = MAX_DEGREE) -> GTable:
    """Run the lag-level recursion for the given cancellation weights.

    Level ``m`` is extracted as the oldest-lag-``m`` group of the dynamics
    composed with the partial state map built from levels below ``m``; this
    is well-founded because a level-``m`` monomial can only involve shifted
    lower levels.  In strict mode every slot must be present in ``alpha``;
    lenient mode fills missing slots with 1.0 (cancel immediately, the
    conservative default).
    """
    if T < 1:
        raise ValueError(f"horizon must be >= 1, got {T}")
    patterns = _structural_levels(model, T, max_degree)
    n = model.n
    levels: list[tuple[GEntry, ...]] = []
    psi = PolyVec.coordinates(n)

    for m in range(T + 1):
        if m > 0:
            k = m - 1
            remainder = _sum_entries(
                levels[k],
                n,
                weight=lambda e: 1.0 - alpha.get(k, e.index, strict=strict),
                shift=1,
            )
            psi = psi + remainder
        comp = model.dynamics.compose(psi, max_degree)
        group = comp.split_by_max_lag().get(m, PolyVec.zero(n))
        coeff_map: dict[ExponentKey, list[float]] = {}
        for coord, p in enumerate(group):
            for mo in p.terms:
                coeff_map.setdefault(mo.exponents, [0.0] * n)[coord] = mo.coefficient
        entries = []
        for j, pat in enumerate(patterns[m], start=1):
            coeffs = coeff_map.pop(pat, None)
            entries.append(GEntry(j, pat, tuple(coeffs) if coeffs else (0.0,) * n))
        if coeff_map:
            raise AssertionError(
                f"level {m} produced patterns outside the structural set: "
                f"{sorted(coeff_map)[:3]}"
            )
        levels.append(tuple(entries))

    return GTable(model=model, T=T, levels=tuple(levels), alpha=alpha)


def build_clms(model: SystemModel, gtable: GTable, alpha: AlphaParams) -> ClosedLoopMaps:
    """Assemble the state and input maps from a built table.

    The state map keeps the weighted remainder of levels ``0..T-1`` one step
    aged plus the fresh disturbance; the input map removes the cancelled
    fractions and closes level ``T`` entirely, which is the only lag-``T``
    dependence.
    """
    if alpha != gtable.alpha:
        raise AlphaMismatchError(
            "weights differ from the ones the table was built with"
        )
    if model.fingerprint != gtable.model.fingerprint:
        raise FingerprintMismatchError("table was built for a different model")
    n = model.n
    T = gtable.T
    psi_x = PolyVec.coordinates(n)
    psi_u = PolyVec.zero(n)
    for k in range(T):
        level = gtable.levels[k]
        psi_x = psi_x + _sum_entries(
            level, n, weight=lambda e: 1.0 - alpha.get(k, e.index), shift=1
        )
        psi_u = psi_u - _sum_entries(
            level, n, weight=lambda e: alpha.get(k, e.index)
        )
    psi_u = psi_u - _sum_entries(gtable.levels[T], n)
    return ClosedLoopMaps(psi_x=psi_x, psi_u=psi_u, T=T, alpha=alpha, model=model)


def synthesize(model: SystemModel, T: int, alpha: AlphaParams, *,
               strict: bool = True, max_degree: int = MAX_DEGREE) -> tuple[GTable, ClosedLoopMaps]:
    """Build the table and its closed-loop maps in one call."""
    gtable = build_g_table(model, T, alpha, strict=strict, max_degree=max_degree)
    return gtable, build_clms(model, gtable, alpha)


# ----------------------------------------------------------------------
# verification


def verify_achievability(clms: ClosedLoopMaps, model: SystemModel,
                         trials: int = 1000, seed: int = 0) -> float:
    """Max residual of the realizability identity over random windows.

    Samples windows with coordinates iid uniform on [-1, 1] and returns the
    largest sup-norm defect of
    ``psi_x(w_t..w_{t-T}) - f(psi_x(w_{t-1}..)) - psi_u(w_{t-1}..) - w_t``.
    A correctly built pair satisfies the identity exactly, so anything above
    float roundoff indicates corruption.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    T, n = clms.T, model.n
    rng = np.random.default_rng(seed)
    w = rng.uniform(-1.0, 1.0, size=(trials, T + 2, n))
    x_now = clms.psi_x.evaluate_many(w[:, : T + 1])
    x_prev = clms.psi_x.evaluate_many(w[:, 1:])
    u_prev = clms.psi_u.evaluate_many(w[:, 1:])
    f_prev = model.dynamics.evaluate_many(x_prev[:, None, :])
    resid = x_now - f_prev - u_prev - w[:, 0]
    return float(np.abs(resid).max())
