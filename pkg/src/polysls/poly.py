"""Sparse multivariate polynomials over lagged disturbance variables.

A variable is a pair ``(lag, coord)``: ``lag`` counts steps into the past
(0 is the most recent disturbance) and ``coord`` indexes a coordinate of the
disturbance vector.  A monomial is a coefficient together with an exponent
key, a tuple of ``(lag, coord, power)`` triples sorted by ``(lag, coord)``.
A polynomial is a tuple of monomials in canonical form: like terms merged,
coefficients with magnitude below ``DROP_TOL`` pruned, terms sorted by total
degree and then lexicographically on the exponent key.  Canonical form is
unique, so two polynomials are equal iff their term tuples are equal.

Values are immutable after construction; every operation returns a new
object, which makes them safe to share between threads.
"""

from __future__ import annotations

from typing import Iterable, Iterator, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import ExpansionOverflowError

#: Coefficients below this magnitude are dropped during canonicalization.
DROP_TOL = 1e-12

#: Default cap on the total degree any expansion may reach.  Recursive
#: constructions multiply degrees level by level, so a runaway configuration
#: hits this quickly instead of exhausting memory.
MAX_DEGREE = 64

# ((lag, coord, power), ...) sorted by (lag, coord); powers are positive.
ExponentKey = tuple[tuple[int, int, int], ...]


class Monomial(NamedTuple):
    """One term: a coefficient times a product of lagged variables."""

    coefficient: float
    exponents: ExponentKey

    @property
    def degree(self) -> int:
        return sum(p for _, _, p in self.exponents)

    @property
    def max_lag(self) -> int:
        """Oldest lag referenced; 0 for the constant monomial."""
        return max((lag for lag, _, _ in self.exponents), default=0)

    def sort_key(self) -> tuple[int, ExponentKey]:
        return (self.degree, self.exponents)


def exponent_key(powers: Iterable[tuple[int, int, int]]) -> ExponentKey:
    """Normalize ``(lag, coord, power)`` triples into a canonical key.

    Duplicate variables are merged by summing powers; zero powers are
    dropped.  Negative lags, coords, or powers are rejected.
    """
    merged: dict[tuple[int, int], int] = {}
    for lag, coord, power in powers:
        if lag < 0 or coord < 0:
            raise ValueError(f"variable ({lag},{coord}) has a negative index")
        if power < 0:
            raise ValueError(f"negative exponent {power} on variable ({lag},{coord})")
        if power:
            key = (lag, coord)
            merged[key] = merged.get(key, 0) + power
    return tuple((lag, coord, p) for (lag, coord), p in sorted(merged.items()))


class Poly:
    """A canonically ordered sparse polynomial.

    Construct via :func:`canonicalize`, :meth:`Poly.constant`,
    :meth:`Poly.variable`, or arithmetic on existing values.  ``terms`` is
    the canonical monomial tuple and is the object's identity.
    """

    __slots__ = ("terms", "_eval_cache")

    def __init__(self, terms: tuple[Monomial, ...] = ()):
        # Callers must pass canonical terms; use canonicalize() otherwise.
        self.terms = terms
        self._eval_cache = None

    # ------------------------------------------------------------------
    # constructors

    @staticmethod
    def zero() -> "Poly":
        return _ZERO

    @staticmethod
    def constant(value: float) -> "Poly":
        if abs(value) < DROP_TOL:
            return _ZERO
        return Poly((Monomial(float(value), ()),))

    @staticmethod
    def variable(lag: int, coord: int = 0) -> "Poly":
        if lag < 0 or coord < 0:
            raise ValueError(f"variable ({lag},{coord}) has a negative index")
        return Poly((Monomial(1.0, ((lag, coord, 1),)),))

    @staticmethod
    def monomial(coefficient: float, powers: Iterable[tuple[int, int, int]]) -> "Poly":
        return canonicalize([Monomial(float(coefficient), exponent_key(powers))])

    @staticmethod
    def _from_dict(acc: Mapping[ExponentKey, float]) -> "Poly":
        terms = tuple(
            sorted(
                (Monomial(c, k) for k, c in acc.items() if abs(c) >= DROP_TOL),
                key=Monomial.sort_key,
            )
        )
        return Poly(terms) if terms else _ZERO

    # ------------------------------------------------------------------
    # inspection

    @property
    def is_zero(self) -> bool:
        return not self.terms

    @property
    def degree(self) -> int:
        """Total degree; 0 for the zero polynomial."""
        return self.terms[-1].degree if self.terms else 0

    @property
    def max_lag(self) -> int:
        return max((m.max_lag for m in self.terms), default=0)

    def max_abs_coeff(self) -> float:
        return max((abs(m.coefficient) for m in self.terms), default=0.0)

    def variables(self) -> set[tuple[int, int]]:
        return {(lag, coord) for m in self.terms for lag, coord, _ in m.exponents}

    # ------------------------------------------------------------------
    # ring operations

    def __add__(self, other) -> "Poly":
        if isinstance(other, (int, float)):
            other = Poly.constant(other)
        elif not isinstance(other, Poly):
            return NotImplemented
        if other.is_zero:
            return self
        if self.is_zero:
            return other
        acc = {m.exponents: m.coefficient for m in self.terms}
        for m in other.terms:
            acc[m.exponents] = acc.get(m.exponents, 0.0) + m.coefficient
        return Poly._from_dict(acc)

    __radd__ = __add__

    def __neg__(self) -> "Poly":
        return Poly(tuple(Monomial(-m.coefficient, m.exponents) for m in self.terms))

    def __sub__(self, other) -> "Poly":
        return self + (-other if isinstance(other, Poly) else -float(other))

    def __rsub__(self, other) -> "Poly":
        return (-self) + other

    def __mul__(self, other) -> "Poly":
        if isinstance(other, (int, float)):
            return self.scale(other)
        if not isinstance(other, Poly):
            return NotImplemented
        if self.is_zero or other.is_zero:
            return _ZERO
        if len(self.terms) * len(other.terms) > _NUMPY_MUL_THRESHOLD:
            fast = _mul_packed(self, other)
            if fast is not None:
                return fast
        # Iterate the shorter factor on the outside; merge exponent keys by
        # summing powers of shared variables.
        a, b = (self.terms, other.terms)
        if len(a) > len(b):
            a, b = b, a
        acc: dict[ExponentKey, float] = {}
        for ma in a:
            ca = ma.coefficient
            ea = ma.exponents
            for mb in b:
                key = _mul_keys(ea, mb.exponents)
                acc[key] = acc.get(key, 0.0) + ca * mb.coefficient
        return Poly._from_dict(acc)

    __rmul__ = __mul__

    def scale(self, s: float) -> "Poly":
        s = float(s)
        if s == 0.0 or self.is_zero:
            return _ZERO
        return canonicalize(Monomial(s * m.coefficient, m.exponents) for m in self.terms)

    def __pow__(self, exponent: int) -> "Poly":
        return self.pow(exponent, MAX_DEGREE)

    def pow(self, exponent: int, max_degree: int = MAX_DEGREE) -> "Poly":
        """``self ** exponent`` with a configurable total-degree bound."""
        if not isinstance(exponent, int) or exponent < 0:
            raise ValueError(f"exponent must be a non-negative integer, got {exponent!r}")
        if exponent == 0:
            return Poly.constant(1.0)
        if self.degree * exponent > max_degree:
            raise ExpansionOverflowError(
                f"degree {self.degree}**{exponent} exceeds max_degree={max_degree}"
            )
        result = None
        base = self
        e = exponent
        while e:
            if e & 1:
                result = base if result is None else result * base
            e >>= 1
            if e:
                base = base * base
        return result

    def shift(self, delta: int) -> "Poly":
        """Age every variable by ``delta`` steps (lag += delta)."""
        if not isinstance(delta, int) or delta < 0:
            raise ValueError(f"shift must be a non-negative integer, got {delta!r}")
        if delta == 0 or self.is_zero:
            return self
        return Poly(
            tuple(
                sorted(
                    (
                        Monomial(
                            m.coefficient,
                            tuple((lag + delta, coord, p) for lag, coord, p in m.exponents),
                        )
                        for m in self.terms
                    ),
                    key=Monomial.sort_key,
                )
            )
        )

    def split_by_max_lag(self) -> dict[int, "Poly"]:
        """Partition terms into groups keyed by each monomial's oldest lag.

        Groups are disjoint and sum back to the input; the zero polynomial
        yields an empty map.
        """
        groups: dict[int, list[Monomial]] = {}
        for m in self.terms:
            groups.setdefault(m.max_lag, []).append(m)
        # Terms within a group keep canonical relative order.
        return {lag: Poly(tuple(ms)) for lag, ms in sorted(groups.items())}

    # ------------------------------------------------------------------
    # evaluation

    def evaluate(self, window) -> float:
        """Evaluate at a disturbance window.

        ``window`` is an array of shape ``(L+1, n)`` whose row ``k`` holds
        the disturbance ``k`` steps back; a 1-D array is read as a scalar
        (``n = 1``) window.  ``L`` must cover the polynomial's oldest lag.
        """
        w = _as_window(window)
        self._check_window(w.shape)
        total = 0.0
        for m in self.terms:
            term = m.coefficient
            for lag, coord, p in m.exponents:
                term *= w[lag, coord] ** p
            total += term
        return total

    def evaluate_many(self, windows) -> np.ndarray:
        """Vectorized :meth:`evaluate` over ``windows`` of shape ``(N, L+1, n)``.

        A 2-D input is read as ``(N, L+1)`` scalar windows.
        """
        w = _as_window_batch(windows)
        self._check_window(w.shape[1:])
        coeffs, var_index, exps = self._compiled()
        out = np.zeros(w.shape[0])
        if coeffs.size == 0:
            return out
        cols = w[:, var_index[:, 0], var_index[:, 1]] if len(var_index) else None
        for c, row in zip(coeffs, exps):
            term = np.full(w.shape[0], c)
            for v, p in row:
                term = term * cols[:, v] ** p
            out += term
        return out

    def _compiled(self):
        if self._eval_cache is None:
            variables = sorted(self.variables())
            pos = {v: i for i, v in enumerate(variables)}
            coeffs = np.array([m.coefficient for m in self.terms])
            exps = [
                tuple((pos[(lag, coord)], p) for lag, coord, p in m.exponents)
                for m in self.terms
            ]
            self._eval_cache = (coeffs, np.array(variables, dtype=int).reshape(-1, 2), exps)
        return self._eval_cache

    def _check_window(self, shape) -> None:
        variables = self.variables()
        if not variables:
            return
        if shape[0] <= self.max_lag:
            raise ValueError(
                f"window too short: {shape[0]} rows cannot cover lag {self.max_lag}"
            )
        width = max(coord for _, coord in variables) + 1
        if shape[1] < width:
            raise ValueError(
                f"window has {shape[1]} coordinates but the polynomial uses {width}"
            )

    # ------------------------------------------------------------------
    # serialization

    def to_doc(self) -> list[dict]:
        """JSON-compatible form: one record per term, exponents as triples."""
        return [
            {"coefficient": m.coefficient, "exponents": [list(e) for e in m.exponents]}
            for m in self.terms
        ]

    @staticmethod
    def from_doc(doc: Iterable[Mapping]) -> "Poly":
        terms = [
            Monomial(
                float(rec["coefficient"]),
                exponent_key(tuple(e) for e in rec["exponents"]),
            )
            for rec in doc
        ]
        return canonicalize(terms)

    # ------------------------------------------------------------------
    # identity & display

    def __eq__(self, other) -> bool:
        return isinstance(other, Poly) and self.terms == other.terms

    def __hash__(self) -> int:
        return hash(self.terms)

    def __repr__(self) -> str:
        if self.is_zero:
            return "<Poly 0>"
        return f"<Poly {format_poly(self)}>"


_ZERO = Poly(())


# Above this many raw pairwise products, multiplication switches to the
# vectorized path (exponents packed into int64 codes, merged via np.unique).
_NUMPY_MUL_THRESHOLD = 20_000


def _mul_packed(a: Poly, b: Poly) -> "Poly | None":
    """Large-operand product via packed exponent codes; None if unpackable.

    Each variable gets a fixed bit field wide enough for the largest
    exponent the product can reach; a monomial becomes one int64, and
    monomial products become integer sums, which numpy merges in bulk.
    Falls back (returns None) when the fields exceed 63 bits.
    """
    variables = sorted(a.variables() | b.variables())
    max_exp = {v: 0 for v in variables}
    for poly in (a, b):
        peak = {v: 0 for v in variables}
        for m in poly.terms:
            for lag, coord, p in m.exponents:
                key = (lag, coord)
                if p > peak[key]:
                    peak[key] = p
        for v in variables:
            max_exp[v] += peak[v]
    shifts = []
    total_bits = 0
    for v in variables:
        width = max(1, int(max_exp[v]).bit_length())
        shifts.append((v, total_bits, width))
        total_bits += width
    if total_bits > 63:
        return None

    def pack(poly: Poly) -> tuple[np.ndarray, np.ndarray]:
        pos = {v: (off, width) for v, off, width in shifts}
        codes = np.zeros(len(poly.terms), dtype=np.int64)
        coeffs = np.empty(len(poly.terms), dtype=float)
        for i, m in enumerate(poly.terms):
            code = 0
            for lag, coord, p in m.exponents:
                off, _ = pos[(lag, coord)]
                code |= p << off
            codes[i] = code
            coeffs[i] = m.coefficient
        return codes, coeffs

    ca_codes, ca = pack(a)
    cb_codes, cb = pack(b)
    prod_codes = (ca_codes[:, None] + cb_codes[None, :]).ravel()
    prod_coeffs = (ca[:, None] * cb[None, :]).ravel()
    uniq, inverse = np.unique(prod_codes, return_inverse=True)
    sums = np.bincount(inverse, weights=prod_coeffs, minlength=len(uniq))
    keep = np.abs(sums) >= DROP_TOL
    terms = []
    for code, coeff in zip(uniq[keep], sums[keep]):
        exps = []
        for v, off, width in shifts:
            p = (int(code) >> off) & ((1 << width) - 1)
            if p:
                exps.append((v[0], v[1], p))
        terms.append(Monomial(float(coeff), tuple(exps)))
    terms.sort(key=Monomial.sort_key)
    return Poly(tuple(terms)) if terms else _ZERO


def _mul_keys(a: ExponentKey, b: ExponentKey) -> ExponentKey:
    """Merge two sorted exponent keys, summing powers of shared variables."""
    if not a:
        return b
    if not b:
        return a
    out = []
    i = j = 0
    la, lb = len(a), len(b)
    while i < la and j < lb:
        ka = a[i]
        kb = b[j]
        if ka[0] == kb[0] and ka[1] == kb[1]:
            out.append((ka[0], ka[1], ka[2] + kb[2]))
            i += 1
            j += 1
        elif (ka[0], ka[1]) < (kb[0], kb[1]):
            out.append(ka)
            i += 1
        else:
            out.append(kb)
            j += 1
    out.extend(a[i:])
    out.extend(b[j:])
    return tuple(out)


def canonicalize(terms: Iterable[Monomial]) -> Poly:
    """Merge, prune, and sort raw monomials into a canonical polynomial.

    Idempotent: canonicalizing a canonical polynomial's terms returns an
    equal polynomial.
    """
    acc: dict[ExponentKey, float] = {}
    for m in terms:
        acc[m.exponents] = acc.get(m.exponents, 0.0) + m.coefficient
    return Poly._from_dict(acc)


def format_poly(p: Poly, var: str = "w") -> str:
    """Human-readable rendering, e.g. ``1*w[t]^2 - 1*w[t]``."""
    if p.is_zero:
        return "0"
    chunks = []
    for m in p.terms:
        factors = []
        for lag, coord, power in m.exponents:
            t = "t" if lag == 0 else f"t-{lag}"
            name = f"{var}[{t}]" if coord == 0 else f"{var}[{t}].{coord}"
            factors.append(name if power == 1 else f"{name}^{power}")
        body = "*".join([f"{m.coefficient:g}"] + factors)
        chunks.append(body)
    return " + ".join(chunks).replace("+ -", "- ")


# ----------------------------------------------------------------------
# vectors of polynomials


class PolyVec:
    """A fixed-length vector of polynomials sharing one variable universe."""

    __slots__ = ("polys",)

    def __init__(self, polys: Iterable[Poly]):
        self.polys = tuple(polys)
        if not all(isinstance(p, Poly) for p in self.polys):
            raise TypeError("PolyVec components must be Poly values")

    @staticmethod
    def zero(n: int) -> "PolyVec":
        return PolyVec([_ZERO] * n)

    @staticmethod
    def coordinates(n: int, lag: int = 0) -> "PolyVec":
        """The identity map: component ``i`` is the variable ``(lag, i)``."""
        return PolyVec(Poly.variable(lag, i) for i in range(n))

    @property
    def n(self) -> int:
        return len(self.polys)

    @property
    def max_lag(self) -> int:
        return max((p.max_lag for p in self.polys), default=0)

    @property
    def degree(self) -> int:
        return max((p.degree for p in self.polys), default=0)

    @property
    def is_zero(self) -> bool:
        return all(p.is_zero for p in self.polys)

    def __iter__(self) -> Iterator[Poly]:
        return iter(self.polys)

    def __getitem__(self, i: int) -> Poly:
        return self.polys[i]

    def __len__(self) -> int:
        return len(self.polys)

    def __add__(self, other: "PolyVec") -> "PolyVec":
        if not isinstance(other, PolyVec):
            return NotImplemented
        if other.n != self.n:
            raise ValueError(f"dimension mismatch: {self.n} vs {other.n}")
        return PolyVec(a + b for a, b in zip(self.polys, other.polys))

    def __sub__(self, other: "PolyVec") -> "PolyVec":
        return self + (-other)

    def __neg__(self) -> "PolyVec":
        return PolyVec(-p for p in self.polys)

    def __mul__(self, s: float) -> "PolyVec":
        return PolyVec(p.scale(s) for p in self.polys)

    __rmul__ = __mul__

    def shift(self, delta: int) -> "PolyVec":
        return PolyVec(p.shift(delta) for p in self.polys)

    def compose(self, x_expr: "PolyVec | Sequence[Poly]", max_degree: int = MAX_DEGREE) -> "PolyVec":
        """Substitute ``x_expr[coord]`` for each coordinate variable of self.

        ``self`` is read as a function of state coordinates: every variable's
        ``coord`` selects a component of ``x_expr`` and its lag is ignored.
        The result is fully expanded and canonical; an expansion whose total
        degree would exceed ``max_degree`` raises before it is computed.
        """
        subs = list(x_expr)
        width = max((c for p in self.polys for _, c in p.variables()), default=-1)
        if width >= len(subs):
            raise ValueError(
                f"dimension mismatch: function uses coordinate {width} but "
                f"only {len(subs)} substitutions were given"
            )
        powers: dict[tuple[int, int], Poly] = {}

        def power_of(coord: int, p: int) -> Poly:
            key = (coord, p)
            got = powers.get(key)
            if got is None:
                got = subs[coord].pow(p, max_degree)
                powers[key] = got
            return got

        out = []
        for f in self.polys:
            acc = _ZERO
            for m in f.terms:
                expanded = sum(p * subs[coord].degree for _, coord, p in m.exponents)
                if expanded > max_degree:
                    raise ExpansionOverflowError(
                        f"composition reaches degree {expanded}, beyond "
                        f"max_degree={max_degree}"
                    )
                term = Poly.constant(m.coefficient)
                for _, coord, p in m.exponents:
                    term = term * power_of(coord, p)
                acc = acc + term
            out.append(acc)
        return PolyVec(out)

    def split_by_max_lag(self) -> dict[int, "PolyVec"]:
        """Per-coordinate :meth:`Poly.split_by_max_lag`, merged over lags."""
        per = [p.split_by_max_lag() for p in self.polys]
        lags = sorted({lag for d in per for lag in d})
        return {
            lag: PolyVec(d.get(lag, _ZERO) for d in per)
            for lag in lags
        }

    def evaluate(self, window) -> np.ndarray:
        w = _as_window(window)
        return np.array([p.evaluate(w) for p in self.polys])

    def evaluate_many(self, windows) -> np.ndarray:
        """Evaluate at ``(N, L+1, n)`` windows; returns ``(N, len(self))``."""
        w = _as_window_batch(windows)
        return np.stack([p.evaluate_many(w) for p in self.polys], axis=1)

    def max_abs_coeff(self) -> float:
        return max((p.max_abs_coeff() for p in self.polys), default=0.0)

    def to_doc(self) -> list[list[dict]]:
        return [p.to_doc() for p in self.polys]

    @staticmethod
    def from_doc(doc: Iterable[Iterable[Mapping]]) -> "PolyVec":
        return PolyVec(Poly.from_doc(d) for d in doc)

    def __eq__(self, other) -> bool:
        return isinstance(other, PolyVec) and self.polys == other.polys

    def __hash__(self) -> int:
        return hash(self.polys)

    def __repr__(self) -> str:
        inner = ", ".join(format_poly(p) for p in self.polys)
        return f"<PolyVec [{inner}]>"


def _as_window(window) -> np.ndarray:
    w = np.asarray(window, dtype=float)
    if w.ndim == 1:
        w = w.reshape(-1, 1)
    if w.ndim != 2:
        raise ValueError(f"window must be (L+1, n)-shaped, got shape {w.shape}")
    return w


def _as_window_batch(windows) -> np.ndarray:
    w = np.asarray(windows, dtype=float)
    if w.ndim == 2:
        w = w[:, :, None]
    if w.ndim != 3:
        raise ValueError(f"windows must be (N, L+1, n)-shaped, got shape {w.shape}")
    return w
