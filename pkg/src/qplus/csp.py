"""Finite constraint systems with explicit accepted-tuple tables.

Values of the alphabet are the integers ``0 .. sigma-1``.  A value tuple
``(v_0, ..., v_{q-1})`` is identified with its *color*, the mixed-radix
integer ``sum_r v_r * sigma**(q-1-r)``; this fixes the basis order of the
color register everywhere else in the package.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property, lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import GuardExceeded, InvalidParameters, MalformedInstance

BRUTE_FORCE_GUARD = 10**7

Assignment = tuple[int, ...]


@dataclass(frozen=True)
class Constraint:
    vars: tuple[int, ...]
    accepted: frozenset[tuple[int, ...]]

    def __post_init__(self):
        object.__setattr__(self, "vars", tuple(int(v) for v in self.vars))
        object.__setattr__(
            self, "accepted", frozenset(tuple(int(x) for x in t) for t in self.accepted)
        )
        if len(set(self.vars)) != len(self.vars):
            raise MalformedInstance(f"constraint variables must be distinct, got {self.vars}")

    def satisfied_by(self, values: Sequence[int]) -> bool:
        return tuple(values) in self.accepted


@dataclass(frozen=True)
class CspSystem:
    """An (N, R, q, Sigma) constraint system; constraints form a multiset."""

    num_vars: int
    sigma: int
    q: int
    constraints: tuple[Constraint, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "constraints", tuple(self.constraints))
        if self.num_vars < 1:
            raise MalformedInstance("N must be positive")
        if self.sigma < 2:
            raise MalformedInstance("alphabet size must be at least 2")
        if self.q < 1:
            raise MalformedInstance("arity q must be positive")
        if not self.constraints:
            raise MalformedInstance("at least one constraint is required")
        for j, c in enumerate(self.constraints):
            if len(c.vars) != self.q:
                raise MalformedInstance(f"constraints[{j}]: expected {self.q} variables, got {len(c.vars)}")
            for r, v in enumerate(c.vars):
                if not 0 <= v < self.num_vars:
                    raise MalformedInstance(
                        f"constraints[{j}].vars[{r}]: variable {v} out of range [0, {self.num_vars})"
                    )
            for t in c.accepted:
                if len(t) != self.q or any(not 0 <= x < self.sigma for x in t):
                    raise MalformedInstance(f"constraints[{j}].accepted: tuple {t} not in Sigma^q")

    @property
    def R(self) -> int:
        return len(self.constraints)

    @property
    def N(self) -> int:
        return self.num_vars

    @property
    def kappa(self) -> int:
        return self.sigma**self.q

    def color(self, values: Sequence[int]) -> int:
        c = 0
        for v in values:
            c = c * self.sigma + int(v)
        return c

    def decode_color(self, color: int) -> tuple[int, ...]:
        out = []
        for _ in range(self.q):
            color, v = divmod(color, self.sigma)
            out.append(v)
        return tuple(reversed(out))

    @cached_property
    def accept_table(self) -> np.ndarray:
        """Boolean array of shape (R, kappa): constraint j accepts color x."""
        table = np.zeros((self.R, self.kappa), dtype=bool)
        for j, c in enumerate(self.constraints):
            for t in c.accepted:
                table[j, self.color(t)] = True
        return table

    @cached_property
    def var_matrix(self) -> np.ndarray:
        return np.array([c.vars for c in self.constraints], dtype=np.int64)

    def local_values(self, a: Sequence[int]) -> tuple[tuple[int, ...], ...]:
        """The labeling induced by a global assignment."""
        return tuple(tuple(int(a[v]) for v in c.vars) for c in self.constraints)


def count_unsatisfied(csp: CspSystem, a: Sequence[int]) -> int:
    if len(a) != csp.num_vars:
        raise InvalidParameters(f"assignment has length {len(a)}, expected {csp.num_vars}")
    return sum(not c.satisfied_by([a[v] for v in c.vars]) for c in csp.constraints)


def _unsat_counts(csp: CspSystem, values: np.ndarray) -> np.ndarray:
    """Unsatisfied-constraint counts for a batch of assignments (rows)."""
    radix = csp.sigma ** np.arange(csp.q - 1, -1, -1, dtype=np.int64)
    colors = values[:, csp.var_matrix] @ radix  # (batch, R)
    ok = csp.accept_table[np.arange(csp.R)[None, :], colors]
    return csp.R - ok.sum(axis=1)


def _enumerate_rows(base: int, width: int, start: int, stop: int) -> np.ndarray:
    idx = np.arange(start, stop, dtype=np.int64)
    out = np.empty((stop - start, width), dtype=np.int64)
    for col in range(width - 1, -1, -1):
        idx, out[:, col] = np.divmod(idx, base)
    return out


@lru_cache(maxsize=256)
def brute_force_value(csp: CspSystem) -> tuple[Fraction, Assignment]:
    """Exact value of ``csp`` and the lexicographically first maximizing assignment."""
    total = csp.sigma**csp.num_vars
    if total > BRUTE_FORCE_GUARD:
        raise GuardExceeded(f"|Sigma|^N = {total} exceeds brute-force guard {BRUTE_FORCE_GUARD}")
    best_u, best_idx = csp.R + 1, 0
    chunk = 1 << 18
    for start in range(0, total, chunk):
        stop = min(total, start + chunk)
        rows = _enumerate_rows(csp.sigma, csp.num_vars, start, stop)
        u = _unsat_counts(csp, rows)
        i = int(np.argmin(u))
        if u[i] < best_u:
            best_u, best_idx = int(u[i]), start + i
    a = tuple(int(x) for x in _enumerate_rows(csp.sigma, csp.num_vars, best_idx, best_idx + 1)[0])
    return Fraction(csp.R - best_u, csp.R), a


# --- instance generation ---------------------------------------------------


@dataclass(frozen=True)
class Generated:
    csp: CspSystem
    witness: Assignment | None = None


def _named_graph(name: str) -> tuple[int, list[tuple[int, int]]]:
    if name == "triangle":
        name = "complete:3"
    if name.startswith("K") and name[1:].isdigit():
        name = f"complete:{name[1:]}"
    kind, _, arg = name.partition(":")
    if not arg.isdigit():
        raise InvalidParameters(f"unknown graph {name!r}")
    n = int(arg)
    if kind == "complete":
        return n, list(itertools.combinations(range(n), 2))
    if kind == "cycle":
        return n, [(i, (i + 1) % n) for i in range(n)]
    if kind == "path":
        return n, [(i, i + 1) for i in range(n - 1)]
    raise InvalidParameters(f"unknown graph {name!r}")


def _random_scope(rng: np.random.Generator, n: int, q: int) -> tuple[int, ...]:
    return tuple(int(v) for v in rng.choice(n, size=q, replace=False))


def gen_instance(kind: str, seed: int = 0, **params) -> Generated:
    """Build a constraint system.

    kinds:
      ``planted-satisfiable``  N, R, q, sigma, density (fraction of non-planted tuples accepted)
      ``random-unsatisfiable`` N, R, q, sigma, density, max_value (val <= max_value, default < 1)
      ``graph-coloring``       graph (``"K4"``, ``"cycle:5"``, ...) or n+edges, colors
      ``explicit-table``       N, sigma, q, constraints (list of {"vars", "accepted"})
    """
    rng = np.random.default_rng(seed)
    if kind == "planted-satisfiable":
        N, R, q, sigma = (int(params[k]) for k in ("N", "R", "q", "sigma"))
        density = float(params.get("density", 0.5))
        if q > N:
            raise InvalidParameters("q must not exceed N")
        witness = tuple(int(x) for x in rng.integers(0, sigma, size=N))
        cons = []
        for _ in range(R):
            scope = _random_scope(rng, N, q)
            planted = tuple(witness[v] for v in scope)
            acc = {t for t in itertools.product(range(sigma), repeat=q) if rng.random() < density}
            acc.add(planted)
            cons.append(Constraint(scope, frozenset(acc)))
        return Generated(CspSystem(N, sigma, q, tuple(cons)), witness)

    if kind == "random-unsatisfiable":
        N, R, q, sigma = (int(params[k]) for k in ("N", "R", "q", "sigma"))
        density = float(params.get("density", 0.5))
        max_value = Fraction(params["max_value"]) if "max_value" in params else None
        for _ in range(int(params.get("attempts", 1000))):
            cons = []
            for _ in range(R):
                scope = _random_scope(rng, N, q)
                acc = {t for t in itertools.product(range(sigma), repeat=q) if rng.random() < density}
                cons.append(Constraint(scope, frozenset(acc)))
            csp = CspSystem(N, sigma, q, tuple(cons))
            val, _ = brute_force_value(csp)
            if val < 1 and (max_value is None or val <= max_value):
                return Generated(csp)
        raise InvalidParameters("could not draw an unsatisfiable instance with these parameters")

    if kind == "graph-coloring":
        if "graph" in params:
            n, edges = _named_graph(str(params["graph"]))
        else:
            n, edges = int(params["n"]), [tuple(e) for e in params["edges"]]
        colors = int(params.get("colors", 2))
        neq = frozenset(t for t in itertools.product(range(colors), repeat=2) if t[0] != t[1])
        return Generated(CspSystem(n, colors, 2, tuple(Constraint(e, neq) for e in edges)))

    if kind == "explicit-table":
        return Generated(_from_document(params))

    raise InvalidParameters(f"unknown instance kind {kind!r}")


# --- serialization -----------------------------------------------------------


def _from_document(doc: Mapping) -> CspSystem:
    if not isinstance(doc, Mapping):
        raise MalformedInstance("top level must be an object")
    for key in ("N", "sigma", "q", "constraints"):
        if key not in doc:
            raise MalformedInstance(f"missing field {key!r}")
    for key in ("N", "sigma", "q"):
        if not isinstance(doc[key], int) or isinstance(doc[key], bool):
            raise MalformedInstance(f"field {key!r} must be an integer")
    if not isinstance(doc["constraints"], list):
        raise MalformedInstance("field 'constraints' must be a list")
    cons = []
    for j, c in enumerate(doc["constraints"]):
        if not isinstance(c, Mapping) or "vars" not in c or "accepted" not in c:
            raise MalformedInstance(f"constraints[{j}]: expected object with 'vars' and 'accepted'")
        try:
            vars_ = tuple(_as_int(v) for v in c["vars"])
            acc = frozenset(tuple(_as_int(x) for x in t) for t in c["accepted"])
        except (TypeError, ValueError) as exc:
            raise MalformedInstance(f"constraints[{j}]: {exc}") from None
        try:
            cons.append(Constraint(vars_, acc))
        except MalformedInstance as exc:
            raise MalformedInstance(f"constraints[{j}]: {exc}") from None
    return CspSystem(doc["N"], doc["sigma"], doc["q"], tuple(cons))


def _as_int(x) -> int:
    if isinstance(x, bool) or not isinstance(x, int):
        raise TypeError(f"expected integer, got {x!r}")
    return x


def to_document(csp: CspSystem) -> dict:
    return {
        "N": csp.num_vars,
        "sigma": csp.sigma,
        "q": csp.q,
        "constraints": [
            {"vars": list(c.vars), "accepted": [list(t) for t in sorted(c.accepted)]}
            for c in csp.constraints
        ],
    }


def parse_instance(data: bytes | str) -> CspSystem:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise MalformedInstance(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return _from_document(doc)


def serialize_instance(csp: CspSystem) -> bytes:
    """Canonical form: fixed key order, accepted tuples sorted, one constraint per line."""
    doc = to_document(csp)
    head = json.dumps({k: doc[k] for k in ("N", "sigma", "q")})[:-1]
    lines = [json.dumps(c, separators=(",", ":")) for c in doc["constraints"]]
    body = ",\n  ".join(lines)
    return f'{head}, "constraints": [\n  {body}\n]}}\n'.encode()


def instance_hash(csp: CspSystem) -> str:
    return hashlib.sha256(serialize_instance(csp)).hexdigest()[:16]


# --- named fixtures ----------------------------------------------------------


def triangle_neq() -> CspSystem:
    """Three pairwise disequalities on three boolean variables (value 2/3)."""
    return gen_instance("graph-coloring", graph="triangle", colors=2).csp


def planted_preset(seed: int = 1) -> Generated:
    """The N=4, R=6, q=2, |Sigma|=2 planted preset."""
    return gen_instance("planted-satisfiable", seed=seed, N=4, R=6, q=2, sigma=2)


def iter_assignments(csp: CspSystem) -> Iterable[Assignment]:
    return itertools.product(range(csp.sigma), repeat=csp.num_vars)
