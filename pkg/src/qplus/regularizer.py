"""Expander wiring of variable occurrences (consistency constraints).

Vertex ``j * q + r`` of the constraint graph stands for the r-th variable
slot of constraint j.  The occurrences of each variable form a cluster that
is wired by a certified d-regular expander; the union over clusters is the
d-regular graph on ``R * q`` vertices and is split into d permutations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from . import expander as ex
from .csp import BRUTE_FORCE_GUARD, CspSystem, _enumerate_rows
from .errors import (
    CertificationError,
    GuardExceeded,
    InvalidParameters,
    NoPrimeFound,
)

Labeling = tuple[tuple[int, ...], ...]

DEFAULT_D = 8
DEFAULT_N0 = 64
DEFAULT_ETA_TARGET = Fraction(1, 4)


@dataclass(frozen=True)
class Cluster:
    var: int
    vertices: tuple[int, ...]
    kind: str  # singleton | complete | circulant | cayley
    padded: tuple[int, ...] = ()
    cheeger_bound: float = math.inf
    prime: int | None = None


@dataclass(frozen=True, eq=False)
class RegularizedInstance:
    csp: CspSystem
    d: int
    gtilde: ex.RegularGraph
    perms: ex.PermutationSet
    clusters: tuple[Cluster, ...]
    seed: int = 0
    n0: int = DEFAULT_N0
    k0: int = ex.DEFAULT_K0
    _slot_of: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for j, c in enumerate(self.csp.constraints):
            for r, i in enumerate(c.vars):
                self._slot_of[(j, i)] = r

    @property
    def q(self) -> int:
        return self.csp.q

    def vertex(self, j: int, i: int) -> int:
        return j * self.q + self._slot_of[(j, i)]

    def vertex_label(self, v: int) -> tuple[int, int]:
        """``(constraint, variable)`` of vertex v."""
        j, r = divmod(v, self.q)
        return j, self.csp.constraints[j].vars[r]

    def lifted(self, k: int, j: int, i: int) -> int:
        """pi_k as a map [R] x [N] -> [R]; identity where i is not in constraint j."""
        if (j, i) not in self._slot_of:
            return j
        return self.vertex_label(self.perms.forward(k, self.vertex(j, i)))[0]

    @property
    def consistency_edges(self) -> list[tuple[tuple[int, int], tuple[int, int]]]:
        return [(self.vertex_label(a), self.vertex_label(b)) for a, b in self.gtilde.edges.tolist()]

    @property
    def num_consistency(self) -> int:
        return len(self.gtilde.edges)

    @property
    def padded_vertices(self) -> tuple[int, ...]:
        return tuple(v for c in self.clusters for v in c.padded)

    @property
    def eta_actual(self) -> Fraction:
        return Fraction(len(self.padded_vertices), self.csp.R * self.q)

    def incidence(self, i: int) -> tuple[int, ...]:
        """Constraints containing variable i (the set V_i), in order."""
        return tuple(j for j, c in enumerate(self.csp.constraints) if i in c.vars)


def _derive_seed(seed: int, var: int) -> int:
    return int(np.random.SeedSequence([seed, var]).generate_state(1)[0])


def _cluster_graph(
    m: int, d: int, n0: int, k0: int, seed: int, cayley_cache: dict
) -> tuple[ex.RegularGraph, ex.PermutationSet | None, str, int | None, int]:
    """Wire ``m`` occurrences; returns (graph on the covered part, perms, kind, prime, covered)."""
    if m <= d + 1:
        return ex.padded_complete_multigraph(m, d), None, ("singleton" if m == 1 else "complete"), None, m
    if m > n0:
        try:
            p = ex.find_prime_in_interval(ex.icbrt(m), k0)
        except NoPrimeFound:
            p = None
        if p is not None and p > 17:
            if p not in cayley_cache:
                cayley_cache[p] = ex.build_cayley_expander(p, d)
            g, perms = cayley_cache[p]
            return g, perms, "cayley", p, g.n
    return ex.build_small_expander(m, d, seed=seed), None, "circulant", None, m


def regularize(
    csp: CspSystem,
    d: int = DEFAULT_D,
    n0: int = DEFAULT_N0,
    k0: int = ex.DEFAULT_K0,
    eta_target: Fraction | None = DEFAULT_ETA_TARGET,
    seed: int = 0,
    padding: Mapping[int, int] | None = None,
) -> RegularizedInstance:
    """Add expander consistency constraints to ``csp``.

    ``padding`` maps a variable to a number of its (trailing) occurrences
    that are left out of its expander and carry only self-loops, the same
    treatment the Cayley route applies to the remainder of a large cluster.
    """
    if d < 2 or d % 2:
        raise InvalidParameters("d must be a positive even integer")
    padding = dict(padding or {})
    q, R = csp.q, csp.R
    nv = R * q
    occurrences: dict[int, list[int]] = {}
    for j, c in enumerate(csp.constraints):
        for r, i in enumerate(c.vars):
            occurrences.setdefault(i, []).append(j * q + r)

    edges: list[np.ndarray] = []
    tables = [np.arange(nv, dtype=np.int64) for _ in range(d)]
    clusters = []
    cayley_cache: dict = {}
    for i in sorted(occurrences):
        verts = occurrences[i]
        pad = int(padding.get(i, 0))
        if not 0 <= pad < len(verts):
            raise InvalidParameters(f"padding for variable {i} must be in [0, {len(verts)})")
        core = verts[: len(verts) - pad]
        try:
            g, perms, kind, prime, covered = _cluster_graph(
                len(core), d, n0, k0, _derive_seed(seed, i), cayley_cache
            )
        except CertificationError as exc:
            raise CertificationError(f"variable {i} (cluster size {len(core)}): {exc}") from None
        bound = ex.cheeger_lower_bound(g)
        if bound < ex.CHEEGER_TARGET:
            raise CertificationError(f"variable {i}: spectral bound {bound:.3f} below target")
        if g.d != d:
            raise CertificationError(f"variable {i}: expander degree {g.d} != {d}")
        if perms is None:
            perms = ex.decompose_permutations(g)
        local = np.asarray(core[:covered], dtype=np.int64)
        padded = tuple(core[covered:]) + tuple(verts[len(verts) - pad :])
        edges.append(local[g.edges])
        for k in range(d):
            tables[k][local] = local[perms.tables[k]]
        if padded:
            loops = np.repeat(np.asarray(padded, dtype=np.int64), d // 2)
            edges.append(np.stack([loops, loops], axis=1))
        clusters.append(Cluster(i, tuple(verts), kind, padded, bound, prime))

    gtilde = ex.RegularGraph(nv, d, np.concatenate(edges))
    reg = RegularizedInstance(
        csp, d, gtilde, ex.PermutationSet(tables), tuple(clusters), seed=seed, n0=n0, k0=k0
    )
    if eta_target is not None and reg.eta_actual > eta_target:
        raise CertificationError(f"padding fraction {reg.eta_actual} exceeds target {eta_target}")
    return reg


# --- violation accounting ------------------------------------------------------


def vertex_values(reg: RegularizedInstance, lab: Sequence[Sequence[int]]) -> np.ndarray:
    if len(lab) != reg.csp.R:
        raise InvalidParameters(f"labeling has {len(lab)} entries, expected {reg.csp.R}")
    return np.asarray([int(x) for t in lab for x in t], dtype=np.int64)


def count_consistency_violations(reg: RegularizedInstance, lab: Sequence[Sequence[int]]) -> int:
    vals = vertex_values(reg, lab)
    e = reg.gtilde.edges
    return int(np.sum(vals[e[:, 0]] != vals[e[:, 1]]))


def count_violations_via_perms(reg: RegularizedInstance, lab: Sequence[Sequence[int]]) -> int:
    """Same count from the permutations: every crossing edge is seen twice."""
    vals = vertex_values(reg, lab)
    directed = sum(int(np.sum(vals != vals[t])) for t in reg.perms.tables)
    return directed // 2


def count_labeling_unsatisfied(csp: CspSystem, lab: Sequence[Sequence[int]]) -> int:
    return sum(tuple(t) not in c.accepted for c, t in zip(csp.constraints, lab))


def labeling_from_assignment(csp: CspSystem, a: Sequence[int]) -> Labeling:
    return csp.local_values(a)


def min_total_violations(reg: RegularizedInstance) -> tuple[int, Labeling]:
    """Exact ``min (u_s + u_e)`` over all labelings, with a minimizer."""
    csp = reg.csp
    width = csp.R * csp.q
    total = csp.sigma**width
    if total > BRUTE_FORCE_GUARD:
        raise GuardExceeded(f"|Sigma|^(qR) = {total} exceeds brute-force guard {BRUTE_FORCE_GUARD}")
    radix = csp.sigma ** np.arange(csp.q - 1, -1, -1, dtype=np.int64)
    e = reg.gtilde.edges
    e = e[e[:, 0] != e[:, 1]]
    best, best_idx = None, 0
    chunk = 1 << 17
    for start in range(0, total, chunk):
        stop = min(total, start + chunk)
        vals = _enumerate_rows(csp.sigma, width, start, stop)
        colors = vals.reshape(-1, csp.R, csp.q) @ radix
        u_s = csp.R - csp.accept_table[np.arange(csp.R)[None, :], colors].sum(axis=1)
        u_e = (vals[:, e[:, 0]] != vals[:, e[:, 1]]).sum(axis=1)
        tot = u_s + u_e
        i = int(np.argmin(tot))
        if best is None or tot[i] < best:
            best, best_idx = int(tot[i]), start + i
    row = _enumerate_rows(csp.sigma, width, best_idx, best_idx + 1)[0]
    lab = tuple(tuple(int(x) for x in row[j * csp.q : (j + 1) * csp.q]) for j in range(csp.R))
    return best, lab
