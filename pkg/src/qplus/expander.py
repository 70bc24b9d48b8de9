"""Regular multigraphs, their decomposition into permutations, and expander builders.

Degree convention: an edge ``(u, v)`` with ``u != v`` adds one to the degree
of both endpoints and a self-loop ``(v, v)`` adds two.  The adjacency matrix
has row sums equal to the degree, so a d-regular graph is exactly a sum of
d permutation matrices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components, maximum_bipartite_matching
from scipy.sparse.linalg import eigsh

from .errors import (
    CertificationError,
    DisconnectedGraph,
    InvalidParameters,
    NoPrimeFound,
    NotRegular,
)

CHEEGER_TARGET = 2.0
MAX_VERTICES = 10**5
DEFAULT_CAYLEY_DEGREE = 12
DEFAULT_K0 = 64


@dataclass(frozen=True, eq=False)
class RegularGraph:
    n: int
    d: int
    edges: np.ndarray  # (E, 2) int64, undirected multiset

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        object.__setattr__(self, "edges", e)
        if self.n < 1:
            raise InvalidParameters("graph needs at least one vertex")
        if e.size and (e.min() < 0 or e.max() >= self.n):
            raise InvalidParameters("edge endpoint out of range")
        deg = self.degrees()
        if not np.all(deg == self.d):
            bad = int(np.flatnonzero(deg != self.d)[0])
            raise NotRegular(f"vertex {bad} has degree {deg[bad]}, expected {self.d}")

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.n)

    @property
    def num_loops(self) -> int:
        return int(np.sum(self.edges[:, 0] == self.edges[:, 1]))

    def adjacency(self) -> sp.csr_matrix:
        u, v = self.edges[:, 0], self.edges[:, 1]
        rows = np.concatenate([u, v])
        cols = np.concatenate([v, u])
        data = np.ones(rows.size, dtype=np.int64)
        return sp.csr_matrix((data, (rows, cols)), shape=(self.n, self.n))

    def to_edge_list(self) -> str:
        lines = [f"# n={self.n} d={self.d}"]
        lines += [f"{u} {v}" for u, v in self.edges.tolist()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_edge_list(cls, text: str) -> "RegularGraph":
        lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("#"):
            raise InvalidParameters("missing '# n=<n> d=<d>' header")
        hdr = dict(tok.split("=") for tok in lines[0][1:].split())
        edges = [tuple(int(x) for x in ln.split()) for ln in lines[1:]]
        return cls(int(hdr["n"]), int(hdr["d"]), np.array(edges, dtype=np.int64).reshape(-1, 2))


class PermutationSet:
    """d bijections of ``range(n)`` stored as lookup tables.

    ``evaluator`` optionally computes ``forward(k, v)`` on the fly (Cayley
    graphs); the tables are then a materialized cache of it.
    """

    def __init__(self, tables: Sequence[np.ndarray], evaluator=None):
        self.tables = tuple(np.asarray(t, dtype=np.int64) for t in tables)
        if not self.tables:
            raise InvalidParameters("need at least one permutation")
        self.n = len(self.tables[0])
        for k, t in enumerate(self.tables):
            if len(t) != self.n or not np.array_equal(np.sort(t), np.arange(self.n)):
                raise InvalidParameters(f"table {k} is not a bijection")
        self.inverse_tables = tuple(np.argsort(t) for t in self.tables)
        self.evaluator = evaluator

    @property
    def d(self) -> int:
        return len(self.tables)

    def forward(self, k: int, v: int) -> int:
        return int(self.tables[k][v])

    def inverse(self, k: int, v: int) -> int:
        return int(self.inverse_tables[k][v])

    def matrix(self, k: int) -> sp.csr_matrix:
        """Adjacency-style matrix with a one at (v, pi_k(v))."""
        n = self.n
        return sp.csr_matrix((np.ones(n, dtype=np.int64), (np.arange(n), self.tables[k])), shape=(n, n))

    def adjacency(self) -> sp.csr_matrix:
        total = self.matrix(0)
        for k in range(1, self.d):
            total = total + self.matrix(k)
        return total.tocsr()

    def reconstructs(self, g: RegularGraph) -> bool:
        diff = (self.adjacency() - g.adjacency()).tocsr()
        diff.eliminate_zeros()
        return self.n == g.n and self.d == g.d and diff.nnz == 0


# --- decomposition -----------------------------------------------------------


def _euler_orientation(n: int, edges: np.ndarray) -> np.ndarray:
    """Orient every edge so that in-degree equals out-degree at each vertex.

    Walks closed trails greedily; valid because every degree is even.
    Returns an (E, 2) array of arcs (tail, head).
    """
    incident: list[list[int]] = [[] for _ in range(n)]
    for idx, (u, v) in enumerate(edges.tolist()):
        incident[u].append(idx)
        if v != u:
            incident[v].append(idx)
    used = np.zeros(len(edges), dtype=bool)
    ptr = [0] * n
    arcs = np.empty_like(edges)
    for start in range(n):
        cur = start
        while True:
            lst = incident[cur]
            while ptr[cur] < len(lst) and used[lst[ptr[cur]]]:
                ptr[cur] += 1
            if ptr[cur] == len(lst):
                break
            e = lst[ptr[cur]]
            used[e] = True
            u, v = edges[e]
            nxt = v if u == cur else u
            arcs[e] = (cur, nxt)
            cur = nxt
    return arcs


def _peel_matchings(n: int, tails: np.ndarray, heads: np.ndarray, count: int) -> list[np.ndarray]:
    """Split a ``count``-regular bipartite multigraph into perfect matchings."""
    mult = sp.csr_matrix((np.ones(len(tails), dtype=np.int64), (tails, heads)), shape=(n, n))
    mult.sum_duplicates()
    out = []
    for _ in range(count):
        pattern = mult.copy()
        pattern.data = np.ones_like(pattern.data)
        match = maximum_bipartite_matching(pattern, perm_type="column")
        if np.any(match < 0):
            raise NotRegular("bipartite multigraph has no perfect matching")
        out.append(match.astype(np.int64))
        mult = (mult - sp.csr_matrix((np.ones(n, dtype=np.int64), (np.arange(n), match)), shape=(n, n))).tocsr()
        mult.eliminate_zeros()
    return out


def _edge_coloring(g: RegularGraph, budget: int = 200_000) -> list[np.ndarray] | None:
    """Proper d-edge-coloring of a loopless graph by backtracking, if one is found."""
    if g.num_loops:
        return None
    edges = g.edges.tolist()
    order = sorted(range(len(edges)), key=lambda i: edges[i])
    used = [[False] * g.d for _ in range(g.n)]
    color = [-1] * len(edges)
    steps = 0

    def place(pos: int) -> bool:
        nonlocal steps
        if pos == len(order):
            return True
        steps += 1
        if steps > budget:
            return False
        u, v = edges[order[pos]]
        for c in range(g.d):
            if not used[u][c] and not used[v][c]:
                used[u][c] = used[v][c] = True
                color[order[pos]] = c
                if place(pos + 1):
                    return True
                used[u][c] = used[v][c] = False
        return False

    if not place(0):
        return None
    tables = [np.arange(g.n) for _ in range(g.d)]
    for (u, v), c in zip(edges, color):
        tables[c][u], tables[c][v] = v, u
    return tables


def decompose_permutations(g: RegularGraph) -> PermutationSet:
    """Write the adjacency of ``g`` as a sum of ``g.d`` permutation matrices.

    Even degree: orient along closed trails (out-degree d/2 everywhere), peel
    the oriented graph into d/2 perfect matchings and pair each with its
    inverse.  Odd degree: try a proper edge coloring (involutions), falling
    back to peeling the bipartite double cover.
    """
    deg = g.degrees()
    if not np.all(deg == g.d):
        raise NotRegular("graph is not regular")
    if g.d % 2 == 0:
        arcs = _euler_orientation(g.n, g.edges)
        halves = _peel_matchings(g.n, arcs[:, 0], arcs[:, 1], g.d // 2)
        tables = []
        for m in halves:
            tables.append(m)
            tables.append(np.argsort(m))
        return PermutationSet(tables)
    colored = _edge_coloring(g) if g.n <= 64 else None
    if colored is not None:
        return PermutationSet(colored)
    u, v = g.edges[:, 0], g.edges[:, 1]
    loop = u == v
    tails = np.concatenate([u, v[~loop]])
    heads = np.concatenate([v, u[~loop]])
    # a loop contributes two to the row sum: add its second incidence
    tails = np.concatenate([tails, u[loop]])
    heads = np.concatenate([heads, v[loop]])
    return PermutationSet(_peel_matchings(g.n, tails, heads, g.d))


# --- spectral certificate ----------------------------------------------------


def second_eigenvalue(g: RegularGraph) -> float:
    A = g.adjacency().astype(float)
    if g.n <= 1500:
        return float(np.linalg.eigvalsh(A.toarray())[-2])
    vals = eigsh(A, k=3, which="LA", return_eigenvectors=False, tol=1e-10)
    return float(np.sort(vals)[-2])


def cheeger_lower_bound(g: RegularGraph) -> float:
    """Spectral lower bound ``(d - lambda_2) / 2`` on the edge expansion.

    A single vertex has no nontrivial cut; the bound is then ``inf``.
    """
    if g.n == 1:
        return math.inf
    ncomp, _ = connected_components(g.adjacency(), directed=False)
    if ncomp > 1:
        raise DisconnectedGraph(f"graph has {ncomp} connected components")
    return (g.d - second_eigenvalue(g)) / 2


def complete_graph(n: int) -> RegularGraph:
    iu = np.array(np.triu_indices(n, 1)).T
    return RegularGraph(n, n - 1, iu)


def padded_complete_multigraph(m: int, d: int) -> RegularGraph:
    """d-regular wiring of ``m <= d + 1`` vertices: complete multigraph plus loops.

    Each pair gets multiplicity ``t = d // (m - 1)``; the remaining degree is
    filled with a perfect matching (when its parity requires one) and loops.
    """
    if d % 2:
        raise InvalidParameters("loop padding needs even d")
    if m < 1 or m > d + 1:
        raise InvalidParameters(f"cluster of size {m} is not small for d={d}")
    if m == 1:
        return RegularGraph(1, d, np.zeros((d // 2, 2), dtype=np.int64))
    t = d // (m - 1)
    edges = [e for e in np.array(np.triu_indices(m, 1)).T.tolist() for _ in range(t)]
    rest = d - t * (m - 1)
    if rest % 2:
        # rest is odd only when m is even
        half = m // 2
        edges += [[i, i + half] for i in range(half)]
        rest -= 1
    edges += [[v, v] for v in range(m) for _ in range(rest // 2)]
    return RegularGraph(m, d, np.array(edges, dtype=np.int64))


def circulant(n: int, shifts: Sequence[int]) -> RegularGraph:
    v = np.arange(n)
    edges = np.concatenate([np.stack([v, (v + s) % n], axis=1) for s in shifts])
    return RegularGraph(n, 2 * len(shifts), edges)


def build_small_expander(n: int, d: int, seed: int = 0, retries: int = 256) -> RegularGraph:
    """Certified d-regular expander on n vertices (d even, n >= d + 1).

    ``n == d + 1`` gives the complete graph.  Otherwise draws d/2 distinct
    random cyclic shifts and keeps the first union whose spectral bound
    reaches the Cheeger target.
    """
    if d % 2 or d < 2:
        raise InvalidParameters("d must be a positive even integer")
    if n < d + 1:
        raise InvalidParameters(f"need n >= d + 1, got n={n}, d={d}")
    if n > MAX_VERTICES:
        raise InvalidParameters(f"n={n} exceeds the vertex cap {MAX_VERTICES}")
    if n == d + 1:
        g = complete_graph(n)
        bound = cheeger_lower_bound(g)
        if bound < CHEEGER_TARGET:
            raise CertificationError(f"K_{n} has spectral bound {bound:.3f} < {CHEEGER_TARGET}")
        return g
    rng = np.random.default_rng(seed)
    best = -math.inf
    for _ in range(retries):
        shifts = rng.choice(np.arange(1, n // 2 + 1), size=d // 2, replace=False)
        g = circulant(n, sorted(int(s) for s in shifts))
        try:
            bound = cheeger_lower_bound(g)
        except DisconnectedGraph:
            continue
        best = max(best, bound)
        if bound >= CHEEGER_TARGET:
            return g
    raise CertificationError(
        f"no certified circulant for n={n}, d={d} after {retries} draws (best bound {best:.3f})"
    )


# --- primes ------------------------------------------------------------------

_MR_BASES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)


def is_prime(n: int) -> bool:
    """Deterministic Miller-Rabin, exact for n < 3.3e24."""
    if n < 2:
        return False
    for p in _MR_BASES:
        if n % p == 0:
            return n == p
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for a in _MR_BASES:
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def prime_interval(k: int) -> tuple[int, int]:
    return math.ceil(k - 4 * k ** (2 / 3)), k


def find_prime_in_interval(k: int, k0: int = DEFAULT_K0) -> int:
    """Largest prime in ``[k - 4 k^(2/3), k]``; requires ``k > k0``."""
    if k <= k0:
        raise NoPrimeFound(f"k={k} is not above k0={k0}")
    lo, hi = prime_interval(k)
    for p in range(hi, max(lo, 2) - 1, -1):
        if is_prime(p):
            return p
    raise NoPrimeFound(f"no prime in [{lo}, {hi}]")


def icbrt(n: int) -> int:
    r = round(n ** (1 / 3))
    while r**3 > n:
        r -= 1
    while (r + 1) ** 3 <= n:
        r += 1
    return r


# --- Cayley graphs on PGL(2, p) ----------------------------------------------


class PGL2:
    """PGL(2, p) with elements ranked ``0 .. p(p^2-1) - 1``.

    Canonical representative of a projective class: scale so the first
    nonzero entry of ``(a, b, c, d)`` is 1.  ``group_ops`` counts matrix
    products and ranking calls so evaluation cost can be audited.
    """

    def __init__(self, p: int):
        self.p = p
        self.order = p * (p * p - 1)
        self.group_ops = 0

    def canon(self, m: tuple[int, int, int, int]) -> tuple[int, int, int, int]:
        p = self.p
        a, b, c, d = (x % p for x in m)
        lead = a if a else b
        inv = pow(lead, p - 2, p)
        return (a * inv % p, b * inv % p, c * inv % p, d * inv % p)

    def mul(self, x, y):
        self.group_ops += 1
        a, b, c, d = x
        e, f, g, h = y
        return self.canon((a * e + b * g, a * f + b * h, c * e + d * g, c * f + d * h))

    def inv(self, x):
        a, b, c, d = x
        return self.canon((d, -b, -c, a))

    def rank(self, x) -> int:
        self.group_ops += 1
        p = self.p
        a, b, c, d = x
        if a == 1:
            bc = b * c % p
            return (b * p + c) * (p - 1) + (d if d < bc else d - 1)
        return p * p * (p - 1) + (c - 1) * p + d

    def unrank(self, r: int):
        self.group_ops += 1
        p = self.p
        head = p * p * (p - 1)
        if r < head:
            bc_idx, dd = divmod(r, p - 1)
            b, c = divmod(bc_idx, p)
            bc = b * c % p
            d = dd if dd < bc else dd + 1
            return (1, b, c, d)
        c, d = divmod(r - head, p)
        return (0, 1, c + 1, d)

    def random_element(self, rng: np.random.Generator):
        while True:
            m = tuple(int(x) for x in rng.integers(0, self.p, size=4))
            if (m[0] * m[3] - m[1] * m[2]) % self.p:
                return self.canon(m)


class CayleyEvaluator:
    """Right multiplication by generator k (and its inverse) on ranked elements."""

    def __init__(self, group: PGL2, generators: Sequence[tuple[int, int, int, int]]):
        self.group = group
        self.generators = tuple(generators)
        self.inverses = tuple(group.inv(g) for g in self.generators)

    def forward(self, k: int, v: int) -> int:
        G = self.group
        return G.rank(G.mul(G.unrank(v), self.generators[k]))

    def inverse(self, k: int, v: int) -> int:
        G = self.group
        return G.rank(G.mul(G.unrank(v), self.inverses[k]))


def _cayley_tables(group: PGL2, gens) -> list[np.ndarray]:
    els = [group.unrank(r) for r in range(group.order)]
    tables = []
    for g in gens:
        e, f, gg, h = g
        out = np.empty(group.order, dtype=np.int64)
        for r, (a, b, c, d) in enumerate(els):
            out[r] = group.rank(group.canon((a * e + b * gg, a * f + b * h, c * e + d * gg, c * f + d * h)))
        tables.append(out)
    return tables


def build_cayley_expander(
    p: int, d: int = DEFAULT_CAYLEY_DEGREE, seed: int = 0, retries: int = 32
) -> tuple[RegularGraph, PermutationSet]:
    """Certified Cayley graph of PGL(2, p) on ``p(p^2 - 1)`` vertices.

    The generator set is ``{g_1, g_1^-1, ..., g_{d/2}, g_{d/2}^-1}`` with
    the ``g_i`` drawn from a seeded generator; draws repeat until the
    spectral bound reaches the Cheeger target.
    """
    if not is_prime(p):
        raise InvalidParameters(f"p={p} is not prime")
    if p <= 17:
        raise InvalidParameters(f"p={p} is too small (need p > 17)")
    if d % 2:
        raise InvalidParameters("Cayley degree must be even")
    group = PGL2(p)
    if group.order > MAX_VERTICES:
        raise InvalidParameters(f"n={group.order} exceeds the vertex cap {MAX_VERTICES}")
    rng = np.random.default_rng(seed)
    identity = (1, 0, 0, 1)
    best = -math.inf
    for _ in range(retries):
        half = []
        while len(half) < d // 2:
            g = group.random_element(rng)
            if g == identity or group.mul(g, g) == identity:
                continue
            half.append(g)
        gens = [x for g in half for x in (g, group.inv(g))]
        tables = _cayley_tables(group, gens)
        v = np.arange(group.order)
        edges = np.concatenate([np.stack([v, tables[2 * i]], axis=1) for i in range(d // 2)])
        graph = RegularGraph(group.order, d, edges)
        try:
            bound = cheeger_lower_bound(graph)
        except DisconnectedGraph:
            continue
        best = max(best, bound)
        if bound >= CHEEGER_TARGET:
            group.group_ops = 0
            return graph, PermutationSet(tables, evaluator=CayleyEvaluator(group, gens))
    raise CertificationError(f"no certified generator set for p={p}, d={d} (best bound {best:.3f})")


def build_expander(kind: str, **kw) -> RegularGraph:
    builders: dict[str, Callable[..., RegularGraph]] = {
        "small": lambda n, d=8, seed=0: build_small_expander(n, d, seed),
        "cayley": lambda p, d=DEFAULT_CAYLEY_DEGREE, seed=0: build_cayley_expander(p, d, seed)[0],
    }
    if kind not in builders:
        raise InvalidParameters(f"unknown expander kind {kind!r}")
    return builders[kind](**kw)
