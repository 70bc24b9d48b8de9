"""Verifier tests as explicit operators on C^R (x) C^kappa.

Basis index ``j * kappa + x`` where x is the color (mixed-radix code) of the
value tuple attached to constraint j.  Every operator is kept as a short
list of ``(rational coefficient, integer matrix)`` terms, so quadratic forms
on states with a rational direction are evaluated exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from math import lcm
from typing import Iterable, Sequence

import numpy as np

from .csp import CspSystem
from .errors import InvalidParameters, PropertyFailure
from .regularizer import RegularizedInstance, count_consistency_violations, count_labeling_unsatisfied

SPECTRAL_TOL = 1e-9
LABELS = ("density", "validity", "satisfiability", "consistency", "constraint_mix", "total", "custom")


# --- states ---------------------------------------------------------------------


def _as_fraction(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(x)


@dataclass(frozen=True, eq=False)
class ProofState:
    """A unit proof vector, optionally carrying an exact rational direction.

    When ``direction`` is set the state is ``direction / ||direction||``;
    probabilities are ratios of quadratic forms and therefore rational even
    though the normalized amplitudes (e.g. 1/sqrt(R)) are not.
    """

    R: int
    kappa: int
    amplitudes: np.ndarray
    direction: tuple[Fraction, ...] | None = None
    nonnegative: bool = False

    def __post_init__(self):
        if self.amplitudes.shape != (self.R * self.kappa,):
            raise InvalidParameters(
                f"state has {self.amplitudes.size} amplitudes, expected {self.R * self.kappa}"
            )

    @property
    def exact(self) -> bool:
        return self.direction is not None

    @property
    def dim(self) -> int:
        return self.R * self.kappa

    @classmethod
    def from_direction(cls, u: Sequence, R: int, kappa: int) -> "ProofState":
        u = tuple(_as_fraction(x) for x in u)
        if not any(u):
            raise InvalidParameters("zero direction")
        f = np.array([float(x) for x in u])
        return cls(R, kappa, f / np.linalg.norm(f), u, all(x >= 0 for x in u))

    @classmethod
    def from_amplitudes(cls, a, R: int, kappa: int, normalize: bool = True) -> "ProofState":
        a = np.asarray(a)
        if not np.iscomplexobj(a):
            a = a.astype(float)
        n = np.linalg.norm(a)
        if n == 0:
            raise InvalidParameters("zero state")
        if normalize:
            a = a / n
        elif abs(n - 1) > 1e-9:
            raise InvalidParameters(f"state norm {n} is not 1")
        nonneg = not np.iscomplexobj(a) and bool(np.all(a >= 0))
        return cls(R, kappa, a, None, nonneg)

    def integer_direction(self) -> list[int]:
        den = lcm(*(x.denominator for x in self.direction))
        return [int(x * den) for x in self.direction]

    @cached_property
    def norm2_exact(self) -> Fraction:
        return sum((x * x for x in self.direction), Fraction(0))

    def block(self) -> np.ndarray:
        """Amplitudes as an (R, kappa) array."""
        return self.amplitudes.reshape(self.R, self.kappa)

    def l1(self) -> float:
        return float(np.abs(self.amplitudes).sum())


def _labeling_colors(csp: CspSystem, lab) -> list[int]:
    if len(lab) != csp.R:
        raise InvalidParameters(f"labeling has {len(lab)} entries, expected {csp.R}")
    return [csp.color(t) for t in lab]


def rigid_proof(csp: CspSystem, lab) -> ProofState:
    """(1/sqrt(R)) sum_j |j>|v_j> for an arbitrary labeling."""
    u = [0] * (csp.R * csp.kappa)
    for j, x in enumerate(_labeling_colors(csp, lab)):
        u[j * csp.kappa + x] = 1
    return ProofState.from_direction(u, csp.R, csp.kappa)


def honest_proof(reg: RegularizedInstance | CspSystem, a: Sequence[int]) -> ProofState:
    csp = reg.csp if isinstance(reg, RegularizedInstance) else reg
    return rigid_proof(csp, csp.local_values(a))


def uniform_state(R: int, kappa: int) -> ProofState:
    return ProofState.from_direction([1] * (R * kappa), R, kappa)


def basis_state(R: int, kappa: int, index: int) -> ProofState:
    u = [0] * (R * kappa)
    u[index] = 1
    return ProofState.from_direction(u, R, kappa)


def density_prob(psi: ProofState):
    """|<+|psi>|^2 over the whole space."""
    n = psi.dim
    if psi.exact:
        return sum(psi.direction, Fraction(0)) ** 2 / (n * psi.norm2_exact)
    return float(abs(psi.amplitudes.sum()) ** 2 / n)


def validity_prob(psi: ProofState):
    """1 - (1/kappa) sum_j |sum_x a_jx|^2."""
    k = psi.kappa
    if psi.exact:
        u = psi.direction
        s = sum((sum(u[j * k : (j + 1) * k], Fraction(0)) ** 2 for j in range(psi.R)), Fraction(0))
        return 1 - s / (k * psi.norm2_exact)
    rows = psi.block().sum(axis=1)
    return float(1 - np.sum(np.abs(rows) ** 2) / k)


# --- operators --------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AcceptOperator:
    """``sum_i coef_i * M_i`` with rational coefficients and integer matrices."""

    label: str
    R: int
    kappa: int
    terms: tuple[tuple[Fraction, np.ndarray], ...]
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.R * self.kappa

    @cached_property
    def dense(self) -> np.ndarray:
        out = np.zeros((self.dim, self.dim))
        for c, m in self.terms:
            if m.dtype == object:
                # huge integers: round each exact product once
                out += np.array([[float(c * int(x)) for x in row] for row in m.tolist()])
            else:
                out += float(c) * m
        return out

    @cached_property
    def matrix(self) -> np.ndarray:
        """Exact entries as an object array of Fractions."""
        out = np.full((self.dim, self.dim), Fraction(0), dtype=object)
        for c, m in self.terms:
            nz = np.nonzero(m)
            for a, b in zip(*nz):
                out[a, b] += c * int(m[a, b])
        return out

    def check_spectrum(self, tol: float = SPECTRAL_TOL) -> tuple[float, float]:
        if not np.allclose(self.dense, self.dense.T, atol=0):
            raise PropertyFailure(f"{self.label}: operator not symmetric")
        ev = np.linalg.eigvalsh(self.dense)
        lo, hi = float(ev[0]), float(ev[-1])
        if lo < -tol or hi > 1 + tol:
            raise PropertyFailure(f"{self.label}: spectrum [{lo:.3e}, {hi:.6f}] outside [0, 1]")
        return lo, hi

    def quad_exact(self, u: Sequence[int]) -> Fraction:
        """u^T M u for an integer vector u, exactly."""
        big = max(abs(x) for x in u)
        n = len(u)
        total = Fraction(0)
        for c, m in self.terms:
            mx = int(np.abs(m).max()) if m.size else 0
            if mx * big * big * n * n < 2**62:
                ui = np.asarray(u, dtype=np.int64)
                val = int(ui @ (m @ ui))
            else:
                uo = np.asarray(u, dtype=object)
                val = int(uo @ (m.astype(object) @ uo))
            total += c * val
        return total

    def scaled(self, s: Fraction, label: str | None = None) -> "AcceptOperator":
        return AcceptOperator(label or self.label, self.R, self.kappa,
                              tuple((s * c, m) for c, m in self.terms), dict(self.meta))

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.dense @ x


def combine(label: str, parts: Iterable[tuple[Fraction, AcceptOperator]]) -> AcceptOperator:
    parts = list(parts)
    R, k = parts[0][1].R, parts[0][1].kappa
    terms = tuple((w * c, m) for w, op in parts for c, m in op.terms if w)
    return AcceptOperator(label, R, k, terms)


def acceptance(op: AcceptOperator, psi: ProofState):
    """<psi|op|psi>; an exact Fraction when the state is exact."""
    if psi.dim != op.dim:
        raise InvalidParameters(f"dimension mismatch: operator {op.dim}, state {psi.dim}")
    if psi.exact:
        return op.quad_exact(psi.integer_direction()) / _int_norm2(psi)
    a = psi.amplitudes
    return float(np.real(np.vdot(a, op.dense @ a)))


def _int_norm2(psi: ProofState) -> int:
    u = psi.integer_direction()
    return sum(x * x for x in u)


def from_matrix(m: np.ndarray, label: str = "custom", R: int = 1, kappa: int | None = None) -> AcceptOperator:
    """Wrap an explicit matrix; Fractions are kept exact, floats are converted exactly."""
    m = np.asarray(m)
    n = m.shape[0]
    kappa = n // R if kappa is None else kappa
    fr = [[_as_fraction(x) for x in row] for row in m.tolist()]
    den = lcm(*(x.denominator for row in fr for x in row)) if n else 1
    ints = np.array([[int(x * den) for x in row] for row in fr], dtype=object)
    if np.abs(ints).max(initial=0) < 2**62:
        ints = ints.astype(np.int64)
    return AcceptOperator(label, R, kappa, ((Fraction(1, den), ints),))


def build_density_op(R: int, kappa: int) -> AcceptOperator:
    n = R * kappa
    return AcceptOperator("density", R, kappa, ((Fraction(1, n), np.ones((n, n), dtype=np.int64)),))


def _block_ones(R: int, kappa: int) -> np.ndarray:
    return np.kron(np.eye(R, dtype=np.int64), np.ones((kappa, kappa), dtype=np.int64))


def build_validity_op(R: int, kappa: int) -> AcceptOperator:
    n = R * kappa
    return AcceptOperator(
        "validity", R, kappa,
        ((Fraction(1), np.eye(n, dtype=np.int64)), (Fraction(-1, kappa), _block_ones(R, kappa))),
    )


def _csp_of(reg) -> CspSystem:
    return reg.csp if isinstance(reg, RegularizedInstance) else reg


def build_satisfiability_op(reg) -> AcceptOperator:
    csp = _csp_of(reg)
    diag = csp.accept_table.astype(np.int64).reshape(-1)
    return AcceptOperator("satisfiability", csp.R, csp.kappa, ((Fraction(1), np.diag(diag)),))


def expansion_matrix(csp: CspSystem) -> np.ndarray:
    """W: |j>|x> -> sum_r |j, r, x_r> into the reduced space (vertex, value)."""
    R, q, s, k = csp.R, csp.q, csp.sigma, csp.kappa
    W = np.zeros((R * q * s, R * k), dtype=np.int64)
    digits = np.array([csp.decode_color(x) for x in range(k)], dtype=np.int64)
    for j in range(R):
        for r in range(q):
            W[(j * q + r) * s + digits[:, r], j * k + np.arange(k)] = 1
    return W


def _vertex_perm_matrix(table: np.ndarray, sigma: int) -> np.ndarray:
    nv = len(table)
    M = np.zeros((nv * sigma, nv * sigma), dtype=np.int64)
    src = np.arange(nv * sigma)
    v, w = np.divmod(src, sigma)
    M[table[v] * sigma + w, src] = 1
    return M


def consistency_kernel(reg: RegularizedInstance, k: int) -> np.ndarray:
    """Integer K_k = W^T (2I + M_k + M_k^T) W; the test operator is K_k / (4 q kappa)."""
    if not 0 <= k < reg.d:
        raise InvalidParameters(f"permutation index {k} out of range [0, {reg.d})")
    W = expansion_matrix(reg.csp)
    M = _vertex_perm_matrix(reg.perms.tables[k], reg.csp.sigma)
    return W.T @ (2 * np.eye(M.shape[0], dtype=np.int64) + M + M.T) @ W


def build_consistency_op(reg: RegularizedInstance, k: int) -> AcceptOperator:
    csp = reg.csp
    return AcceptOperator(
        f"consistency_{k}", csp.R, csp.kappa,
        ((Fraction(1, 4 * csp.q * csp.kappa), consistency_kernel(reg, k)),), {"k": k},
    )


def constraint_weights(q: int, d: int, kappa: int) -> tuple[Fraction, Fraction]:
    """Probabilities of the satisfiability branch and of the consistency branch."""
    t = q * d * kappa + 1
    return Fraction(1, t), Fraction(q * d * kappa, t)


def c_yes(q: int, d: int, kappa: int) -> Fraction:
    return Fraction(q * d + 1, q * d * kappa + 1)


def build_constraint_op(reg: RegularizedInstance) -> AcceptOperator:
    csp = reg.csp
    t = csp.q * reg.d * csp.kappa + 1
    ksum = sum(consistency_kernel(reg, k) for k in range(reg.d))
    diag = np.diag(csp.accept_table.astype(np.int64).reshape(-1))
    return AcceptOperator(
        "constraint_mix", csp.R, csp.kappa, ((Fraction(1, t), diag), (Fraction(1, 4 * t), ksum))
    )


def build_total_op(reg: RegularizedInstance, params, check: bool = True) -> AcceptOperator:
    p1, p2, p3 = (_as_fraction(params.p1), _as_fraction(params.p2), _as_fraction(params.p3))
    if p1 + p2 + p3 != 1 or min(p1, p2, p3) < 0:
        raise InvalidParameters("probabilities-not-normalized: p1 + p2 + p3 must equal 1")
    csp = reg.csp
    op = combine(
        "total",
        [
            (p1, build_density_op(csp.R, csp.kappa)),
            (p2, build_validity_op(csp.R, csp.kappa)),
            (p3, build_constraint_op(reg)),
        ],
    )
    if check:
        op.check_spectrum()
    return op


def operator_suite(reg: RegularizedInstance, params=None) -> dict[str, AcceptOperator]:
    csp = reg.csp
    ops = {
        "density": build_density_op(csp.R, csp.kappa),
        "validity": build_validity_op(csp.R, csp.kappa),
        "satisfiability": build_satisfiability_op(reg),
        "constraint_mix": build_constraint_op(reg),
    }
    for k in range(reg.d):
        ops[f"consistency_{k}"] = build_consistency_op(reg, k)
    if params is not None:
        ops["total"] = build_total_op(reg, params, check=False)
    for op in ops.values():
        op.check_spectrum()
    return ops


# --- expanded-space route (cross-check) -----------------------------------------------


def expanded_operators(reg: RegularizedInstance) -> dict:
    """A', P, M_k and B acting on C^R (x) C^kappa (x) C^N (x) C^|Sigma|, in floats."""
    csp = reg.csp
    R, k, N, s, q = csp.R, csp.kappa, csp.N, csp.sigma, csp.q
    big = R * k * N * s

    def idx(j, x, i, w):
        return ((j * k + x) * N + i) * s + w

    A = np.zeros((big, R * k))
    for j, c in enumerate(csp.constraints):
        for x in range(k):
            vals = csp.decode_color(x)
            for r, i in enumerate(c.vars):
                A[idx(j, x, i, vals[r]), j * k + x] += 1 / np.sqrt(q)
    plus = np.full((k, k), 1.0 / k)
    P = np.kron(np.kron(np.eye(R), plus), np.eye(N * s))
    Ms = []
    for kk in range(reg.d):
        M = np.zeros((big, big))
        for j in range(R):
            for i in range(N):
                jp = reg.lifted(kk, j, i)
                for x in range(k):
                    for w in range(s):
                        M[idx(jp, x, i, w), idx(j, x, i, w)] = 1
        Ms.append(M)
    # B: |j>|x>|0> -> |j>|x>|C_j(x)>, on C^R (x) C^kappa (x) C^2
    B = np.zeros((R * k * 2, R * k))
    for j in range(R):
        for x in range(k):
            B[(j * k + x) * 2 + int(csp.accept_table[j, x]), j * k + x] = 1
    return {"A": A, "P": P, "M": Ms, "B": B}


def expanded_consistency(reg: RegularizedInstance, k: int, ops: dict | None = None) -> np.ndarray:
    """1/4 A'^T P (I + M_k)^T (I + M_k) P A' in floats."""
    ops = ops or expanded_operators(reg)
    A, P, M = ops["A"], ops["P"], ops["M"][k]
    X = (np.eye(M.shape[0]) + M) @ P @ A
    return 0.25 * X.T @ X


def expanded_satisfiability(reg: RegularizedInstance, ops: dict | None = None) -> np.ndarray:
    ops = ops or expanded_operators(reg)
    B = ops["B"]
    n = B.shape[0] // 2
    accept = np.kron(np.eye(n), np.diag([0.0, 1.0]))
    return B.T @ accept @ B


# --- nearest valid state --------------------------------------------------------------


@dataclass(frozen=True)
class NearestValid:
    sigma: tuple[int, ...]  # color chosen per constraint
    gamma: object  # Fraction when exact
    phi: ProofState
    chi: ProofState

    def labeling(self, csp: CspSystem):
        return tuple(csp.decode_color(x) for x in self.sigma)


def nearest_valid_state(psi: ProofState) -> NearestValid:
    if not psi.nonnegative:
        raise InvalidParameters("nearest_valid_state needs a nonnegative state")
    R, k = psi.R, psi.kappa
    if psi.exact:
        u = psi.direction
        sigma = tuple(max(range(k), key=lambda x: (u[j * k + x], -x)) for j in range(R))
        picked = [u[j * k + x] for j, x in enumerate(sigma)]
        gamma = sum((x * x for x in picked), Fraction(0)) / psi.norm2_exact
        v = [Fraction(0)] * (R * k)
        for j, x in enumerate(sigma):
            v[j * k + x] = picked[j]
        phi = ProofState.from_direction(v, R, k) if any(v) else None
    else:
        blk = psi.block()
        sigma = tuple(int(x) for x in np.argmax(blk, axis=1))  # argmax keeps the first maximum
        picked = blk[np.arange(R), list(sigma)]
        gamma = float(np.sum(picked**2))
        v = np.zeros(R * k)
        v[np.arange(R) * k + np.asarray(sigma)] = picked
        phi = ProofState.from_amplitudes(v, R, k) if gamma > 0 else None
    w = [0] * (R * k)
    for j, x in enumerate(sigma):
        w[j * k + x] = 1
    return NearestValid(sigma, gamma, phi, ProofState.from_direction(w, R, k))


def overlap2(a: ProofState, b: ProofState):
    """|<a|b>|^2, exact when both states are exact."""
    if a.exact and b.exact:
        ip = sum((x * y for x, y in zip(a.direction, b.direction)), Fraction(0))
        return ip * ip / (a.norm2_exact * b.norm2_exact)
    return float(abs(np.vdot(a.amplitudes, b.amplitudes)) ** 2)


def labeling_counts(reg: RegularizedInstance, lab) -> tuple[int, int]:
    """(u_s, u_e) of a labeling."""
    return count_labeling_unsatisfied(reg.csp, lab), count_consistency_violations(reg, lab)


def rigid_constraint_value(reg: RegularizedInstance, lab) -> Fraction:
    """Closed form of the constraint-test acceptance of a rigid proof."""
    csp = reg.csp
    u_s, u_e = labeling_counts(reg, lab)
    t = csp.q * reg.d * csp.kappa + 1
    return c_yes(csp.q, reg.d, csp.kappa) - Fraction(u_s + u_e, csp.R * t)


# --- serialization ---------------------------------------------------------------------


def dump_operator(op: AcceptOperator) -> str:
    """Dense rational matrix as JSON with [numerator, denominator] entries."""
    rows = [[[x.numerator, x.denominator] for x in row] for row in op.matrix.tolist()]
    doc = {"label": op.label, "R": op.R, "kappa": op.kappa, "matrix": rows}
    return json.dumps(doc, separators=(",", ":")) + "\n"


def load_operator(text: str | bytes) -> AcceptOperator:
    try:
        doc = json.loads(text)
        rows = [[Fraction(int(a), int(b)) for a, b in row] for row in doc["matrix"]]
        R, kappa = int(doc.get("R", 1)), doc.get("kappa")
    except (ValueError, KeyError, TypeError) as exc:
        raise InvalidParameters(f"bad operator document: {exc}") from None
    n = len(rows)
    if any(len(r) != n for r in rows):
        raise InvalidParameters("operator matrix must be square")
    m = np.empty((n, n), dtype=object)
    for a, row in enumerate(rows):
        m[a, :] = row
    op = from_matrix(m, doc.get("label", "custom"), R=R, kappa=None if kappa is None else int(kappa))
    return op
