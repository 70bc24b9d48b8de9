"""Maximization of <psi|Pi|psi> over nonnegative unit vectors.

``nonneg_max_exact`` enumerates supports: a maximizer supported on S is a
strictly positive eigenvector of the principal submatrix Pi_S, so the global
maximum is the largest eigenvalue of some Pi_S that admits a positive
eigenvector.  ``certify_upper_bound`` runs the same enumeration against a
fixed threshold and settles close calls exactly.
"""

from __future__ import annotations

import itertools
import math
import os
from dataclasses import dataclass, field
from fractions import Fraction

import mpmath
import numpy as np
from scipy.optimize import linprog

from .errors import GuardExceeded, InvalidParameters, PropertyFailure
from .verifier import AcceptOperator, ProofState, from_matrix

DEFAULT_GUARD = 22
CLUSTER_TOL = 1e-9
POS_TOL = 1e-12
KKT_TOL = 1e-9
SCREEN_MARGIN = 1e-9
MP_DPS = 50
BATCH = 1 << 15


def guard_dim() -> int:
    raw = os.environ.get("QPLUS_GUARD_DIM")
    if raw is None:
        return DEFAULT_GUARD
    try:
        return int(raw)
    except ValueError:
        raise InvalidParameters(f"QPLUS_GUARD_DIM must be an integer, got {raw!r}") from None


def _dense(op) -> np.ndarray:
    if isinstance(op, AcceptOperator):
        return op.dense
    a = np.asarray(op, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidParameters("operator must be a square matrix")
    return a


def _shape(op, n: int) -> tuple[int, int]:
    if isinstance(op, AcceptOperator):
        return op.R, op.kappa
    return 1, n


@dataclass
class OptReport:
    best_value: float
    best_state: ProofState
    method: str
    restarts: int
    seed: int | None
    upper_bound: float
    candidates: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "best_value": self.best_value,
            "best_state": [float(x) for x in self.best_state.amplitudes],
            "support": [int(i) for i in np.flatnonzero(self.best_state.amplitudes > 0)],
            "method": self.method,
            "restarts": self.restarts,
            "seed": self.seed,
            "upper_bound": self.upper_bound,
            "stats": self.stats,
        }


def _state(x: np.ndarray, op, n: int) -> ProofState:
    R, k = _shape(op, n)
    x = np.clip(x, 0.0, None)
    return ProofState(R, k, x / np.linalg.norm(x), None, True)


def _supports(n: int, size: int):
    return itertools.combinations(range(n), size)


def _batches(n: int, size: int):
    it = _supports(n, size)
    while True:
        chunk = list(itertools.islice(it, BATCH))
        if not chunk:
            return
        yield np.asarray(chunk, dtype=np.int64)


def _positive_in_span(E: np.ndarray) -> np.ndarray | None:
    """A strictly positive vector in the column span of E, if one exists."""
    m = E.shape[1]
    res = linprog(np.zeros(m), A_ub=-E, b_ub=-np.ones(E.shape[0]), bounds=[(None, None)] * m,
                  method="highs")
    if res.status != 0:
        return None
    v = E @ res.x
    return v if np.all(v > 0) else None


def _span_excludes_nonneg(E: np.ndarray, tol: float = 1e-7) -> bool:
    """True when the span of orthonormal E robustly contains no nonzero x >= 0.

    A nonnegative unit x has sum(x) >= 1, so ||E^T 1|| < 1 rules it out;
    otherwise maximize min(E c) subject to sum(E c) = 1 and require it to be
    clearly negative.
    """
    ones = E.sum(axis=0)
    if np.linalg.norm(ones) < 1 - 1e-6:
        return True
    m = E.shape[1]
    # variables (c, s): maximize s with E c >= s, ones . c = 1
    cost = np.zeros(m + 1)
    cost[-1] = -1.0
    A_ub = np.hstack([-E, np.ones((E.shape[0], 1))])
    res = linprog(cost, A_ub=A_ub, b_ub=np.zeros(E.shape[0]), A_eq=np.append(ones, 0.0)[None, :],
                  b_eq=[1.0], bounds=[(None, None)] * m + [(None, 1.0)], method="highs")
    return res.status == 0 and -res.fun < -tol


def _clusters(w: np.ndarray) -> list[tuple[int, int]]:
    """Index ranges of (numerically) equal eigenvalues, top cluster first."""
    out, hi = [], len(w)
    while hi > 0:
        lo = hi - 1
        while lo > 0 and w[hi - 1] - w[lo - 1] <= CLUSTER_TOL * max(1.0, abs(w[hi - 1])):
            lo -= 1
        out.append((lo, hi))
        hi = lo
    return out


def _eig_candidates(w, V, floor):
    """Yield (value, positive vector) for eigen-clusters above ``floor``."""
    for lo, hi in _clusters(w):
        if w[hi - 1] <= floor:
            break
        if hi - lo == 1:
            v = V[:, lo]
            v = v if v.sum() >= 0 else -v
            if np.all(v > POS_TOL):
                yield float(w[lo]), v
        else:
            v = _positive_in_span(V[:, lo:hi])
            if v is not None:
                yield float(w[hi - 1]), v


def nonneg_max_exact(op, guard: int | None = None, keep_candidates: int = 256,
                     warm_start: bool = True) -> OptReport:
    A = _dense(op)
    n = A.shape[0]
    guard = guard_dim() if guard is None else guard
    if n > guard:
        raise GuardExceeded(f"dimension {n} exceeds exact-oracle guard {guard}")
    lam_max = float(np.linalg.eigvalsh(A)[-1]) if n else 0.0
    i0 = int(np.argmax(np.diag(A)))
    best_x = np.zeros(n)
    best_x[i0] = 1.0
    best = float(A[i0, i0])
    heur = None
    if warm_start and n > 1:
        heur = nonneg_max_heuristic(op, restarts=8, seed=0)
        if heur.best_value > best:
            best, best_x = heur.best_value, heur.best_state.amplitudes.copy()
    candidates: list[tuple[float, np.ndarray]] = []
    examined = 0
    for size in range(1, n + 1):
        for idx in _batches(n, size):
            subs = A[idx[:, :, None], idx[:, None, :]]
            w, V = np.linalg.eigh(subs)
            live = np.flatnonzero(w[:, -1] > best - 1e-15)
            examined += len(idx)
            for b in live:
                for val, v in _eig_candidates(w[b], V[b], best - 1e-15):
                    x = np.zeros(n)
                    x[idx[b]] = v / np.linalg.norm(v)
                    g = A @ x
                    off = np.ones(n, dtype=bool)
                    off[idx[b]] = False
                    if off.any() and g[off].max() > KKT_TOL:
                        continue
                    value = float(x @ g)
                    if len(candidates) < keep_candidates:
                        candidates.append((value, x))
                    if value > best:
                        best, best_x = value, x
    best = max(best, 0.0)
    cand_states = [_state(x, op, n) for _, x in sorted(candidates, key=lambda t: -t[0])]
    stats = {"supports": examined, "lambda_max": lam_max}
    if heur is not None:
        stats["heuristic_value"] = heur.best_value
        stats["heuristic_agrees"] = bool(best - heur.best_value <= 1e-7)
    return OptReport(best, _state(best_x, op, n) if best_x.any() else _state(np.ones(n), op, n),
                     "exact-kkt", 0, None, max(lam_max, best), cand_states, stats)


# --- exact certification against a threshold --------------------------------------------------


def _exact_matrix(op) -> np.ndarray:
    if isinstance(op, AcceptOperator):
        return op.matrix
    return from_matrix(np.asarray(op)).matrix


def is_psd_exact(M: np.ndarray) -> bool:
    """Symmetric rational matrix PSD test by LDL^T elimination in Fractions."""
    M = [list(row) for row in M]
    n = len(M)
    for k in range(n):
        piv = M[k][k]
        if piv < 0:
            return False
        if piv == 0:
            if any(M[k][i] != 0 for i in range(k + 1, n)):
                return False
            continue
        for i in range(k + 1, n):
            f = M[i][k] / piv
            if f:
                for j in range(k + 1, n):
                    M[i][j] -= f * M[k][j]
    return True


def _mp_eigs(Mq: np.ndarray):
    with mpmath.workdps(MP_DPS):
        m = mpmath.matrix([[mpmath.mpf(x.numerator) / x.denominator for x in row] for row in Mq.tolist()])
        w, V = mpmath.eigsy(m)
        n = m.rows
        ws = [w[i] for i in range(n)]
        vs = [[V[r, i] for r in range(n)] for i in range(n)]
    return ws, vs


@dataclass
class Certificate:
    threshold: Fraction
    holds: bool
    supports: int
    screened_out: int
    exact_psd: int
    mp_refined: int
    witness: list | None = None
    witness_value: float | None = None

    def as_dict(self) -> dict:
        return {
            "threshold": str(self.threshold), "holds": self.holds, "supports": self.supports,
            "screened_out": self.screened_out, "exact_psd_checks": self.exact_psd,
            "mp_refined": self.mp_refined, "witness_support": self.witness,
            "witness_value": self.witness_value,
        }


def certify_upper_bound(op, threshold, guard: int | None = None) -> Certificate:
    """Decide ``max_{psi >= 0} <psi|Pi|psi> <= threshold``.

    Float eigenvalues more than ``SCREEN_MARGIN`` below the threshold are
    accepted outright.  A close candidate that is the top eigenvalue of its
    submatrix is settled by an exact PSD test of ``t I - Pi_S``; any other
    close or ambiguous cluster is recomputed at 50 digits.
    """
    t = Fraction(threshold)
    A = _dense(op)
    n = A.shape[0]
    guard = guard_dim() if guard is None else guard
    if n > guard:
        raise GuardExceeded(f"dimension {n} exceeds exact-oracle guard {guard}")
    Q = _exact_matrix(op)
    tf = float(t)
    cert = Certificate(t, True, 0, 0, 0, 0)
    for size in range(1, n + 1):
        for idx in _batches(n, size):
            subs = A[idx[:, :, None], idx[:, None, :]]
            w, V = np.linalg.eigh(subs)
            cert.supports += len(idx)
            close = np.flatnonzero(w[:, -1] > tf - SCREEN_MARGIN)
            cert.screened_out += len(idx) - len(close)
            for b in close:
                S = idx[b]
                verdict = _settle_support(Q, S, w[b], V[b], t, tf, cert)
                if verdict is not None:
                    cert.holds = False
                    cert.witness, cert.witness_value = [int(i) for i in S], verdict
                    return cert
    return cert


def _settle_support(Q, S, w, V, t: Fraction, tf: float, cert: Certificate) -> float | None:
    """Return a violating value if Pi_S has a positive eigenvector above t."""
    QS = Q[np.ix_(S, S)]
    # the whole submatrix below t settles every cluster at once
    if w[-1] <= tf + SCREEN_MARGIN:
        cert.exact_psd += 1
        tI = np.array([[(t if i == j else Fraction(0)) - QS[i, j] for j in range(len(S))]
                       for i in range(len(S))], dtype=object)
        if is_psd_exact(tI):
            return None
    ambiguous = False
    scale = max(1.0, float(np.abs(w).max()))
    for lo, hi in _clusters(w):
        if w[hi - 1] <= tf - SCREEN_MARGIN:
            break
        if hi - lo > 1:
            if _span_excludes_nonneg(V[:, lo:hi]):
                continue
            ambiguous = True
            break
        # eigenvector error is about machine precision over the spectral gap
        gaps = [abs(w[lo] - w[i]) for i in (lo - 1, lo + 1) if 0 <= i < len(w)]
        err = 64 * len(w) * np.finfo(float).eps * scale / max(min(gaps, default=1.0), 1e-300)
        v = V[:, lo]
        v = v if v.sum() >= 0 else -v
        if v.min() < -err:
            continue
        if v.min() > err and w[lo] > tf + SCREEN_MARGIN:
            return float(w[lo])
        ambiguous = True
        break
    if not ambiguous:
        return None
    cert.mp_refined += 1
    ws, vs = _mp_eigs(QS)
    tm = mpmath.mpf(t.numerator) / t.denominator
    tiny = mpmath.mpf(10) ** (-(MP_DPS - 10))
    order = sorted(range(len(ws)), key=lambda i: ws[i], reverse=True)
    i = 0
    while i < len(order) and ws[order[i]] > tm - tiny:
        j = i
        while j + 1 < len(order) and ws[order[i]] - ws[order[j + 1]] <= tiny:
            j += 1
        group = [vs[order[m]] for m in range(i, j + 1)]
        if len(group) == 1:
            v = group[0]
            if sum(v) < 0:
                v = [-x for x in v]
            positive = min(v) > tiny
        else:
            E = np.array([[float(x) for x in g] for g in group]).T
            positive = _positive_in_span(E) is not None
        if positive and ws[order[i]] > tm:
            return float(ws[order[i]])
        i = j + 1
    return None


# --- heuristic -------------------------------------------------------------------------------


def _polish(A: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, float]:
    """Best positive eigenvector on the current support, if it improves."""
    S = np.flatnonzero(x > 1e-10)
    cur = float(x @ A @ x)
    if len(S) == 0:
        return x, cur
    w, V = np.linalg.eigh(A[np.ix_(S, S)])
    for val, v in _eig_candidates(w, V, cur):
        y = np.zeros_like(x)
        y[S] = v / np.linalg.norm(v)
        yv = float(y @ A @ y)
        if yv >= cur:
            return y, yv
    return x, cur


def _ascent(A: np.ndarray, x: np.ndarray, method: str, max_iter: int, tol: float):
    """Monotone ascent from x; returns (x, value, iterations, trace)."""
    val = float(x @ A @ x)
    trace = [val]
    shift = max(0.0, -float(np.linalg.eigvalsh(A)[0])) + 1e-3 if method == "multiplicative" else 0.0
    it = 0
    for it in range(1, max_iter + 1):
        g = A @ x
        y = None
        if method == "multiplicative":
            m = x * np.clip(g + shift * x, 0.0, None)
            nm = np.linalg.norm(m)
            if nm > 0:
                y = m / nm
                if float(y @ A @ y) < val:
                    y = None
        if y is None:
            p = np.clip(g, 0.0, None)
            np_ = np.linalg.norm(p)
            if np_ == 0:
                break
            y = p / np_
        new = float(y @ A @ y)
        if new < val - 1e-12 * max(1.0, abs(val)):
            raise PropertyFailure(f"ascent decreased the objective: {val!r} -> {new!r}")
        x, new_val = y, max(new, val)
        trace.append(new)
        if it % 50 == 0:
            x, new_val = _polish(A, x)
        if new_val - val <= tol:
            val = new_val
            break
        val = new_val
    x, pv = _polish(A, x)
    if pv < val - 1e-12:
        raise PropertyFailure("polish decreased the objective")
    trace.append(pv)
    return x, pv, it, trace


def nonneg_max_heuristic(op, restarts: int = 64, seed: int = 0, method: str = "projected-gradient",
                         max_iter: int = 5000, tol: float = 1e-15) -> OptReport:
    if method not in ("projected-gradient", "multiplicative"):
        raise InvalidParameters(f"unknown heuristic method {method!r}")
    if restarts < 1:
        raise InvalidParameters("restarts must be positive")
    A = _dense(op)
    n = A.shape[0]
    lam_max = float(np.linalg.eigvalsh(A)[-1]) if n else 0.0
    best_val, best_x, best_idx = -math.inf, None, -1
    finals = []
    iters = []
    for r, ss in enumerate(np.random.SeedSequence(seed).spawn(restarts)):
        rng = np.random.default_rng(ss)
        x = rng.random(n) + 1e-3
        x /= np.linalg.norm(x)
        x, val, it, _ = _ascent(A, x, method, max_iter, tol)
        iters.append(it)
        finals.append(x)
        if val > best_val:
            best_val, best_x, best_idx = val, x, r
    best_val = max(best_val, 0.0)
    stats = {"lambda_max": lam_max, "best_restart": best_idx, "max_iterations": max(iters)}
    return OptReport(best_val, _state(best_x, op, n), method, restarts, seed, max(lam_max, best_val),
                     [_state(x, op, n) for x in finals], stats)


# --- counterexample and relaxation bounds -------------------------------------------------------


def x_minus_projector() -> np.ndarray:
    v = np.array([1.0, -1.0]) / math.sqrt(2)
    return np.outer(v, v)


def tensor_counterexample() -> tuple[float, float]:
    """(||M||_+, certified lower bound on ||M (x) M||_+) for M = |x-><x-|."""
    M = x_minus_projector()
    # ||M||_+^2 is the nonnegative maximum of M^T M = M
    v1 = math.sqrt(nonneg_max_exact(M.T @ M, warm_start=False).best_value)
    chi = np.array([1.0, 0.0, 0.0, 1.0]) / math.sqrt(2)
    v2 = float(np.linalg.norm(np.kron(M, M) @ chi))
    if not v2 > v1 * v1:
        raise PropertyFailure(f"no tensor gap: {v2} <= {v1 * v1}")
    return v1, v2


def phase_relaxation_bounds(op, guard: int | None = None) -> tuple[float, float, float]:
    A = _dense(op)
    s_plus = nonneg_max_exact(op, guard=guard).best_value
    lam = float(np.linalg.eigvalsh(A)[-1])
    real_bound = complex_bound = lam
    if real_bound > 2 * s_plus + 1e-9:
        raise PropertyFailure(f"real-state maximum {real_bound} exceeds 2 s+ = {2 * s_plus}")
    if complex_bound > 4 * s_plus + 1e-9:
        raise PropertyFailure(f"complex-state maximum {complex_bound} exceeds 4 s+ = {4 * s_plus}")
    return s_plus, real_bound, complex_bound


def random_psd_contraction(n: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    rank = rank or int(rng.integers(1, n + 1))
    G = rng.normal(size=(n, rank))
    P = G @ G.T
    return P / np.linalg.eigvalsh(P)[-1] * rng.uniform(0.2, 1.0)
