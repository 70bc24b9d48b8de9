"""Protocol parameters, completeness runs, and the four-case soundness audit."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

from . import adversary
from .csp import brute_force_value
from .errors import InvalidParameters, PreconditionViolation, PropertyFailure
from .regularizer import RegularizedInstance
from .verifier import (
    AcceptOperator,
    ProofState,
    acceptance,
    build_total_op,
    c_yes,
    density_prob,
    honest_proof,
    validity_prob,
)

MODES = ("paper-strict", "demo")
CASE_TOL = 1e-9
EPS_REL_PRECISION = Fraction(1, 10**15)
# demo mode: eps = lambda / DEMO_GAMMA
DEMO_GAMMA = 4


def _frac(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, str):
        return Fraction(x)
    if isinstance(x, float):
        return Fraction(x).limit_denominator(10**12)
    return Fraction(x)


def rigidity_condition(kappa: int, eps: Fraction, lam: Fraction) -> bool:
    """Exact test of kappa*eps + (kappa+1)*sqrt(kappa*eps) <= lam^2 / 4."""
    s = kappa * eps
    rhs = lam * lam / 4 - s
    return rhs >= 0 and (kappa + 1) ** 2 * s <= rhs * rhs


def strict_epsilon(kappa: int, lam: Fraction) -> Fraction:
    """Largest rational eps (to relative 1e-15, from below) meeting the rigidity condition."""
    lo, hi = Fraction(0), lam * lam / (4 * kappa)
    while hi - lo > EPS_REL_PRECISION * hi:
        mid = (lo + hi) / 2
        if rigidity_condition(kappa, mid, lam):
            lo = mid
        else:
            hi = mid
    # shrink the binary fraction to a short one still below the root
    for den_pow in range(1, 200):
        cand = Fraction(math.floor(lo * 10**den_pow), 10**den_pow)
        if cand > 0 and lo - cand <= EPS_REL_PRECISION * lo:
            return cand
    return lo


def strict_epsilon_closed_form(kappa: int, lam: float) -> float:
    # root of t^2 + (kappa+1) t - lam^2/4, written without cancellation
    b = kappa + 1
    t = lam * lam / (2 * (b + math.sqrt(b * b + lam * lam)))
    return t * t / kappa


@dataclass(frozen=True)
class ProtocolParams:
    delta: Fraction
    q: int
    d: int
    kappa: int
    lam: Fraction
    eps: Fraction
    Z: Fraction
    p1: Fraction
    p2: Fraction
    p3: Fraction
    C_yes: Fraction
    P_yes: Fraction
    gap: Fraction
    mode: str
    sigma: int = 2

    @property
    def Gamma(self) -> Fraction:
        return self.lam / self.eps

    @property
    def case13_bound(self) -> Fraction:
        return self.P_yes - self.eps / (4 * self.Z)

    @property
    def case4_bound(self) -> Fraction:
        return self.P_yes - self.gap

    def as_dict(self) -> dict:
        out = {}
        for name in ("delta", "lam", "eps", "Gamma", "Z", "p1", "p2", "p3", "C_yes", "P_yes", "gap"):
            v = getattr(self, name)
            out[name] = {"exact": str(v), "float": float(v)}
        out.update(q=self.q, d=self.d, kappa=self.kappa, sigma=self.sigma, mode=self.mode)
        return out


def derive_params(delta, q: int, sigma_size: int, d: int, mode: str = "paper-strict",
                  eps=None) -> ProtocolParams:
    delta = _frac(delta)
    if not 0 < delta < 1:
        raise InvalidParameters("infeasible-delta: need 0 < delta < 1")
    if mode not in MODES:
        raise InvalidParameters(f"mode must be one of {MODES}")
    if q < 1 or sigma_size < 2 or d < 1:
        raise InvalidParameters("need q >= 1, |Sigma| >= 2, d >= 1")
    kappa = sigma_size**q
    lam = (1 - delta) / (q * d * kappa + 1)
    if eps is not None:
        eps = _frac(eps)
    elif mode == "paper-strict":
        eps = strict_epsilon(kappa, lam)
    else:
        eps = lam / DEMO_GAMMA
    if eps <= 0:
        raise InvalidParameters("eps must be positive")
    if mode == "paper-strict" and not rigidity_condition(kappa, eps, lam):
        raise InvalidParameters("eps violates the rigidity condition required in paper-strict mode")
    C = c_yes(q, d, kappa)
    Z = Fraction(3, 2) + eps / (4 * (1 - C))
    p1, p2, p3 = 1 / (2 * Z), 1 / Z, eps / (4 * (1 - C) * Z)
    P_yes = p1 / kappa + p2 * (1 - Fraction(1, kappa)) + p3 * C
    gap = eps * lam / (8 * (1 - C) * Z)
    params = ProtocolParams(delta, q, d, kappa, lam, eps, Z, p1, p2, p3, C, P_yes, gap, mode, sigma_size)
    assert p1 + p2 + p3 == 1 and p2 > p1 and 0 < gap < P_yes < 1
    return params


def params_for(reg: RegularizedInstance, delta, mode: str = "paper-strict", eps=None) -> ProtocolParams:
    return derive_params(delta, reg.csp.q, reg.csp.sigma, reg.d, mode, eps)


def _check_compatible(reg: RegularizedInstance, params: ProtocolParams) -> None:
    if (reg.csp.q, reg.d, reg.csp.kappa) != (params.q, params.d, params.kappa):
        raise InvalidParameters("parameters were derived for a different (q, d, kappa)")


# --- completeness -----------------------------------------------------------------------


def run_completeness(reg: RegularizedInstance, a, params: ProtocolParams,
                     op: AcceptOperator | None = None) -> Fraction:
    _check_compatible(reg, params)
    a = tuple(int(x) for x in a)
    bad = [j for j, c in enumerate(reg.csp.constraints) if not c.satisfied_by([a[v] for v in c.vars])]
    if bad:
        raise PreconditionViolation(f"assignment-not-satisfying: constraints {bad[:5]} violated")
    op = op or build_total_op(reg, params)
    value = acceptance(op, honest_proof(reg, a))
    if value != params.P_yes:
        raise PropertyFailure(f"completeness value {value} differs from P_yes {params.P_yes}")
    return value


# --- soundness ------------------------------------------------------------------------------


@dataclass(frozen=True)
class CaseReport:
    case: int
    acceptance: object
    bound: Fraction
    d1: object
    d2: object
    passed: bool
    exact: bool
    margin: float

    def as_dict(self) -> dict:
        return {
            "case": self.case, "passed": self.passed, "exact": self.exact,
            "acceptance": str(self.acceptance), "acceptance_float": float(self.acceptance),
            "bound": str(self.bound), "d1": float(self.d1), "d2": float(self.d2),
            "margin": self.margin,
        }


def classify(d1, d2, eps) -> int:
    if d1 >= eps:
        return 1
    if -d1 >= eps:
        return 2
    if d2 >= eps:
        return 3
    return 4


def soundness_case_audit(psi: ProofState, reg: RegularizedInstance, params: ProtocolParams,
                         op: AcceptOperator | None = None, val=None, enforce: bool = True) -> CaseReport:
    """Classify a nonnegative state by (d1, d2) and check its case bound.

    Exact states are compared in rational arithmetic; float states with
    tolerance ``CASE_TOL``.
    """
    if not psi.nonnegative:
        raise InvalidParameters("case audit needs a nonnegative state")
    val = brute_force_value(reg.csp)[0] if val is None else val
    if val > params.delta:
        raise PreconditionViolation(f"instance-not-sound: val = {val} > delta = {params.delta}")
    op = op or build_total_op(reg, params)
    acc = acceptance(op, psi)
    D, V = density_prob(psi), validity_prob(psi)
    inv_k = Fraction(1, params.kappa)
    if psi.exact:
        d1, d2, eps = inv_k - D, 1 - inv_k - V, params.eps
    else:
        d1, d2, eps = float(inv_k) - D, 1 - float(inv_k) - V, float(params.eps)
    case = classify(d1, d2, eps)
    bound = params.case4_bound if case == 4 else params.case13_bound
    margin = float(bound - acc) if psi.exact else float(bound) - acc
    passed = (acc <= bound) if psi.exact else (margin >= -CASE_TOL)
    report = CaseReport(case, acc, bound, d1, d2, bool(passed), psi.exact, margin)
    if enforce and not passed:
        raise PropertyFailure(f"case {case} bound violated: acceptance {float(acc)!r} > {float(bound)!r}")
    return report


@dataclass
class SoundnessReport:
    params: ProtocolParams
    val: Fraction
    best_value: float
    method: str
    certified: bool
    certificate: dict
    below_p_yes: bool
    within_gap: bool
    case_tallies: dict
    audits: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "val": str(self.val), "best_value": self.best_value, "method": self.method,
            "certified": self.certified, "certificate": self.certificate,
            "P_yes": str(self.params.P_yes), "gap": str(self.params.gap),
            "below_p_yes": self.below_p_yes, "within_gap": self.within_gap,
            "case_tallies": self.case_tallies,
        }


def run_soundness_search(reg: RegularizedInstance, params: ProtocolParams, budget: int = 64,
                         seed: int = 0, require_sound: bool = True,
                         guard: int | None = None) -> SoundnessReport:
    """Best adversarial nonnegative proof, audited case by case.

    Uses the exact KKT oracle (with a certified comparison against
    ``P_yes - gap``) when the dimension permits, else the restart heuristic.
    With ``require_sound=False`` a satisfiable instance may be passed as a
    negative control; then no case bounds are asserted.
    """
    _check_compatible(reg, params)
    val = brute_force_value(reg.csp)[0]
    sound = val <= params.delta
    if require_sound and not sound:
        raise PreconditionViolation(f"instance-not-sound: val = {val} > delta = {params.delta}")
    op = build_total_op(reg, params)
    guard = adversary.guard_dim() if guard is None else guard
    threshold = params.case4_bound
    certificate: dict = {}
    if op.dim <= guard:
        rep = adversary.nonneg_max_exact(op, guard=guard)
        method = "exact-kkt"
        if sound:
            cert = adversary.certify_upper_bound(op, threshold, guard=guard)
            certificate = cert.as_dict()
            certified = cert.holds
        else:
            certified = False
    else:
        rep = adversary.nonneg_max_heuristic(op, restarts=budget, seed=seed)
        method = rep.method
        certified = False
    states = [rep.best_state] + list(rep.candidates)
    tallies = {f"case{c}": {"count": 0, "passed": 0} for c in (1, 2, 3, 4)}
    audits = []
    if sound:
        for psi in states:
            cr = soundness_case_audit(psi, reg, params, op=op, val=val, enforce=False)
            audits.append(cr)
            t = tallies[f"case{cr.case}"]
            t["count"] += 1
            t["passed"] += int(cr.passed)
    best = rep.best_value
    within = best <= float(threshold) + CASE_TOL * max(1.0, abs(float(threshold)))
    if certificate:
        within = within and certified
    report = SoundnessReport(params, val, best, method, certified, certificate,
                             best < float(params.P_yes), within, tallies, audits)
    if sound:
        failed = [a for a in audits if not a.passed]
        if failed:
            raise PropertyFailure(f"{len(failed)} evaluated states violate their case bound")
        if not within:
            raise PropertyFailure(f"soundness value {best!r} exceeds P_yes - gap")
    return report
