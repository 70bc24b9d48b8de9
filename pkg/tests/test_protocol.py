from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import CORPUS
from oracles import FROZEN_EPS
from qplus import adversary
from qplus import csp as C
from qplus import protocol as P
from qplus import regularizer as G
from qplus import verifier as V
from qplus.errors import InvalidParameters, PreconditionViolation, PropertyFailure


def test_preset_parameters(preset_params):
    p = preset_params
    assert p.kappa == 4 and p.q * p.d * p.kappa + 1 == 65
    assert p.lam == Fraction(1, 130)
    assert p.C_yes == Fraction(17, 65)
    assert p.p1 + p.p2 + p.p3 == 1 and p.p2 > p.p1
    assert 0 < p.gap < p.P_yes < 1
    assert p.P_yes == p.p1 / 4 + p.p2 * Fraction(3, 4) + p.p3 * Fraction(17, 65)
    assert P.rigidity_condition(4, p.eps, p.lam)


@pytest.mark.parametrize("kappa,lam", list(FROZEN_EPS))
def test_strict_epsilon_matches_frozen_root(kappa, lam):
    eps = P.strict_epsilon(kappa, lam)
    ref = mpmath.mpf(FROZEN_EPS[(kappa, lam)])
    rel = (ref - mpmath.mpf(eps.numerator) / eps.denominator) / ref
    assert 0 <= rel <= 2e-15
    assert P.rigidity_condition(kappa, eps, lam)
    assert not P.rigidity_condition(kappa, eps * (1 + Fraction(1, 10**13)), lam)
    assert P.strict_epsilon_closed_form(kappa, float(lam)) == pytest.approx(float(ref), rel=1e-14)


@given(st.fractions(min_value=Fraction(1, 100), max_value=Fraction(99, 100), max_denominator=100),
       st.sampled_from(["paper-strict", "demo"]))
def test_normalization_for_any_delta(delta, mode):
    p = P.derive_params(delta, 2, 2, 8, mode)
    assert p.p1 + p.p2 + p.p3 == 1
    assert p.p2 > p.p1 and 0 < p.gap < p.P_yes < 1
    assert p.Gamma == p.lam / p.eps


def test_demo_mode_uses_larger_eps(preset_params):
    demo = P.derive_params(Fraction(1, 2), 2, 2, 8, "demo")
    assert demo.eps == demo.lam / P.DEMO_GAMMA > preset_params.eps


@pytest.mark.parametrize("bad", [0, 1, Fraction(3, 2)])
def test_infeasible_delta(bad):
    with pytest.raises(InvalidParameters, match="infeasible-delta"):
        P.derive_params(bad, 2, 2, 8)


def test_strict_mode_rejects_large_eps():
    with pytest.raises(InvalidParameters):
        P.derive_params(Fraction(1, 2), 2, 2, 8, eps=Fraction(1, 1000))


def test_completeness_on_preset(preset, preset_reg, preset_params):
    assert P.run_completeness(preset_reg, preset.witness, preset_params) == preset_params.P_yes


def test_completeness_rejects_bad_assignment(preset, preset_reg, preset_params):
    bad = next(a for a in C.iter_assignments(preset.csp) if C.count_unsatisfied(preset.csp, a))
    with pytest.raises(PreconditionViolation, match="assignment-not-satisfying"):
        P.run_completeness(preset_reg, bad, preset_params)


@pytest.mark.parametrize("path", [p for p in CORPUS if "planted" in p.name][:6], ids=lambda p: p.stem)
def test_completeness_on_satisfiable_fixtures(path):
    csp = C.parse_instance(path.read_text())
    _, a = C.brute_force_value(csp)
    reg = G.regularize(csp)
    params = P.params_for(reg, Fraction(1, 2))
    op = V.build_total_op(reg, params)
    assert P.run_completeness(reg, a, params, op=op) == params.P_yes
    # any zero-violation rigid labeling reaches P_yes too
    lab = G.labeling_from_assignment(csp, a)
    assert V.acceptance(op, V.rigid_proof(csp, lab)) == params.P_yes
    assert V.acceptance(V.build_density_op(csp.R, csp.kappa), V.honest_proof(reg, a)) == Fraction(1, csp.kappa)


def test_case_audit_examples(triangle, triangle_reg, triangle_params):
    p = triangle_params
    op = V.build_total_op(triangle_reg, p)
    r = P.soundness_case_audit(V.basis_state(3, 4, 0), triangle_reg, p, op=op)
    assert r.case == 1 and r.passed and r.acceptance <= p.case13_bound
    r = P.soundness_case_audit(V.uniform_state(3, 4), triangle_reg, p, op=op)
    assert r.case == 2 and r.passed and V.density_prob(V.uniform_state(3, 4)) == 1
    _, a = C.brute_force_value(triangle)
    lab = G.labeling_from_assignment(triangle, a)
    rigid = V.rigid_proof(triangle, lab)
    r = P.soundness_case_audit(rigid, triangle_reg, p, op=op)
    assert r.case == 4 and r.passed and r.exact
    # both sides of the rigid chain, exactly
    u_s, u_e = V.labeling_counts(triangle_reg, lab)
    t = p.q * p.d * p.kappa + 1
    assert r.acceptance == p.P_yes - p.p3 * Fraction(u_s + u_e, triangle.R * t)
    assert r.acceptance <= p.P_yes - p.p3 * p.lam <= p.case4_bound


def test_case_audit_needs_sound_instance(preset, preset_reg, preset_params):
    psi = V.honest_proof(preset_reg, preset.witness)
    with pytest.raises(PreconditionViolation, match="instance-not-sound"):
        P.soundness_case_audit(psi, preset_reg, preset_params)


def test_classify_boundaries():
    assert P.classify(Fraction(1, 10), 0, Fraction(1, 10)) == 1
    assert P.classify(Fraction(-1, 10), 0, Fraction(1, 10)) == 2
    assert P.classify(0, Fraction(1, 10), Fraction(1, 10)) == 3
    assert P.classify(Fraction(1, 11), Fraction(1, 11), Fraction(1, 10)) == 4


@pytest.fixture(scope="module")
def triangle_strict_report(triangle_reg, triangle_params):
    return P.run_soundness_search(triangle_reg, triangle_params)


def test_triangle_soundness_paper_strict(triangle_strict_report, triangle_params):
    r = triangle_strict_report
    assert r.method == "exact-kkt" and r.certified and r.within_gap and r.below_p_yes
    assert r.best_value <= float(triangle_params.case4_bound)
    assert all(a.passed for a in r.audits)
    assert sum(t["count"] for t in r.case_tallies.values()) == len(r.audits)


def test_triangle_soundness_demo(triangle_reg):
    p = P.params_for(triangle_reg, Fraction(2, 3), "demo")
    r = P.run_soundness_search(triangle_reg, p)
    assert r.certified
    visible = float(p.P_yes) - r.best_value
    assert visible >= float(p.gap)


def test_sound_search_rejects_satisfiable(preset_reg, preset_params):
    with pytest.raises(PreconditionViolation):
        P.run_soundness_search(preset_reg, preset_params)


def test_negative_control_reaches_p_yes():
    csp = C.parse_instance(CORPUS[0].read_text())
    reg = G.regularize(csp)
    p = P.params_for(reg, Fraction(1, 2), "demo")
    r = P.run_soundness_search(reg, p, require_sound=False)
    assert r.best_value >= float(p.P_yes) - 1e-12
    assert not r.certified


def test_heuristic_route_above_guard(triangle_reg, triangle_params):
    r = P.run_soundness_search(triangle_reg, triangle_params, budget=8, guard=6)
    assert r.method == "projected-gradient" and not r.certified
    assert r.best_value <= float(triangle_params.case4_bound)


def _restrict(csp, rng):
    """Same scopes, each accepted set shrunk by dropping random tuples."""
    cons = tuple(C.Constraint(c.vars, frozenset(t for t in c.accepted if rng.random() < 0.6)) for c in csp.constraints)
    return C.CspSystem(csp.N, csp.sigma, csp.q, cons)


@pytest.mark.parametrize("seed", range(3))
def test_harder_instances_never_score_higher(triangle, seed):
    rng = np.random.default_rng(seed)
    harder = _restrict(triangle, rng)
    assert C.brute_force_value(harder)[0] <= C.brute_force_value(triangle)[0]
    base, hard = G.regularize(triangle), G.regularize(harder)
    p = P.params_for(base, Fraction(2, 3), "demo")
    v_base = adversary.nonneg_max_exact(V.build_total_op(base, p)).best_value
    v_hard = adversary.nonneg_max_exact(V.build_total_op(hard, p)).best_value
    assert v_hard <= v_base + 1e-12


def test_case_bound_violation_raises(triangle_reg, triangle_params):
    # a deliberately broken operator (identity) must trip the always-on check
    eye = V.from_matrix(np.eye(12, dtype=np.int64), R=3, kappa=4)
    with pytest.raises(PropertyFailure):
        P.soundness_case_audit(V.uniform_state(3, 4), triangle_reg, triangle_params, op=eye)


def test_mismatched_params(preset_reg, triangle_params, preset):
    p = P.derive_params(Fraction(1, 2), 2, 3, 8)
    with pytest.raises(InvalidParameters):
        P.run_completeness(preset_reg, preset.witness, p)
