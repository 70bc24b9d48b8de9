import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import SOUND_FIXTURES
from oracles import simulate_constraint_tests
from qplus import csp as C
from qplus import regularizer as G
from qplus import verifier as V
from qplus.errors import InvalidParameters


def random_labeling(csp, rng):
    return tuple(tuple(int(x) for x in rng.integers(0, csp.sigma, csp.q)) for _ in range(csp.R))


@pytest.fixture(scope="module")
def preset_ops(preset_reg):
    return V.operator_suite(preset_reg)


# --- states -------------------------------------------------------------------------


def test_honest_proof_shape(preset):
    psi = V.honest_proof(preset.csp, preset.witness)
    assert psi.exact and psi.nonnegative
    assert np.count_nonzero(psi.amplitudes) == 6
    assert np.allclose(psi.amplitudes[psi.amplitudes > 0] ** 2, 1 / 6)
    assert psi.l1() == pytest.approx(math.sqrt(6))


def test_rigidity_constants_on_honest_proof(preset):
    psi = V.honest_proof(preset.csp, preset.witness)
    assert V.density_prob(psi) == Fraction(1, 4)
    assert V.validity_prob(psi) == Fraction(3, 4)


def test_density_examples():
    assert V.density_prob(V.uniform_state(3, 4)) == 1
    # Hadamard-basis vector orthogonal to |+>
    u = [(-1) ** bin(i).count("1") for i in range(8)]
    assert V.density_prob(V.ProofState.from_direction(u, 2, 4)) == 0


def test_validity_zero_when_every_register_is_plus():
    psi = V.uniform_state(5, 4)
    assert V.validity_prob(psi) == 0


def test_float_and_exact_paths_agree(preset):
    rng = np.random.default_rng(0)
    u = [Fraction(int(x)) for x in rng.integers(0, 9, 24)]
    ex = V.ProofState.from_direction(u, 6, 4)
    fl = V.ProofState.from_amplitudes(np.array([float(x) for x in u]), 6, 4)
    assert float(V.density_prob(ex)) == pytest.approx(V.density_prob(fl), abs=1e-12)
    assert float(V.validity_prob(ex)) == pytest.approx(V.validity_prob(fl), abs=1e-12)


def test_state_errors():
    with pytest.raises(InvalidParameters):
        V.ProofState.from_direction([0, 0], 1, 2)
    with pytest.raises(InvalidParameters):
        V.ProofState.from_amplitudes(np.array([0.5, 0.5]), 1, 2, normalize=False)


# --- operators ------------------------------------------------------------------------


def test_operator_suite_is_psd_contractions(preset_ops):
    for op in preset_ops.values():
        lo, hi = op.check_spectrum()
        assert lo >= -1e-9 and hi <= 1 + 1e-9
        assert np.array_equal(op.matrix, op.matrix.T)
        assert all(isinstance(x, Fraction) for x in op.matrix.ravel())


def test_satisfiability_examples(preset, preset_reg, preset_ops):
    sat = preset_ops["satisfiability"]
    assert V.acceptance(sat, V.honest_proof(preset_reg, preset.witness)) == 1
    csp = preset.csp
    lab = list(G.labeling_from_assignment(csp, preset.witness))
    # break constraint 0 by picking a rejected tuple
    rejected = [t for t in map(csp.decode_color, range(csp.kappa)) if t not in csp.constraints[0].accepted]
    lab[0] = rejected[0]
    assert V.acceptance(sat, V.rigid_proof(csp, lab)) == Fraction(5, 6)
    bad = [j * csp.kappa + x for j in range(csp.R) for x in range(csp.kappa) if not csp.accept_table[j, x]]
    u = [1 if i in bad else 0 for i in range(csp.R * csp.kappa)]
    assert V.acceptance(sat, V.ProofState.from_direction(u, csp.R, csp.kappa)) == 0


def test_consistency_on_honest_proof(preset, preset_reg, preset_ops):
    psi = V.honest_proof(preset_reg, preset.witness)
    for k in range(preset_reg.d):
        assert V.acceptance(preset_ops[f"consistency_{k}"], psi) == Fraction(1, 4)


def test_consistency_average_on_rigid_proofs(preset_reg, preset_ops):
    csp, d = preset_reg.csp, preset_reg.d
    rng = np.random.default_rng(3)
    for _ in range(20):
        lab = random_labeling(csp, rng)
        psi = V.rigid_proof(csp, lab)
        _, u_e = V.labeling_counts(preset_reg, lab)
        avg = sum(V.acceptance(preset_ops[f"consistency_{k}"], psi) for k in range(d)) / d
        assert avg == Fraction(1, csp.kappa) * (1 - Fraction(u_e, csp.q * d * csp.R))


def test_consistency_kills_states_outside_plus_subspace(preset_reg, preset_ops):
    # every per-position value marginal of each block vanishes, so P A' annihilates it
    u = [1, -1, -1, 1] * preset_reg.csp.R
    psi = V.ProofState.from_direction(u, preset_reg.csp.R, 4)
    for k in range(preset_reg.d):
        assert V.acceptance(preset_ops[f"consistency_{k}"], psi) == 0


def test_constraint_formula_against_simulation(preset_reg, preset_ops):
    csp = preset_reg.csp
    rng = np.random.default_rng(11)
    for _ in range(10):
        lab = random_labeling(csp, rng)
        psi = V.rigid_proof(csp, lab)
        measured = V.acceptance(preset_ops["constraint_mix"], psi)
        assert measured == V.rigid_constraint_value(preset_reg, lab)
        assert measured == simulate_constraint_tests(csp, preset_reg.d, preset_reg.lifted, lab)


@pytest.mark.parametrize("which", ["preset", "triangle"])
def test_expanded_route_matches(which, preset_reg, triangle_reg):
    reg = preset_reg if which == "preset" else triangle_reg
    ops = V.expanded_operators(reg)
    A = ops["A"]
    assert np.allclose(A.T @ A, np.eye(A.shape[1]))
    for k in range(reg.d):
        assert np.allclose(V.expanded_consistency(reg, k, ops), V.build_consistency_op(reg, k).dense, atol=1e-12)
    assert np.allclose(V.expanded_satisfiability(reg, ops), V.build_satisfiability_op(reg).dense)


def test_total_op_requires_normalization(preset_reg, preset_params):
    class Bad:
        p1, p2, p3 = Fraction(1, 2), Fraction(1, 2), Fraction(1, 10)

    with pytest.raises(InvalidParameters, match="probabilities-not-normalized"):
        V.build_total_op(preset_reg, Bad())
    op = V.build_total_op(preset_reg, preset_params)
    rng = np.random.default_rng(1)
    for _ in range(20):
        z = rng.normal(size=24) + 1j * rng.normal(size=24)
        assert 0 <= V.acceptance(op, V.ProofState.from_amplitudes(z, 6, 4)) <= 1


def test_acceptance_identity_and_mismatch():
    eye = V.from_matrix(np.eye(4, dtype=np.int64), R=1)
    psi = V.ProofState.from_amplitudes(np.array([1, 2, 3, 4.0]), 1, 4)
    assert V.acceptance(eye, psi) == pytest.approx(1)
    with pytest.raises(InvalidParameters, match="dimension mismatch"):
        V.acceptance(eye, V.uniform_state(1, 2))


def test_dump_load_roundtrip(preset_ops, preset, preset_reg):
    op = preset_ops["constraint_mix"]
    back = V.load_operator(V.dump_operator(op))
    assert np.array_equal(back.matrix, op.matrix)
    psi = V.honest_proof(preset_reg, preset.witness)
    assert V.acceptance(back, psi) == V.acceptance(op, psi)
    with pytest.raises(InvalidParameters):
        V.load_operator('{"matrix": [[[1, 2]], [[1, 2]]]}')


# --- nearest valid state -----------------------------------------------------------------


def test_nearest_valid_honest(preset, preset_reg):
    psi = V.honest_proof(preset_reg, preset.witness)
    nv = V.nearest_valid_state(psi)
    assert nv.labeling(preset.csp) == G.labeling_from_assignment(preset.csp, preset.witness)
    assert nv.gamma == 1
    assert nv.phi.direction == psi.direction


def test_nearest_valid_uniform_breaks_ties_low():
    nv = V.nearest_valid_state(V.uniform_state(3, 4))
    assert nv.sigma == (0, 0, 0) and nv.gamma == Fraction(1, 4)


def test_nearest_valid_rejects_signed_states():
    with pytest.raises(InvalidParameters):
        V.nearest_valid_state(V.ProofState.from_direction([1, -1], 1, 2))


nonneg_blocks = st.tuples(st.sampled_from([(1, 2), (2, 2), (3, 4), (2, 8)]), st.integers(0, 2**32 - 1))


def _nonneg(shape, seed, sparse=False):
    R, k = shape
    rng = np.random.default_rng(seed)
    x = rng.random(R * k) ** rng.uniform(0.5, 6)
    if sparse:
        x[rng.random(R * k) < 0.5] = 0
        x[0] += 1e-3
    return V.ProofState.from_amplitudes(x, R, k)


@given(nonneg_blocks)
def test_gamma_equals_overlap(args):
    psi = _nonneg(*args)
    nv = V.nearest_valid_state(psi)
    assert V.overlap2(psi, nv.phi) == pytest.approx(nv.gamma, abs=1e-12)


@given(nonneg_blocks)
def test_gamma_lower_bound_from_validity(args):
    psi = _nonneg(*args)
    k = psi.kappa
    d = k * (1 - V.validity_prob(psi)) - 1  # V = 1 - (1 + d)/k
    assert V.nearest_valid_state(psi).gamma >= 1 - d - 1e-12


@given(nonneg_blocks)
def test_validity_upper_bound(args):
    psi = _nonneg(*args)
    assert V.validity_prob(psi) <= 1 - 1 / psi.kappa + 1e-12


@settings(max_examples=40)
@given(st.integers(0, 2**32 - 1), st.sampled_from([(1, 2), (2, 4), (3, 4)]))
def test_density_plus_validity(seed, shape):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=shape[0] * shape[1]) + 1j * rng.normal(size=shape[0] * shape[1])
    psi = V.ProofState.from_amplitudes(z, *shape)
    assert V.density_prob(psi) + V.validity_prob(psi) <= 1 + 1e-12


@given(nonneg_blocks, st.booleans())
def test_rigidity_lemma(args, sparse):
    psi = _nonneg(*args, sparse=sparse)
    k = psi.kappa
    d1 = 1 / k - V.density_prob(psi)
    d2 = 1 - 1 / k - V.validity_prob(psi)
    chi = V.nearest_valid_state(psi).chi
    assert V.overlap2(chi, psi) >= 1 - k * d1 - (k + 1) * math.sqrt(k * max(d2, 0)) - 1e-9


@pytest.mark.parametrize("path", SOUND_FIXTURES[:4], ids=lambda p: p.stem)
def test_faillabeling_on_rigid_and_perturbed_states(path):
    csp = C.parse_instance(path.read_text())
    val = C.brute_force_value(csp)[0]
    reg = G.regularize(csp)
    op = V.build_constraint_op(reg)
    t = csp.q * reg.d * csp.kappa + 1
    cy = V.c_yes(csp.q, reg.d, csp.kappa)
    rng = np.random.default_rng(5)
    k = csp.kappa
    for _ in range(20):
        lab = random_labeling(csp, rng)
        rigid = V.rigid_proof(csp, lab)
        assert V.acceptance(op, rigid) <= cy - (1 - val) / t
        x = rigid.amplitudes + rng.random(rigid.dim) * 10 ** rng.uniform(-4, -1)
        psi = V.ProofState.from_amplitudes(x, csp.R, k)
        d1 = 1 / k - V.density_prob(psi)
        d2 = 1 - 1 / k - V.validity_prob(psi)
        slack = math.sqrt(max(k * d1 + (k + 1) * math.sqrt(k * max(d2, 0)), 0))
        assert V.acceptance(op, psi) <= float(cy - (1 - val) / t) + slack + 1e-9


def test_loaded_total_operator_keeps_float_view(triangle_reg, triangle_params):
    # the total operator has a huge common denominator; loading it back must still work
    op = V.build_total_op(triangle_reg, triangle_params)
    back = V.load_operator(V.dump_operator(op))
    assert np.allclose(back.dense, op.dense, rtol=0, atol=1e-15)
    psi = V.uniform_state(3, 4)
    assert V.acceptance(back, psi) == V.acceptance(op, psi)
