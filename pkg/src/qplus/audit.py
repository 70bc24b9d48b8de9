"""Sampled inequality suites for the rigidity lemmas and the relaxation bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import adversary
from .verifier import ProofState, density_prob, nearest_valid_state, overlap2, validity_prob

TOL = 1e-9
SHAPES = ((1, 2), (2, 2), (3, 4), (4, 4), (6, 4), (2, 8), (5, 9))
MAX_RELAXATION_SAMPLES = 100


@dataclass
class SuiteResult:
    name: str
    samples: int
    passed: bool
    worst_margin: float

    def __post_init__(self):
        self.passed = bool(self.passed)
        self.worst_margin = float(self.worst_margin)

    def as_dict(self) -> dict:
        return {"name": self.name, "samples": self.samples, "passed": self.passed,
                "worst_margin": self.worst_margin}


def _shape(rng) -> tuple[int, int]:
    return SHAPES[int(rng.integers(len(SHAPES)))]


def random_nonneg_state(rng, R: int, kappa: int, near_rigid: bool = False) -> ProofState:
    if near_rigid:
        x = np.zeros((R, kappa))
        x[np.arange(R), rng.integers(0, kappa, R)] = 1.0
        x = x.reshape(-1) + rng.random(R * kappa) * 10 ** rng.uniform(-6, -1)
    else:
        x = rng.random(R * kappa) ** rng.uniform(0.5, 8)
    return ProofState.from_amplitudes(x, R, kappa)


def random_complex_state(rng, R: int, kappa: int) -> ProofState:
    z = rng.normal(size=R * kappa) + 1j * rng.normal(size=R * kappa)
    return ProofState.from_amplitudes(z, R, kappa)


def suite_validity_upper_bound(samples: int, rng) -> SuiteResult:
    worst = math.inf
    for _ in range(samples):
        R, k = _shape(rng)
        psi = random_nonneg_state(rng, R, k)
        worst = min(worst, (1 - 1 / k) - validity_prob(psi))
    return SuiteResult("validity_upper_bound", samples, worst >= -1e-12, worst)


def suite_density_validity(samples: int, rng) -> SuiteResult:
    worst = math.inf
    for _ in range(samples):
        R, k = _shape(rng)
        psi = random_complex_state(rng, R, k)
        worst = min(worst, 1 - density_prob(psi) - validity_prob(psi))
    return SuiteResult("density_validity", samples, worst >= -1e-12, worst)


def suite_preserv(samples: int, rng, corrupt: bool = False) -> SuiteResult:
    """|<1|P|1> - <2|P|2>| <= sqrt(1 - |<1|2>|^2) for contractions P."""
    worst = math.inf
    for _ in range(samples):
        n = int(rng.integers(2, 13))
        P = adversary.random_psd_contraction(n, rng)
        if corrupt:
            P = P * 50.0
        a = rng.normal(size=n) + 1j * rng.normal(size=n)
        a /= np.linalg.norm(a)
        b = a + rng.uniform(0.01, 1.0) * (rng.normal(size=n) + 1j * rng.normal(size=n))
        b /= np.linalg.norm(b)
        d = 1 - abs(np.vdot(a, b)) ** 2
        diff = abs(np.real(np.vdot(a, P @ a)) - np.real(np.vdot(b, P @ b)))
        worst = min(worst, math.sqrt(max(d, 0.0)) - diff)
    return SuiteResult("preserv", samples, worst >= -TOL, worst)


def rigidity_margin(psi: ProofState) -> float:
    k = psi.kappa
    d1 = 1 / k - density_prob(psi)
    d2 = 1 - 1 / k - validity_prob(psi)
    chi = nearest_valid_state(psi).chi
    bound = 1 - k * d1 - (k + 1) * math.sqrt(k * max(d2, 0.0))
    return overlap2(chi, psi) - bound


def suite_rigidity(samples: int, rng) -> SuiteResult:
    worst = math.inf
    for i in range(samples):
        R, k = _shape(rng)
        worst = min(worst, rigidity_margin(random_nonneg_state(rng, R, k, near_rigid=i % 2 == 0)))
    return SuiteResult("rigidity", samples, worst >= -TOL, worst)


def suite_max_of_reals() -> SuiteResult:
    v1, v2 = adversary.tensor_counterexample()
    margin = v2 - v1 * v1
    return SuiteResult("max_of_reals", 1, margin > 0 and abs(v1 - 1 / math.sqrt(2)) <= TOL, margin)


def suite_qmaplus_nearly_qma(samples: int, rng) -> SuiteResult:
    worst = math.inf
    count = min(samples, MAX_RELAXATION_SAMPLES)
    for _ in range(count):
        P = adversary.random_psd_contraction(int(rng.integers(2, 11)), rng)
        s_plus = adversary.nonneg_max_exact(P, warm_start=False).best_value
        lam = float(np.linalg.eigvalsh(P)[-1])
        worst = min(worst, 2 * s_plus - lam, 4 * s_plus - lam)
    return SuiteResult("qmaplus_nearly_qma", count, worst >= -TOL, worst)


def run_lemma_audit(samples: int = 1000, seed: int = 0, corrupt: bool = False) -> list[SuiteResult]:
    """All six suites, each with an independent child seed."""
    if samples < 1:
        raise ValueError("samples must be at least 1")
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(5)]
    return [
        suite_validity_upper_bound(samples, rngs[0]),
        suite_density_validity(samples, rngs[1]),
        suite_preserv(samples, rngs[2], corrupt=corrupt),
        suite_rigidity(samples, rngs[3]),
        suite_max_of_reals(),
        suite_qmaplus_nearly_qma(samples, rngs[4]),
    ]
