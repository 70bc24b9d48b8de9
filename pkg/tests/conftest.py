import sys
from fractions import Fraction
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from qplus import csp as csp_mod  # noqa: E402
from qplus import protocol  # noqa: E402
from qplus.regularizer import regularize  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

FIXTURES = Path(__file__).parent / "fixtures"
CORPUS = sorted((FIXTURES / "corpus").glob("*.json"))
MAX_SOUND_WIDTH = 12


def _sound(path):
    c = csp_mod.parse_instance(path.read_text())
    return c.q * c.R <= MAX_SOUND_WIDTH and csp_mod.brute_force_value(c)[0] < 1


# unsatisfiable instances small enough to enumerate every labeling
SOUND_FIXTURES = [p for p in CORPUS + sorted((FIXTURES / "sound").glob("*.json")) if _sound(p)]


@pytest.fixture(scope="session")
def preset():
    return csp_mod.planted_preset(seed=1)


@pytest.fixture(scope="session")
def preset_reg(preset):
    return regularize(preset.csp, d=8)


@pytest.fixture(scope="session")
def preset_params():
    return protocol.derive_params(Fraction(1, 2), 2, 2, 8)


@pytest.fixture(scope="session")
def triangle():
    return csp_mod.triangle_neq()


@pytest.fixture(scope="session")
def triangle_reg(triangle):
    return regularize(triangle, d=8)


@pytest.fixture(scope="session")
def triangle_params():
    return protocol.derive_params(Fraction(2, 3), 2, 2, 8)
