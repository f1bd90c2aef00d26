import logging
import pathlib

import pytest

from mop_kernel.ensemble import validate
from mop_kernel.ensemble.config_file import parse_config_file
from mop_kernel.kernel import build_bundle
from mop_kernel.mops import MopSystem


TEST_DIR = pathlib.Path(__file__).parent

GAUSSIAN = (0.0, 0.0, 0.5)
QUARTIC = (0.0, 0.0, 0.0, 0.0, 1.0)


@pytest.fixture(autouse=True)
def logging_setup(caplog):
    caplog.set_level(logging.DEBUG)


@pytest.fixture
def scalar_config_file():
    return TEST_DIR.joinpath("scalar").joinpath("config.json")


@pytest.fixture
def two_eigenvalue_config_file():
    return TEST_DIR.joinpath("two-eigenvalues").joinpath("config.json")


@pytest.fixture
def three_eigenvalue_config_file():
    return TEST_DIR.joinpath("three-eigenvalues").joinpath("config.json")


@pytest.fixture
def quartic_config_file():
    return TEST_DIR.joinpath("quartic").joinpath("config.yml")


@pytest.fixture
def asymmetric_config_file():
    return TEST_DIR.joinpath("asymmetric").joinpath("config.json")


@pytest.fixture
def pair_config():
    """a = -1, 1 with multiplicity one each."""
    return validate(GAUSSIAN, [(-1.0, 1), (1.0, 1)])


@pytest.fixture
def pair_system(pair_config):
    return MopSystem(pair_config)


@pytest.fixture
def two_two_system():
    return MopSystem(validate(GAUSSIAN, [(-1.0, 2), (1.0, 2)]))


@pytest.fixture
def two_two_bundle(two_two_system):
    return build_bundle(two_two_system)


@pytest.fixture
def quartic_system():
    return MopSystem(validate(QUARTIC, [(-0.5, 1), (0.5, 1)]))


@pytest.fixture
def eight_point_config_file():
    return TEST_DIR.joinpath("eight-points").joinpath("config.json")


@pytest.fixture
def quartic_two_two_config_file():
    return TEST_DIR.joinpath("quartic-two-two").joinpath("config.yml")


@pytest.fixture
def one_two_config_file():
    return TEST_DIR.joinpath("one-two").joinpath("config.json")


@pytest.fixture
def quartic_three_config_file():
    return TEST_DIR.joinpath("quartic-three").joinpath("config.yml")


@pytest.fixture
def quartic_two_two_system(quartic_two_two_config_file):
    return MopSystem(parse_config_file(quartic_two_two_config_file))
