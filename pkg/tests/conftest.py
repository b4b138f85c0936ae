import numpy as np
import pytest

from oe_forge import fixture


@pytest.fixture(scope="session")
def standard_sets():
    """Standard fixture sets, generated once per test session."""
    return fixture.generate_fixture(fixture.standard_spec())


@pytest.fixture(scope="session")
def tiny_spec():
    """Small, fast variant of the standard generator spec for CLI tests."""
    spec = fixture.standard_spec(seed=999)
    spec["class_names"] = ["lupine", "madrone", "nettle"]
    spec["counts"] = {"train": 40, "val": 20, "test": 20}
    spec["near_ood"]["per_class"] = 10
    spec["far_ood"]["per_class"] = 10
    spec["candidates_near"]["per_class"] = 30
    spec["candidates_far"]["per_class"] = 30
    return spec


@pytest.fixture(scope="session")
def tiny_fixture_dir(tiny_spec, tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny_fixture")
    fixture.write_fixture(tiny_spec, out)
    return out


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
