import pytest

from dtn_lab.grid import build_grid


@pytest.fixture(scope="session")
def g2():
    return build_grid(2, 17)


@pytest.fixture(scope="session")
def g3():
    return build_grid(3, 17)
