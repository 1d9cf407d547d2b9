import numpy as np
import pytest

from rubyvmc.lattice import build_lattice, enumerate_states


@pytest.fixture(scope="session")
def torus22():
    return build_lattice(2, 2)


@pytest.fixture(scope="session")
def all_states22(torus22):
    return enumerate_states(torus22.n_tri)


@pytest.fixture(scope="session")
def dimer_cover22(torus22):
    """One configuration with exactly one excitation per vertex, found by
    brute-force search over the full 2x2 basis."""
    from rubyvmc.lattice import parity_charges

    states = enumerate_states(torus22.n_tri)
    charges = parity_charges(torus22, states)
    covers = states[(charges == -1).all(axis=1)]
    assert len(covers) > 0
    return covers[0]


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
