import numpy as np
import pytest

from polychan import DensityOperator, SystemLayout, make_rng


@pytest.fixture
def rng():
    return make_rng(1234)


def random_density(d: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    """Random full(ish)-rank density matrix from a Gaussian purification."""
    rank = rank or d
    g = rng.standard_normal((d, rank)) + 1j * rng.standard_normal((d, rank))
    m = g @ g.conj().T
    return m / np.trace(m).real


def random_density_operator(dims, rng: np.random.Generator) -> DensityOperator:
    layout = SystemLayout(dims)
    return DensityOperator(random_density(layout.total_dim, rng), layout)
