import numpy as np
import pytest

from ergodic_hjb import fields
from ergodic_hjb.model import HamiltonianSpec, ProblemSpec


def make_problem(dim=1, gammas=(2.0, 2.0), alphas=(1.0, 1.0), sources=None,
                 drifts=None, metrics=None):
    if sources is None:
        sources = (fields.quadratic(dim), fields.quadratic(dim))
    if drifts is None:
        drifts = (fields.DriftField(dim), fields.DriftField(dim))
    if metrics is None:
        metrics = (fields.identity_metric(dim), fields.identity_metric(dim))
    ham = HamiltonianSpec(dim=dim, gammas=gammas, metrics=metrics, drifts=drifts)
    return ProblemSpec(
        dimension=dim,
        hamiltonian=ham,
        switch_rates=(fields.constant(dim, alphas[0]), fields.constant(dim, alphas[1])),
        sources=tuple(sources),
    )


@pytest.fixture
def quadratic_1d():
    """Symmetric benchmark: N=1, gamma=2, a=1, b=0, alpha=1, f=x^2 (eigenvalue sqrt(2))."""
    return make_problem()


@pytest.fixture
def quadratic_2d():
    return make_problem(dim=2)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
