import math

import numpy as np
import pytest

from ergodic_hjb import fields
from ergodic_hjb.discretize import build_grid
from ergodic_hjb.errors import ParameterError
from ergodic_hjb.model import (
    HamiltonianSpec,
    load_problem,
    other_state,
    ramp,
    ramp_envelope_constants,
    save_problem,
    truncate_hamiltonian,
    validate_assumptions,
)
from tests.conftest import make_problem


def ham(dim=2, gammas=(2.0, 2.0), drift=None, metric=None):
    drifts = (drift or fields.DriftField(dim),) * 2
    metrics = (metric or fields.identity_metric(dim),) * 2
    return HamiltonianSpec(dim=dim, gammas=gammas, metrics=metrics, drifts=drifts)


def test_other_state():
    assert other_state(1) == 2
    assert other_state(2) == 1
    with pytest.raises(ParameterError):
        other_state(0)


def test_hamiltonian_values():
    h = ham()
    x = np.zeros(2)
    assert h.value(1, x, np.array([3.0, 4.0])) == pytest.approx(12.5)
    hb = ham(drift=fields.DriftField(2, (1.0, 0.0)))
    assert hb.value(1, x, np.array([2.0, 0.0])) == pytest.approx(4.0)
    h4 = ham(dim=1, gammas=(4.0, 4.0))
    assert h4.value(1, np.zeros(1), np.array([2.0])) == pytest.approx(4.0)


def test_hamiltonian_gradient():
    h = ham()
    x = np.zeros(2)
    assert np.allclose(h.grad_p(1, x, np.array([3.0, 4.0])), [3.0, 4.0])
    h4 = ham(dim=1, gammas=(4.0, 4.0))
    assert np.allclose(h4.grad_p(1, np.zeros(1), np.array([2.0])), [8.0])


def test_gradient_matches_finite_difference(rng):
    metric = fields.constant_metric(2, [[2.0, 0.4], [0.4, 1.0]])
    h = ham(gammas=(2.5, 1.6), drift=fields.DriftField(2, (0.3, -0.2)), metric=metric)
    x = np.array([0.5, -0.8])
    for k in (1, 2):
        for _ in range(20):
            p = rng.uniform(-3, 3, size=2)
            step = 1e-5
            fd = np.empty(2)
            for j in range(2):
                e = np.zeros(2)
                e[j] = step
                fd[j] = (h.value(k, x, p + e) - h.value(k, x, p - e)) / (2 * step)
            scale = 1.0 + np.linalg.norm(h.grad_p(k, x, p))
            assert np.allclose(h.grad_p(k, x, p), fd, atol=1e-6 * scale)


def test_gradient_at_zero_momentum_subquadratic():
    b = fields.DriftField(1, (0.7,))
    h = ham(dim=1, gammas=(1.5, 1.5), drift=b)
    assert np.allclose(h.grad_p(1, np.zeros(1), np.zeros(1)), [0.7])


def test_lagrangian_values():
    h = ham()
    x = np.zeros(2)
    assert h.lagrangian(1, x, np.array([3.0, 4.0])) == pytest.approx(12.5)
    h4 = ham(dim=1, gammas=(4.0, 4.0))
    assert h4.lagrangian(1, np.zeros(1), np.array([1.0])) == pytest.approx(0.75)
    hb = ham(drift=fields.DriftField(2, (1.0, 0.0)))
    assert hb.lagrangian(1, x, np.array([1.0, 0.0])) == pytest.approx(0.0)


def test_duality_gap_quartic():
    h4 = ham(dim=1, gammas=(4.0, 4.0))
    gap = h4.duality_gap(1, np.zeros(1), np.array([2.0]))
    assert abs(gap) < 1e-12


def test_duality_gap_random_sweep(rng):
    for _ in range(40):
        dim = int(rng.integers(1, 3))
        g1, g2 = rng.uniform(1.2, 4.0, size=2)
        diag = rng.uniform(0.5, 2.0, size=dim)
        metric = fields.constant_metric(dim, np.diag(diag))
        drift = fields.DriftField(dim, tuple(rng.uniform(-1, 1, size=dim)))
        h = ham(dim=dim, gammas=(g1, g2), drift=drift, metric=metric)
        x = rng.uniform(-2, 2, size=dim)
        for k in (1, 2):
            for _ in range(25):
                p = rng.uniform(-4, 4, size=dim)
                gap = h.duality_gap(k, x, p)
                assert abs(gap) <= 1e-9 * (1.0 + abs(h.value(k, x, p)))


def test_fenchel_young_inequality(rng):
    h = ham(dim=2, gammas=(2.0, 1.7), drift=fields.DriftField(2, (0.2, 0.1)))
    x = np.array([0.4, -1.0])
    for k in (1, 2):
        for _ in range(50):
            p = rng.uniform(-3, 3, size=2)
            xi = rng.uniform(-5, 5, size=2)
            lhs = h.lagrangian(k, x, xi)
            rhs = np.dot(p, xi) - h.value(k, x, p)
            assert lhs >= rhs - 1e-9


def test_growth_envelope(rng):
    h = ham(dim=1, gammas=(3.0, 1.5), drift=fields.DriftField(1, (0.4,)))
    x_samples = rng.uniform(-3, 3, size=(20, 1))
    p_samples = np.array([[m * s] for m in [0.0, 0.3, 1.0, 2.0, 5.0] for s in (-1, 1)])
    for k in (1, 2):
        c1 = h.growth_constant(k, x_samples, p_samples)
        g = h.gamma(k)
        for p in p_samples:
            vals = h.value_raw(k, x_samples, np.broadcast_to(p, x_samples.shape))
            pg = np.linalg.norm(p) ** g
            assert np.all(vals <= c1 * (pg + 1.0) + 1e-9)
            assert np.all(vals >= pg / c1 - c1 - 1e-9)


def test_ramp_identity_below_level():
    assert ramp(5.0, level=10.0, gamma=4.0) == 5.0
    assert ramp(-3.0, level=10.0, gamma=4.0) == -3.0


def test_ramp_explicit_value():
    # level 1, gamma 4, v 17: 1 - 2 + 2*sqrt(17)
    assert ramp(17.0, level=1.0, gamma=4.0) == pytest.approx(-1.0 + 2.0 * math.sqrt(17.0))


def test_ramp_monotone_and_dominated():
    xs = np.linspace(-1.0, 100.0, 2000)
    vals = ramp(xs, level=10.0, gamma=4.0)
    assert np.all(np.diff(vals) >= -1e-12)
    assert np.all(vals <= xs + 1e-12)
    eta1, eta2 = ramp_envelope_constants(4.0, floor=1.0)
    assert np.all(vals >= eta1 * np.maximum(xs, 0.0) ** 0.5 - eta2 - 1e-9)


def test_truncated_hamiltonian_chain_rule():
    h4 = truncate_hamiltonian(ham(dim=1, gammas=(4.0, 4.0)), level=2.0)
    x = np.zeros(1)
    p = np.array([2.5])
    step = 1e-6
    fd = (h4.value(1, x, p + step) - h4.value(1, x, p - step)) / (2 * step)
    assert h4.grad_p(1, x, p)[0] == pytest.approx(fd, rel=1e-5)
    assert h4.value(1, x, p) < h4.value_raw(1, x, p)
    with pytest.raises(ParameterError):
        h4.duality_gap(1, x, p)


def test_truncation_identity_for_subquadratic():
    h2 = ham(dim=1, gammas=(2.0, 2.0))
    assert truncate_hamiltonian(h2, level=5.0) is h2
    with pytest.raises(ParameterError):
        truncate_hamiltonian(ham(dim=1, gammas=(4.0, 4.0)), level=0.0)


def test_validate_assumptions_constant_rates(quadratic_1d):
    box = build_grid(1, 6.0, 0.1)
    report = validate_assumptions(quadratic_1d, box)
    assert report.upsilon_alpha == pytest.approx(1.0)
    assert report.passed
    assert all(report.coercive.values())


def test_validate_assumptions_c2_quadratic(quadratic_1d):
    box = build_grid(1, 6.0, 0.05)
    report = validate_assumptions(quadratic_1d, box)
    # max of 2|x| / (1 + |x|^3) is ~1.06, attained near x = 2^(-1/3)
    assert 1.0 <= report.source_c2["1"] <= 1.1
    assert report.source_c2["1"] <= 2.0


def test_validate_assumptions_trig_source():
    # exponents satisfying (beta1 + 2 beta2 - 1) * gamma / (2 gamma - 1) <= beta1
    f = fields.trig_power(1, beta1=2.0, beta2=0.5)
    problem = make_problem(sources=(f, f))
    box = build_grid(1, 6.0, 0.05)
    report = validate_assumptions(problem, box)
    assert report.passed
    assert all(report.coercive.values())
    assert max(float(v) for v in report.source_c2.values()) < 10.0


def test_validate_assumptions_flags_declared_violation(quadratic_1d):
    box = build_grid(1, 4.0, 0.1)
    report = validate_assumptions(quadratic_1d, box, declared={"c2": 0.5})
    assert not report.passed
    assert any(v["check"] == "source_gradient_growth" for v in report.violations)


def test_problem_roundtrip(tmp_path):
    metric = fields.constant_metric(2, [[1.5, 0.2], [0.2, 1.0]])
    problem = make_problem(
        dim=2, gammas=(2.0, 3.0),
        sources=(fields.quadratic(2), fields.trig_power(2, 2.0, 0.5)),
        drifts=(fields.DriftField(2, (0.1, -0.3)), fields.DriftField(2)),
        metrics=(metric, fields.identity_metric(2)),
    )
    path = tmp_path / "problem.json"
    save_problem(problem, path)
    assert load_problem(path) == problem
