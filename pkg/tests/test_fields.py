import numpy as np
import pytest

from ergodic_hjb import fields
from ergodic_hjb.errors import CoefficientError, ParameterError


def central_diff(field, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (field(x + e) - field(x - e)) / (2 * h)
    return g


@pytest.mark.parametrize("field,points", [
    (fields.constant(1, 3.0), [[0.3], [-1.2]]),
    (fields.quadratic(2, weights=(1.0, 2.5), c0=0.7), [[0.4, -0.9], [1.3, 0.2]]),
    (fields.power_radial(2, c=1.5, exponent=2.5), [[0.6, 0.8], [-1.1, 0.3]]),
    (fields.trig_power(1, beta1=2.0, beta2=0.5), [[0.9], [-2.2]]),
    (fields.trig_power(2, beta1=2.0, beta2=0.5), [[1.4, -0.6]]),
])
def test_gradient_matches_central_difference(field, points):
    for x in points:
        x = np.asarray(x)
        assert np.allclose(field.gradient(x), central_diff(field, x), rtol=1e-6, atol=1e-6)


def test_evaluation_is_finite_on_box():
    f = fields.trig_power(2, beta1=2.0, beta2=0.5)
    x = np.random.default_rng(0).uniform(-6, 6, size=(500, 2))
    assert np.all(np.isfinite(f(x)))
    assert np.all(np.isfinite(f.gradient(x)))


def test_quadratic_values():
    f = fields.quadratic(1)
    assert f(np.array([3.0])) == 9.0
    assert np.allclose(f.gradient(np.array([3.0])), [6.0])


def test_scaled_and_shifted():
    f = fields.quadratic(1)
    assert f.scaled(4.0)(np.array([2.0])) == 16.0
    assert f.shifted(5.0)(np.array([2.0])) == 9.0
    trig = fields.trig_power(1, 2.0, 0.5)
    x = np.array([1.3])
    assert trig.shifted(2.0)(x) == pytest.approx(trig(x) + 2.0)
    assert np.allclose(trig.shifted(2.0).gradient(x), trig.gradient(x))
    # scaling acts on the whole field, offset included
    assert trig.shifted(2.0).scaled(3.0)(x) == pytest.approx(3.0 * (trig(x) + 2.0))


def test_gradient_vanishes_at_origin_for_radial_forms():
    origin = np.zeros(2)
    assert np.allclose(fields.power_radial(2, 1.0, 2.5).gradient(origin), 0.0)
    assert np.allclose(fields.trig_power(2, 2.0, 0.5).gradient(origin), 0.0)


def test_metric_validation():
    fields.constant_metric(2, [[2.0, 0.5], [0.5, 1.0]])
    with pytest.raises(CoefficientError):
        fields.constant_metric(2, [[1.0, 2.0], [2.0, 1.0]])  # indefinite
    with pytest.raises(CoefficientError):
        fields.constant_metric(2, [[1.0, 0.3], [0.0, 1.0]])  # asymmetric


def test_metric_inverse_and_bounds():
    m = fields.constant_metric(2, [[2.0, 0.0], [0.0, 0.5]])
    x = np.zeros(2)
    assert np.allclose(m(x) @ m.inverse(x), np.eye(2))
    assert m.eig_bounds() == (0.5, 2.0)


def test_drift_field():
    b = fields.DriftField(2, (1.0, -0.5))
    out = b(np.zeros((3, 2)))
    assert out.shape == (3, 2)
    assert np.allclose(out, [1.0, -0.5])
    assert fields.DriftField(2).is_zero


@pytest.mark.parametrize("field", [
    fields.constant(1, 2.0),
    fields.quadratic(2, weights=(1.0, 3.0), c0=-1.0),
    fields.power_radial(1, c=0.5, exponent=3.0),
    fields.trig_power(2, beta1=2.5, beta2=0.4, c=1.2),
])
def test_coefficient_roundtrip(field):
    assert fields.CoefficientField.from_dict(field.to_dict(), field.dim) == field


def test_invalid_forms_rejected():
    with pytest.raises(ParameterError):
        fields.CoefficientField("mystery", 1)
    with pytest.raises(ParameterError):
        fields.power_radial(1, 1.0, exponent=0.5)
    with pytest.raises(ParameterError):
        fields.quadratic(2, weights=(1.0,))
