"""
Test the system model interface, shock points and structural checks
"""
import sys
import os

import numpy as np
import pytest

# Add parent directory to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from evanscope.errors import CharacteristicShockError, ConfigError, ModelDomainError
from evanscope.model import (
    PlanarShockPoint,
    compressive_indices,
    default_samples,
    finite_difference_da,
    structural_checks,
)
from evanscope.systems import cubic_uc, get_model, nc_coupled, reference_shock


def test_burgers_structural_margins():
    """Scalar Burgers has unit parabolicity and dissipativity margins"""
    model = get_model("burgers")
    report = structural_checks(model, *default_samples(model))
    data = report.to_dict()

    assert data["hyperbolicityOK"] is True
    assert data["parabolicityMargin"] == pytest.approx(1.0)
    assert data["dissipativityMargin"] == pytest.approx(1.0)
    assert data["dissipativityOK"] is True
    assert data["h0Violations"] == []


def test_rotation_model_not_hyperbolic():
    """A rotation generator has purely imaginary characteristic speeds"""
    model = get_model("rotation")
    report = structural_checks(model, *default_samples(model))

    assert not report.hyperbolicity_ok, "rotation must fail hyperbolicity"
    assert abs(report.worst_hyperbolic["eigenvalue"]["im"]) == pytest.approx(1.0)
    assert not report.dissipativity_ok, "no dissipativity margin for a rotation"


def test_structural_checks_reject_empty_samples():
    model = get_model("burgers")
    with pytest.raises(ValueError):
        structural_checks(model, [], [np.array([1.0])])


def test_finite_difference_matches_analytic_derivative():
    """Central differences agree with the hand-written dA_j/du"""
    model = nc_coupled()
    u = np.array([0.3, -0.4])
    assert np.allclose(finite_difference_da(model, 1, u), model.da(1, u), atol=1e-7)
    cubic = cubic_uc()
    v = np.array([0.2, 0.1])
    for j in (0, 1):
        assert np.allclose(finite_difference_da(cubic, j, v), cubic.da(j, v), atol=1e-6), f"dA_{j} mismatch"


def test_domain_error_outside_hint():
    model = get_model("burgers")
    with pytest.raises(ModelDomainError):
        model.a(1, np.array([5.0]))


def test_compressive_indices_lax_and_undercompressive():
    """Burgers is a Lax shock (k = 0); the cubic reference shock is undercompressive (k = 1)"""
    burgers = get_model("burgers")
    q = PlanarShockPoint([-1.0], [1.0], 0.0)
    assert compressive_indices(burgers, q) == (1, 1, 0)

    cubic = cubic_uc()
    q_uc = PlanarShockPoint([0.5, 0.0], [-1.5, 0.0], 1.75)
    assert compressive_indices(cubic, q_uc) == (1, 1, 1)
    assert reference_shock("cubic-uc").shock.indices == (1, 1, 1)


def test_characteristic_shock_rejected():
    """A zero endstate speed is characteristic"""
    burgers = get_model("burgers")
    q = PlanarShockPoint([0.0], [1.0], 0.0)
    with pytest.raises(CharacteristicShockError):
        compressive_indices(burgers, q)


def test_shock_point_vector_and_indices():
    """Vector layout is (p_plus, p_minus, s, h); inconsistent indices are refused"""
    q = PlanarShockPoint([-1.0], [1.0], 0.25, [0.5])
    assert np.allclose(q.as_vector(), [-1.0, 1.0, 0.25, 0.5])
    back = PlanarShockPoint.from_vector(q.as_vector(), 1)
    assert np.allclose(back.h, [0.5]) and back.s == 0.25
    with pytest.raises(ValueError):
        q.with_indices((1, 1, 1))


def test_unknown_system_lists_builtins():
    with pytest.raises(ConfigError) as info:
        get_model("euler")
    assert "burgers" in str(info.value)
    with pytest.raises(ConfigError):
        reference_shock("rotation")


def test_compressive_indices_transport_and_scalar_cubic():
    """Transport adds a right-moving mode; the scalar cubic shock with s = 1 is undercompressive"""
    transport = get_model("burgers-transport")
    q = PlanarShockPoint([-1.0, 0.3], [1.0, 0.3], 0.0)
    assert compressive_indices(transport, q) == (1, 2, 0)

    cubic = get_model("scalar-cubic")
    q_cubic = PlanarShockPoint([-1.0], [1.0], 1.0)
    assert compressive_indices(cubic, q_cubic) == (0, 1, 1)


def test_curly_ad_values():
    """A_d - s A_0 - h A_1 at hand-checked states"""
    burgers = get_model("burgers")
    assert burgers.curly_ad(np.array([0.5]), 0.5, np.zeros(0))[0, 0] == pytest.approx(0.0)
    assert burgers.curly_ad(np.array([-1.0]), 0.0, np.zeros(0))[0, 0] == pytest.approx(-1.0)
    planar = get_model("burgers2d")
    assert planar.curly_ad(np.array([1.0]), 0.0, np.array([1.0]))[0, 0] == pytest.approx(0.0)
