"""
Test the shock-manifold chart on Burgers, where p_plus = 2s - p_minus
"""
import sys
import os

import numpy as np
import pytest

# Add parent directory to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from evanscope.chart import ManifoldChart, build_chart, chart_uniqueness_probe, rebuild_connection
from evanscope.errors import ChartDomainError, SetupError
from evanscope.model import PlanarShockPoint
from evanscope.systems import get_reference_connection


@pytest.fixture(scope="module")
def burgers_chart():
    return build_chart(get_reference_connection("burgers"), [0])


def test_chart_values_follow_rankine_hugoniot(burgers_chart):
    """p_plus(p_minus, s) = 2s - p_minus on a small box"""
    for y in ([1.0, 0.0], [1.02, 0.01], [0.97, -0.02]):
        p_alpha = burgers_chart.evaluate(np.array(y))[0]
        assert p_alpha[0] == pytest.approx(2.0 * y[1] - y[0], abs=1e-7), f"chart value at {y}"


def test_chart_split_and_dimension(burgers_chart):
    assert burgers_chart.alpha.tolist() == [0]
    assert burgers_chart.beta.tolist() == [1]
    assert burgers_chart.dimension == 2, "N + d - k = 2 for Burgers"
    assert burgers_chart.verdict == "strongly-transversal"


def test_chi_and_chi_prime(burgers_chart):
    """chi(q) = p_plus - 2s + p_minus with derivative (1, 1, -2)"""
    q = PlanarShockPoint([-0.7], [1.0], 0.1)
    assert burgers_chart.chi(q)[0] == pytest.approx(-0.7 - 0.2 + 1.0, abs=1e-7)
    assert np.allclose(burgers_chart.chi_prime(), [[1.0, 1.0, -2.0]], atol=1e-6)
    assert np.allclose(burgers_chart.chi_prime(method="fd"), [[1.0, 1.0, -2.0]], atol=1e-5)
    with pytest.raises(ValueError):
        burgers_chart.chi_prime(method="spline")


def test_tangent_space_is_kernel_of_chi_prime(burgers_chart):
    T = burgers_chart.tangent_space()
    assert T.shape == (3, 2)
    assert np.allclose(burgers_chart.chi_prime() @ T, 0.0, atol=1e-6)


def test_connection_from_chart_point(burgers_chart):
    """Mapping a shock onto the manifold gives a connection with small residual"""
    cp = burgers_chart.connection(np.array([1.0, 0.05]))
    assert cp.q.p_plus[0] == pytest.approx(-0.9, abs=1e-7)
    assert cp.residual <= 1e-9


def test_box_covers_points(burgers_chart):
    box = burgers_chart.box(0.01, 3)
    assert len(box) == 9
    data = burgers_chart.to_dict(box[:2])
    assert len(data["values"]) == 2
    assert data["dimension"] == 2


def test_uniqueness_same_construction_is_exact(burgers_chart):
    """Rebuilding with unchanged translate and third condition reproduces the chart"""
    report = chart_uniqueness_probe(burgers_chart, half_width=0.01, points=2)
    assert report.discrepancy <= 1e-9
    assert report.failures == 0


def test_uniqueness_without_any_evaluable_point_is_an_error(burgers_chart, monkeypatch):
    """A box where neither chart evaluates gives no discrepancy instead of 0.0"""
    def outside(self, y):
        raise ChartDomainError("outside the Newton basin", point=y)

    monkeypatch.setattr(ManifoldChart, "evaluate", outside)
    with pytest.raises(SetupError, match="no point"):
        chart_uniqueness_probe(burgers_chart, half_width=0.01, points=2)


@pytest.mark.slow
def test_uniqueness_other_translate_and_speed_factor(burgers_chart):
    """Another translate and g = 2s describe the same manifold"""
    shifted = chart_uniqueness_probe(burgers_chart, alt_z_bar=-1.0, half_width=0.02, points=2)
    assert shifted.discrepancy <= 1e-6
    scaled = chart_uniqueness_probe(burgers_chart, alt_g_factor=2.0, half_width=0.02, points=2)
    assert scaled.discrepancy <= 1e-6


def test_rebuild_connection_keeps_shock(burgers_chart):
    cp = rebuild_connection(burgers_chart.base, z_bar=-1.0)
    assert cp.z_bar == -1.0
    assert cp.q.p_plus[0] == pytest.approx(-1.0)
