"""
Test tail solutions, heteroclinic connections and transversality on Burgers
"""
import sys
import os

import numpy as np
import pytest

# Add parent directory to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from evanscope.errors import RadiusError
from evanscope.linalg import rank_of
from evanscope.model import PlanarShockPoint
from evanscope.profile import (
    classify_ranks,
    constant_profile,
    find_connection,
    refine_connection,
    first_order_tail,
    solve_phi,
    tail_subspace,
    transversality_report,
)
from evanscope.systems import BUILTIN_SYSTEMS, get_model, get_reference_connection, reference_shock


def test_tail_subspace_burgers():
    """G_d = -1 at p_plus = -1: the decaying subspace is the whole line"""
    model = get_model("burgers")
    G, basis, proj = tail_subspace(model, np.array([-1.0]), 0.0, np.zeros(0), "+")
    assert G[0, 0] == pytest.approx(-1.0)
    assert basis.shape == (1, 1)
    assert proj[0, 0] == pytest.approx(1.0)
    _, growing, _ = tail_subspace(model, np.array([-1.0]), 0.0, np.zeros(0), "-")
    assert growing.shape == (1, 0), "no growing direction at p_plus"


def test_zero_coordinate_gives_constant_tail():
    """a = 0 returns the constant state exactly"""
    model = get_model("burgers")
    tail = solve_phi(model, np.array([-1.0]), 0.0, np.zeros(0), np.zeros(1), "+", 20.0)
    u, v = tail.state(np.linspace(0.0, 20.0, 5))
    assert tail.is_constant
    assert np.all(u == -1.0) and np.all(v == 0.0)


def test_first_order_tail_prediction():
    """u(z0) - p matches G^-1 B a up to O(|a|^2)"""
    model = get_model("burgers")
    p = np.array([-1.0])
    a = np.array([1e-3])
    tail = solve_phi(model, p, 0.0, np.zeros(0), a, "+", 20.0)
    u0, _ = tail.state(0.0)
    predicted = first_order_tail(model, p, 0.0, np.zeros(0), a, "+")
    assert abs(u0[0, 0] - p[0] - predicted[0]) < 1e-5, "first-order error should be of size |a|^2"


def test_burgers_profile_matches_tanh():
    """The reference connection reproduces w(z) = -tanh(z/2)"""
    cp = get_reference_connection("burgers")
    profile = cp.profile
    mask = np.abs(profile.z) <= 20.0
    exact = -np.tanh(0.5 * profile.z[mask])

    assert cp.residual <= 1e-10, f"connection residual {cp.residual:.2e}"
    assert np.max(np.abs(profile.w[mask, 0] - exact)) < 1e-7
    assert np.max(profile.residual) < 1e-7, "profile ODE defect should be tiny"
    assert profile.decay_rate == pytest.approx(1.0, rel=0.1), "|w - p| decays like exp(-|z|)"


def test_profile_frame_columns():
    cp = get_reference_connection("burgers")
    frame = cp.profile.to_frame()
    assert list(frame.columns) == ["z", "w_1", "wp_1", "residual"]
    zero_rows = frame[frame["z"] == 0.0]
    assert len(zero_rows) == 2, "z = 0 appears once per side"
    assert np.allclose(zero_rows["w_1"], 0.0, atol=1e-8), "odd tanh profile vanishes at 0"


def test_mismatched_endstates_do_not_connect():
    """p_plus = -0.9 with p_minus = 1 and s = 0 violates Rankine-Hugoniot"""
    cp = get_reference_connection("burgers")
    q = PlanarShockPoint([-0.9], [1.0], 0.0)
    jump = cp.problem.psi(q, cp.a_plus, cp.a_minus)
    assert np.linalg.norm(jump) > 1e-4


def test_burgers_transversality_ranks():
    """Ranks (2, 3, 3) against the targets N + 1 - k = 2 and 2N + 1 = 3"""
    data = transversality_report(get_reference_connection("burgers"))
    assert data.ranks == (2, 3, 3)
    assert data.verdict == "strongly-transversal"
    assert not data.ambiguous
    assert data.to_dict()["ranks"] == [2, 3, 3]


@pytest.mark.slow
def test_undercompressive_cubic_a_rank():
    """k = 1 for the cubic model, so grad_a Psi-tilde has rank N + 1 - k = 2"""
    cp = get_reference_connection("cubic-uc")
    assert (cp.problem.N, cp.problem.k) == (2, 1)
    data = transversality_report(cp)
    assert data.ranks[0] == 2
    assert not data.ambiguous


def test_degenerate_classification():
    """A duplicated column loses a rank and the verdict is degenerate"""
    J = np.array([[1.0, 1.0], [2.0, 2.0], [0.5, 0.5]])
    rank = rank_of(J).rank
    assert rank == 1
    assert classify_ranks((rank, 3, 3), 1, 0) == "degenerate"
    assert classify_ranks((2, 2, 3), 1, 0) == "transversal"
    assert classify_ranks((2, 2, 2), 1, 0) == "a-transversal"


def test_find_connection_recovers_rankine_hugoniot():
    """Frozen (p_minus, s) = (1, 0.1) gives p_plus = 2s - p_minus = -0.8"""
    cp = get_reference_connection("burgers")
    moved = find_connection(cp.problem, cp, alpha=[0], frozen=[1.0, 0.1])
    assert moved.q.p_plus[0] == pytest.approx(-0.8, abs=1e-6)
    assert moved.residual <= 1e-10

    same = find_connection(cp.problem, cp, alpha=[0], frozen=[1.0, 0.0])
    assert same.q.p_plus[0] == pytest.approx(-1.0, abs=1e-8)


@pytest.mark.slow
def test_nc_coupled_reference_is_newton_fixed_point():
    """Freezing the reference coordinates needs no Newton step"""
    cp = get_reference_connection("nc-coupled")
    again = find_connection(cp.problem, cp, alpha=[0, 1])
    assert again.newton_steps == 0
    assert np.allclose(again.q.as_vector(), cp.q.as_vector())


def test_constant_profile_grid():
    model = get_model("burgers")
    grid = constant_profile(model, np.array([-1.0]), 0.0)
    assert np.all(grid.w == -1.0)
    assert np.all(grid.residual == 0.0)


@pytest.mark.parametrize("model_id", [
    pytest.param(m, marks=pytest.mark.slow) if m == "cubic-uc" else m for m in BUILTIN_SYSTEMS
])
def test_every_builtin_reference_connects(model_id):
    """Each built-in reference shock yields a connection with a tiny residual"""
    ref = reference_shock(model_id)
    cp = get_reference_connection(model_id)

    assert cp.z_bar == ref.z_bar
    assert cp.residual <= 1e-10, f"{model_id}: connection residual {cp.residual:.2e}"
    assert np.linalg.norm(cp.a_plus) > 0.0 and np.linalg.norm(cp.a_minus) > 0.0


def test_tanh_references_constrain_off_the_inflection_point():
    """w_z of -tanh(z/2) is extremal at 0, so the tail constraints sit elsewhere"""
    for model_id in ("burgers", "burgers2d", "burgers-transport", "nc-coupled"):
        ref = reference_shock(model_id)
        assert ref.z_bar != 0.0
        cp = get_reference_connection(model_id)
        for side, sign in (("+", 1.0), ("-", -1.0)):
            wzz = cp.profile.second_derivative(-sign * ref.z_bar, side)
            assert np.linalg.norm(wzz) > 1e-2, f"{model_id}: w_zz vanishes at the {side} constraint point"


def test_jacobian_falls_back_to_one_sided_difference(monkeypatch):
    """A failed evaluation on one side of the stencil still yields the column"""
    cp = get_reference_connection("burgers")
    problem = cp.problem
    x = cp.x
    central = problem.jacobian(x, problem.cols_a)
    col = int(problem.cols_a[0])
    evaluate = problem.evaluate

    def guarded(y):
        if y[col] > x[col]:
            raise RadiusError("outside the tail radius")
        return evaluate(y)

    monkeypatch.setattr(problem, "evaluate", guarded)
    one_sided = problem.jacobian(x, problem.cols_a)
    assert np.all(np.isfinite(one_sided))
    assert np.allclose(one_sided, central, atol=1e-4), "one-sided column should match to O(step)"


def test_refine_connection_recovers_from_perturbed_coordinates():
    """Damped Gauss-Newton returns to the reference tail coordinates"""
    cp = get_reference_connection("burgers")
    refined = refine_connection(cp.problem, cp.q, cp.a_plus * 1.05, cp.a_minus * 0.95)
    assert refined.residual <= 1e-10
    assert np.allclose(refined.a_plus, cp.a_plus, atol=1e-6)
    assert np.allclose(refined.a_minus, cp.a_minus, atol=1e-6)
