"""
Test the linearized symbol, conjugators and the HP split on the Burgers shock
"""
import sys
import os

import numpy as np
import pytest
from scipy.integrate import solve_ivp

# Add parent directory to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from evanscope.conjugation import (
    LinearizedSymbol,
    _renormalize,
    adaptive_rho0,
    compute_conjugator,
    compute_conjugators,
    decaying_limit_subspace,
    gap_scale,
    hp_split,
    split_frequency,
)
from evanscope.linalg import largest_angle
from evanscope.systems import get_reference_connection


@pytest.fixture(scope="module")
def burgers_symbol():
    cp = get_reference_connection("burgers")
    return LinearizedSymbol(cp.problem.model, cp.profile, cp.q)


def test_split_frequency():
    lam, eta = split_frequency([0.6, 0.8], 0.5)
    assert lam == pytest.approx(0.4 + 0.3j)
    assert eta.size == 0
    lam2, eta2 = split_frequency([0.0, 0.6, 0.8], 0.5)
    assert lam2 == pytest.approx(0.3)
    assert eta2 == pytest.approx([0.4])


def test_limit_symbol_at_zero_frequency(burgers_symbol):
    """G_+ = [[0, 1], [0, -1]] at zeta = 0"""
    G = burgers_symbol.limit("+", [0.0, 1.0], 0.0)
    assert np.allclose(G, [[0.0, 1.0], [0.0, -1.0]])
    assert burgers_symbol.g22("+")[0, 0] == pytest.approx(-1.0)
    assert burgers_symbol.g22("-")[0, 0] == pytest.approx(1.0)


def test_g21_is_profile_derivative(burgers_symbol):
    """At zeta = 0 the lower-left entry equals W'(z)"""
    for z in (0.0, 0.7, 2.0):
        G = burgers_symbol.evaluate(z, [0.0, 1.0], 0.0, "+")
        _, v = burgers_symbol.profile.state(z, "+")
        assert G[1, 0] == pytest.approx(v[0, 0], abs=1e-12)


def test_hp_split_at_zero_and_small_rho(burgers_symbol):
    """P(0) = G22 and at small rho the slow block tracks lambda"""
    scale = gap_scale(burgers_symbol)
    hp0 = hp_split(burgers_symbol.limit("+", [0.0, 1.0], 0.0), burgers_symbol.g22("+"), 0.0, scale)
    assert hp0.P[0, 0] == pytest.approx(-1.0)

    rho = 1e-3
    G = burgers_symbol.limit("+", [0.0, 1.0], rho)
    hp = hp_split(G, burgers_symbol.g22("+"), rho, scale)
    assert hp.valid
    assert hp.residual < 1e-10, "Lambda must block-diagonalize G_+"
    assert hp.H[0, 0] == pytest.approx(rho, rel=1e-2), "slow eigenvalue ~ lambda for Burgers"
    assert np.allclose(np.sort(np.linalg.eigvals(G).real),
                       np.sort(np.concatenate([np.linalg.eigvals(hp.H), np.linalg.eigvals(hp.P)]).real))


def test_adaptive_rho0_positive(burgers_symbol):
    rho0 = adaptive_rho0(burgers_symbol, [0.0, 1.0], np.geomspace(1e-4, 1e-1, 7))
    assert rho0 >= 1e-2, "Burgers slow and fast clusters separate well at low frequency"


def test_conjugator_conditioning(burgers_symbol):
    grid = compute_conjugators(burgers_symbol, "+", [0.0, 1.0], [1e-3, 1e-2, 1e-1])
    assert grid.Y.shape[0] == 3
    assert np.all(grid.condition <= 1e3)
    assert np.all(grid.residual < 1e-5)
    assert grid.index(1e-2) == 1
    with pytest.raises(KeyError):
        grid.index(0.5)


def test_conjugators_well_conditioned_at_zero_frequency(burgers_symbol):
    """rho = 0 on both sides, where the profile inflection sits at the conjugator origin"""
    for side in ("+", "-"):
        grid = compute_conjugators(burgers_symbol, side, [0.0, 1.0], [0.0])
        assert grid.condition[0] <= 1e3, f"side {side}: condition {grid.condition[0]:.2e}"
        assert np.all(np.isfinite(grid.Y0(0)))


def test_renormalization_with_vanishing_diagonal_block():
    """A zero (fast, fast) entry of Y(0) still yields a bounded correction"""
    G_lim = np.diag([0.0, -1.0])
    Y0 = np.array([[0.5, 0.25], [-1.0, 0.0]], dtype=complex)
    V, V_inv, r, X = _renormalize(Y0, G_lim, "+", 0.5)
    corrected = Y0 @ (np.eye(2) + V @ X @ V_inv)

    assert np.all(np.isfinite(X))
    assert np.count_nonzero(X) == 1, "only the growing entry is corrected"
    assert corrected[0, 0] == pytest.approx(1.0)
    assert np.linalg.cond(corrected) < 10.0


def test_conjugated_decaying_subspace_matches_shooting(burgers_symbol):
    """Y(0) E_-(G_+) agrees with the decaying solution integrated in from the far field"""
    zeta_hat = [0.0, 1.0]
    rho = 0.1
    grid = compute_conjugator(burgers_symbol, "+", zeta_hat, rho)
    G_lim = grid.G_limits[0]
    E = decaying_limit_subspace(G_lim, "+")
    conjugated = grid.Y0(0) @ E

    Z = grid.length
    sol = solve_ivp(lambda z, w: burgers_symbol.evaluate(z, zeta_hat, rho, "+") @ w,
                    (Z, 0.0), E[:, 0].astype(complex), method="DOP853", rtol=1e-12, atol=1e-14)
    shot = sol.y[:, -1][:, None]
    assert largest_angle(conjugated, shot) < 1e-6


def test_decaying_limit_subspace_sides(burgers_symbol):
    G_plus = burgers_symbol.limit("+", [0.0, 1.0], 0.1)
    G_minus = burgers_symbol.limit("-", [0.0, 1.0], 0.1)
    assert decaying_limit_subspace(G_plus, "+").shape == (2, 1)
    assert decaying_limit_subspace(G_minus, "-").shape == (2, 1)
