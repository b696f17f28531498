"""
Test the dense linear-algebra helpers on small matrices with known spectra
"""
import sys
import os

import numpy as np
import pytest

# Add parent directory to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from evanscope.errors import AxisEigenvalueError
from evanscope.linalg import (
    complement_in,
    largest_angle,
    null_space,
    orthonormal,
    procrustes,
    rank_of,
    spectral_split,
    stacked_det,
)


def test_spectral_split_diagonal():
    """Stable and unstable subspaces of a diagonal matrix are coordinate axes"""
    M = np.diag([-2.0, 3.0, -0.5])
    minus, plus, proj_minus, proj_plus = spectral_split(M)

    assert minus.shape == (3, 2), "two eigenvalues in the left half plane"
    assert plus.shape == (3, 1), "one eigenvalue in the right half plane"
    assert np.allclose(proj_minus + proj_plus, np.eye(3)), "projectors must sum to the identity"
    assert np.allclose(proj_minus @ proj_minus, proj_minus), "projector must be idempotent"
    assert abs(plus[1, 0]) == pytest.approx(1.0), "unstable direction is e_2"


def test_spectral_split_projectors_commute():
    """Oblique projectors of a non-normal matrix commute with the matrix"""
    M = np.array([[-1.0, 5.0], [0.0, 2.0]])
    minus, plus, proj_minus, proj_plus = spectral_split(M)

    assert np.allclose(M @ proj_minus, proj_minus @ M), "spectral projector commutes with M"
    assert np.allclose(proj_minus @ minus, minus), "P_- fixes the stable subspace"
    assert np.allclose(proj_minus @ plus, 0.0, atol=1e-12), "P_- annihilates the unstable subspace"


def test_spectral_split_axis_eigenvalue():
    """An eigenvalue on the imaginary axis is reported, not split"""
    M = np.array([[0.0, 1.0], [-1.0, 0.0]])
    with pytest.raises(AxisEigenvalueError) as info:
        spectral_split(M)
    assert info.value.gap < 1e-12, "gap should be the relative distance to the axis"
    assert info.value.to_dict()["code"] == "axis-eigenvalue"


def test_spectral_split_complex_input():
    """Complex matrices split by the sign of the real part"""
    M = np.diag([-1.0 + 2.0j, 1.0 - 1.0j])
    minus, plus, _, _ = spectral_split(M)
    assert minus.shape[1] == 1 and plus.shape[1] == 1
    assert abs(minus[0, 0]) == pytest.approx(1.0)


def test_rank_of_gap_and_ambiguity():
    """Rank uses a relative threshold and flags clustered singular values"""
    clear = rank_of(np.diag([1.0, 1.0, 1e-12]))
    assert clear.rank == 2
    assert not clear.ambiguous, "a gap of 1e12 is not ambiguous"

    fuzzy = rank_of(np.diag([1.0, 2e-6, 5e-7]))
    assert fuzzy.rank == 2
    assert fuzzy.ambiguous, "a gap of 4 is below the default rank gap"


def test_null_space_and_orthonormal():
    """null_space returns an orthonormal kernel basis"""
    A = np.array([[1.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    K = null_space(A)
    assert K.shape == (3, 1)
    assert np.allclose(A @ K, 0.0)
    Q = orthonormal(np.array([[1.0, 1.0], [0.0, 1.0], [0.0, 0.0]]))
    assert np.allclose(Q.T @ Q, np.eye(2))


def test_procrustes_aligns_within_span():
    """Alignment keeps the span and rotates towards the anchor"""
    anchor = np.eye(3)[:, :2]
    theta = 0.7
    R = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    basis = anchor @ R
    aligned, overlap = procrustes(basis, anchor)

    assert np.allclose(aligned, anchor), "rotated basis of the same span aligns exactly"
    assert overlap == pytest.approx(1.0)
    assert largest_angle(aligned, basis) < 1e-12


def test_complement_in_excludes_vector():
    """The complement of a vector inside a span is orthogonal to it"""
    basis = np.eye(3)[:, :2].astype(complex)
    v = np.array([1.0, 1.0, 0.0]) / np.sqrt(2.0)
    C = complement_in(basis, v)
    assert C.shape == (3, 1)
    assert abs(np.vdot(v, C[:, 0])) < 1e-12


def test_stacked_det_skips_empty_blocks():
    """Zero-column blocks do not enter the determinant"""
    A = np.array([[2.0], [0.0]])
    B = np.array([[0.0], [3.0]])
    empty = np.zeros((2, 0))
    assert stacked_det(A, empty, B) == pytest.approx(6.0)
    with pytest.raises(ValueError):
        stacked_det(A)
