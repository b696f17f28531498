"""
Dense linear-algebra helpers: invariant subspaces, spectral projectors,
null spaces, rank classification and basis alignment.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import linalg as sla

from config import config
from evanscope.errors import AxisEigenvalueError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class InvariantSplit:
    """Complementary invariant subspaces of a square matrix."""
    selected: np.ndarray
    rest: np.ndarray
    proj_selected: np.ndarray
    proj_rest: np.ndarray
    eigenvalues: np.ndarray


@dataclass(frozen=True)
class RankInfo:
    rank: int
    singular_values: np.ndarray
    gap: float
    ambiguous: bool


def _schur_split(M: np.ndarray, sort) -> InvariantSplit:
    n = M.shape[0]
    real = np.isrealobj(M) and isinstance(sort, str)
    T, Z, sdim = sla.schur(M, output="real" if real else "complex", sort=sort)
    eigenvalues = np.linalg.eigvals(M)
    dtype = M.dtype if real else complex
    if sdim == 0:
        return InvariantSplit(np.zeros((n, 0), dtype=dtype), Z, np.zeros((n, n), dtype=dtype),
                              np.eye(n, dtype=dtype), eigenvalues)
    if sdim == n:
        return InvariantSplit(Z, np.zeros((n, 0), dtype=dtype), np.eye(n, dtype=dtype),
                              np.zeros((n, n), dtype=dtype), eigenvalues)
    T11, T12, T22 = T[:sdim, :sdim], T[:sdim, sdim:], T[sdim:, sdim:]
    X = sla.solve_sylvester(T11, -T22, -T12)
    upper = np.zeros((n, n), dtype=T.dtype)
    upper[:sdim, :sdim] = np.eye(sdim)
    upper[:sdim, sdim:] = -X
    proj = Z @ upper @ Z.conj().T
    rest = orthonormal(Z[:, :sdim] @ X + Z[:, sdim:])
    return InvariantSplit(Z[:, :sdim], rest, proj, np.eye(n) - proj, eigenvalues)


def invariant_split(M: np.ndarray, select: Callable[[complex], bool]) -> InvariantSplit:
    """Split by an eigenvalue predicate; selected subspace first."""
    M = np.asarray(M, dtype=complex)
    return _schur_split(M, lambda x: bool(select(x)))


def axis_gap(M: np.ndarray) -> float:
    """Smallest |Re mu| over the spectrum, relative to the matrix norm."""
    M = np.asarray(M)
    if M.size == 0:
        return np.inf
    scale = max(np.linalg.norm(M, 2), np.finfo(float).tiny)
    return float(np.min(np.abs(np.linalg.eigvals(M).real)) / scale)


def spectral_split(M: np.ndarray, tolerance: Optional[float] = None):
    """Return (basis_minus, basis_plus, proj_minus, proj_plus) for M.

    Bases are orthonormal; projectors are the oblique spectral projectors.
    Real input gives real output.
    """
    tolerance = config.tolerance_config.axis_tolerance if tolerance is None else tolerance
    M = np.atleast_2d(np.asarray(M))
    eigenvalues = np.linalg.eigvals(M)
    scale = max(np.linalg.norm(M, 2), np.finfo(float).tiny)
    worst = int(np.argmin(np.abs(eigenvalues.real)))
    gap = abs(eigenvalues[worst].real) / scale
    if gap <= tolerance:
        raise AxisEigenvalueError(
            f"eigenvalue {eigenvalues[worst]:.3e} within tolerance of the imaginary axis",
            eigenvalue=complex(eigenvalues[worst]), gap=float(gap))
    if np.isrealobj(M):
        split = _schur_split(M.astype(float), "lhp")
    else:
        split = _schur_split(M.astype(complex), lambda x: x.real < 0)
    return split.selected, split.rest, split.proj_selected, split.proj_rest


def orthonormal(A: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the column span (full column rank assumed)."""
    A = np.atleast_2d(A)
    if A.shape[1] == 0:
        return A.copy()
    Q, _ = np.linalg.qr(A)
    return Q


def loewdin(A: np.ndarray) -> np.ndarray:
    """Symmetric orthonormalization U V^H of the columns of A."""
    if A.shape[1] == 0:
        return A.copy()
    U, _, Vh = np.linalg.svd(A, full_matrices=False)
    return U @ Vh


def null_space(A: np.ndarray, rtol: Optional[float] = None) -> np.ndarray:
    """Orthonormal null-space basis with a relative singular-value threshold."""
    rtol = config.tolerance_config.null_space_threshold if rtol is None else rtol
    A = np.atleast_2d(A)
    if A.shape[0] == 0:
        return np.eye(A.shape[1], dtype=A.dtype)
    return sla.null_space(A, rcond=rtol)


def rank_of(J: np.ndarray, threshold: Optional[float] = None, gap: Optional[float] = None) -> RankInfo:
    """SVD rank with relative threshold; flags clustering near the threshold."""
    threshold = config.tolerance_config.rank_threshold if threshold is None else threshold
    gap = config.tolerance_config.rank_gap if gap is None else gap
    sv = np.linalg.svd(np.atleast_2d(J), compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return RankInfo(0, sv, np.inf, False)
    rank = int(np.sum(sv > threshold * sv[0]))
    if rank == sv.size:
        measured = np.inf
    else:
        measured = sv[rank - 1] / max(sv[rank], np.finfo(float).tiny) if rank > 0 else 0.0
    ambiguous = bool(rank < sv.size and measured < gap)
    if ambiguous:
        logger.warning("ambiguous rank %d: singular value gap %.3e below %.1e", rank, measured, gap)
    return RankInfo(rank, sv, float(measured), ambiguous)


def procrustes(basis: np.ndarray, anchor: np.ndarray):
    """Rotate ``basis`` within its span towards ``anchor``.

    Returns the aligned basis and the overlap (smallest cosine of the
    principal angles between the two spans).
    """
    if basis.shape[1] == 0:
        return basis.copy(), 1.0
    W, s, Vh = np.linalg.svd(basis.conj().T @ anchor)
    return basis @ (W @ Vh), float(np.min(s))


def largest_angle(A: np.ndarray, B: np.ndarray) -> float:
    """Largest principal angle between two column spans of equal dimension."""
    if A.shape[1] == 0 and B.shape[1] == 0:
        return 0.0
    return float(np.max(sla.subspace_angles(A, B)))


def complement_in(basis: np.ndarray, vector: np.ndarray) -> np.ndarray:
    """Orthonormal basis of span(basis) orthogonal to ``vector`` (vector in the span)."""
    m = basis.shape[1]
    if m <= 1:
        return np.zeros((basis.shape[0], 0), dtype=complex)
    coords = basis.conj().T @ vector
    coords = coords / np.linalg.norm(coords)
    perp = null_space(coords.conj()[None, :])
    return basis @ perp


def stacked_det(*blocks: np.ndarray) -> complex:
    """Determinant of the matrix whose columns are the given blocks side by side."""
    M = np.hstack([np.atleast_2d(b) for b in blocks if b.shape[1] > 0])
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"determinant of non-square {M.shape} block matrix")
    return complex(np.linalg.det(M))
