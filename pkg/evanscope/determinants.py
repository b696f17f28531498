"""
Stability determinants

Decaying subspaces, slow and fast modes, R functions, reduced boundary
operators and the determinants D_Lop, D_Lop_m, D_s, DD_s, D_s_tilde, D_m,
D_red and D_m_direct, with the constants beta and beta_K.

All determinants use orthonormal column bases; only moduli are basis
independent.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg as sla

from config import config
from evanscope.conjugation import (
    ConjugatorGrid,
    HPBlocks,
    LinearizedSymbol,
    adaptive_rho0,
    compute_conjugators,
    decaying_limit_subspace,
    gap_scale,
    hp_split,
    split_frequency,
    total_conjugator,
)
from evanscope.errors import (
    ConjugationError,
    ContinuationNeededError,
    DegenerateProfileError,
    DimensionError,
    EvanscopeError,
)
from evanscope.linalg import (
    axis_gap,
    complement_in,
    largest_angle,
    null_space,
    orthonormal,
    procrustes,
    rank_of,
    spectral_split,
    stacked_det,
)
from evanscope.model import PlanarShockPoint, SystemModel
from evanscope.profile import ConnectionPoint

logger = logging.getLogger(__name__)

KINDS = ("D_Lop", "D_Lop_m", "D_s", "DD_s", "D_s_tilde", "D_m", "D_red", "D_m_direct", "beta", "beta_K")
HP_KINDS = ("DD_s", "D_s_tilde", "D_m", "D_red", "D_m_direct", "beta")

# rho step of the one-sided difference for d/drho of the pinned fast mode
P6_STEP = 1e-4

NAN = complex(np.nan, np.nan)


def normalize_frequency(zeta_hat: Sequence[float]) -> np.ndarray:
    zeta_hat = np.asarray(zeta_hat, dtype=float)
    norm = np.linalg.norm(zeta_hat)
    if norm == 0.0 or zeta_hat[1] < 0.0:
        raise ValueError(f"zeta_hat {zeta_hat.tolist()} is not on the closed upper hemisphere")
    return zeta_hat / norm


def lambda_hat(zeta_hat: np.ndarray) -> complex:
    return complex(zeta_hat[1], zeta_hat[0])


def blockdiag(*blocks: np.ndarray) -> np.ndarray:
    return sla.block_diag(*[np.atleast_2d(b).astype(complex) for b in blocks])


@dataclass
class DeterminantSample:
    kind: str
    value: complex
    zeta_hat: Tuple[float, ...]
    rho: float
    flag: str = "ok"
    q: Tuple[float, ...] = ()
    basis_chain: Tuple[str, ...] = ()

    @property
    def at(self) -> Tuple[Tuple[float, ...], Tuple[float, ...], float]:
        """(q, zeta_hat, rho) the value was computed at."""
        return self.q, self.zeta_hat, self.rho

    @property
    def modulus(self) -> float:
        return float(abs(self.value))

    @property
    def valid(self) -> bool:
        return self.flag == "ok" and np.isfinite(self.value)


# --- subspace bases ----------------------------------------------------------

SUBSPACE_MEANINGS = ("E-(G)", "E+(G)", "E-(H)", "E+(H)", "E-(P)", "E+(P)", "E-(H0)", "E+(H0)")

ROOT = "root"


@dataclass
class SubspaceBasis:
    """Orthonormal columns of one spectral subspace of one side.

    ``anchor`` names the basis these columns were aligned to, ``root`` when
    the chain starts here.
    """
    columns: np.ndarray
    meaning: str
    side: str
    anchor: str = ROOT

    def __post_init__(self):
        if self.meaning not in SUBSPACE_MEANINGS:
            raise ValueError(f"unknown subspace meaning {self.meaning!r}")
        if self.side not in ("+", "-"):
            raise ValueError(f"side must be '+' or '-', got {self.side!r}")

    @property
    def dim(self) -> int:
        return int(self.columns.shape[1])

    @property
    def label(self) -> str:
        return f"{self.meaning}{self.side}@{self.anchor}"

    def aligned_to(self, previous: Optional["SubspaceBasis"], anchor: str) -> "SubspaceBasis":
        """Procrustes-align to ``previous``; a dimension change restarts the chain."""
        if previous is None or previous.columns.shape != self.columns.shape:
            return SubspaceBasis(self.columns, self.meaning, self.side)
        aligned, _ = procrustes(self.columns, previous.columns)
        return SubspaceBasis(aligned, self.meaning, self.side, anchor)


def decaying_meaning(block: str, side: str, decaying: bool = True) -> str:
    """E_- on side +, E_+ on side -; the opposite half when not ``decaying``."""
    sign = "-" if (side == "+") == decaying else "+"
    return f"E{sign}({block})"


# --- hyperbolic symbol -------------------------------------------------------

def hyperbolic_symbol(model: SystemModel, q: PlanarShockPoint, zeta_hat: Sequence[float], side: str) -> np.ndarray:
    """H_0 = -curly_ad^-1 (A_0 (i tau + gamma) + sum_j A_j i eta_j) at p_pm."""
    zeta_hat = np.asarray(zeta_hat, dtype=float)
    p = q.p_plus if side == "+" else q.p_minus
    rhs = model.a(0, p) * lambda_hat(zeta_hat)
    for j, eta in enumerate(zeta_hat[2:], start=1):
        rhs = rhs + 1j * eta * model.a(j, p)
    return -np.linalg.solve(model.curly_ad(p, q.s, q.h), rhs)


def _decaying(M: np.ndarray, side: str, tolerance: Optional[float] = None) -> np.ndarray:
    minus, plus, _, _ = spectral_split(M, tolerance)
    return minus if side == "+" else plus


@dataclass
class HyperbolicSubspace:
    """E_-(H_0+) x E_+(H_0-) as a block-diagonal orthonormal basis."""
    plus: np.ndarray
    minus: np.ndarray
    suspect: bool = False
    angle: float = 0.0
    anchors: Tuple[str, str] = (ROOT, ROOT)

    @property
    def basis(self) -> np.ndarray:
        return blockdiag(self.plus, self.minus)

    @property
    def chain(self) -> Tuple[str, str]:
        return (f"{decaying_meaning('H0', '+')}+@{self.anchors[0]}",
                f"{decaying_meaning('H0', '-')}-@{self.anchors[1]}")


def hyperbolic_subspace(model: SystemModel, q: PlanarShockPoint, zeta_hat: Sequence[float],
                        continuation: bool = True) -> HyperbolicSubspace:
    """Decaying eigenspaces of H_0, continued along gamma down to 0 on the glancing boundary."""
    cfg = config.conjugator_config
    zeta_hat = np.asarray(zeta_hat, dtype=float)
    bases, anchors = {}, {}
    suspect = False
    angle = 0.0
    for side in ("+", "-"):
        H0 = hyperbolic_symbol(model, q, zeta_hat, side)
        if axis_gap(H0) > config.tolerance_config.axis_tolerance:
            bases[side] = _decaying(H0, side)
            anchors[side] = ROOT
            continue
        if not continuation:
            raise ContinuationNeededError(
                f"H0{side} has an eigenvalue on the axis at gamma=0; continuation anchor required",
                zeta_hat=zeta_hat)
        chain = []
        for gamma in cfg.continuation_ladder:
            shifted = zeta_hat.copy()
            shifted[1] = gamma
            basis = _decaying(hyperbolic_symbol(model, q, shifted, side), side)
            if chain and chain[-1].shape[1] != basis.shape[1]:
                suspect = True
            elif chain:
                basis, _ = procrustes(basis, chain[-1])
            chain.append(basis)
        if len(chain) >= 2 and chain[-1].shape[1] == chain[-2].shape[1]:
            jump = largest_angle(chain[-1], chain[-2])
            angle = max(angle, jump)
            if jump > cfg.continuation_angle:
                suspect = True
        bases[side] = chain[-1]
        ladder = cfg.continuation_ladder
        anchors[side] = f"gamma={ladder[-2]:g}" if len(ladder) >= 2 else ROOT
    if suspect:
        logger.warning("continuity-suspect decaying hyperbolic subspace at zeta_hat=%s (angle %.2e)",
                       zeta_hat.tolist(), angle)
    return HyperbolicSubspace(bases["+"], bases["-"], suspect, angle, (anchors["+"], anchors["-"]))


def lopatinski(chi_prime: np.ndarray, hyp: HyperbolicSubspace, zeta_hat: np.ndarray, N: int) -> complex:
    """D_Lop = det(chi'_p E_-(H_0), chi'_s (i tau + gamma) + chi'_h i eta)."""
    front = chi_prime[:, 2 * N] * lambda_hat(zeta_hat) + chi_prime[:, 2 * N + 1:] @ (1j * zeta_hat[2:])
    return stacked_det(chi_prime[:, :2 * N] @ hyp.basis, front[:, None])


def lopatinski_modified(chi_prime: np.ndarray, hyp: HyperbolicSubspace, zeta_hat: np.ndarray, N: int) -> complex:
    """D_Lop_m = det(E_-(H_0) x C, ker Gamma_chi); 0 when Gamma_chi is rank deficient."""
    front = chi_prime[:, 2 * N] * lambda_hat(zeta_hat) + chi_prime[:, 2 * N + 1:] @ (1j * zeta_hat[2:])
    gamma_chi = np.hstack([chi_prime[:, :2 * N], front[:, None]]).astype(complex)
    if rank_of(gamma_chi).rank < gamma_chi.shape[0]:
        logger.info("Gamma_chi rank deficient at zeta_hat=%s", zeta_hat.tolist())
        return 0j
    kernel = null_space(gamma_chi)
    return stacked_det(blockdiag(hyp.basis, np.ones((1, 1))), kernel)


# --- per-side frames ---------------------------------------------------------

@dataclass
class SideFrame:
    """Conjugator and HP data of one side at one frequency."""
    side: str
    rho: float
    Y0: np.ndarray
    U0: np.ndarray
    G: np.ndarray
    hp: HPBlocks
    T: np.ndarray
    h_basis: Optional[SubspaceBasis]
    p_basis: SubspaceBasis
    p_growing: SubspaceBasis
    proj_P: np.ndarray
    grid: ConjugatorGrid = field(repr=False)
    index: int = 0

    @property
    def U_H(self) -> Optional[np.ndarray]:
        return None if self.h_basis is None else self.h_basis.columns

    @property
    def U_P(self) -> np.ndarray:
        return self.p_basis.columns

    @property
    def U_P_growing(self) -> np.ndarray:
        return self.p_growing.columns

    @property
    def chain(self) -> Tuple[str, ...]:
        bases = (self.h_basis, self.p_basis)
        return tuple(b.label for b in bases if b is not None)

    @property
    def N(self) -> int:
        return self.P.shape[0]

    @property
    def P(self) -> np.ndarray:
        return self.hp.P

    @property
    def fast(self) -> np.ndarray:
        """T_12, T_22 columns applied to the decaying P basis."""
        return self.T[:, self.N:] @ self.U_P

    @property
    def invariant_fast(self) -> np.ndarray:
        """Orthonormal G_pm-invariant basis of the decaying P directions (Lambda frame)."""
        return orthonormal(self.hp.Lambda[:, self.N:] @ self.U_P)


def side_frame(sym: LinearizedSymbol, grid: ConjugatorGrid, i: int, scale: float,
               previous: Optional[SideFrame] = None) -> SideFrame:
    """HP frame at grid[i], its decaying bases aligned to ``previous`` (the last rho of the ray)."""
    side = grid.side
    rho = float(grid.rhos[i])
    G = grid.G_limits[i]
    hp = hp_split(G, sym.g22(side), rho, scale, side)
    tol = config.tolerance_config.axis_tolerance
    P_minus, P_plus, proj_minus, proj_plus = spectral_split(hp.P)
    U_P, U_P_growing, proj_P = (P_minus, P_plus, proj_minus) if side == "+" else (P_plus, P_minus, proj_plus)
    p_basis = SubspaceBasis(U_P.astype(complex), decaying_meaning("P", side), side)
    h_basis = None
    if rho > 0.0:
        h_basis = SubspaceBasis(_decaying(hp.H, side, tol * min(1.0, rho)), decaying_meaning("H", side), side)
    if previous is not None:
        anchor = f"rho={previous.rho:.6g}"
        if h_basis is not None:
            h_basis = h_basis.aligned_to(previous.h_basis, anchor)
        p_basis = p_basis.aligned_to(previous.p_basis, anchor)
    T = total_conjugator(grid.Y0(i), hp)
    growing = SubspaceBasis(U_P_growing.astype(complex), decaying_meaning("P", side, decaying=False), side)
    return SideFrame(side, rho, grid.Y0(i), grid.U0(i), G, hp, T, h_basis, p_basis, growing, proj_P, grid, i)


def check_dimensions(frames: Dict[str, SideFrame], indices: Tuple[int, int, int]) -> None:
    """Slow and fast decaying dimensions against (N - R_-, R_-) and (N - L_+, L_+)."""
    r_minus, l_plus, _ = indices
    for side, fast in (("+", r_minus), ("-", l_plus)):
        frame = frames[side]
        if frame.U_P.shape[1] != fast:
            raise DimensionError(f"dim of decaying P block on side {side} is {frame.U_P.shape[1]}, expected {fast}")
        if frame.U_H is not None and frame.U_H.shape[1] != frame.N - fast:
            raise DimensionError(f"dim of decaying H block on side {side} is {frame.U_H.shape[1]}, "
                                 f"expected {frame.N - fast}")


def decaying_subspaces(frames: Dict[str, SideFrame]) -> Tuple[np.ndarray, np.ndarray]:
    """(E_+, E_-) = Y_pm(0) E_-+(G_pm), orthonormalized."""
    out = []
    for side in ("+", "-"):
        frame = frames[side]
        tol = config.tolerance_config.axis_tolerance * min(1.0, frame.rho ** 2)
        minus, plus, _, _ = spectral_split(frame.G, tol)
        basis = minus if side == "+" else plus
        out.append(orthonormal(frame.Y0 @ basis))
    return out[0], out[1]


def decaying_chain() -> Tuple[str, str]:
    """Labels of the bases behind decaying_subspaces; each is computed afresh per rho."""
    return tuple(f"{decaying_meaning('G', side)}{side}@{ROOT}" for side in ("+", "-"))


def evans_standard(E_plus: np.ndarray, E_minus: np.ndarray) -> complex:
    """D_s = det(E_+ x E_-, ker Gamma_s) with ker Gamma_s = {(v, v)}."""
    n = E_plus.shape[0]
    zeros_p = np.zeros((n, E_plus.shape[1]), dtype=complex)
    zeros_m = np.zeros((n, E_minus.shape[1]), dtype=complex)
    diag = np.eye(n) / np.sqrt(2.0)
    return stacked_det(np.vstack([E_plus, zeros_p]), np.vstack([zeros_m, E_minus]), np.vstack([diag, diag]))


# --- slow and fast modes -----------------------------------------------------

def pinned_coefficients(frame0: SideFrame, wz: np.ndarray, wzz: np.ndarray) -> Tuple[np.ndarray, float]:
    """Lower block c of T(0)^-1 (W_z, W_zz) and the norm of the upper block."""
    coords = np.linalg.solve(frame0.T, np.concatenate([wz, wzz]).astype(complex))
    N = frame0.N
    return coords[N:], float(np.linalg.norm(coords[:N]))


@dataclass
class ModeSet:
    slow_plus: np.ndarray
    slow_minus: np.ndarray
    fast_plus: np.ndarray
    fast_minus: np.ndarray
    chain: Tuple[str, ...] = ()

    def stacked(self) -> np.ndarray:
        return np.hstack([self.slow_plus, self.slow_minus, self.fast_plus, self.fast_minus])


def fast_coordinates(U_P: np.ndarray, pinned: np.ndarray, side: str) -> np.ndarray:
    """Fast basis in P coordinates: the pinned vector then (side -) last, rest orthonormal to it."""
    rest = complement_in(U_P, pinned)
    if side == "+":
        return np.column_stack([pinned, rest])
    return np.column_stack([rest, pinned])


def slow_fast_modes(frames: Dict[str, SideFrame], pins: Dict[str, np.ndarray],
                    anchors: Optional[Dict[str, np.ndarray]] = None, anchor: str = ROOT) -> ModeSet:
    """Slow modes T(u_H, 0) and fast modes T(0, u_P) at z = 0 with the pinned fast mode.

    The unpinned fast columns are aligned to ``anchors`` (fast coordinates of
    the previous rho, labelled ``anchor``) when the dimensions agree.
    """
    cols = {}
    chain = list(frames["+"].chain + frames["-"].chain)
    for side in ("+", "-"):
        frame = frames[side]
        pinned = frame.proj_P @ pins[side]
        coords = fast_coordinates(frame.U_P, pinned, side)
        label = ROOT
        if anchors and side in anchors and anchors[side].shape == coords.shape and coords.shape[1] > 1:
            keep = slice(1, None) if side == "+" else slice(0, -1)
            rest, _ = procrustes(coords[:, keep], anchors[side][:, keep])
            coords[:, keep] = rest
            label = anchor
        cols[side] = coords
        cols["slow" + side] = frame.T[:, :frame.N] @ frame.U_H
        chain.append(f"fast{side}@{label}")
    return ModeSet(cols["slow+"], cols["slow-"], frames["+"].T[:, frames["+"].N:] @ cols["+"],
                   frames["-"].T[:, frames["-"].N:] @ cols["-"], tuple(chain))


def pinned_mode(frame: SideFrame, pin: np.ndarray) -> np.ndarray:
    """Extended W_z: T(0, pi c) at z = 0."""
    return frame.T[:, frame.N:] @ (frame.proj_P @ pin)


# --- R functions -------------------------------------------------------------

@dataclass
class RFunctions:
    """Decaying solutions S_0, S_j of the forced profile problems and their combinations.

    ``S[side]`` holds the z = 0 values as columns (S_0, S_1, ..).
    """
    zeta_hat: np.ndarray
    rho: float
    ell: np.ndarray
    S: Dict[str, np.ndarray]
    frames: Dict[str, SideFrame] = field(repr=False)
    _homogeneous: Dict[str, Tuple[np.ndarray, np.ndarray, np.ndarray]] = field(repr=False, default_factory=dict)

    @property
    def coefficients(self) -> np.ndarray:
        return np.concatenate([[lambda_hat(self.zeta_hat)], 1j * self.zeta_hat[2:]])

    def S_at(self, z, side: str) -> np.ndarray:
        """S(z) on one side, shape (len(z), 2N, d)."""
        z = np.atleast_1d(np.asarray(z, dtype=float))
        frame = self.frames[side]
        Y, U = frame.grid.at(z, frame.index)
        B, K, coords = self._homogeneous[side]
        E = np.array([sla.expm(zz * K) for zz in z])
        return U + Y @ (B[None] @ E @ coords[None])

    def r_check(self, z, side: str) -> np.ndarray:
        return self.S_at(z, side) @ self.coefficients

    def R(self, z, side: str) -> np.ndarray:
        return self.rho * self.r_check(z, side)

    def script_r(self, z, side: str, s_dot: float, h_dot: Sequence[float] = ()) -> np.ndarray:
        return self.S_at(z, side) @ np.concatenate([[s_dot], np.asarray(h_dot, dtype=float)])

    def r_check0(self, side: str) -> np.ndarray:
        return self.S[side] @ self.coefficients

    def jump(self) -> np.ndarray:
        """(R-check_+ - R-check_-)(0)."""
        return self.r_check0("+") - self.r_check0("-")

    def boundary_residual(self) -> float:
        lam, eta = split_frequency(self.zeta_hat, self.rho)
        c0 = lam + float(eta @ eta)
        return float(max(abs(self.ell @ (self.rho * self.r_check0(side)) + c0) for side in ("+", "-")))

    def interior_residual(self, sym: LinearizedSymbol, points: Sequence[float] = (0.5, 1.0, 2.0, 4.0, 8.0)) -> float:
        """max |S' - G S - F| at sample points of both sides by fourth-order differences."""
        step = config.conjugator_config.residual_step
        eta = split_frequency(self.zeta_hat, self.rho)[1]
        lam = split_frequency(self.zeta_hat, self.rho)[0]
        worst = 0.0
        for side, sign in (("+", 1.0), ("-", -1.0)):
            for z in points:
                zz = sign * z
                stencil = self.S_at(zz + step * np.array([-2.0, -1.0, 1.0, 2.0]), side)
                deriv = (stencil[0] - 8.0 * stencil[1] + 8.0 * stencil[2] - stencil[3]) / (12.0 * step)
                blk = sym.blocks(zz, side)
                G = blk.assemble(lam, eta)
                S = self.S_at(zz, side)[0]
                defect = deriv - G @ S - blk.forcing(eta)
                worst = max(worst, float(np.linalg.norm(defect)) / max(1.0, float(np.linalg.norm(S))))
        return worst


def build_r_functions(frames: Dict[str, SideFrame], ref_wz0: np.ndarray, zeta_hat: np.ndarray) -> RFunctions:
    """Pin the decaying particular solutions by ell . S_0(0) = -1 and ell . S_j(0) = i eta_j."""
    rho = frames["+"].rho
    N = frames["+"].N
    ell = np.concatenate([ref_wz0, np.zeros(N)]).astype(complex)
    eta = split_frequency(zeta_hat, rho)[1]
    targets = np.concatenate([[-1.0], 1j * eta])
    S, homogeneous = {}, {}
    for side in ("+", "-"):
        frame = frames[side]
        B = frame.invariant_fast
        Q = orthonormal(frame.Y0 @ B)
        x0 = frame.U0 - Q @ (Q.conj().T @ frame.U0)
        g = ell @ Q
        if np.linalg.norm(g) <= config.tolerance_config.null_space_threshold * np.linalg.norm(ell):
            raise DegenerateProfileError(f"translation pinning impossible on side {side}: |ell . fast modes| ~ 0",
                                         side=side)
        c = np.outer(g.conj(), targets - ell @ x0) / float(np.real(g @ g.conj()))
        S[side] = x0 + Q @ c
        K = B.conj().T @ frame.G @ B
        coords = B.conj().T @ np.linalg.solve(frame.Y0, S[side] - frame.U0)
        homogeneous[side] = (B, K, coords)
    return RFunctions(zeta_hat, rho, ell, S, frames, homogeneous)


# --- boundary operators ------------------------------------------------------

@dataclass
class BoundaryOperators:
    """Gamma_H, Gamma_P in HP coordinates, (2N+1) rows: the jump and ell . u_+(0)."""
    gamma_H: np.ndarray
    gamma_P: np.ndarray
    E_H: Optional[np.ndarray]
    E_P: np.ndarray
    E_P_growing: np.ndarray


def boundary_operators(frames: Dict[str, SideFrame], ell: np.ndarray) -> BoundaryOperators:
    Tp, Tm = frames["+"].T, frames["-"].T
    N = frames["+"].N

    def gamma(cols):
        top = np.hstack([Tp[:, cols], -Tm[:, cols]])
        third = np.concatenate([ell @ Tp[:, cols], np.zeros(N, dtype=complex)])
        return np.vstack([top, third[None, :]])

    E_H = None
    if frames["+"].U_H is not None:
        E_H = blockdiag(frames["+"].U_H, frames["-"].U_H)
    return BoundaryOperators(gamma(slice(0, N)), gamma(slice(N, 2 * N)), E_H,
                             blockdiag(frames["+"].U_P, frames["-"].U_P),
                             blockdiag(frames["+"].U_P_growing, frames["-"].U_P_growing))


def fast_range(ops: BoundaryOperators, expected: int) -> np.ndarray:
    """F_P = Gamma_P E_-(P), orthonormalized, with its dimension checked against N + 1 - k."""
    image = ops.gamma_P @ ops.E_P
    rank = rank_of(image).rank
    if rank != expected:
        raise DimensionError(f"dim F_P = {rank}, expected N + 1 - k = {expected}; a-transversality fails",
                             rank=rank, expected=expected)
    return orthonormal(image)


def reduced_operator(F_H: np.ndarray, F_P: np.ndarray, block: np.ndarray) -> np.ndarray:
    """F_H coordinates of ``block`` along F_P."""
    coords = np.linalg.solve(np.hstack([F_H, F_P]), block)
    return coords[:F_H.shape[1]]


def evans_reduced(ops: BoundaryOperators, F_H: np.ndarray, F_P: np.ndarray, r_jump: np.ndarray):
    """D_red = det(E_-(H) x C, ker Gamma-hat_red) and the kernel basis."""
    gamma_r = np.concatenate([r_jump, [0.0]])[:, None]
    reduced = reduced_operator(F_H, F_P, np.hstack([ops.gamma_H, gamma_r]))
    expected = reduced.shape[1] - reduced.shape[0]
    kernel = null_space(reduced)
    if kernel.shape[1] != expected:
        return 0j, kernel, gamma_r
    return stacked_det(blockdiag(ops.E_H, np.ones((1, 1))), kernel), kernel, gamma_r


def modified_frame(ops: BoundaryOperators, kernel: np.ndarray,
                   gamma_r: np.ndarray) -> Optional[Tuple[np.ndarray, np.ndarray]]:
    """Decaying basis and lifted kernel basis of D_m in HP coordinates (H+, H-, P+, P-, phi).

    Kernel columns lift ker Gamma-hat_red through E_-(P) and complete each
    growing P direction with a correction inside E_-(H) x E_-(P) x C.
    """
    nH2 = ops.gamma_H.shape[1]
    E_H, E_P, E_G = ops.E_H, ops.E_P, ops.E_P_growing
    if kernel.shape[1] != E_P.shape[1]:
        return None
    image_P = ops.gamma_P @ E_P
    lifted = []
    for col in kernel.T:
        v_H, phi = col[:nH2], col[nH2:]
        y = np.linalg.lstsq(image_P, -(ops.gamma_H @ v_H + gamma_r @ phi), rcond=None)[0]
        lifted.append(np.concatenate([v_H, E_P @ y, phi]))
    square = np.hstack([ops.gamma_H @ E_H, image_P, gamma_r])
    nH, nP = E_H.shape[1], E_P.shape[1]
    for e in E_G.T:
        x = np.linalg.lstsq(square, -(ops.gamma_P @ e), rcond=None)[0]
        lifted.append(np.concatenate([E_H @ x[:nH], e + E_P @ x[nH:nH + nP], x[-1:]]))
    n = 2 * nH2 + 1
    A = np.zeros((n, nH + nP + 1), dtype=complex)
    A[:nH2, :nH] = E_H
    A[nH2:2 * nH2, nH:nH + nP] = E_P
    A[-1, -1] = 1.0
    return A, np.column_stack(lifted)


def evans_modified(ops: BoundaryOperators, kernel: np.ndarray, gamma_r: np.ndarray) -> complex:
    """D_m in HP coordinates: det(E_-(H) x E_-(P) x C, ker Gamma_(H, P, R-check))."""
    built = modified_frame(ops, kernel, gamma_r)
    if built is None:
        return 0j
    return stacked_det(*built)


def compute_beta(ops: BoundaryOperators) -> complex:
    """beta = det(E_-(P), E_+(P)) with block-diagonal orthonormal bases."""
    return stacked_det(ops.E_P, ops.E_P_growing)


def evans_standard_hp(ops: BoundaryOperators) -> complex:
    """D_s_tilde = det(E_-(H) x E_-(P), ker [Gamma_H | Gamma_P] restricted to the jump rows)."""
    n = ops.gamma_H.shape[0] - 1
    jump = np.hstack([ops.gamma_H[:n], ops.gamma_P[:n]])
    kernel = null_space(jump)
    if kernel.shape[1] != jump.shape[1] - n:
        return 0j
    return stacked_det(blockdiag(ops.E_H, ops.E_P), kernel)


def direct_operator(r_jump: np.ndarray, ell: np.ndarray) -> np.ndarray:
    """[(u_+ - u_- + phi dR), ell . u_+] acting on (u_+, u_-, phi)."""
    n = r_jump.size
    op = np.zeros((n + 1, 2 * n + 1), dtype=complex)
    op[:n, :n] = np.eye(n)
    op[:n, n:2 * n] = -np.eye(n)
    op[:n, -1] = r_jump
    op[n, :n] = ell
    return op


def evans_modified_direct(E_plus: np.ndarray, E_minus: np.ndarray, r_jump: np.ndarray, ell: np.ndarray) -> complex:
    """det(E_+ x E_- x C, ker [(u_+ - u_- + phi dR), ell . u_+]) in original coordinates."""
    n = E_plus.shape[0]
    kernel = null_space(direct_operator(r_jump, ell))
    if kernel.shape[1] != n:
        return 0j
    return stacked_det(blockdiag(E_plus, E_minus, np.ones((1, 1))), kernel)


def hp_transport(frames: Dict[str, SideFrame]) -> np.ndarray:
    """(H+, H-, P+, P-, phi) -> (u_+, u_-, phi) through T_pm(0)."""
    Tp, Tm = frames["+"].T, frames["-"].T
    N = frames["+"].N
    n = 2 * N
    M = np.zeros((2 * n + 1, 2 * n + 1), dtype=complex)
    M[:n, :N] = Tp[:, :N]
    M[:n, 2 * N:3 * N] = Tp[:, N:]
    M[n:2 * n, N:2 * N] = Tm[:, :N]
    M[n:2 * n, 3 * N:4 * N] = Tm[:, N:]
    M[-1, -1] = 1.0
    return M


def modified_identity_error(frames: Dict[str, SideFrame], ops: BoundaryOperators, kernel: np.ndarray,
                            gamma_r: np.ndarray, E_plus: np.ndarray, E_minus: np.ndarray,
                            ell: np.ndarray, target: complex) -> float:
    """Relative gap between |D_m_direct| carried into HP coordinates and |target| = |beta D_red|.

    The original-coordinate bases are re-expressed in the HP bases through
    T_pm(0); a span mismatch between the two computations shows up in the
    returned error.
    """
    built = modified_frame(ops, kernel, gamma_r)
    if built is None or target == 0:
        return float("nan")
    A, K = built
    r_jump = gamma_r[:-1, 0]
    K_o = null_space(direct_operator(r_jump, ell))
    if K_o.shape[1] != E_plus.shape[0]:
        return float("nan")
    B_o = blockdiag(E_plus, E_minus, np.ones((1, 1)))
    M = hp_transport(frames)
    MA, MK = M @ A, M @ K
    R = np.linalg.lstsq(MA, B_o, rcond=None)[0]
    S = np.linalg.lstsq(MK, K_o, rcond=None)[0]
    span_gap = max(float(np.linalg.norm(MA @ R - B_o)), float(np.linalg.norm(MK @ S - K_o)))
    jacobian = np.linalg.det(M) * np.linalg.det(R) * np.linalg.det(S)
    if jacobian == 0:
        return float("nan")
    carried = stacked_det(B_o, K_o) / jacobian
    return max(abs(abs(carried) - abs(target)) / abs(target), span_gap)


def check_condition(grids: Dict[str, ConjugatorGrid], rho: float) -> None:
    worst = max(float(g.condition[g.index(rho)]) for g in grids.values())
    if worst > config.conjugator_config.fail_condition:
        raise ConjugationError(f"conjugator condition {worst:.2e} at rho={rho:g}", condition=worst, rho=rho)


# --- evaluator ---------------------------------------------------------------

@dataclass
class RayResult:
    zeta_hat: np.ndarray
    samples: List[DeterminantSample]
    rho0: float
    diagnostics: Dict[str, float]


class StabilityEvaluator:
    """All determinants of one connection, evaluated ray by ray in zeta_hat."""

    def __init__(self, cp: ConnectionPoint, chi_prime: np.ndarray):
        self.cp = cp
        self.model = cp.problem.model
        self.q = cp.q if cp.q.indices is not None else cp.q.with_indices(cp.problem.base.indices)
        self.N = self.model.N
        self.d = self.model.d
        self.indices = self.q.indices
        self.k = self.indices[2]
        self.sym = LinearizedSymbol(self.model, cp.profile, self.q)
        self.scale = gap_scale(self.sym)
        self.chi_prime = np.asarray(chi_prime, dtype=float)
        self.ref_wz0 = cp.problem.ref_wz0
        self.ell = np.concatenate([self.ref_wz0, np.zeros(self.N)]).astype(complex)
        self._frames0 = None
        self._base = None
        self._base_error: Optional[EvanscopeError] = None
        self._beta_k = None

    # rho = 0 data is frequency independent
    def _zero_frames(self, zeta_hat=None) -> Dict[str, SideFrame]:
        if self._frames0 is None:
            zh = np.zeros(self.d + 1)
            zh[1] = 1.0
            self._frames0 = {side: side_frame(self.sym, compute_conjugators(self.sym, side, zh, [0.0]), 0,
                                              self.scale) for side in ("+", "-")}
        return self._frames0

    def base(self) -> Dict:
        """c_pm, F_P(0), F_H and the rho = 0 R functions; a failure is kept and raised again."""
        if self._base_error is not None:
            raise self._base_error
        if self._base is None:
            try:
                self._base = self._build_base()
            except EvanscopeError as exc:
                self._base_error = exc
                raise
        return self._base

    def _build_base(self) -> Dict:
        frames = self._zero_frames()
        pins, upper = {}, {}
        for side in ("+", "-"):
            u, v = self.cp.profile.state(0.0, side)
            wzz = self.cp.profile.second_derivative(0.0, side)[0]
            pins[side], upper[side] = pinned_coefficients(frames[side], v[0], wzz)
        ops = boundary_operators(frames, self.ell)
        F_P = fast_range(ops, self.N + 1 - self.k)
        F_H = null_space(F_P.conj().T)
        zh = np.zeros(self.d + 1)
        zh[1] = 1.0
        rf = build_r_functions(frames, self.ref_wz0, zh)
        logger.info("rho=0 frames: |upper c+|=%.2e |upper c-|=%.2e", upper["+"], upper["-"])
        return {"frames": frames, "pins": pins, "upper": upper, "ops": ops, "F_P": F_P, "F_H": F_H, "rf": rf}

    def script_r_columns(self) -> np.ndarray:
        """Gamma_R columns ([S_0], 0), ([S_j], 0) at zeta = 0."""
        rf = self.base()["rf"]
        jump = rf.S["+"] - rf.S["-"]
        return np.vstack([jump, np.zeros((1, jump.shape[1]))])

    def gamma0_red(self, F_H: Optional[np.ndarray] = None) -> np.ndarray:
        """Gamma_0,red acting on (u_H+, u_H-, s_dot, h_dot)."""
        base = self.base()
        F_H = base["F_H"] if F_H is None else F_H
        block = np.hstack([base["ops"].gamma_H, self.script_r_columns()])
        return reduced_operator(F_H, base["F_P"], block)

    def gamma0_red_hat(self, zeta_hat: Sequence[float]) -> np.ndarray:
        """Gamma_0,red(u_H, psi lambda-hat, psi i eta-hat) acting on (u_H, psi)."""
        zeta_hat = normalize_frequency(zeta_hat)
        G0 = self.gamma0_red()
        n = 2 * self.N
        front = G0[:, n:] @ np.concatenate([[lambda_hat(zeta_hat)], 1j * zeta_hat[2:]])
        return np.hstack([G0[:, :n], front[:, None]])

    def tangent_residual(self, tangents: np.ndarray) -> float:
        """max |Gamma_0,red t| / |Gamma_0,red| over chart tangents t."""
        G0 = self.gamma0_red()
        scale = max(np.linalg.norm(G0, 2), np.finfo(float).tiny)
        return float(np.max(np.linalg.norm(G0 @ tangents, axis=0)) / scale)

    def complement_comparison(self, rotation: float = 0.3) -> float:
        """Largest angle between ker Gamma_0,red for the orthogonal and a rotated complement."""
        base = self.base()
        F_H, F_P = base["F_H"], base["F_P"]
        mix = np.zeros((F_P.shape[1], F_H.shape[1]))
        np.fill_diagonal(mix, rotation)
        rotated = orthonormal(F_H + F_P @ mix)
        k1 = null_space(self.gamma0_red(F_H))
        k2 = null_space(self.gamma0_red(rotated))
        if k1.shape[1] != k2.shape[1]:
            return float(np.pi / 2)
        return largest_angle(k1, k2)

    def beta_k(self) -> complex:
        """det(grad_(p,s,h) Psi pinv(chi'), F+(0), F-(0) without its pinned column)."""
        if self._beta_k is not None:
            return self._beta_k
        base = self.base()
        problem = self.cp.problem
        cols = np.arange(2 * self.N + self.d)
        grad_psi = problem.jacobian(self.cp.x, cols, psi_only=True)
        front = grad_psi @ np.linalg.pinv(self.chi_prime)
        fast = {}
        for side in ("+", "-"):
            frame = base["frames"][side]
            coords = fast_coordinates(frame.U_P, base["pins"][side], side)
            if side == "-":
                coords = coords[:, :-1]
            fast[side] = frame.T[:, self.N:] @ coords
        self._beta_k = stacked_det(front.astype(complex), fast["+"], fast["-"])
        return self._beta_k

    def p6_residual(self, zeta_hat: np.ndarray, frames_by_rho: Dict[float, Dict[str, SideFrame]]) -> float:
        """|(I - QQ^H)(Z + R-check(0))| with Z the rho-derivative of the pinned fast mode."""
        base = self.base()
        rf0 = base["rf"]
        worst = 0.0
        for side in ("+", "-"):
            pin = base["pins"][side]
            W0 = pinned_mode(base["frames"][side], pin)
            W1 = pinned_mode(frames_by_rho[P6_STEP][side], pin)
            W2 = pinned_mode(frames_by_rho[2 * P6_STEP][side], pin)
            Z = (-3.0 * W0 + 4.0 * W1 - W2) / (2.0 * P6_STEP)
            r_check = rf0.S[side] @ np.concatenate([[lambda_hat(zeta_hat)], 1j * zeta_hat[2:]])
            Q = orthonormal(base["frames"][side].fast)
            v = Z + r_check
            worst = max(worst, float(np.linalg.norm(v - Q @ (Q.conj().T @ v))))
        return worst

    def _sample(self, kind: str, value: complex, zh: Tuple[float, ...], rho: float, flag: str = "ok",
                chain: Sequence[str] = ()) -> DeterminantSample:
        return DeterminantSample(kind, value, zh, rho, flag, tuple(self.q.as_vector().tolist()), tuple(chain))

    def hyperbolic(self, zeta_hat: np.ndarray, continuation: bool = True) -> HyperbolicSubspace:
        return hyperbolic_subspace(self.model, self.q, zeta_hat, continuation)

    def lopatinski_samples(self, zeta_hat: np.ndarray) -> List[DeterminantSample]:
        zh = tuple(zeta_hat.tolist())
        try:
            hyp = self.hyperbolic(zeta_hat)
        except EvanscopeError as exc:
            return [self._sample("D_Lop", NAN, zh, 0.0, exc.code),
                    self._sample("D_Lop_m", NAN, zh, 0.0, exc.code)]
        flag = "continuity-suspect" if hyp.suspect else "ok"
        return [self._sample("D_Lop", lopatinski(self.chi_prime, hyp, zeta_hat, self.N), zh, 0.0, flag, hyp.chain),
                self._sample("D_Lop_m", lopatinski_modified(self.chi_prime, hyp, zeta_hat, self.N), zh, 0.0, flag,
                             hyp.chain)]

    def _hp_samples(self, frames, zeta_hat, E_plus, E_minus,
                    anchors) -> Tuple[Dict[str, complex], float, Tuple[str, ...]]:
        """HP-based determinants at one rho, the D_m_direct against beta D_red gap and the basis chain."""
        base = self.base()
        check_dimensions(frames, self.indices)
        modes = slow_fast_modes(frames, base["pins"], anchors.get("fast"), anchors.get("fast_label", ROOT))
        anchors["fast_label"] = f"rho={frames['+'].rho:.6g}"
        anchors["fast"] = {side: fast_coordinates(frames[side].U_P, frames[side].proj_P @ base["pins"][side], side)
                           for side in ("+", "-")}
        ops = boundary_operators(frames, self.ell)
        F_P = fast_range(ops, self.N + 1 - self.k)
        rf = build_r_functions(frames, self.ref_wz0, zeta_hat)
        d_red, kernel, gamma_r = evans_reduced(ops, base["F_H"], F_P, rf.jump())
        beta = compute_beta(ops)
        identity = modified_identity_error(frames, ops, kernel, gamma_r, E_plus, E_minus, self.ell, beta * d_red)
        values = {
            "DD_s": complex(np.linalg.det(modes.stacked())),
            "D_s_tilde": evans_standard_hp(ops),
            "D_red": d_red,
            "D_m": evans_modified(ops, kernel, gamma_r),
            "beta": beta,
            "D_m_direct": evans_modified_direct(E_plus, E_minus, rf.jump(), self.ell),
        }
        return values, identity, modes.chain + decaying_chain()

    def evaluate_ray(self, zeta_hat: Sequence[float], rhos: Sequence[float],
                     mid_rho: Sequence[float] = ()) -> RayResult:
        """Samples of every kind along rho for one zeta_hat; per-sample failures are flagged in-row."""
        zeta_hat = normalize_frequency(zeta_hat)
        zh = tuple(zeta_hat.tolist())
        samples = self.lopatinski_samples(zeta_hat)
        diagnostics: Dict[str, float] = {}
        ladder = sorted(set(float(r) for r in rhos))
        evaluated = sorted(set(ladder) | set(float(r) for r in mid_rho))
        try:
            beta_k = self.beta_k()
            frames0 = self.base()["frames"]
            samples.append(self._sample("beta_K", beta_k, zh, 0.0, chain=frames0["+"].chain + frames0["-"].chain))
        except EvanscopeError as exc:
            samples.append(self._sample("beta_K", NAN, zh, 0.0, exc.code))
        rho0 = adaptive_rho0(self.sym, zeta_hat, ladder)
        diagnostics["rho0"] = rho0
        batch = sorted(set(evaluated) | {P6_STEP, 2 * P6_STEP})
        try:
            grids = {side: compute_conjugators(self.sym, side, zeta_hat, batch, strict=False) for side in ("+", "-")}
        except EvanscopeError as exc:
            for rho in evaluated:
                samples.extend(self._sample(kind, NAN, zh, rho, exc.code) for kind in ("D_s",) + HP_KINDS)
            diagnostics["error"] = exc.code
            return RayResult(zeta_hat, samples, rho0, diagnostics)
        diagnostics["conjugator_residual"] = float(max(g.residual.max() for g in grids.values()))
        diagnostics["conjugator_condition"] = float(max(g.condition.max() for g in grids.values()))
        diagnostics["conjugator_rate"] = float(min(rate for g in grids.values() for _, rate in g.deviation_fit))

        frames_by_rho: Dict[float, Dict[str, SideFrame]] = {}
        anchors: Dict = {}
        identity_errors: List[float] = []
        for rho in batch:
            hp_valid = rho <= rho0 or rho in (P6_STEP, 2 * P6_STEP)
            E_plus = E_minus = None
            try:
                check_condition(grids, rho)
                frames = None
                if hp_valid:
                    prev = frames_by_rho.get(anchors.get("last_rho"), {})
                    frames = {side: side_frame(self.sym, grids[side], grids[side].index(rho), self.scale,
                                               prev.get(side)) for side in ("+", "-")}
                    frames_by_rho[rho] = frames
                    anchors["last_rho"] = rho
                if rho not in evaluated:
                    continue
                if frames is None:
                    frames = {side: _limit_only_frame(grids[side], grids[side].index(rho)) for side in ("+", "-")}
                E_plus, E_minus = decaying_subspaces(frames)
                samples.append(self._sample("D_s", evans_standard(E_plus, E_minus), zh, rho, chain=decaying_chain()))
            except EvanscopeError as exc:
                if rho in evaluated:
                    samples.extend(self._sample(kind, NAN, zh, rho, exc.code) for kind in ("D_s",) + HP_KINDS)
                continue
            if not hp_valid:
                samples.extend(self._sample(kind, NAN, zh, rho, "hp-gap") for kind in HP_KINDS)
                continue
            try:
                values, identity, chain = self._hp_samples(frames, zeta_hat, E_plus, E_minus, anchors)
                if np.isfinite(identity):
                    identity_errors.append(identity)
                samples.extend(self._sample(kind, values[kind], zh, rho, chain=chain) for kind in HP_KINDS)
            except EvanscopeError as exc:
                samples.extend(self._sample(kind, NAN, zh, rho, exc.code) for kind in HP_KINDS)
        diagnostics["dm_identity_error"] = float(max(identity_errors)) if identity_errors else float("nan")
        try:
            diagnostics["p6_residual"] = self.p6_residual(zeta_hat, frames_by_rho)
        except (EvanscopeError, KeyError):
            diagnostics["p6_residual"] = float("nan")
        try:
            diagnostics["pin_upper"] = float(max(self.base()["upper"].values()))
        except EvanscopeError:
            diagnostics["pin_upper"] = float("nan")
        logger.debug("ray %s: rho0=%.1e, %d samples", zh, rho0, len(samples))
        return RayResult(zeta_hat, samples, rho0, diagnostics)


def _limit_only_frame(grid: ConjugatorGrid, i: int) -> SideFrame:
    """Frame without an HP split, enough for the decaying subspaces above rho0."""
    n = grid.G_limits.shape[-1]
    N = n // 2
    empty = np.zeros((N, 0), dtype=complex)
    hp = HPBlocks(grid.side, float(grid.rhos[i]), np.eye(n, dtype=complex), np.zeros((N, N), dtype=complex),
                  np.zeros((N, N), dtype=complex), np.nan, np.nan, 0.0)
    side = grid.side
    return SideFrame(side, float(grid.rhos[i]), grid.Y0(i), grid.U0(i), grid.G_limits[i], hp, grid.Y0(i), None,
                     SubspaceBasis(empty, decaying_meaning("P", side), side),
                     SubspaceBasis(empty, decaying_meaning("P", side, decaying=False), side),
                     np.zeros((N, N)), grid, i)


def decaying_subspaces_at(sym: LinearizedSymbol, zeta_hat: Sequence[float], rho: float) -> Tuple[np.ndarray, np.ndarray]:
    """Convenience form of decaying_subspaces for a single frequency."""
    zeta_hat = normalize_frequency(zeta_hat)
    frames = {side: _limit_only_frame(compute_conjugators(sym, side, zeta_hat, [rho]), 0) for side in ("+", "-")}
    return decaying_subspaces(frames)


__all__ = [
    "KINDS",
    "HP_KINDS",
    "DeterminantSample",
    "HyperbolicSubspace",
    "RFunctions",
    "RayResult",
    "StabilityEvaluator",
    "SubspaceBasis",
    "build_r_functions",
    "compute_beta",
    "decaying_limit_subspace",
    "decaying_subspaces",
    "decaying_subspaces_at",
    "evans_modified",
    "evans_modified_direct",
    "evans_reduced",
    "evans_standard",
    "evans_standard_hp",
    "hyperbolic_subspace",
    "hyperbolic_symbol",
    "lopatinski",
    "lopatinski_modified",
    "slow_fast_modes",
]
