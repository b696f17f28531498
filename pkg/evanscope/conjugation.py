"""
Linearized first-order symbol, conjugators and HP block diagonalization

Frequencies are zeta = (tau, gamma, eta) with lambda = i tau + gamma; polar
coordinates zeta = rho * zeta_hat with zeta_hat on the closed upper hemisphere.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import solve_ivp
from scipy.stats import linregress

from config import config
from evanscope.errors import ConjugationError, HPGapError
from evanscope.linalg import invariant_split, spectral_split
from evanscope.model import PlanarShockPoint, SystemModel
from evanscope.profile import ProfileGrid

logger = logging.getLogger(__name__)


def split_frequency(zeta_hat: Sequence[float], rho: float) -> Tuple[complex, np.ndarray]:
    """(lambda, eta) for zeta = rho * zeta_hat."""
    zeta_hat = np.asarray(zeta_hat, dtype=float)
    lam = rho * complex(zeta_hat[1], zeta_hat[0])
    return lam, rho * zeta_hat[2:]


@dataclass
class SymbolBlocks:
    """G = Ga + lambda Gb + sum_j i eta_j Gc[j] + |eta|^2 Gd, and the R-function forcings."""
    Ga: np.ndarray
    Gb: np.ndarray
    Gc: List[np.ndarray]
    Gd: np.ndarray
    f0: np.ndarray
    fh: List[np.ndarray]
    wz: np.ndarray
    b: float

    def assemble(self, lam: complex, eta: np.ndarray) -> np.ndarray:
        G = self.Ga + lam * self.Gb + float(eta @ eta) * self.Gd
        for j, e in enumerate(eta):
            G = G + 1j * e * self.Gc[j]
        return G

    def forcing(self, eta: np.ndarray) -> np.ndarray:
        """Columns (0, -b f) for S_0 and S_j, j = 1..d-1."""
        N = self.f0.size
        cols = [self.f0] + [self.fh[j] - 1j * eta[j] * self.wz for j in range(len(self.fh))]
        out = np.zeros((2 * N, len(cols)), dtype=complex)
        for i, f in enumerate(cols):
            out[N:, i] = -self.b * f
        return out


class LinearizedSymbol:
    """Symbol G(z, q, zeta) of the linearized profile problem and its limits G_pm."""

    def __init__(self, model: SystemModel, profile: ProfileGrid, q: Optional[PlanarShockPoint] = None):
        self.model = model
        self.profile = profile
        self.q = profile.q if q is None else q
        self.N = model.N
        self.d = model.d
        self._length: Dict[Tuple[str, float], float] = {}

    def blocks_at(self, u: np.ndarray, v: np.ndarray) -> SymbolBlocks:
        model, q, N = self.model, self.q, self.N
        h = q.h
        b = model.b(h)
        curly = model.curly_ad(u, q.s, h)
        vv = b * curly @ v
        Ga = np.zeros((2 * N, 2 * N))
        Ga[:N, N:] = np.eye(N)
        if np.any(v):
            Ga[N:, :N] = b * np.einsum("ijk,j->ik", model.d_curly_ad(u, q.s, h), v)
        Ga[N:, N:] = b * curly
        A0 = model.a(0, u)
        Gb = np.zeros_like(Ga)
        Gb[N:, :N] = b * A0
        Gc, fh = [], []
        for j in range(1, self.d):
            Aj = model.a(j, u)
            block = np.zeros_like(Ga)
            block[N:, :N] = b * Aj
            block[N:, N:] = 2.0 * b * h[j - 1] * np.eye(N)
            Gc.append(block)
            fh.append(Aj @ v + 2.0 * h[j - 1] * vv)
        Gd = np.zeros_like(Ga)
        Gd[N:, :N] = b * np.eye(N)
        return SymbolBlocks(Ga, Gb, Gc, Gd, A0 @ v, fh, v, b)

    def blocks(self, z: float, side: str) -> SymbolBlocks:
        u, v = self.profile.state(z, side)
        return self.blocks_at(u[0], v[0])

    def limit_blocks(self, side: str) -> SymbolBlocks:
        p = self.q.p_plus if side == "+" else self.q.p_minus
        return self.blocks_at(p, np.zeros(self.N))

    def evaluate(self, z: float, zeta_hat: Sequence[float], rho: float, side: str) -> np.ndarray:
        return self.blocks(z, side).assemble(*split_frequency(zeta_hat, rho))

    def limit(self, side: str, zeta_hat: Sequence[float], rho: float) -> np.ndarray:
        return self.limit_blocks(side).assemble(*split_frequency(zeta_hat, rho))

    def g22(self, side: str) -> np.ndarray:
        """P(q, 0) = b(h) * curly_ad at the endstate."""
        return self.limit_blocks(side).Ga[self.N:, self.N:]

    def symbol_length(self, side: str, rho_max: float) -> float:
        """Smallest |z| beyond which |G - G_pm| stays below the symbol tolerance."""
        key = (side, float(rho_max))
        if key in self._length:
            return self._length[key]
        tol = config.conjugator_config.symbol_tolerance
        lim = self.limit_blocks(side)
        mask = self.profile.side == (1 if side == "+" else -1)
        z_nodes = np.abs(self.profile.z[mask])
        order = np.argsort(z_nodes)
        z_nodes = z_nodes[order]
        deviations = []
        for z in z_nodes:
            blk = self.blocks(z if side == "+" else -z, side)
            dev = np.linalg.norm(blk.Ga - lim.Ga) + rho_max * np.linalg.norm(blk.Gb - lim.Gb)
            dev += rho_max * sum(np.linalg.norm(c - lc) for c, lc in zip(blk.Gc, lim.Gc))
            deviations.append(dev)
        deviations = np.asarray(deviations)
        bad = np.nonzero(deviations > tol)[0]
        if bad.size == 0:
            length = float(z_nodes[0]) if z_nodes[0] > 0 else float(z_nodes[1])
        elif bad[-1] == z_nodes.size - 1:
            raise ConjugationError(
                f"|G - G{side}| = {deviations[-1]:.2e} at the outer node; increase the truncation length",
                deviation=float(deviations[-1]))
        else:
            length = float(z_nodes[bad[-1] + 1])
        length = max(length, 1.0)
        self._length[key] = length
        return length


def _renormalize(Y0: np.ndarray, G_lim: np.ndarray, side: str, theta: float):
    """Coefficients X of the commutator correction Y -> Y (I + V (X o e^{rz}) V^-1).

    X lives on the entries whose rate r grows toward z = 0. Each column is
    the least-squares choice bringing Y(0) closest to I in eigen
    coordinates. The patterns are closed under products, so the result is
    independent of the growing contamination in the raw solve. Returns None
    when no correction applies.
    """
    n = Y0.shape[0]
    if np.array_equal(Y0, np.eye(n)):
        return None
    mu, V = np.linalg.eig(G_lim)
    if np.linalg.cond(V) > config.conjugator_config.eigvec_condition:
        return None
    r = mu[:, None] - mu[None, :]
    selected = r.real < -theta if side == "+" else r.real > theta
    if not np.any(selected):
        return None
    V_inv = np.linalg.inv(V)
    Yh = V_inv @ Y0 @ V
    X = np.zeros((n, n), dtype=complex)
    for j in range(n):
        rows = np.nonzero(selected[:, j])[0]
        if rows.size == 0:
            continue
        target = -Yh[:, j].copy()
        target[j] += 1.0
        try:
            X[rows, j] = np.linalg.lstsq(Yh[:, rows], target, rcond=None)[0]
        except np.linalg.LinAlgError:
            logger.warning("conjugator renormalization skipped: least squares failed at column %d", j)
            return None
    if not np.any(X):
        return None
    return V, V_inv, r, X


@dataclass
class ConjugatorGrid:
    """Conjugators Y(z) and forced particular solutions on one side, batched over rho.

    ``Y[i]`` has shape (nodes, 2N, 2N) for rhos[i]; ``U[i]`` has shape
    (nodes, 2N, d) and holds the decaying particular solutions of the forced
    R-function problems with U(+-L) = 0.
    """
    side: str
    zeta_hat: np.ndarray
    rhos: np.ndarray
    z: np.ndarray
    Y: np.ndarray
    U: np.ndarray
    G_limits: np.ndarray
    length: float
    deviation_fit: List[Tuple[float, float]]
    residual: np.ndarray
    condition: np.ndarray
    _sol: object = field(repr=False, default=None)
    _corrections: List = field(repr=False, default_factory=list)

    def index(self, rho: float) -> int:
        hits = np.nonzero(self.rhos == rho)[0]
        if hits.size == 0:
            raise KeyError(f"rho={rho} not in the conjugator batch")
        return int(hits[0])

    def Y0(self, i: int) -> np.ndarray:
        return self.Y[i, self._origin]

    def U0(self, i: int) -> np.ndarray:
        return self.U[i, self._origin]

    @property
    def _origin(self) -> int:
        return int(np.argmin(np.abs(self.z)))

    def at(self, z, i: int):
        """(Y, U) at arbitrary points of the side; identity and zero beyond the solve interval."""
        z = np.atleast_1d(np.asarray(z, dtype=float))
        n = self.G_limits.shape[-1]
        k = self.U.shape[-1]
        m = self.rhos.size
        Y = np.tile(np.eye(n, dtype=complex), (z.size, 1, 1))
        U = np.zeros((z.size, n, k), dtype=complex)
        inside = np.abs(z) <= self.length
        if np.any(inside) and self._sol is not None:
            y = self._sol(z[inside]).T
            Y[inside] = y[:, :m * n * n].reshape(-1, m, n, n)[:, i]
            U[inside] = y[:, m * n * n:].reshape(-1, m, n, k)[:, i]
        correction = self._corrections[i] if self._corrections else None
        if correction is not None:
            V, V_inv, r, X = correction
            E = np.exp(r[None, :, :] * z[:, None, None])
            Y = Y @ (np.eye(n) + V @ (X[None] * E) @ V_inv)
        return Y, U


def compute_conjugators(sym: LinearizedSymbol, side: str, zeta_hat: Sequence[float],
                        rhos: Sequence[float], strict: bool = True) -> ConjugatorGrid:
    """Integrate dY = G Y - Y G_pm and dU = G U + F inward from Y = I, U = 0.

    All rho share one integration so the profile and model matrices are
    evaluated once per step. With ``strict`` off an ill-conditioned rho does
    not fail the batch; callers check ``condition`` per rho.
    """
    cfg = config.conjugator_config
    zeta_hat = np.asarray(zeta_hat, dtype=float)
    rhos = np.asarray(rhos, dtype=float)
    N = sym.N
    n = 2 * N
    k = sym.d
    m = rhos.size
    lams = np.array([split_frequency(zeta_hat, r)[0] for r in rhos])
    etas = np.array([split_frequency(zeta_hat, r)[1] for r in rhos]).reshape(m, sym.d - 1)
    lim = sym.limit_blocks(side)
    G_lim = np.array([lim.assemble(lams[i], etas[i]) for i in range(m)])
    length = sym.symbol_length(side, float(rhos.max()))
    sign = 1.0 if side == "+" else -1.0

    def stack(blk: SymbolBlocks):
        G = blk.Ga[None] + lams[:, None, None] * blk.Gb[None] \
            + np.einsum("i,jk->ijk", np.sum(etas ** 2, axis=1), blk.Gd)
        for j in range(sym.d - 1):
            G = G + 1j * etas[:, j, None, None] * blk.Gc[j][None]
        F = np.array([blk.forcing(etas[i]) for i in range(m)])
        return G, F

    def rhs(z, y):
        G, F = stack(sym.blocks(z, side))
        Y = y[:m * n * n].reshape(m, n, n)
        U = y[m * n * n:].reshape(m, n, k)
        dY = G @ Y - Y @ G_lim
        dU = G @ U + F
        return np.concatenate([dY.ravel(), dU.ravel()])

    y0 = np.concatenate([np.tile(np.eye(n, dtype=complex), (m, 1, 1)).ravel(),
                         np.zeros(m * n * k, dtype=complex)])
    sol = solve_ivp(rhs, (sign * length, 0.0), y0, method="DOP853", rtol=cfg.rtol, atol=cfg.atol,
                    dense_output=True)
    if not sol.success:
        raise ConjugationError(f"conjugator integration failed on side {side}: {sol.message}")

    nodes = int(np.ceil(length / cfg.node_spacing))
    z = sign * np.linspace(0.0, length, nodes + 1)
    y_nodes = sol.sol(z).T
    Y_raw = y_nodes[:, :m * n * n].reshape(-1, m, n, n).transpose(1, 0, 2, 3)
    U = y_nodes[:, m * n * n:].reshape(-1, m, n, k).transpose(1, 0, 2, 3)

    # FD defect of the raw solution at interior nodes
    eta = cfg.residual_step
    interior = np.abs(z) <= length - 2 * eta
    zi = z[interior]
    deriv = sum(w * sol.sol(zi + o * eta).T for o, w in ((-2, 1.0), (-1, -8.0), (1, 8.0), (2, -1.0)))
    deriv /= 12.0 * eta
    residual = np.zeros(m)
    for row, zz in enumerate(zi):
        defect = deriv[row] - rhs(zz, y_nodes[interior][row])
        d = defect[:m * n * n].reshape(m, n, n)
        scale = np.maximum(1.0, np.linalg.norm(Y_raw[:, np.nonzero(interior)[0][row]], axis=(1, 2)))
        residual = np.maximum(residual, np.linalg.norm(d, axis=(1, 2)) / scale)

    theta = 0.5 * sym.profile.decay_rate if np.isfinite(sym.profile.decay_rate) else 0.5
    corrections = []
    Y = np.empty_like(Y_raw)
    for i in range(m):
        origin = int(np.argmin(np.abs(z)))
        corr = _renormalize(Y_raw[i, origin], G_lim[i], side, theta) if cfg.renormalize else None
        corrections.append(corr)
        if corr is None:
            Y[i] = Y_raw[i]
        else:
            V, V_inv, r, X = corr
            E = np.exp(r[None] * z[:, None, None])
            Y[i] = Y_raw[i] @ (np.eye(n) + V @ (X[None] * E) @ V_inv)

    fits = []
    condition = np.zeros(m)
    for i in range(m):
        dev = np.linalg.norm(Y[i] - np.eye(n), axis=(1, 2))
        condition[i] = float(np.max(np.linalg.cond(Y[i])))
        mask = (dev > 1e-12) & (dev < 1e-1)
        if np.count_nonzero(mask) >= 3:
            fit = linregress(np.abs(z[mask]), np.log(dev[mask]))
            fits.append((float(np.exp(fit.intercept)), float(-fit.slope)))
        else:
            fits.append((float(dev.max()), np.inf))
    worst = float(condition.max())
    if strict and worst > cfg.fail_condition:
        raise ConjugationError(f"conjugator condition {worst:.2e} on side {side}; increase L or reduce rtol",
                               condition=worst)
    if worst > cfg.max_condition:
        logger.warning("conjugator condition %.2e exceeds %.0e on side %s", worst, cfg.max_condition, side)
    logger.debug("conjugators side %s: L=%.1f, %d rho, max residual %.2e", side, length, m, residual.max())
    return ConjugatorGrid(side, zeta_hat, rhos, z, Y, U, G_lim, length, fits, residual, condition,
                          sol.sol, corrections)


def compute_conjugator(sym: LinearizedSymbol, side: str, zeta_hat: Sequence[float], rho: float) -> ConjugatorGrid:
    return compute_conjugators(sym, side, zeta_hat, [rho])


@dataclass
class HPBlocks:
    """Lambda^-1 G_pm Lambda = diag(H, P) on one side at one frequency."""
    side: str
    rho: float
    Lambda: np.ndarray
    H: np.ndarray
    P: np.ndarray
    residual: float
    cluster_radius: float
    gap: float

    @property
    def valid(self) -> bool:
        return self.rho == 0.0 or self.gap >= config.conjugator_config.gap_factor * self.cluster_radius


def gap_scale(sym: LinearizedSymbol) -> float:
    """Smallest |mu| over the endstate matrices G22(p_pm)."""
    return float(min(np.min(np.abs(np.linalg.eigvals(sym.g22(side)))) for side in ("+", "-")))


def hp_split(G_limit: np.ndarray, G22: np.ndarray, rho: float, scale: float, side: str = "+") -> HPBlocks:
    """Slow/fast block diagonalization by projector continuation from rho = 0."""
    N = G22.shape[0]
    Lambda0 = np.eye(2 * N, dtype=complex)
    Lambda0[:N, N:] = np.linalg.inv(G22)
    if rho == 0.0:
        return HPBlocks(side, 0.0, Lambda0, np.zeros((N, N), dtype=complex), G22.astype(complex), 0.0, 0.0,
                        float(np.min(np.abs(np.linalg.eigvals(G22)))))
    threshold = np.sqrt(rho) * scale
    mu = np.linalg.eigvals(G_limit)
    slow = np.abs(mu) <= threshold
    radius = float(np.max(np.abs(mu[slow]))) if np.any(slow) else 0.0
    gap = float(np.min(np.abs(mu[~slow])) - radius) if np.any(~slow) else np.inf
    if np.count_nonzero(slow) != N:
        raise HPGapError(f"slow cluster has {np.count_nonzero(slow)} eigenvalues, expected {N} (rho={rho:g})",
                         gap=gap, radius=radius)
    split = invariant_split(G_limit, lambda x: abs(x) <= threshold)
    Lambda = np.hstack([split.proj_selected @ Lambda0[:, :N], split.proj_rest @ Lambda0[:, N:]])
    M = np.linalg.solve(Lambda, G_limit @ Lambda)
    residual = float(np.linalg.norm(M[:N, N:]) + np.linalg.norm(M[N:, :N]))
    return HPBlocks(side, float(rho), Lambda, M[:N, :N], M[N:, N:], residual, radius, gap)


def adaptive_rho0(sym: LinearizedSymbol, zeta_hat: Sequence[float], ladder: Sequence[float]) -> float:
    """Largest ladder rho up to which both sides split with gap >= gap_factor * radius."""
    scale = gap_scale(sym)
    rho0 = 0.0
    for rho in sorted(r for r in ladder if r > 0):
        try:
            blocks = [hp_split(sym.limit(side, zeta_hat, rho), sym.g22(side), rho, scale, side)
                      for side in ("+", "-")]
        except HPGapError:
            break
        if not all(b.valid for b in blocks):
            break
        rho0 = rho
    return rho0


def total_conjugator(Y0: np.ndarray, hp: HPBlocks) -> np.ndarray:
    """T = Y Lambda at z = 0."""
    return Y0 @ hp.Lambda


def decaying_limit_subspace(G_limit: np.ndarray, side: str) -> np.ndarray:
    """Orthonormal basis of E_-(G_+) (side +) or E_+(G_-) (side -)."""
    minus, plus, _, _ = spectral_split(G_limit)
    return minus if side == "+" else plus
