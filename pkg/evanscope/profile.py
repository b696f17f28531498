"""
Viscous profile construction

Tail solutions on each side of the front, the separation functions Psi and
Psi-tilde, Newton solvers for heteroclinic connections, sampled profile grids
and transversality classification.
"""

import logging
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import linalg as sla
from scipy.integrate import solve_ivp
from scipy.stats import linregress

from config import config
from evanscope.errors import (
    EvanscopeError,
    ModelDomainError,
    NonConvergenceError,
    RadiusError,
    TransversalityError,
    TruncationError,
)
from evanscope.linalg import RankInfo, loewdin, rank_of, spectral_split
from evanscope.model import PlanarShockPoint, SystemModel, compressive_indices

logger = logging.getLogger(__name__)

SIDES = ("+", "-")


def tail_subspace(model: SystemModel, p: np.ndarray, s: float, h: np.ndarray, side: str):
    """G_d at an endstate with the basis and projector of its tail subspace.

    The + side keeps the decaying subspace, the - side the growing one.
    """
    G = model.g_d(p, s, h)
    minus, plus, proj_minus, proj_plus = spectral_split(G)
    if side == "+":
        return G, minus, proj_minus
    return G, plus, proj_plus


def truncation_length(model: SystemModel, q: PlanarShockPoint) -> float:
    """Truncation L with exp(-delta L) <= tail_precision, delta half the spectral gap."""
    cfg = config.profile_config
    gaps = []
    for p in (q.p_plus, q.p_minus):
        gaps.append(np.min(np.abs(np.linalg.eigvals(model.g_d(p, q.s, q.h)).real)))
    delta = 0.5 * float(min(gaps))
    L = np.log(1.0 / cfg.tail_precision) / delta
    return float(np.clip(L, cfg.min_truncation, cfg.max_truncation))


class TailSolution:
    """Half-profile on one side of z = 0, in profile coordinates.

    The + tail lives on [0, L] and the - tail on [-L, 0]. Beyond the
    shooting start the solution is the exact linear tail
    u = p + G^-1 exp((z - z_start) G) v_start.
    """

    def __init__(self, model: SystemModel, side: str, p: np.ndarray, s: float, h: np.ndarray,
                 a: np.ndarray, z0: float, L: float, G: np.ndarray, B: np.ndarray,
                 proj: np.ndarray, z_start: float = 0.0, c_start: Optional[np.ndarray] = None,
                 sol=None, coefficients: Optional[np.ndarray] = None,
                 jacobian: Optional[np.ndarray] = None):
        self.model = model
        self.side = side
        self.p = np.asarray(p, dtype=float)
        self.s = float(s)
        self.h = np.asarray(h, dtype=float)
        self.a = np.asarray(a, dtype=float)
        self.z0 = float(z0)
        self.L = float(L)
        self.G = G
        self.B = B
        self.proj = proj
        self.K = B.T @ G @ B
        self.z_start = float(z_start)
        self.c_start = np.zeros(B.shape[1]) if c_start is None else c_start
        self.sol = sol
        self.coefficients = coefficients
        self.jacobian = jacobian

    @property
    def sign(self) -> float:
        return 1.0 if self.side == "+" else -1.0

    @property
    def is_constant(self) -> bool:
        return self.sol is None

    def state(self, z) -> Tuple[np.ndarray, np.ndarray]:
        """(u, u_z) at the given points, arrays of shape (len(z), N)."""
        z = np.atleast_1d(np.asarray(z, dtype=float))
        N = self.p.size
        u = np.tile(self.p, (z.size, 1))
        v = np.zeros((z.size, N))
        if self.sol is None:
            return u, v
        far = self.sign * (z - self.z_start) > 0
        near = ~far
        if np.any(near):
            y = self.sol(z[near])
            u[near] = y[:N].T
            v[near] = y[N:].T
        if np.any(far):
            E = sla.expm((z[far] - self.z_start)[:, None, None] * self.K[None, :, :])
            coords = E @ self.c_start
            v[far] = coords @ self.B.T
            u[far] = self.p + (coords @ np.linalg.inv(self.K).T) @ self.B.T
        return u, v

    def second_derivative(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        b = self.model.b(self.h)
        return np.array([b * self.model.curly_ad(ui, self.s, self.h) @ vi for ui, vi in zip(u, v)])


def _constant_tail(model, side, p, s, h, a, z0, L, G, B, proj) -> TailSolution:
    return TailSolution(model, side, p, s, h, a, z0, L, G, B, proj)


def solve_phi(model: SystemModel, p: np.ndarray, s: float, h: np.ndarray, a: np.ndarray,
              side: str, L: float, z0: float = 0.0, basis: Optional[np.ndarray] = None,
              start: Optional[np.ndarray] = None, jacobian: Optional[np.ndarray] = None) -> TailSolution:
    """Tail solution with limit p and projected constraint at |z| = z0.

    The projected derivative at the constraint point equals B a, where B is
    the Loewdin-orthonormalized projection of ``basis`` onto the tail
    subspace of G_d(p, s, h).
    """
    cfg = config.profile_config
    p = np.asarray(p, dtype=float)
    h = np.asarray(h, dtype=float)
    a = np.asarray(a, dtype=float).ravel()
    G, own_basis, proj = tail_subspace(model, p, s, h, side)
    B = own_basis if basis is None else loewdin(proj @ basis)
    if B.shape[1] != a.size:
        raise ModelDomainError(f"a has {a.size} entries, the {side} tail subspace has dimension {B.shape[1]}")
    if not np.any(a):
        return _constant_tail(model, side, p, s, h, a, z0, L, G, B, proj)
    if np.linalg.norm(a) > cfg.radius:
        raise RadiusError(f"|a| = {np.linalg.norm(a):.3e} exceeds the tail radius {cfg.radius}")

    K = B.T @ G @ B
    rate = float(np.min(np.abs(np.linalg.eigvals(K).real)))
    ell = np.log(1.0 / cfg.linear_regime) / rate
    if z0 + ell > L:
        if np.exp(-rate * (L - z0)) > np.sqrt(cfg.linear_regime):
            raise TruncationError(f"truncation L={L:.1f} too short for tail decay rate {rate:.3e}",
                                  rate=rate, L=L)
        ell = L - z0
    sign = 1.0 if side == "+" else -1.0
    z_start = sign * (z0 + ell)
    z_con = sign * z0
    push = sla.expm(sign * ell * K)
    G_inv = np.linalg.inv(G)
    b = model.b(h)
    N = p.size

    def rhs(z, y):
        return np.concatenate([y[N:], b * (model.curly_ad(y[:N], s, h) @ y[N:])])

    def shoot(c):
        v_s = B @ (push @ c)
        y0 = np.concatenate([p + G_inv @ v_s, v_s])
        sol = solve_ivp(rhs, (z_start, 0.0), y0, method="DOP853", rtol=cfg.rtol, atol=cfg.atol,
                        dense_output=True)
        if not sol.success:
            raise RadiusError(f"tail integration failed: {sol.message}")
        y = sol.sol(z_con)
        return sol.sol, B.T @ (proj @ y[N:]) - a

    def fd_jacobian(c, r):
        J = np.empty((a.size, a.size))
        for i in range(a.size):
            step = 1e-7 * (1.0 + abs(c[i]))
            e = np.zeros(a.size)
            e[i] = step
            J[:, i] = (shoot(c + e)[1] - r) / step
        return J

    c = a.copy() if start is None else np.asarray(start, dtype=float).copy()
    sol, r = shoot(c)
    J = fd_jacobian(c, r) if jacobian is None else jacobian
    history = [float(np.linalg.norm(r))]
    refreshed = jacobian is None
    for _ in range(cfg.inner_max_iter):
        if history[-1] <= cfg.inner_tolerance * max(1.0, np.linalg.norm(a)):
            break
        dc = np.linalg.solve(J, -r)
        t = 1.0
        while True:
            try:
                sol_t, r_t = shoot(c + t * dc)
                if np.linalg.norm(r_t) < history[-1] or t < 1e-3:
                    break
            except (ModelDomainError, RadiusError, FloatingPointError, ValueError):
                if t < 1e-3:
                    raise RadiusError("tail shooting left the model domain; reduce |a'|",
                                      history=history)
            t *= 0.5
        c, sol, r = c + t * dc, sol_t, r_t
        history.append(float(np.linalg.norm(r)))
        if history[-1] > 0.5 * history[-2]:
            # integration noise floor
            if history[-1] <= cfg.inner_accept * max(1.0, np.linalg.norm(a)):
                break
            if refreshed and history[-1] >= history[-2]:
                break
            J = fd_jacobian(c, r)
            refreshed = True
    if history[-1] > cfg.inner_accept * max(1.0, np.linalg.norm(a)):
        raise RadiusError(f"tail iteration did not contract (residual {history[-1]:.3e}); use a smaller radius",
                          history=history)
    logger.debug("tail %s solved in %d iterations, residual %.2e", side, len(history) - 1, history[-1])
    return TailSolution(model, side, p, s, h, a, z0, L, G, B, proj, z_start=z_start,
                        c_start=push @ c, sol=sol, coefficients=c, jacobian=J)


def first_order_tail(model: SystemModel, p: np.ndarray, s: float, h: np.ndarray, a: np.ndarray,
                     side: str, basis: Optional[np.ndarray] = None) -> np.ndarray:
    """Linear prediction u(z0) - p = G^-1 B a for small a."""
    G, own_basis, proj = tail_subspace(model, np.asarray(p, dtype=float), s, np.asarray(h, dtype=float), side)
    B = own_basis if basis is None else loewdin(proj @ basis)
    return np.linalg.solve(G, B @ np.asarray(a, dtype=float))


@dataclass
class ProfileGrid:
    """Sampled heteroclinic profile with two rows at z = 0 (sides -, +)."""
    model: SystemModel
    q: PlanarShockPoint
    z: np.ndarray
    side: np.ndarray
    w: np.ndarray
    wp: np.ndarray
    residual: np.ndarray
    decay_rate: float
    decay_constant: float
    truncation: float
    tails: Dict[str, TailSolution] = field(repr=False)

    def state(self, z, side: str) -> Tuple[np.ndarray, np.ndarray]:
        return self.tails[side].state(z)

    def second_derivative(self, z, side: str) -> np.ndarray:
        u, v = self.state(z, side)
        return self.tails[side].second_derivative(u, v)

    @property
    def N(self) -> int:
        return self.q.N

    def to_frame(self) -> pd.DataFrame:
        columns = {"z": self.z}
        for i in range(self.N):
            columns[f"w_{i + 1}"] = self.w[:, i]
        for i in range(self.N):
            columns[f"wp_{i + 1}"] = self.wp[:, i]
        columns["residual"] = self.residual
        return pd.DataFrame(columns)


def _stencil_derivative(tail: TailSolution, z: np.ndarray, eta: float):
    weights = ((-2.0, 1.0), (-1.0, -8.0), (1.0, 8.0), (2.0, -1.0))
    du = np.zeros((z.size, tail.p.size))
    dv = np.zeros_like(du)
    for offset, weight in weights:
        u, v = tail.state(z + offset * eta)
        du += weight * u
        dv += weight * v
    return du / (12.0 * eta), dv / (12.0 * eta)


def profile_residual(tail: TailSolution, z: np.ndarray) -> np.ndarray:
    """Defect of the first-order profile system by fourth-order differences."""
    eta = config.profile_config.residual_step
    u, v = tail.state(z)
    du, dv = _stencil_derivative(tail, z, eta)
    rhs = tail.second_derivative(u, v)
    return np.maximum(np.linalg.norm(du - v, axis=1), np.linalg.norm(dv - rhs, axis=1))


def _decay_fit(z: np.ndarray, dev: np.ndarray, L: float):
    """Exponential fit |w - p| ~ C exp(-delta |z|) over the clean tail regime."""
    mask = (dev > 1e-12) & (dev < 1e-4)
    if np.count_nonzero(mask) < 3:
        return np.inf, 0.0
    fit = linregress(np.abs(z[mask]), np.log(dev[mask]))
    return float(-fit.slope), float(np.exp(fit.intercept))


def build_profile_grid(model: SystemModel, q: PlanarShockPoint, tails: Dict[str, TailSolution],
                       spacing: Optional[float] = None) -> ProfileGrid:
    spacing = config.profile_config.node_spacing if spacing is None else spacing
    L = tails["+"].L
    n = int(round(L / spacing))
    z_plus = np.linspace(0.0, L, n + 1)
    z_minus = -z_plus[::-1]
    parts = []
    rates, constants = [], []
    for side, z in (("-", z_minus), ("+", z_plus)):
        tail = tails[side]
        u, v = tail.state(z)
        residual = profile_residual(tail, z) if not tail.is_constant else np.zeros(z.size)
        rate, constant = _decay_fit(z, np.linalg.norm(u - tail.p, axis=1), L)
        rates.append(rate)
        constants.append(constant)
        parts.append((z, np.full(z.size, 1 if side == "+" else -1), u, v, residual))
    z = np.concatenate([p[0] for p in parts])
    return ProfileGrid(
        model=model, q=q, z=z, side=np.concatenate([p[1] for p in parts]),
        w=np.vstack([p[2] for p in parts]), wp=np.vstack([p[3] for p in parts]),
        residual=np.concatenate([p[4] for p in parts]),
        decay_rate=float(min(rates)), decay_constant=float(max(constants)), truncation=L, tails=tails)


def constant_profile(model: SystemModel, p: np.ndarray, s: float, h: Sequence[float] = (),
                     L: float = 20.0) -> ProfileGrid:
    """Grid of the constant solution w = p (both sides)."""
    p = np.asarray(p, dtype=float)
    h = np.asarray(h, dtype=float)
    tails = {}
    for side in SIDES:
        G, B, proj = tail_subspace(model, p, s, h, side)
        tails[side] = _constant_tail(model, side, p, s, h, np.zeros(B.shape[1]), 0.0, L, G, B, proj)
    q = PlanarShockPoint(p, p, s, h)
    return build_profile_grid(model, q, tails)


class ConnectionProblem:
    """Separation functions Psi and Psi-tilde around a reference connection.

    Unknowns are packed as x = (p_plus, p_minus, s, h, a_plus, a_minus). The
    a-coordinates refer to bases frozen at the reference endstates.
    """

    def __init__(self, model: SystemModel, base: PlanarShockPoint, z_bar: float,
                 ref_w0: np.ndarray, ref_wz0: np.ndarray, a_ref: Tuple[np.ndarray, np.ndarray],
                 g_factor: float = 1.0, truncation: Optional[float] = None):
        self.model = model
        self.base = base.with_indices(compressive_indices(model, base))
        self.z_bar = float(z_bar)
        self.z0 = -float(z_bar)
        self.g_factor = float(g_factor)
        self.ref_w0 = np.asarray(ref_w0, dtype=float)
        self.ref_wz0 = np.asarray(ref_wz0, dtype=float)
        self.L = truncation_length(model, self.base) if truncation is None else float(truncation)
        N, d = model.N, model.d
        self.frozen = {side: tail_subspace(model, getattr(self.base, "p_plus" if side == "+" else "p_minus"),
                                           self.base.s, self.base.h, side)[1] for side in SIDES}
        self.n_a = {side: self.frozen[side].shape[1] for side in SIDES}
        self.cols_p = np.arange(0, 2 * N)
        self.cols_s = np.array([2 * N])
        self.cols_h = np.arange(2 * N + 1, 2 * N + d)
        self.cols_a = np.arange(2 * N + d, 2 * N + d + self.n_a["+"] + self.n_a["-"])
        self._cache: "OrderedDict[tuple, TailSolution]" = OrderedDict()
        self._lock = threading.Lock()
        self._start: Dict[str, Tuple[np.ndarray, np.ndarray]] = {}
        for side, a in zip(SIDES, a_ref):
            a = np.asarray(a, dtype=float)
            if np.any(a):
                tail = self._solve(side, self._endstate(self.base, side), self.base.s, self.base.h, a)
                self._start[side] = (tail.coefficients, tail.jacobian)

    @property
    def N(self) -> int:
        return self.model.N

    @property
    def k(self) -> int:
        return self.base.indices[2]

    @staticmethod
    def _endstate(q: PlanarShockPoint, side: str) -> np.ndarray:
        return q.p_plus if side == "+" else q.p_minus

    def _solve(self, side, p, s, h, a) -> TailSolution:
        start, jac = self._start.get(side, (None, None))
        return solve_phi(self.model, p, s, h, a, side, self.L, z0=self.z0, basis=self.frozen[side],
                         start=start, jacobian=jac)

    def tail(self, side: str, p: np.ndarray, s: float, h: np.ndarray, a: np.ndarray) -> TailSolution:
        key = (side, np.asarray(p, float).tobytes(), float(s), np.asarray(h, float).tobytes(),
               np.asarray(a, float).tobytes())
        with self._lock:
            if key in self._cache:
                self._cache.move_to_end(key)
                return self._cache[key]
        tail = self._solve(side, p, s, h, a)
        with self._lock:
            self._cache[key] = tail
            if len(self._cache) > 512:
                self._cache.popitem(last=False)
        return tail

    def pack(self, q: PlanarShockPoint, a_plus: np.ndarray, a_minus: np.ndarray) -> np.ndarray:
        return np.concatenate([q.as_vector(), np.ravel(a_plus), np.ravel(a_minus)])

    def unpack(self, x: np.ndarray):
        N, d = self.N, self.model.d
        q = PlanarShockPoint.from_vector(x[:2 * N + d], N, self.base.indices)
        a = x[2 * N + d:]
        return q, a[:self.n_a["+"]], a[self.n_a["+"]:]

    def tails(self, q: PlanarShockPoint, a_plus, a_minus) -> Dict[str, TailSolution]:
        return {"+": self.tail("+", q.p_plus, q.s, q.h, a_plus),
                "-": self.tail("-", q.p_minus, q.s, q.h, a_minus)}

    def psi(self, q: PlanarShockPoint, a_plus, a_minus) -> np.ndarray:
        """Jumps of (phi, phi_z) at z = 0."""
        tails = self.tails(q, a_plus, a_minus)
        up, vp = tails["+"].state(0.0)
        um, vm = tails["-"].state(0.0)
        return np.concatenate([up[0] - um[0], vp[0] - vm[0]])

    def psi_tilde(self, q: PlanarShockPoint, a_plus, a_minus) -> np.ndarray:
        """Psi with the translation-fixing third condition appended."""
        tails = self.tails(q, a_plus, a_minus)
        up, vp = tails["+"].state(0.0)
        um, vm = tails["-"].state(0.0)
        third = self.g_factor * (q.s - self.base.s) + (up[0] - self.ref_w0) @ self.ref_wz0
        return np.concatenate([up[0] - um[0], vp[0] - vm[0], [third]])

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        return self.psi_tilde(*self.unpack(x))

    def evaluate_psi(self, x: np.ndarray) -> np.ndarray:
        return self.psi(*self.unpack(x))

    def jacobian(self, x: np.ndarray, cols: Optional[Sequence[int]] = None, psi_only: bool = False) -> np.ndarray:
        """Central-difference Jacobian with step fd_step * (1 + |x_i|).

        When one side of the stencil leaves the tail radius the column falls
        back to the one-sided difference on the other side.
        """
        f = self.evaluate_psi if psi_only else self.evaluate
        cols = np.arange(x.size) if cols is None else np.asarray(cols, dtype=int)
        base_step = config.tolerance_config.fd_step
        center = None
        columns = []
        for i in cols:
            step = base_step * (1.0 + abs(x[i]))
            xp, xm = x.copy(), x.copy()
            xp[i] += step
            xm[i] -= step
            try:
                fp = f(xp)
            except (RadiusError, TruncationError):
                fp = None
            try:
                fm = f(xm)
            except (RadiusError, TruncationError):
                if fp is None:
                    raise
                fm = None
            if fp is not None and fm is not None:
                columns.append((fp - fm) / (2.0 * step))
                continue
            if center is None:
                center = f(x)
            logger.debug("one-sided difference in column %d", i)
            columns.append((fp - center) / step if fm is None else (center - fm) / step)
        return np.column_stack(columns) if columns else np.zeros((f(x).size, 0))


@dataclass
class ConnectionPoint:
    """A solution of Psi-tilde = 0 with its sampled profile."""
    problem: ConnectionProblem
    q: PlanarShockPoint
    a_plus: np.ndarray
    a_minus: np.ndarray
    profile: ProfileGrid
    residual: float
    newton_steps: int = 0

    @property
    def z_bar(self) -> float:
        return self.problem.z_bar

    @property
    def x(self) -> np.ndarray:
        return self.problem.pack(self.q, self.a_plus, self.a_minus)

    def to_dict(self) -> Dict:
        return {"q": self.q.to_dict(), "a_plus": self.a_plus.tolist(), "a_minus": self.a_minus.tolist(),
                "z_bar": self.z_bar, "residual": self.residual, "newton_steps": self.newton_steps,
                "decay_rate": self.profile.decay_rate, "truncation": self.profile.truncation}


def make_connection(problem: ConnectionProblem, q: PlanarShockPoint, a_plus, a_minus,
                    steps: int = 0) -> ConnectionPoint:
    q = q.with_indices(problem.base.indices)
    a_plus, a_minus = np.asarray(a_plus, float), np.asarray(a_minus, float)
    residual = float(np.linalg.norm(problem.psi_tilde(q, a_plus, a_minus)))
    profile = build_profile_grid(problem.model, q, problem.tails(q, a_plus, a_minus))
    return ConnectionPoint(problem, q, a_plus, a_minus, profile, residual, steps)


def refine_connection(problem: ConnectionProblem, q: PlanarShockPoint, a_plus, a_minus,
                      max_iter: int = 10) -> ConnectionPoint:
    """Damped Gauss-Newton in a with the endstates, speed and slopes held fixed."""
    cfg = config.newton_config
    tol = cfg.tolerance
    x = problem.pack(q, a_plus, a_minus)
    r = problem.evaluate(x)
    history = [float(np.linalg.norm(r))]
    for _ in range(max_iter):
        if history[-1] <= tol:
            break
        J = problem.jacobian(x, problem.cols_a)
        step = np.linalg.lstsq(J, -r, rcond=config.tolerance_config.rank_threshold)[0]
        t = 1.0
        while True:
            trial = x.copy()
            trial[problem.cols_a] += t * step
            try:
                r_t = problem.evaluate(trial)
                if np.linalg.norm(r_t) < history[-1] or t <= cfg.min_damping:
                    break
            except (RadiusError, TruncationError):
                if t <= cfg.min_damping:
                    raise
            t *= 0.5
        x, r = trial, r_t
        history.append(float(np.linalg.norm(r)))
    else:
        r = problem.evaluate(x)
        history.append(float(np.linalg.norm(r)))
        if history[-1] > tol:
            raise NonConvergenceError(f"reference refinement stalled at {history[-1]:.3e}", history)
    q, ap, am = problem.unpack(x)
    return make_connection(problem, q, ap, am, steps=len(history) - 1)


def find_connection(problem: ConnectionProblem, guess: ConnectionPoint, alpha: Sequence[int],
                    frozen: Optional[np.ndarray] = None) -> ConnectionPoint:
    """Damped Newton for Psi-tilde = 0 in (p_alpha, a) with (p_beta, s, h) frozen.

    ``alpha`` indexes p = (p_plus, p_minus); ``frozen`` lists the values of
    (p_beta, s, h) in that order and defaults to the guess.
    """
    cfg = config.newton_config
    N, d = problem.N, problem.model.d
    alpha = np.asarray(sorted(alpha), dtype=int)
    beta = np.setdiff1d(np.arange(2 * N), alpha)
    fixed_cols = np.concatenate([beta, problem.cols_s, problem.cols_h]).astype(int)
    free_cols = np.concatenate([alpha, problem.cols_a]).astype(int)
    x = guess.x.copy()
    if frozen is not None:
        x[fixed_cols] = np.asarray(frozen, dtype=float)

    r = problem.evaluate(x)
    history = [float(np.linalg.norm(r))]
    steps = 0
    while history[-1] > cfg.tolerance:
        if steps >= cfg.max_iter:
            raise NonConvergenceError(f"Newton stagnated after {steps} iterations at {history[-1]:.3e}", history)
        J = problem.jacobian(x, free_cols)
        info = rank_of(J, threshold=1e-10, gap=1.0)
        if info.rank < J.shape[1]:
            raise TransversalityError(f"connection Jacobian is singular (rank {info.rank} of {J.shape[1]})",
                                      singular_values=info.singular_values)
        dx = np.linalg.solve(J, -r)
        t = 1.0
        accepted = False
        while t >= cfg.min_damping:
            xt = x.copy()
            xt[free_cols] += t * dx
            try:
                rt = problem.evaluate(xt)
            except EvanscopeError:
                t *= 0.5
                continue
            if np.linalg.norm(rt) ** 2 <= (1.0 - 2.0 * cfg.armijo * t) * history[-1] ** 2:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            raise NonConvergenceError(f"line search failed at residual {history[-1]:.3e}", history)
        x, r = xt, rt
        steps += 1
        history.append(float(np.linalg.norm(r)))
        logger.debug("newton step %d: damping %.3g, residual %.3e", steps, t, history[-1])
    q, ap, am = problem.unpack(x)
    logger.info("connection found in %d Newton steps, residual %.2e", steps, history[-1])
    return make_connection(problem, q, ap, am, steps=steps)


VERDICTS = ("degenerate", "a-transversal", "transversal", "strongly-transversal")


def classify_ranks(ranks: Sequence[int], N: int, k: int) -> str:
    """Verdict from the (a, (a,p), (a,p,s)) ranks against N + 1 - k and 2N + 1."""
    rank_a, rank_ap, rank_aps = ranks
    if rank_a != N + 1 - k:
        return "degenerate"
    if rank_ap == 2 * N + 1:
        return "strongly-transversal"
    if rank_aps == 2 * N + 1:
        return "transversal"
    return "a-transversal"


@dataclass
class MelnikovData:
    psi_value: np.ndarray
    psi_tilde_value: np.ndarray
    jacobian: np.ndarray
    jac_a: np.ndarray
    jac_ap: np.ndarray
    jac_aps: np.ndarray
    rank_info: Dict[str, RankInfo]
    translation_direction: np.ndarray
    translation_psi: np.ndarray
    translation_third: float
    verdict: str

    @property
    def ranks(self) -> Tuple[int, int, int]:
        return (self.rank_info["a"].rank, self.rank_info["ap"].rank, self.rank_info["aps"].rank)

    @property
    def ambiguous(self) -> bool:
        return any(info.ambiguous for info in self.rank_info.values())

    def to_dict(self) -> Dict:
        return {
            "ranks": list(self.ranks),
            "verdict": self.verdict,
            "ambiguous": self.ambiguous,
            "gaps": {name: info.gap for name, info in self.rank_info.items()},
            "singular_values": {name: info.singular_values.tolist() for name, info in self.rank_info.items()},
            "psi_tilde_norm": float(np.linalg.norm(self.psi_tilde_value)),
            "translation_psi_norm": float(np.linalg.norm(self.translation_psi)),
            "translation_third": self.translation_third,
        }


def translation_direction(cp: ConnectionPoint) -> np.ndarray:
    """a-direction produced by translating the profile, (B^T Pi w_zz(+z0), B^T Pi w_zz(-z0))."""
    problem = cp.problem
    parts = []
    for side, z in (("+", problem.z0), ("-", -problem.z0)):
        tail = cp.profile.tails[side]
        wzz = cp.profile.second_derivative(z, side)[0]
        parts.append(tail.B.T @ (tail.proj @ wzz))
    return np.concatenate(parts)


def transversality_report(cp: ConnectionPoint) -> MelnikovData:
    """SVD ranks of the Psi-tilde Jacobians and the transversality verdict."""
    problem = cp.problem
    x = cp.x
    J = problem.jacobian(x)
    a, p, s = problem.cols_a, problem.cols_p, problem.cols_s
    jac_a = J[:, a]
    jac_ap = J[:, np.concatenate([a, p])]
    jac_aps = J[:, np.concatenate([a, p, s])]
    info = {"a": rank_of(jac_a), "ap": rank_of(jac_ap), "aps": rank_of(jac_aps)}
    ranks = (info["a"].rank, info["ap"].rank, info["aps"].rank)
    verdict = classify_ranks(ranks, problem.N, problem.k)
    direction = translation_direction(cp)
    moved = jac_a @ direction
    psi_dir, third = moved[:-1], float(moved[-1])
    logger.info("transversality ranks %s -> %s", ranks, verdict)
    return MelnikovData(
        psi_value=problem.psi(cp.q, cp.a_plus, cp.a_minus),
        psi_tilde_value=problem.psi_tilde(cp.q, cp.a_plus, cp.a_minus),
        jacobian=J, jac_a=jac_a, jac_ap=jac_ap, jac_aps=jac_aps, rank_info=info,
        translation_direction=direction, translation_psi=psi_dir, translation_third=third,
        verdict=verdict)
