"""
Local shock manifold charts

The chart solves Psi-tilde = 0 for (p_alpha, a) given (p_beta, s, h); the
generalized Rankine-Hugoniot condition is chi(q) = p_alpha - p_alpha(p_beta, s, h).
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import linalg as sla

from config import config
from evanscope.errors import ChartDomainError, EvanscopeError, SetupError, TransversalityError
from evanscope.linalg import orthonormal, rank_of
from evanscope.model import PlanarShockPoint
from evanscope.profile import ConnectionPoint, classify_ranks, make_connection
from evanscope.systems import connection_from_profile, profile_lookup

logger = logging.getLogger(__name__)


def choose_split(cp: ConnectionPoint, jacobian: Optional[np.ndarray] = None) -> List[int]:
    """p_alpha indices by column-pivoted QR of the p-columns after removing range(grad_a)."""
    problem = cp.problem
    J = problem.jacobian(cp.x) if jacobian is None else jacobian
    Qa = orthonormal(J[:, problem.cols_a])
    M = J[:, problem.cols_p] - Qa @ (Qa.T @ J[:, problem.cols_p])
    _, _, pivots = sla.qr(M, pivoting=True)
    return sorted(int(i) for i in pivots[:problem.N + problem.k])


class ManifoldChart:
    """Newton-backed graph p_alpha = p_alpha(p_beta, s, h) near a connection."""

    def __init__(self, cp: ConnectionPoint, alpha: Optional[Sequence[int]] = None, scale: float = 1.0):
        problem = cp.problem
        self.base = cp
        self.problem = problem
        self.scale = float(scale)
        x0 = cp.x
        J = problem.jacobian(x0)
        self.jacobian = J
        a, p, s = problem.cols_a, problem.cols_p, problem.cols_s
        self.ranks = tuple(rank_of(J[:, cols]).rank for cols in
                           (a, np.concatenate([a, p]), np.concatenate([a, p, s])))
        self.verdict = classify_ranks(self.ranks, problem.N, problem.k)
        if self.verdict in ("degenerate", "a-transversal"):
            raise TransversalityError(f"chart needs a transversal connection, got {self.verdict}",
                                      ranks=list(self.ranks))
        N = problem.N
        self.alpha = np.asarray(sorted(choose_split(cp, J) if alpha is None else alpha), dtype=int)
        if self.alpha.size != N + problem.k:
            raise SetupError(f"p_alpha must have {N + problem.k} entries, got {self.alpha.size}")
        self.beta = np.setdiff1d(np.arange(2 * N), self.alpha)
        self.free_cols = np.concatenate([self.alpha, problem.cols_a]).astype(int)
        self.fixed_cols = np.concatenate([self.beta, problem.cols_s, problem.cols_h]).astype(int)
        J_free = J[:, self.free_cols]
        info = rank_of(J_free, threshold=1e-10, gap=1.0)
        if info.rank < J_free.shape[1]:
            raise TransversalityError(f"grad_(a, p_alpha) Psi-tilde is singular for split {self.alpha.tolist()}",
                                      singular_values=info.singular_values)
        self._lu = sla.lu_factor(J_free)
        self.sensitivity = -sla.lu_solve(self._lu, J[:, self.fixed_cols])
        self.x0 = x0
        self.y0 = x0[self.fixed_cols]

    @property
    def dimension(self) -> int:
        """N + d - k, the number of free chart coordinates."""
        return self.fixed_cols.size

    @property
    def q_size(self) -> int:
        return 2 * self.problem.N + self.problem.model.d

    def coordinates(self, q: PlanarShockPoint) -> np.ndarray:
        return q.as_vector()[self.fixed_cols]

    def solve(self, y: np.ndarray) -> np.ndarray:
        """Full unknown vector x on the manifold over chart coordinates y = (p_beta, s, h)."""
        cfg = config.newton_config
        y = np.asarray(y, dtype=float)
        x = self.x0.copy()
        x[self.fixed_cols] = y
        x[self.free_cols] += self.sensitivity @ (y - self.y0)
        previous = np.inf
        for _ in range(cfg.max_iter):
            try:
                r = self.problem.evaluate(x)
            except EvanscopeError as exc:
                raise ChartDomainError(f"chart evaluation failed at {y.tolist()}: {exc}", point=y) from exc
            norm = float(np.linalg.norm(r))
            if norm <= cfg.tolerance:
                return x
            if norm > 0.9 * previous:
                raise ChartDomainError(f"chart Newton does not contract at {y.tolist()} (residual {norm:.3e})",
                                       point=y, residual=norm)
            previous = norm
            x[self.free_cols] -= sla.lu_solve(self._lu, r)
        raise ChartDomainError(f"chart Newton exhausted its iterations at {y.tolist()}", point=y)

    def evaluate(self, y: np.ndarray):
        """(p_alpha, a_plus, a_minus) over y = (p_beta, s, h)."""
        q, a_plus, a_minus = self.problem.unpack(self.solve(y))
        return q.as_vector()[self.alpha], a_plus, a_minus

    def graph(self, y: np.ndarray) -> np.ndarray:
        return self.solve(y)[:self.q_size]

    def point(self, y: np.ndarray) -> PlanarShockPoint:
        x = self.solve(y)
        return PlanarShockPoint.from_vector(x[:self.q_size], self.problem.N, self.problem.base.indices)

    def connection(self, y: np.ndarray) -> ConnectionPoint:
        q, a_plus, a_minus = self.problem.unpack(self.solve(y))
        return make_connection(self.problem, q, a_plus, a_minus)

    def chi(self, q: PlanarShockPoint) -> np.ndarray:
        p_alpha = self.evaluate(self.coordinates(q))[0]
        return self.scale * (q.as_vector()[self.alpha] - p_alpha)

    def chi_prime(self, q: Optional[PlanarShockPoint] = None, method: str = "ift",
                  step: float = 1e-4) -> np.ndarray:
        """(N+k) x (2N+d) derivative of chi in q = (p_plus, p_minus, s, h) ordering."""
        n_alpha = self.alpha.size
        if method == "ift":
            if q is None:
                sens = self.sensitivity
            else:
                x = self.solve(self.coordinates(q))
                J = self.problem.jacobian(x)
                sens = -np.linalg.solve(J[:, self.free_cols], J[:, self.fixed_cols])
            dp_alpha = sens[:n_alpha]
        elif method == "fd":
            y = self.y0 if q is None else self.coordinates(q)
            dp_alpha = np.empty((n_alpha, y.size))
            for i in range(y.size):
                e = np.zeros(y.size)
                e[i] = step
                dp_alpha[:, i] = (self.evaluate(y + e)[0] - self.evaluate(y - e)[0]) / (2.0 * step)
        else:
            raise ValueError(f"unknown chi' method {method!r}")
        out = np.zeros((n_alpha, self.q_size))
        out[:, self.alpha] = np.eye(n_alpha)
        out[:, self.fixed_cols] = -dp_alpha
        return self.scale * out

    def tangent_space(self, q: Optional[PlanarShockPoint] = None, step: Optional[float] = None) -> np.ndarray:
        """Orthonormalized central-difference tangents of the graph, N + d - k columns."""
        step = config.newton_config.tangent_step if step is None else step
        y = self.y0 if q is None else self.coordinates(q)
        tangents = []
        for i in range(y.size):
            e = np.zeros(y.size)
            e[i] = step
            tangents.append((self.graph(y + e) - self.graph(y - e)) / (2.0 * step))
        return orthonormal(np.column_stack(tangents))

    def box(self, half_width: Optional[float] = None, points: Optional[int] = None) -> List[np.ndarray]:
        """Tensor grid of chart coordinates around the base point."""
        half_width = config.newton_config.box_half_width if half_width is None else half_width
        points = config.newton_config.box_points if points is None else points
        axes = [np.linspace(c - half_width, c + half_width, points) for c in self.y0]
        return [np.array(y) for y in itertools.product(*axes)]

    def to_dict(self, box: Optional[Sequence[np.ndarray]] = None) -> Dict:
        out = {
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "dimension": self.dimension,
            "ranks": list(self.ranks),
            "verdict": self.verdict,
            "chi_prime": self.chi_prime().tolist(),
            "tangent_space": self.tangent_space().tolist(),
        }
        if box is not None:
            values = []
            for y in box:
                try:
                    values.append({"coordinates": y.tolist(), "p_alpha": self.evaluate(y)[0].tolist()})
                except ChartDomainError as exc:
                    values.append({"coordinates": y.tolist(), "error": exc.to_dict()})
            out["values"] = values
        return out


def build_chart(cp: ConnectionPoint, alpha: Optional[Sequence[int]] = None) -> ManifoldChart:
    chart = ManifoldChart(cp, alpha)
    logger.info("chart split alpha=%s beta=%s, dimension %d", chart.alpha.tolist(), chart.beta.tolist(),
                chart.dimension)
    return chart


def tangent_space(chart: ManifoldChart, q: Optional[PlanarShockPoint] = None) -> np.ndarray:
    return chart.tangent_space(q)


@dataclass
class UniquenessReport:
    discrepancy: float
    alt_z_bar: float
    alt_g_factor: float
    points: int
    failures: int

    def to_dict(self) -> Dict:
        return {"discrepancy": self.discrepancy, "alt_z_bar": self.alt_z_bar,
                "alt_g_factor": self.alt_g_factor, "points": self.points, "failures": self.failures}


def rebuild_connection(cp: ConnectionPoint, z_bar: Optional[float] = None,
                       g_factor: Optional[float] = None) -> ConnectionPoint:
    """Same connection seen through another translate or third condition."""
    problem = cp.problem
    z_bar = problem.z_bar if z_bar is None else float(z_bar)
    g_factor = problem.g_factor if g_factor is None else float(g_factor)
    return connection_from_profile(problem.model, cp.q, z_bar, profile_lookup(cp), g_factor)


def chart_uniqueness_probe(chart: ManifoldChart, alt_z_bar: Optional[float] = None,
                           alt_g_factor: Optional[float] = None, half_width: Optional[float] = None,
                           points: Optional[int] = None) -> UniquenessReport:
    """Sup over a coordinate box of |p_alpha(chart) - p_alpha(alternative chart)|."""
    try:
        alt_cp = rebuild_connection(chart.base, alt_z_bar, alt_g_factor)
        alt_chart = ManifoldChart(alt_cp, chart.alpha)
    except (TransversalityError, SetupError) as exc:
        raise SetupError(f"alternative construction violates the rank conditions: {exc}") from exc
    discrepancy = 0.0
    box = chart.box(half_width, points)
    failures = 0
    for y in box:
        try:
            diff = np.max(np.abs(chart.evaluate(y)[0] - alt_chart.evaluate(y)[0]))
        except ChartDomainError:
            failures += 1
            continue
        discrepancy = max(discrepancy, float(diff))
    if failures == len(box):
        raise SetupError(f"no point of the {len(box)}-point coordinate box lies in both chart domains")
    logger.info("uniqueness probe: z_bar=%g g=%g discrepancy %.3e", alt_cp.z_bar, alt_cp.problem.g_factor,
                discrepancy)
    return UniquenessReport(discrepancy, alt_cp.z_bar, alt_cp.problem.g_factor, len(box), failures)
