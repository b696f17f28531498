"""
System model interface, planar shock points and structural checks
"""

import itertools
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from config import config
from evanscope.errors import CharacteristicShockError, ModelDomainError

logger = logging.getLogger(__name__)

Evaluator = Callable[[int, np.ndarray], np.ndarray]
Viscosity = Union[str, Callable[[int, int, np.ndarray], np.ndarray]]


@dataclass(frozen=True, eq=False)
class SystemModel:
    """Evaluators for A_j(u), j = 0..d, of a hyperbolic-parabolic system.

    ``eval_da(j, u)`` returns the array D with D[:, :, m] = dA_j/du_m; when it
    is omitted, central differences are used.
    """
    name: str
    N: int
    d: int
    eval_a: Evaluator
    eval_da: Optional[Evaluator] = None
    viscosity: Viscosity = "laplacian"
    domain_hint: Tuple[np.ndarray, np.ndarray] = None

    def __post_init__(self):
        if self.N < 1 or self.d not in (1, 2):
            raise ModelDomainError(f"unsupported dimensions N={self.N}, d={self.d}")
        if self.domain_hint is None:
            object.__setattr__(self, "domain_hint", (-np.full(self.N, 10.0), np.full(self.N, 10.0)))

    def _check(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float).reshape(self.N)
        lo, hi = self.domain_hint
        if np.any(u < lo) or np.any(u > hi) or not np.all(np.isfinite(u)):
            raise ModelDomainError(f"state {u} outside the domain of {self.name}", state=u)
        return u

    def a(self, j: int, u: np.ndarray) -> np.ndarray:
        return np.asarray(self.eval_a(j, self._check(u)), dtype=float).reshape(self.N, self.N)

    def da(self, j: int, u: np.ndarray) -> np.ndarray:
        u = self._check(u)
        if self.eval_da is not None:
            return np.asarray(self.eval_da(j, u), dtype=float).reshape(self.N, self.N, self.N)
        return finite_difference_da(self, j, u)

    def b(self, h: np.ndarray) -> float:
        h = np.asarray(h, dtype=float)
        return 1.0 / (1.0 + float(h @ h))

    def curly_ad(self, u: np.ndarray, s: float, h: np.ndarray) -> np.ndarray:
        """A_d(u) - s A_0(u) - sum_i h_i A_i(u)."""
        h = np.asarray(h, dtype=float).reshape(self.d - 1)
        out = self.a(self.d, u) - s * self.a(0, u)
        for i, hi in enumerate(h, start=1):
            out = out - hi * self.a(i, u)
        return out

    def d_curly_ad(self, u: np.ndarray, s: float, h: np.ndarray) -> np.ndarray:
        h = np.asarray(h, dtype=float).reshape(self.d - 1)
        out = self.da(self.d, u) - s * self.da(0, u)
        for i, hi in enumerate(h, start=1):
            out = out - hi * self.da(i, u)
        return out

    def g_d(self, u: np.ndarray, s: float, h: np.ndarray) -> np.ndarray:
        """Tail matrix b(h) * curly_ad(u, s, h)."""
        return self.b(h) * self.curly_ad(u, s, h)

    def viscosity_matrix(self, j: int, k: int, u: np.ndarray) -> np.ndarray:
        if self.viscosity == "laplacian":
            return np.eye(self.N) if j == k else np.zeros((self.N, self.N))
        return np.asarray(self.viscosity(j, k, self._check(u)), dtype=float)


def finite_difference_da(model: SystemModel, j: int, u: np.ndarray) -> np.ndarray:
    """Central differences of A_j with step fd_step * (1 + |u|)."""
    step = config.tolerance_config.fd_step * (1.0 + np.linalg.norm(u))
    out = np.empty((model.N, model.N, model.N))
    for m in range(model.N):
        e = np.zeros(model.N)
        e[m] = step
        out[:, :, m] = (model.a(j, u + e) - model.a(j, u - e)) / (2.0 * step)
    return out


@dataclass(frozen=True, eq=False)
class PlanarShockPoint:
    """q = (p_plus, p_minus, s, h) with optional compressivity indices."""
    p_plus: np.ndarray
    p_minus: np.ndarray
    s: float
    h: np.ndarray = field(default_factory=lambda: np.zeros(0))
    indices: Optional[Tuple[int, int, int]] = None

    def __post_init__(self):
        object.__setattr__(self, "p_plus", np.asarray(self.p_plus, dtype=float).ravel())
        object.__setattr__(self, "p_minus", np.asarray(self.p_minus, dtype=float).ravel())
        object.__setattr__(self, "h", np.asarray(self.h, dtype=float).ravel())
        object.__setattr__(self, "s", float(self.s))
        if self.indices is not None:
            r_minus, l_plus, k = self.indices
            n = self.p_plus.size
            if r_minus + l_plus != n + 1 - k or not 0 <= k <= n + 1:
                raise ValueError(f"inconsistent indices {self.indices} for N={n}")

    @property
    def N(self) -> int:
        return self.p_plus.size

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.p_plus, self.p_minus, [self.s], self.h])

    @classmethod
    def from_vector(cls, x: np.ndarray, N: int, indices=None) -> "PlanarShockPoint":
        x = np.asarray(x, dtype=float)
        return cls(x[:N], x[N:2 * N], float(x[2 * N]), x[2 * N + 1:], indices)

    def with_indices(self, indices: Tuple[int, int, int]) -> "PlanarShockPoint":
        return replace(self, indices=tuple(int(i) for i in indices))

    def to_dict(self) -> Dict:
        return {"p_plus": self.p_plus.tolist(), "p_minus": self.p_minus.tolist(), "s": self.s,
                "h": self.h.tolist(), "indices": list(self.indices) if self.indices else None}


def curly_ad(model: SystemModel, u: np.ndarray, s: float, h: Sequence[float] = ()) -> np.ndarray:
    return model.curly_ad(u, s, np.asarray(h, dtype=float))


def compressive_indices(model: SystemModel, q: PlanarShockPoint,
                        tolerance: Optional[float] = None) -> Tuple[int, int, int]:
    """Count (R_minus, L_plus, k) from the endstate tail matrices."""
    tolerance = config.tolerance_config.axis_tolerance if tolerance is None else tolerance
    counts = []
    for side, p in (("+", q.p_plus), ("-", q.p_minus)):
        M = model.g_d(p, q.s, q.h)
        mu = np.linalg.eigvals(M)
        scale = max(np.linalg.norm(M, 2), np.finfo(float).tiny)
        worst = int(np.argmin(np.abs(mu.real)))
        if abs(mu[worst].real) <= tolerance * scale:
            raise CharacteristicShockError(
                f"characteristic shock: eigenvalue {mu[worst]:.3e} at p{side}",
                eigenvalue=complex(mu[worst]), gap=float(abs(mu[worst].real) / scale))
        counts.append(int(np.sum(mu.real < 0)) if side == "+" else int(np.sum(mu.real > 0)))
    r_minus, l_plus = counts
    return r_minus, l_plus, model.N + 1 - r_minus - l_plus


@dataclass
class StructuralCheckReport:
    hyperbolicity_ok: bool
    worst_hyperbolic: Optional[Dict]
    parabolicity_margin: float
    parabolicity_ok: bool
    dissipativity_margin: float
    dissipativity_ok: bool
    h0_violations: List[Dict]
    samples: Dict

    def to_dict(self) -> Dict:
        return {
            "hyperbolicityOK": self.hyperbolicity_ok,
            "worstHyperbolic": self.worst_hyperbolic,
            "parabolicityMargin": self.parabolicity_margin,
            "parabolicityOK": self.parabolicity_ok,
            "dissipativityMargin": self.dissipativity_margin,
            "dissipativityOK": self.dissipativity_ok,
            "h0Violations": self.h0_violations,
            "samples": self.samples,
        }


def default_samples(model: SystemModel, per_axis: int = 9):
    """Tensor grid over the domain box and the unit frequency sphere."""
    lo, hi = model.domain_hint
    axes = [np.linspace(lo[i], hi[i], per_axis) for i in range(model.N)]
    u_samples = [np.array(u) for u in itertools.product(*axes)]
    if model.d == 1:
        xi_samples = [np.array([-1.0]), np.array([1.0])]
    else:
        theta = np.linspace(0.0, 2.0 * np.pi, per_axis, endpoint=False)
        xi_samples = [np.array([np.cos(t), np.sin(t)]) for t in theta]
    return u_samples, xi_samples


def structural_checks(model: SystemModel, u_samples: Sequence[np.ndarray],
                      xi_samples: Sequence[np.ndarray], margin: Optional[float] = None) -> StructuralCheckReport:
    """Sample the hyperbolicity, parabolicity and dissipativity symbols."""
    if not u_samples or not xi_samples:
        raise ValueError("structural checks need nonempty sample sets")
    margin = config.tolerance_config.structural_margin if margin is None else margin
    axis_tol = config.tolerance_config.axis_tolerance
    worst = None
    worst_imag = -1.0
    parabolicity = np.inf
    dissipativity = np.inf
    h0_violations = []
    for u in u_samples:
        a0 = model.a(0, u)
        if np.linalg.cond(a0) > 1.0 / np.finfo(float).eps:
            h0_violations.append({"u": np.asarray(u).tolist()})
            continue
        a0_inv = np.linalg.inv(a0)
        for xi in xi_samples:
            xi = np.asarray(xi, dtype=float)
            if np.allclose(xi, 0.0):
                raise ValueError("frequency samples must exclude 0")
            a_bar = a0_inv @ sum(xi[j] * model.a(j + 1, u) for j in range(model.d))
            b_bar = a0_inv @ sum(xi[j] * xi[k] * model.viscosity_matrix(j + 1, k + 1, u)
                                 for j in range(model.d) for k in range(model.d))
            xi2 = float(xi @ xi)
            mu = np.linalg.eigvals(a_bar)
            scale = max(np.linalg.norm(a_bar, 2), 1.0)
            k = int(np.argmax(np.abs(mu.imag)))
            if abs(mu[k].imag) > worst_imag:
                worst_imag = abs(mu[k].imag)
                worst = {"u": np.asarray(u).tolist(), "xi": xi.tolist(),
                         "eigenvalue": {"re": float(mu[k].real), "im": float(mu[k].imag)},
                         "relative": float(abs(mu[k].imag) / scale)}
            parabolicity = min(parabolicity, float(np.min(np.linalg.eigvals(b_bar).real)) / xi2)
            dissipativity = min(dissipativity,
                                float(np.min(np.linalg.eigvals(1j * a_bar + b_bar).real)) / xi2)
    hyperbolic = worst is not None and worst["relative"] <= axis_tol
    if not hyperbolic and worst is not None:
        logger.warning("%s is not hyperbolic: eigenvalue %s at u=%s", model.name, worst["eigenvalue"], worst["u"])
    return StructuralCheckReport(
        hyperbolicity_ok=bool(hyperbolic),
        worst_hyperbolic=worst,
        parabolicity_margin=float(parabolicity),
        parabolicity_ok=bool(parabolicity > margin),
        dissipativity_margin=float(dissipativity),
        dissipativity_ok=bool(dissipativity > margin),
        h0_violations=h0_violations,
        samples={"u": len(u_samples), "xi": len(xi_samples)},
    )
