"""
Built-in benchmark systems and their reference shocks
"""

import logging
import threading
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import solve_ivp

from evanscope.errors import ConfigError
from evanscope.model import PlanarShockPoint, SystemModel, compressive_indices
from evanscope.profile import (
    ConnectionPoint,
    ConnectionProblem,
    refine_connection,
    tail_subspace,
)

logger = logging.getLogger(__name__)

TRANSPORT_SPEED = 0.7
NC_COUPLING = 0.1


def _burgers_a(j, u):
    return np.array([[1.0]]) if j == 0 else np.array([[u[0]]])


def _burgers_da(j, u):
    return np.zeros((1, 1, 1)) if j == 0 else np.ones((1, 1, 1))


def burgers(d: int = 1) -> SystemModel:
    """Scalar viscous Burgers, A_0 = 1 and A_j = u for j >= 1."""
    name = "burgers" if d == 1 else "burgers2d"
    return SystemModel(name, 1, d, _burgers_a, _burgers_da,
                       domain_hint=(np.array([-3.0]), np.array([3.0])))


def burgers_transport() -> SystemModel:
    def eval_a(j, u):
        if j == 0:
            return np.eye(2)
        return np.diag([u[0], TRANSPORT_SPEED])

    def eval_da(j, u):
        out = np.zeros((2, 2, 2))
        if j == 1:
            out[0, 0, 0] = 1.0
        return out

    return SystemModel("burgers-transport", 2, 1, eval_a, eval_da,
                       domain_hint=(np.array([-3.0, -3.0]), np.array([3.0, 3.0])))


def nc_coupled() -> SystemModel:
    """A_1 = [[u_1, 0.1 u_2], [0, 0.7]], not the Jacobian of any flux."""
    def eval_a(j, u):
        if j == 0:
            return np.eye(2)
        return np.array([[u[0], NC_COUPLING * u[1]], [0.0, TRANSPORT_SPEED]])

    def eval_da(j, u):
        out = np.zeros((2, 2, 2))
        if j == 1:
            out[0, 0, 0] = 1.0
            out[0, 1, 1] = NC_COUPLING
        return out

    return SystemModel("nc-coupled", 2, 1, eval_a, eval_da,
                       domain_hint=(np.array([-3.0, -3.0]), np.array([3.0, 3.0])))


def _cubic_mu(u1: float) -> float:
    return 0.05 + 0.5 * (u1 - 0.5) ** 2


def cubic_uc() -> SystemModel:
    """Planar cubic model, A_1 the Jacobian of |u|^2 u, with A_0 = diag(1, mu(u_1))."""
    def eval_a(j, u):
        if j == 0:
            return np.diag([1.0, _cubic_mu(u[0])])
        return float(u @ u) * np.eye(2) + 2.0 * np.outer(u, u)

    def eval_da(j, u):
        out = np.zeros((2, 2, 2))
        if j == 0:
            out[1, 1, 0] = u[0] - 0.5
            return out
        for m in range(2):
            e = np.zeros(2)
            e[m] = 1.0
            out[:, :, m] = 2.0 * u[m] * np.eye(2) + 2.0 * (np.outer(e, u) + np.outer(u, e))
        return out

    return SystemModel("cubic-uc", 2, 1, eval_a, eval_da,
                       domain_hint=(np.array([-2.5, -1.5]), np.array([1.5, 1.5])))


def rotation_model() -> SystemModel:
    """Non-hyperbolic counterexample with A_1 a rotation generator."""
    def eval_a(j, u):
        return np.eye(2) if j == 0 else np.array([[0.0, 1.0], [-1.0, 0.0]])

    return SystemModel("rotation", 2, 1, eval_a, lambda j, u: np.zeros((2, 2, 2)))


def scalar_cubic() -> SystemModel:
    """Scalar model A_1 = 3u^2 (flux u^3)."""
    return SystemModel("scalar-cubic", 1, 1,
                       lambda j, u: np.array([[1.0]]) if j == 0 else np.array([[3.0 * u[0] ** 2]]),
                       lambda j, u: np.zeros((1, 1, 1)) if j == 0 else np.array([[[6.0 * u[0]]]]))


SeedFunction = Callable[[float], Tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class ReferenceShock:
    """Reference shock of a built-in: endstates, translate, alpha split and seed profile."""
    model_id: str
    shock: PlanarShockPoint
    z_bar: float
    alpha: Tuple[int, ...]
    seed: SeedFunction


def _tanh_seed(other: Sequence[float] = ()) -> SeedFunction:
    other = np.asarray(other, dtype=float)

    def seed(z):
        w = -np.tanh(0.5 * z)
        return np.concatenate([[w], other]), np.concatenate([[0.5 * (w * w - 1.0)], np.zeros(other.size)])
    return seed


def _cubic_seed() -> SeedFunction:
    # profile ODE on the u_2 = 0 axis: w' = w^3 - 1.75 w + 0.75, w(0) = 0
    def g(z, w):
        return w ** 3 - 1.75 * w + 0.75

    cache: Dict[float, float] = {}

    def seed(z):
        if z not in cache:
            if z == 0.0:
                cache[z] = 0.0
            else:
                sol = solve_ivp(g, (0.0, z), [0.0], method="DOP853", rtol=1e-13, atol=1e-15)
                cache[z] = float(sol.y[0, -1])
        w = cache[z]
        return np.array([w, 0.0]), np.array([g(z, w), 0.0])
    return seed


# tanh profiles: tail constraints at |z| = 2, off the inflection point where a -> w_z folds
TANH_Z_BAR = -2.0


def _registry() -> Dict[str, Tuple[Callable[[], SystemModel], ReferenceShock]]:
    return {
        "burgers": (lambda: burgers(1), ReferenceShock(
            "burgers", PlanarShockPoint([-1.0], [1.0], 0.0), TANH_Z_BAR, (0,), _tanh_seed())),
        "burgers2d": (lambda: burgers(2), ReferenceShock(
            "burgers2d", PlanarShockPoint([-1.0], [1.0], 0.0, [0.0]), TANH_Z_BAR, (0,), _tanh_seed())),
        "burgers-transport": (burgers_transport, ReferenceShock(
            "burgers-transport", PlanarShockPoint([-1.0, 0.0], [1.0, 0.0], 0.0), TANH_Z_BAR, (0, 1),
            _tanh_seed([0.0]))),
        "nc-coupled": (nc_coupled, ReferenceShock(
            "nc-coupled", PlanarShockPoint([-1.0, 0.5], [1.0, 0.5], 0.0), TANH_Z_BAR, (0, 1),
            _tanh_seed([0.5]))),
        "cubic-uc": (cubic_uc, ReferenceShock(
            "cubic-uc", PlanarShockPoint([0.5, 0.0], [-1.5, 0.0], 1.75), -1.5, (0, 1, 3), _cubic_seed())),
    }


BUILTIN_SYSTEMS = ("burgers", "burgers2d", "burgers-transport", "nc-coupled", "cubic-uc")

# models without a reference shock, for structural checks only
MODEL_ONLY: Dict[str, Callable[[], SystemModel]] = {"rotation": rotation_model, "scalar-cubic": scalar_cubic}


def get_model(model_id: str) -> SystemModel:
    if model_id in MODEL_ONLY:
        return MODEL_ONLY[model_id]()
    registry = _registry()
    if model_id not in registry:
        known = ", ".join(BUILTIN_SYSTEMS + tuple(MODEL_ONLY))
        raise ConfigError(f"unknown system {model_id!r}; built-ins are {known}", system=model_id)
    return registry[model_id][0]()


def reference_shock(model_id: str) -> ReferenceShock:
    """Reference PlanarShockPoint with indices, translate and alpha split of a built-in."""
    registry = _registry()
    if model_id not in registry:
        raise ConfigError(f"system {model_id!r} has no reference shock", system=model_id)
    factory, ref = registry[model_id]
    indices = compressive_indices(factory(), ref.shock)
    return ReferenceShock(ref.model_id, ref.shock.with_indices(indices), ref.z_bar, ref.alpha, ref.seed)


def seed_coordinates(model: SystemModel, q: PlanarShockPoint, z_bar: float,
                     profile: Callable[[float, str], Tuple[np.ndarray, np.ndarray]]):
    """a-coordinates read off a known profile at the constraint points +-z0."""
    z0 = -z_bar
    coords = []
    for side, p, z in (("+", q.p_plus, z0), ("-", q.p_minus, -z0)):
        _, basis, proj = tail_subspace(model, p, q.s, q.h, side)
        _, wz = profile(z, side)
        coords.append(basis.T @ (proj @ wz))
    return coords


def build_problem(model: SystemModel, q: PlanarShockPoint, z_bar: float,
                  profile: Callable[[float, str], Tuple[np.ndarray, np.ndarray]],
                  g_factor: float = 1.0) -> ConnectionProblem:
    """ConnectionProblem whose reference data come from a known profile."""
    w0, wz0 = profile(0.0, "+")
    a_ref = seed_coordinates(model, q, z_bar, profile)
    return ConnectionProblem(model, q, z_bar, w0, wz0, a_ref, g_factor=g_factor)


def connection_from_profile(model: SystemModel, q: PlanarShockPoint, z_bar: float,
                            profile: Callable[[float, str], Tuple[np.ndarray, np.ndarray]],
                            g_factor: float = 1.0) -> ConnectionPoint:
    problem = build_problem(model, q, z_bar, profile, g_factor)
    a_plus, a_minus = seed_coordinates(model, q, z_bar, profile)
    return refine_connection(problem, problem.base, a_plus, a_minus)


# Cached reference connections (lazy initialization)
_reference_connections: Dict[Tuple[str, float, float], ConnectionPoint] = {}
_reference_lock = threading.Lock()


def get_reference_connection(model_id: str, z_bar: Optional[float] = None,
                             g_factor: float = 1.0) -> ConnectionPoint:
    """Get or build the reference connection of a built-in (singleton per key)"""
    ref = reference_shock(model_id)
    z_bar = ref.z_bar if z_bar is None else float(z_bar)
    key = (model_id, z_bar, float(g_factor))
    with _reference_lock:
        if key not in _reference_connections:
            model = get_model(model_id)
            if z_bar == ref.z_bar and g_factor == 1.0:
                cp = connection_from_profile(model, ref.shock, z_bar, lambda z, side: ref.seed(z), g_factor)
            else:
                base = _reference_connections.get((model_id, ref.z_bar, 1.0))
                if base is None:
                    base = connection_from_profile(model, ref.shock, ref.z_bar,
                                                   lambda z, side: ref.seed(z))
                    _reference_connections[(model_id, ref.z_bar, 1.0)] = base
                sampled = profile_lookup(base)
                cp = connection_from_profile(model, ref.shock, z_bar, sampled, g_factor)
            logger.info("reference connection for %s (z_bar=%g): residual %.2e",
                        model_id, z_bar, cp.residual)
            _reference_connections[key] = cp
        return _reference_connections[key]


def profile_lookup(cp: ConnectionPoint):
    def lookup(z, side):
        u, v = cp.profile.state(z, "+" if z >= 0 else "-")
        return u[0], v[0]
    return lookup
