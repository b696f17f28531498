"""
Frequency sweeps, low-frequency fits, verdicts and the implication audit
"""

import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.stats import linregress
from tqdm import tqdm

from config import config, resolve_threads
from evanscope.determinants import KINDS, DeterminantSample, RayResult, StabilityEvaluator
from evanscope.errors import ConfigError, EvanscopeError
from evanscope.linalg import rank_of
from evanscope.profile import ConnectionPoint

logger = logging.getLogger(__name__)

# (angles for d = 1, azimuths x elevations for d = 2, rho ladder points)
GRID_PRESETS: Dict[str, Tuple[int, int, int]] = {
    "default": (65, 33, 13),
    "coarse": (9, 5, 7),
    "fine": (129, 49, 19),
}

PLOT_KINDS = ("DD_s", "D_s", "D_m", "D_red")
TRANSVERSAL = ("transversal", "strongly-transversal")

# verdicts that cannot be evaluated when a shared setup stage fails
SETUP_STAGES: Dict[str, Tuple[str, ...]] = {
    "rho0_frames": ("lowFreqModifiedEvans",),
    "beta_K": (),
    "symbol_length+": ("lowFreqStandardEvans", "lowFreqModifiedEvans", "standardUniformEvans"),
    "symbol_length-": ("lowFreqStandardEvans", "lowFreqModifiedEvans", "standardUniformEvans"),
}


@dataclass
class FrequencyGrid:
    """Points zeta_hat on the closed upper hemisphere, a rho ladder and a mid-frequency set."""
    zeta_hat: np.ndarray
    rho_ladder: np.ndarray
    mid_rho: np.ndarray = field(default_factory=lambda: np.zeros(0))
    preset: str = "custom"

    @classmethod
    def build(cls, d: int, preset: Optional[str] = None, angles: Optional[int] = None,
              azimuths: Optional[int] = None, elevations: Optional[int] = None,
              rho_min: Optional[float] = None, rho_max: Optional[float] = None,
              rho_points: Optional[int] = None, mid_rho: Optional[Sequence[float]] = None) -> "FrequencyGrid":
        cfg = config.grid_config
        preset = cfg.preset if preset is None else preset
        if preset not in GRID_PRESETS:
            raise ConfigError(f"unknown grid preset {preset!r}; choose one of {', '.join(GRID_PRESETS)}",
                              preset=preset)
        n_angles, n_side, n_rho = GRID_PRESETS[preset]
        angles = n_angles if angles is None else angles
        azimuths = n_side if azimuths is None else azimuths
        elevations = n_side if elevations is None else elevations
        rho_min = cfg.rho_min if rho_min is None else rho_min
        rho_max = cfg.rho_max if rho_max is None else rho_max
        rho_points = n_rho if rho_points is None else rho_points
        mid_rho = cfg.mid_rho if mid_rho is None else mid_rho
        if not 0.0 < rho_min < rho_max:
            raise ConfigError(f"rho ladder needs 0 < rho_min < rho_max, got {rho_min}, {rho_max}")
        if d == 1:
            theta = np.linspace(0.0, np.pi, angles)
            points = np.column_stack([np.cos(theta), np.sin(theta)])
        else:
            elevation = np.linspace(0.0, 0.5 * np.pi, elevations)[:-1]
            azimuth = np.linspace(0.0, 2.0 * np.pi, azimuths, endpoint=False)
            rows = [(np.cos(e) * np.cos(a), np.sin(e), np.cos(e) * np.sin(a)) for e in elevation for a in azimuth]
            rows.append((0.0, 1.0, 0.0))
            points = np.array(rows)
        points[:, 1] = np.maximum(points[:, 1], 0.0)
        points[np.abs(points) < 1e-12] = 0.0
        points /= np.linalg.norm(points, axis=1)[:, None]
        ladder = np.geomspace(rho_min, rho_max, rho_points)
        mid = np.array([r for r in mid_rho if r > rho_max], dtype=float)
        return cls(points, ladder, mid, preset)

    @property
    def size(self) -> int:
        return self.zeta_hat.shape[0]

    def describe(self) -> Dict:
        return {"preset": self.preset, "points": self.size, "rho_min": float(self.rho_ladder[0]),
                "rho_max": float(self.rho_ladder[-1]), "rho_points": int(self.rho_ladder.size),
                "mid_rho": self.mid_rho.tolist()}


@dataclass
class LowFrequencyFit:
    zeta_hat: Tuple[float, ...]
    slope: float
    quad_residual: float
    ratio: float
    ds_dm_limit: float
    ds_dm_constant: float
    points: int
    failed: bool = False
    reason: Optional[str] = None

    def to_dict(self) -> Dict:
        return {"zeta_hat": list(self.zeta_hat), "slope": self.slope, "quad_residual": self.quad_residual,
                "ratio": self.ratio, "ds_dm_limit": self.ds_dm_limit, "ds_dm_constant": self.ds_dm_constant,
                "points": self.points, "fit_failure": self.failed, "reason": self.reason}


@dataclass
class StabilityReport:
    samples: List[DeterminantSample]
    grid: FrequencyGrid
    transversality: str
    rays: List[RayResult] = field(default_factory=list, repr=False)
    withheld: Optional[str] = None
    verdicts: Dict[str, Dict] = field(default_factory=dict)
    fits: List[LowFrequencyFit] = field(default_factory=list)
    cross_checks: Dict[str, float] = field(default_factory=dict)
    audit: List[Dict] = field(default_factory=list)
    setup_errors: Dict[str, str] = field(default_factory=dict)
    kernel_checks: Dict[str, float] = field(default_factory=dict)

    def select(self, kind: str, zeta_hat: Optional[Sequence[float]] = None, valid: bool = True) -> List[DeterminantSample]:
        out = []
        for s in self.samples:
            if s.kind != kind or (valid and not s.valid):
                continue
            if zeta_hat is not None and not np.allclose(s.zeta_hat, zeta_hat, atol=1e-14):
                continue
            out.append(s)
        return out

    def value(self, kind: str, zeta_hat: Sequence[float], rho: float) -> Optional[DeterminantSample]:
        for s in self.select(kind, zeta_hat, valid=False):
            if s.rho == rho:
                return s
        return None

    @property
    def continuity_suspects(self) -> List[DeterminantSample]:
        return [s for s in self.samples if s.flag == "continuity-suspect"]

    @property
    def failed(self) -> List[DeterminantSample]:
        return [s for s in self.samples if s.flag not in ("ok", "continuity-suspect", "hp-gap")]

    def to_frame(self) -> pd.DataFrame:
        dim = self.grid.zeta_hat.shape[1]
        rows = []
        for s in self.samples:
            row = {f"zetahat_{i}": s.zeta_hat[i] for i in range(dim)}
            row.update({"rho": s.rho, "kind": s.kind, "re": float(np.real(s.value)),
                        "im": float(np.imag(s.value)), "flag": s.flag})
            rows.append(row)
        columns = [f"zetahat_{i}" for i in range(dim)] + ["rho", "kind", "re", "im", "flag"]
        return pd.DataFrame(rows, columns=columns)

    def plot_frame(self) -> pd.DataFrame:
        """Modulus against rho per zeta_hat for the Evans-type kinds."""
        frame = self.to_frame()
        frame = frame[frame["kind"].isin(PLOT_KINDS) & (frame["flag"] == "ok")].copy()
        frame["modulus"] = np.hypot(frame["re"].to_numpy(), frame["im"].to_numpy())
        return frame.drop(columns=["re", "im", "flag"]).reset_index(drop=True)

    def to_dict(self) -> Dict:
        return {
            "grid": self.grid.describe(),
            "transversality": self.transversality,
            "withheld": self.withheld,
            "setup_errors": self.setup_errors,
            "verdicts": self.verdicts,
            "fits": [f.to_dict() for f in self.fits],
            "cross_checks": self.cross_checks,
            "audit": self.audit,
            "rho0": [{"zeta_hat": ray.zeta_hat.tolist(), "rho0": ray.rho0} for ray in self.rays],
            "diagnostics": [{"zeta_hat": ray.zeta_hat.tolist(), **ray.diagnostics} for ray in self.rays],
            "continuity_suspects": [{"zeta_hat": list(s.zeta_hat), "kind": s.kind, "rho": s.rho}
                                    for s in self.continuity_suspects],
            "failures": len(self.failed),
        }


def _threshold(moduli: np.ndarray) -> float:
    if moduli.size == 0:
        return 0.0
    return config.sweep_config.threshold_fraction * float(np.median(moduli))


def _verdict(name: str, moduli: np.ndarray, grid_note: str, withheld: Optional[str]) -> Dict:
    threshold = _threshold(moduli)
    minimum = float(moduli.min()) if moduli.size else float("nan")
    if withheld is not None:
        value, reason = None, withheld
    elif moduli.size == 0:
        value, reason = None, "no valid samples"
    else:
        value, reason = bool(minimum > threshold), None
    return {"name": name, "value": value, "min_modulus": minimum, "threshold": threshold,
            "samples": int(moduli.size), "grid": grid_note, "reason": reason}


def compute_verdicts(report: StabilityReport) -> Dict[str, Dict]:
    """Minimum-modulus verdicts; continuity suspects and flagged samples never enter a minimum."""
    ladder_max = float(report.grid.rho_ladder[-1])
    grid_note = f"{report.grid.preset}: {report.grid.size} zeta_hat"

    def moduli(kind, rho_filter=None, divide=False):
        out = [s.modulus / s.rho if divide else s.modulus for s in report.select(kind)
               if rho_filter is None or rho_filter(s.rho)]
        return np.array(out)

    low = lambda rho: 0.0 < rho <= ladder_max  # noqa: E731
    verdicts = {
        "uniformLopatinski": _verdict("uniformLopatinski", moduli("D_Lop"), grid_note, report.withheld),
        "modifiedLopatinski": _verdict("modifiedLopatinski", moduli("D_Lop_m"), grid_note, report.withheld),
        "lowFreqStandardEvans": _verdict("lowFreqStandardEvans", moduli("D_s", low, divide=True),
                                         grid_note + ", rho ladder", report.withheld),
        "lowFreqModifiedEvans": _verdict("lowFreqModifiedEvans", moduli("D_m", low),
                                         grid_note + ", rho <= rho0", report.withheld),
        "standardUniformEvans": _verdict("standardUniformEvans", moduli("D_s", lambda r: r > ladder_max),
                                         grid_note + ", mid-frequency set (grid-limited)", report.withheld),
    }
    dd = moduli("DD_s", low, divide=True)
    verdicts["lowFreqStandardEvans"]["min_DD_s_over_rho"] = float(dd.min()) if dd.size else float("nan")
    verdicts["lowFreqModifiedEvans"]["min_D_red"] = float(moduli("D_red").min()) if moduli("D_red").size \
        else float("nan")
    if report.withheld is None:
        for stage, code in report.setup_errors.items():
            for name in SETUP_STAGES.get(stage, ()):
                verdicts[name].update(value=None, reason=f"setup stage {stage} failed ({code})")
    return verdicts


def low_freq_fit(report: StabilityReport, zeta_hat: Sequence[float]) -> LowFrequencyFit:
    """Fit |DD_s| = rho |m| + O(rho^2) and |D_s_tilde / (rho D_m)| = const + O(rho) along one ray."""
    cfg = config.sweep_config
    zh = tuple(float(x) for x in zeta_hat)
    in_window = lambda rho: cfg.fit_rho_min <= rho <= cfg.fit_rho_max  # noqa: E731
    pts = sorted((s.rho, s.modulus) for s in report.select("DD_s", zh) if in_window(s.rho))
    nan = float("nan")
    if len(pts) < cfg.fit_min_points:
        reason = f"{len(pts)} valid DD_s samples in the fit window, need {cfg.fit_min_points}"
        if "rho0_frames" in report.setup_errors:
            reason = f"setup stage rho0_frames failed ({report.setup_errors['rho0_frames']})"
        return LowFrequencyFit(zh, nan, nan, nan, nan, nan, len(pts), failed=True, reason=reason)
    rho, mod = np.array(pts).T
    fit = linregress(rho, mod / rho)
    slope = float(fit.intercept)
    quad = float(np.max(np.abs(mod - rho * slope)) / np.max(rho) ** 2)
    failed = not np.isfinite(slope) or slope <= 0.0 or fit.intercept_stderr > cfg.fit_tolerance * abs(slope)
    reason = "slope fit rejected" if failed else None
    lop = report.select("D_Lop", zh)
    beta_k = report.select("beta_K", zh)
    ratio = nan
    if lop and beta_k and lop[0].modulus > 0 and beta_k[0].modulus > 0:
        ratio = slope / (beta_k[0].modulus * lop[0].modulus)
    elif "beta_K" in report.setup_errors:
        reason = f"setup stage beta_K failed ({report.setup_errors['beta_K']})"
    link = []
    for s in report.select("D_s_tilde", zh):
        dm = report.value("D_m", zh, s.rho)
        if in_window(s.rho) and dm is not None and dm.valid and dm.modulus > 0:
            link.append((s.rho, s.modulus / (s.rho * dm.modulus)))
    limit = constant = nan
    if len(link) >= 3:
        lr, lv = np.array(sorted(link)).T
        link_fit = linregress(lr, lv)
        limit = float(link_fit.intercept)
        constant = float(np.max(np.abs(lv - limit) / lr))
    return LowFrequencyFit(zh, slope, quad, float(ratio), limit, constant, len(pts), bool(failed), reason)


def cross_checks(report: StabilityReport) -> Dict[str, float]:
    """D_m_direct against beta D_red per ray and simultaneous vanishing of the paired determinants."""
    errors = [float(ray.diagnostics["dm_identity_error"]) for ray in report.rays
              if np.isfinite(ray.diagnostics.get("dm_identity_error", np.nan))]
    mismatch_ds = mismatch_dm = 0
    for first, second, counter in (("D_s", "DD_s", "ds"), ("D_m", "D_m_direct", "dm")):
        a_all = report.select(first)
        b_all = report.select(second)
        tol_a = _threshold(np.array([s.modulus for s in a_all]))
        tol_b = _threshold(np.array([s.modulus for s in b_all]))
        for s in a_all:
            other = report.value(second, s.zeta_hat, s.rho)
            if other is None or not other.valid:
                continue
            if (s.modulus <= tol_a) != (other.modulus <= tol_b):
                if counter == "ds":
                    mismatch_ds += 1
                else:
                    mismatch_dm += 1
    ratios = [f.ratio for f in report.fits if np.isfinite(f.ratio)]
    return {
        "dm_beta_dred_max_relative_error": float(max(errors)) if errors else float("nan"),
        "ds_vanishing_mismatches": mismatch_ds,
        "dm_direct_vanishing_mismatches": mismatch_dm,
        "slope_ratio_min": float(min(ratios)) if ratios else float("nan"),
        "slope_ratio_max": float(max(ratios)) if ratios else float("nan"),
        "ds_dm_constant_max": float(np.nanmax([f.ds_dm_constant for f in report.fits]))
        if any(np.isfinite(f.ds_dm_constant) for f in report.fits) else float("nan"),
        **report.kernel_checks,
    }


IMPLICATIONS = (
    ("lowFreqStandardEvans", "lowFreqModifiedEvans", "D_m"),
    ("lowFreqStandardEvans", "uniformLopatinski", "D_Lop"),
    ("lowFreqStandardEvans", "transversality", None),
)


def implication_audit(report: StabilityReport) -> List[Dict]:
    """Check the implication lattice on the verdicts; violations are numerical inconsistencies."""
    rows = []
    for premise, conclusion, kind in IMPLICATIONS:
        p = report.verdicts.get(premise, {}).get("value")
        if conclusion == "transversality":
            c = report.transversality in TRANSVERSAL if report.withheld is None else None
        else:
            c = report.verdicts.get(conclusion, {}).get("value")
        row = {"premise": premise, "conclusion": conclusion, "offending": []}
        if p is None or c is None:
            row["status"] = "not evaluable"
        elif p and not c:
            row["status"] = "inconsistent"
            if kind is not None:
                threshold = report.verdicts[conclusion]["threshold"]
                row["offending"] = [{"zeta_hat": list(s.zeta_hat), "rho": s.rho, "modulus": s.modulus}
                                    for s in report.select(kind) if s.modulus <= threshold]
            logger.warning("implication %s => %s violated on the sampled grid", premise, conclusion)
        else:
            row["status"] = "consistent"
        rows.append(row)
    return rows


def finalize(report: StabilityReport) -> StabilityReport:
    """Recompute verdicts, fits, cross-checks and the audit from the sample table."""
    report.verdicts = compute_verdicts(report)
    seen = []
    for s in report.samples:
        if s.zeta_hat not in seen:
            seen.append(s.zeta_hat)
    report.fits = [low_freq_fit(report, zh) for zh in seen]
    report.cross_checks = cross_checks(report)
    report.audit = implication_audit(report)
    return report


def withheld_reason(transversality: str, chi_prime: np.ndarray, N: int, k: int) -> Optional[str]:
    if transversality not in TRANSVERSAL:
        return f"connection is {transversality}"
    rank = rank_of(chi_prime).rank
    if rank < N + k:
        return f"chi' has rank {rank} < N + k = {N + k}"
    return None


def prepare_evaluator(evaluator: StabilityEvaluator, rho_top: float) -> Dict[str, str]:
    """Run the frequency-independent setup once before the rays; failed stages map to their error code."""
    stages = {
        "rho0_frames": evaluator.base,
        "beta_K": evaluator.beta_k,
        "symbol_length+": lambda: evaluator.sym.symbol_length("+", rho_top),
        "symbol_length-": lambda: evaluator.sym.symbol_length("-", rho_top),
    }
    errors: Dict[str, str] = {}
    for name, stage in stages.items():
        try:
            stage()
        except EvanscopeError as exc:
            logger.error("sweep setup stage %s failed (%s): %s", name, exc.code, exc)
            errors[name] = exc.code
    return errors


def kernel_checks(evaluator: StabilityEvaluator, tangents: Optional[np.ndarray],
                  setup_errors: Dict[str, str]) -> Dict[str, float]:
    """Chart tangents against ker Gamma_0,red and the kernel under a rotated complement."""
    if "rho0_frames" in setup_errors:
        return {}
    checks = {"complement_kernel_angle": evaluator.complement_comparison()}
    if tangents is not None:
        checks["tangent_residual"] = evaluator.tangent_residual(np.asarray(tangents))
    logger.info("kernel checks: %s", checks)
    return checks


def run_sweep(cp: ConnectionPoint, chi_prime: np.ndarray, grid: FrequencyGrid, transversality: str,
              threads: Optional[int] = None, progress: Optional[bool] = None,
              tangents: Optional[np.ndarray] = None) -> StabilityReport:
    """Evaluate every determinant on the grid; rays run in a thread pool, results kept in grid order."""
    threads = resolve_threads(threads if threads is not None else config.sweep_config.threads)
    problem = cp.problem
    withheld = withheld_reason(transversality, np.asarray(chi_prime), problem.N, problem.k)
    if withheld:
        logger.warning("verdicts withheld: %s", withheld)
    evaluator = StabilityEvaluator(cp, chi_prime)
    rho_top = float(max(grid.rho_ladder.max(), grid.mid_rho.max() if grid.mid_rho.size else 0.0))
    setup_errors = prepare_evaluator(evaluator, rho_top)
    if progress is None:
        progress = sys.stderr.isatty()

    def work(zeta_hat):
        return evaluator.evaluate_ray(zeta_hat, grid.rho_ladder, grid.mid_rho)

    logger.info("sweep: %d rays x %d rho on %d threads", grid.size, grid.rho_ladder.size, threads)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        rays = list(tqdm(pool.map(work, grid.zeta_hat), total=grid.size, desc="sweep", disable=not progress))
    samples = [s for ray in rays for s in ray.samples]
    report = StabilityReport(samples, grid, transversality, rays, withheld, setup_errors=setup_errors,
                             kernel_checks=kernel_checks(evaluator, tangents, setup_errors))
    finalize(report)
    logger.info("sweep done: %d samples, %d failures", len(samples), len(report.failed))
    return report


__all__ = [
    "GRID_PRESETS",
    "KINDS",
    "FrequencyGrid",
    "LowFrequencyFit",
    "StabilityReport",
    "compute_verdicts",
    "cross_checks",
    "finalize",
    "implication_audit",
    "low_freq_fit",
    "run_sweep",
]
