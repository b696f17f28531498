"""
Configuration file for the evanscope project
Centralizes numerical tolerances, grid defaults and output settings
"""

import os
from dataclasses import dataclass
from typing import Optional, Tuple


@dataclass
class ToleranceConfig:
    """Linear-algebra and classification tolerances"""
    axis_tolerance: float = 1e-8
    rank_threshold: float = 1e-6
    rank_gap: float = 1e3
    null_space_threshold: float = 1e-8
    structural_margin: float = 0.0
    fd_step: float = 1e-6
    unitary_tolerance: float = 1e-12


@dataclass
class ProfileConfig:
    """Tail solver and profile grid settings"""
    tail_precision: float = 1e-10
    min_truncation: float = 20.0
    max_truncation: float = 60.0
    linear_regime: float = 1e-8
    inner_tolerance: float = 1e-13
    inner_accept: float = 1e-10
    inner_max_iter: int = 30
    radius: float = 5.0
    rtol: float = 1e-13
    atol: float = 1e-24
    node_spacing: float = 0.05
    residual_step: float = 1e-3


@dataclass
class NewtonConfig:
    """Newton solver settings for connections and charts"""
    max_iter: int = 50
    tolerance: float = 1e-10
    armijo: float = 1e-4
    min_damping: float = 1.0 / 1024
    tangent_step: float = 1e-3
    box_half_width: float = 0.05
    box_points: int = 3


@dataclass
class ConjugatorConfig:
    """Conjugator integration settings"""
    rtol: float = 1e-11
    atol: float = 1e-13
    symbol_tolerance: float = 1e-10
    node_spacing: float = 0.1
    max_condition: float = 1e3
    fail_condition: float = 1e8
    eigvec_condition: float = 1e8
    residual_step: float = 5e-3
    renormalize: bool = True
    gap_factor: float = 10.0
    continuation_ladder: Tuple[float, ...] = (1e-2, 1e-3, 1e-4)
    continuation_angle: float = 1e-3


@dataclass
class GridConfig:
    """Frequency grid defaults"""
    preset: str = "default"
    angles: int = 65
    azimuths: int = 33
    elevations: int = 33
    rho_min: float = 1e-4
    rho_max: float = 1e-1
    rho_points: int = 13
    mid_rho: Tuple[float, ...] = (0.2, 0.5, 1.0)


@dataclass
class SweepConfig:
    """Sweep verdicts and fits"""
    threshold_fraction: float = 1e-4
    fit_rho_min: float = 1e-3
    fit_rho_max: float = 1e-1
    fit_min_points: int = 4
    fit_tolerance: float = 1e-2
    interior_gamma: float = 0.1
    threads: Optional[int] = None


@dataclass
class ProjectConfig:
    """Main project configuration"""
    project_name: str = "evanscope"
    schema_version: int = 1
    tolerance_config: ToleranceConfig = None
    profile_config: ProfileConfig = None
    newton_config: NewtonConfig = None
    conjugator_config: ConjugatorConfig = None
    grid_config: GridConfig = None
    sweep_config: SweepConfig = None

    def __post_init__(self):
        if self.tolerance_config is None:
            self.tolerance_config = ToleranceConfig()
        if self.profile_config is None:
            self.profile_config = ProfileConfig()
        if self.newton_config is None:
            self.newton_config = NewtonConfig()
        if self.conjugator_config is None:
            self.conjugator_config = ConjugatorConfig()
        if self.grid_config is None:
            self.grid_config = GridConfig()
        if self.sweep_config is None:
            self.sweep_config = SweepConfig()


# Global configuration instance
config = ProjectConfig()

# Environment variables
EVANSCOPE_THREADS = os.getenv("EVANSCOPE_THREADS")
EVANSCOPE_LOG_LEVEL = os.getenv("EVANSCOPE_LOG_LEVEL", "WARNING")

# Paths
OUTPUT_DIR = "runs"
CONFIGS_DIR = "configs"

# Output file names
STRUCTURAL_FILE = "structural.json"
PROFILE_FILE = "profile.csv"
CONNECTION_FILE = "connection.json"
RANKS_FILE = "ranks.json"
CHART_FILE = "chart.json"
SAMPLES_FILE = "samples.csv"
REPORT_FILE = "report.json"
PLOT_DATA_FILE = "plot_data.csv"
DISCREPANCY_FILE = "discrepancy.json"


def resolve_threads(requested: Optional[int] = None) -> int:
    """Thread count from the flag, then EVANSCOPE_THREADS, then the CPU count"""
    if requested is not None and requested > 0:
        return int(requested)
    if EVANSCOPE_THREADS:
        try:
            value = int(EVANSCOPE_THREADS)
            if value > 0:
                return value
        except ValueError:
            print(f"Warning: ignoring EVANSCOPE_THREADS={EVANSCOPE_THREADS!r}")
    return min(os.cpu_count() or 1, 8)


def print_config():
    """Print current configuration"""
    print("Configuration:")
    print(f"  Project: {config.project_name} (schema {config.schema_version})")
    print(f"  Axis tolerance: {config.tolerance_config.axis_tolerance}")
    print(f"  Rank threshold: {config.tolerance_config.rank_threshold}")
    print(f"  Newton: maxIter {config.newton_config.max_iter}, tol {config.newton_config.tolerance}")
    print(f"  Tail truncation: [{config.profile_config.min_truncation}, {config.profile_config.max_truncation}]")
    print(f"  Conjugator rtol: {config.conjugator_config.rtol}")
    print(f"  Grid: {config.grid_config.angles} angles, rho {config.grid_config.rho_min}..{config.grid_config.rho_max} "
          f"({config.grid_config.rho_points} points)")
    print(f"  Threads: {resolve_threads(config.sweep_config.threads)}")
    print(f"  Log level: {EVANSCOPE_LOG_LEVEL}")


if __name__ == "__main__":
    print_config()
