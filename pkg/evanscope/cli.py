"""
Command line interface for evanscope

Commands: check-model, profile, transversality, chart, sweep, uniqueness.
Exit codes: 0 success, 1 numerical verdict withheld, 2 config error,
3 internal error.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

import config as project_config
from config import (
    CHART_FILE,
    CONNECTION_FILE,
    DISCREPANCY_FILE,
    OUTPUT_DIR,
    PLOT_DATA_FILE,
    PROFILE_FILE,
    RANKS_FILE,
    REPORT_FILE,
    SAMPLES_FILE,
    STRUCTURAL_FILE,
    config,
)
from evanscope.chart import ManifoldChart, build_chart, chart_uniqueness_probe
from evanscope.errors import ConfigError, EvanscopeError
from evanscope.io import write_frame, write_json
from evanscope.model import PlanarShockPoint, default_samples, structural_checks
from evanscope.profile import ConnectionPoint, transversality_report
from evanscope.sweep import GRID_PRESETS, FrequencyGrid, run_sweep
from evanscope.systems import get_model, get_reference_connection, reference_shock

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_WITHHELD = 1
EXIT_CONFIG = 2
EXIT_INTERNAL = 3


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class ShockSettings(StrictModel):
    p_plus: List[float]
    p_minus: List[float]
    s: float
    h: List[float] = Field(default_factory=list)


class GridSettings(StrictModel):
    preset: Optional[str] = None
    angles: Optional[int] = Field(default=None, ge=2)
    azimuths: Optional[int] = Field(default=None, ge=2)
    elevations: Optional[int] = Field(default=None, ge=2)
    rho_min: Optional[float] = Field(default=None, gt=0)
    rho_max: Optional[float] = Field(default=None, gt=0)
    rho_points: Optional[int] = Field(default=None, ge=2)
    mid_rho: Optional[List[float]] = None


class ToleranceSettings(StrictModel):
    axis_tolerance: Optional[float] = Field(default=None, gt=0)
    rank_threshold: Optional[float] = Field(default=None, gt=0)
    rank_gap: Optional[float] = Field(default=None, gt=0)
    null_space_threshold: Optional[float] = Field(default=None, gt=0)
    fd_step: Optional[float] = Field(default=None, gt=0)
    newton_tolerance: Optional[float] = Field(default=None, gt=0)
    conjugator_rtol: Optional[float] = Field(default=None, gt=0)
    threshold_fraction: Optional[float] = Field(default=None, gt=0)


class BoxSettings(StrictModel):
    half_width: float = Field(default=config.newton_config.box_half_width, gt=0)
    points: int = Field(default=config.newton_config.box_points, ge=1)


class UniquenessSettings(StrictModel):
    alt_z_bar_shift: float = -1.0
    alt_g_factor: float = 2.0


class RunConfig(StrictModel):
    """Versioned JSON run configuration; unknown keys are rejected."""
    schema_version: int = Field(alias="schema")
    system: str
    shock: Optional[ShockSettings] = None
    z_bar: Optional[float] = None
    alpha: Optional[List[int]] = None
    grid: GridSettings = Field(default_factory=GridSettings)
    tolerances: ToleranceSettings = Field(default_factory=ToleranceSettings)
    box: BoxSettings = Field(default_factory=BoxSettings)
    uniqueness: UniquenessSettings = Field(default_factory=UniquenessSettings)
    output_dir: Optional[str] = None
    threads: Optional[int] = Field(default=None, ge=1)

    @field_validator("schema_version")
    @classmethod
    def check_schema(cls, value: int) -> int:
        if value != config.schema_version:
            raise ValueError(f"unsupported schema {value}, expected {config.schema_version}")
        return value

    @field_validator("system")
    @classmethod
    def check_system(cls, value: str) -> str:
        if "/" in value or "\\" in value or value.endswith((".py", ".json")):
            raise ValueError("user-model files are not accepted; use the library API")
        return value


def _describe_validation(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        where = ".".join(str(p) for p in err["loc"])
        if err["type"] == "extra_forbidden":
            parts.append(f"unknown key {where!r}")
        else:
            parts.append(f"{where}: {err['msg']}")
    return "; ".join(parts)


def load_run_config(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(_describe_validation(exc)) from exc


def apply_tolerances(settings: ToleranceSettings) -> None:
    """Copy configured tolerances into the global config."""
    tol = config.tolerance_config
    for name in ("axis_tolerance", "rank_threshold", "rank_gap", "null_space_threshold", "fd_step"):
        value = getattr(settings, name)
        if value is not None:
            setattr(tol, name, value)
    if settings.newton_tolerance is not None:
        config.newton_config.tolerance = settings.newton_tolerance
    if settings.conjugator_rtol is not None:
        config.conjugator_config.rtol = settings.conjugator_rtol
    if settings.threshold_fraction is not None:
        config.sweep_config.threshold_fraction = settings.threshold_fraction


def setup_logging(verbose: bool = False) -> None:
    level = logging.INFO if verbose else getattr(logging, project_config.EVANSCOPE_LOG_LEVEL.upper(), logging.WARNING)
    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(level)


class Session:
    """Resolved run state shared by the commands."""

    def __init__(self, run: RunConfig, out_dir: Path, threads: Optional[int], grid_preset: Optional[str],
                 quiet: bool = False):
        self.run = run
        self.out_dir = out_dir
        self.threads = threads if threads is not None else run.threads
        self.grid_preset = grid_preset
        self.quiet = quiet
        self._connection: Optional[ConnectionPoint] = None
        self._chart: Optional[ManifoldChart] = None

    @property
    def model(self):
        return get_model(self.run.system)

    def connection(self) -> ConnectionPoint:
        if self._connection is None:
            ref = reference_shock(self.run.system)
            cp = get_reference_connection(self.run.system, self.run.z_bar)
            if self.run.shock is not None:
                shock = self.run.shock
                q = PlanarShockPoint(shock.p_plus, shock.p_minus, shock.s, shock.h)
                if q.as_vector().size != ref.shock.as_vector().size:
                    raise ConfigError(f"shock has the wrong dimensions for {self.run.system}")
                chart = self.chart(cp)
                cp = chart.connection(chart.coordinates(q))
                print(f"Shock moved onto the manifold: p_alpha={cp.q.as_vector()[chart.alpha].tolist()}")
            self._connection = cp
        return self._connection

    def chart(self, cp: Optional[ConnectionPoint] = None) -> ManifoldChart:
        if self._chart is None:
            alpha = self.run.alpha
            if alpha is None:
                alpha = list(reference_shock(self.run.system).alpha)
            self._chart = build_chart(cp if cp is not None else get_reference_connection(self.run.system,
                                                                                            self.run.z_bar), alpha)
        return self._chart

    def grid(self) -> FrequencyGrid:
        g = self.run.grid
        preset = self.grid_preset or g.preset
        return FrequencyGrid.build(self.model.d, preset, g.angles, g.azimuths, g.elevations, g.rho_min, g.rho_max,
                                   g.rho_points, g.mid_rho)

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def wrote(self, name: str) -> None:
        print(f"Wrote {self.path(name)}")


def cmd_check_model(session: Session) -> int:
    model = session.model
    report = structural_checks(model, *default_samples(model))
    write_json(session.path(STRUCTURAL_FILE), report.to_dict())
    session.wrote(STRUCTURAL_FILE)
    print(f"hyperbolicity {report.hyperbolicity_ok}, parabolicity margin {report.parabolicity_margin:.4g}, "
          f"dissipativity margin {report.dissipativity_margin:.4g}")
    return EXIT_OK


def cmd_profile(session: Session) -> int:
    cp = session.connection()
    write_frame(session.path(PROFILE_FILE), cp.profile.to_frame())
    session.wrote(PROFILE_FILE)
    write_json(session.path(CONNECTION_FILE), cp.to_dict())
    session.wrote(CONNECTION_FILE)
    print(f"connection residual {cp.residual:.3e}, max profile residual {cp.profile.residual.max():.3e}")
    return EXIT_OK


def cmd_transversality(session: Session) -> int:
    data = transversality_report(session.connection())
    write_json(session.path(RANKS_FILE), data.to_dict())
    session.wrote(RANKS_FILE)
    print(f"ranks {list(data.ranks)} -> {data.verdict}")
    return EXIT_WITHHELD if data.ambiguous else EXIT_OK


def cmd_chart(session: Session) -> int:
    cp = session.connection()
    chart = session.chart(get_reference_connection(session.run.system, session.run.z_bar))
    box = chart.box(session.run.box.half_width, session.run.box.points)
    out = chart.to_dict(box)
    out["connection"] = cp.to_dict()
    write_json(session.path(CHART_FILE), out)
    session.wrote(CHART_FILE)
    print(f"chart split alpha={chart.alpha.tolist()} dimension {chart.dimension}")
    return EXIT_OK


def cmd_sweep(session: Session) -> int:
    cp = session.connection()
    chart = session.chart(get_reference_connection(session.run.system, session.run.z_bar))
    grid = session.grid()
    print(f"Grid {grid.preset}: {grid.size} zeta_hat x {grid.rho_ladder.size} rho")
    at = cp.q if session.run.shock is not None else None
    report = run_sweep(cp, chart.chi_prime(at), grid, chart.verdict, threads=session.threads,
                       progress=None if not session.quiet else False, tangents=chart.tangent_space(at))
    write_frame(session.path(SAMPLES_FILE), report.to_frame())
    session.wrote(SAMPLES_FILE)
    write_frame(session.path(PLOT_DATA_FILE), report.plot_frame())
    session.wrote(PLOT_DATA_FILE)
    write_json(session.path(REPORT_FILE), report.to_dict())
    session.wrote(REPORT_FILE)
    for name, verdict in report.verdicts.items():
        print(f"  {name}: {verdict['value']} (min {verdict['min_modulus']:.4g})")
    for stage, code in report.setup_errors.items():
        print(f"  setup stage {stage} failed ({code})")
    if report.withheld is not None or report.failed or report.setup_errors:
        return EXIT_WITHHELD
    return EXIT_OK


def cmd_uniqueness(session: Session) -> int:
    chart = session.chart(get_reference_connection(session.run.system, session.run.z_bar))
    settings = session.run.uniqueness
    result = chart_uniqueness_probe(chart, chart.base.z_bar + settings.alt_z_bar_shift, settings.alt_g_factor,
                                    session.run.box.half_width, session.run.box.points)
    write_json(session.path(DISCREPANCY_FILE), result.to_dict())
    session.wrote(DISCREPANCY_FILE)
    print(f"chart discrepancy {result.discrepancy:.3e} over {result.points} points")
    return EXIT_OK if result.failures == 0 else EXIT_WITHHELD


COMMANDS: Dict[str, Callable[[Session], int]] = {
    "check-model": cmd_check_model,
    "profile": cmd_profile,
    "transversality": cmd_transversality,
    "chart": cmd_chart,
    "sweep": cmd_sweep,
    "uniqueness": cmd_uniqueness,
}

ERROR_FILES = {
    "check-model": STRUCTURAL_FILE,
    "profile": CONNECTION_FILE,
    "transversality": RANKS_FILE,
    "chart": CHART_FILE,
    "sweep": REPORT_FILE,
    "uniqueness": DISCREPANCY_FILE,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evanscope",
                                     description="Viscous shock stability: profiles, charts and Evans determinants")
    parser.add_argument("command", choices=list(COMMANDS), help="Which command to run")
    parser.add_argument("-c", "--config", required=True, help="Run configuration (JSON, schema 1)")
    parser.add_argument("-o", "--out", default=None, help="Output directory")
    parser.add_argument("--threads", type=int, default=None, help="Worker threads (falls back to EVANSCOPE_THREADS)")
    parser.add_argument("--grid", choices=list(GRID_PRESETS), default=None, help="Frequency grid preset")
    parser.add_argument("-v", "--verbose", action="store_true", help="Log at INFO level")
    parser.add_argument("-q", "--quiet", action="store_true", help="No progress bar")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)

    print(f"evanscope {args.command}")
    print("=" * 60)

    try:
        run = load_run_config(args.config)
        apply_tolerances(run.tolerances)
        out_dir = Path(args.out or run.output_dir or OUTPUT_DIR)
        session = Session(run, out_dir, args.threads, args.grid, args.quiet)
    except ConfigError as exc:
        print(f"Config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        code = COMMANDS[args.command](session)
    except ConfigError as exc:
        print(f"Config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EvanscopeError as exc:
        logger.error("%s failed: %s", args.command, exc)
        write_json(session.path(ERROR_FILES[args.command]), {"error": exc.to_dict()})
        print(f"{args.command} failed ({exc.code}): {exc}", file=sys.stderr)
        return EXIT_WITHHELD
    except Exception as exc:  # noqa: BLE001
        logger.exception("internal error in %s", args.command)
        print(f"Internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL

    print("=" * 60)
    print("DONE" if code == EXIT_OK else "DONE (verdict withheld)")
    return code


if __name__ == "__main__":
    sys.exit(main())
