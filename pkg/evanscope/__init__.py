"""
evanscope: viscous shock profiles, shock-manifold charts and Evans determinants
"""

from .chart import ManifoldChart, build_chart, chart_uniqueness_probe
from .determinants import KINDS, DeterminantSample, StabilityEvaluator
from .errors import EvanscopeError
from .model import PlanarShockPoint, SystemModel, structural_checks
from .profile import ConnectionPoint, transversality_report
from .sweep import FrequencyGrid, StabilityReport, run_sweep
from .systems import get_model, get_reference_connection, reference_shock

__version__ = "0.1.0"

__all__ = [
    "KINDS",
    "ConnectionPoint",
    "DeterminantSample",
    "EvanscopeError",
    "FrequencyGrid",
    "ManifoldChart",
    "PlanarShockPoint",
    "StabilityEvaluator",
    "StabilityReport",
    "SystemModel",
    "build_chart",
    "chart_uniqueness_probe",
    "get_model",
    "get_reference_connection",
    "reference_shock",
    "run_sweep",
    "structural_checks",
    "transversality_report",
]
