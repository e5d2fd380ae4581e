"""Time-limited regions of attraction for a WT + STATCOM plant during grid faults."""

from tlroa.config import ConfigError, RunConfig, load_config
from tlroa.fault import CctReport, FaultScenario, estimate_cct, simulate_fault, verify_clearing
from tlroa.loadflow import Equilibrium, solve_equilibrium
from tlroa.lyapunov import Ellipsoid, build_initial_roa, linearize, solve_lyapunov
from tlroa.model import (GridBoundary, InjectionSchedule, NetworkCoupling, PlantConfig,
                         PlantRhs, StatcomParams, WtParams, system_rhs)
from tlroa.netfit import FitWindow, ImpedanceScan, fit_rl, synthesize_scan
from tlroa.roa import TlRoa, build_tlroa, integrate, is_member

__version__ = "0.1.0"

__all__ = [
    "CctReport", "ConfigError", "Ellipsoid", "Equilibrium", "FaultScenario", "FitWindow",
    "GridBoundary", "ImpedanceScan", "InjectionSchedule", "NetworkCoupling", "PlantConfig",
    "PlantRhs", "RunConfig", "StatcomParams", "TlRoa", "WtParams", "build_initial_roa",
    "build_tlroa", "estimate_cct", "fit_rl", "integrate", "is_member", "linearize",
    "load_config", "simulate_fault", "solve_equilibrium", "solve_lyapunov", "synthesize_scan",
    "system_rhs", "verify_clearing", "__version__",
]
