"""Superstar-firm spillovers: theory model, TFP estimation, spillover measures, shift-share
instruments, fixed-effects IV regression and productivity decompositions."""

from .errors import (ConfigError, ConvergenceError, DegenerateInstrumentError, DivergenceError, DomainError,
                     EmptyMarketError, InsufficientDataError, IntegrityError, MissingKeyError,
                     RankDeficiencyError, SchemaError, SeparationError, SuperspillError)
from .panel import DeflatorTable, FirmYear, IOTable, Panel, load_panel, write_panel
from .simulate import GroundTruth, SimPanelConfig, simulate_panel

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ConvergenceError", "DegenerateInstrumentError", "DivergenceError", "DomainError",
    "EmptyMarketError", "InsufficientDataError", "IntegrityError", "MissingKeyError", "RankDeficiencyError",
    "SchemaError", "SeparationError", "SuperspillError",
    "DeflatorTable", "FirmYear", "IOTable", "Panel", "load_panel", "write_panel",
    "GroundTruth", "SimPanelConfig", "simulate_panel",
]
