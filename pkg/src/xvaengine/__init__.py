"""Nested Monte Carlo XVA engine: UCVA, FVA, MVA, KVA and funds transfer prices."""

from .credit import CreditSetup, EntityCredit, HazardCurve
from .engine import EngineConfig, XVAReport, incremental_xva, run_full
from .instruments import MarginSpec, NettingSet, Portfolio, Trade
from .market_sim import ModelParams, ScenarioSet, TimeGrid, generate_primary, spawn_secondary

__all__ = [
    "CreditSetup", "EntityCredit", "HazardCurve", "EngineConfig", "XVAReport", "incremental_xva",
    "run_full", "MarginSpec", "NettingSet", "Portfolio", "Trade", "ModelParams", "ScenarioSet",
    "TimeGrid", "generate_primary", "spawn_secondary",
]
__version__ = "0.1.0"
