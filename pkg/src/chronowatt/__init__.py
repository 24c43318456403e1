"""Time-domain energy simulation for network devices."""

__version__ = "0.1.0"

from .engine import EngineOptions, SimResult, Simulation, integrate_energy
from .errors import ChronowattError
from .lpi import LpiParams, duty_cycle_power, lpi_advance
from .metrics import breakdown_report, delay_summary, ecr, efficiency_curve
from .policy import Mode, PolicyConfig
from .power import calibrate, device_power, instantaneous_power, load_device_model
from .scenario import Scenario, load_scenario, scenario_from_dict
from .sla import may_sleep, tolerance_matrix
from .traffic import ArrivalStream, OnOffSourceParams, estimate_hurst, generate_aggregate, generate_poisson

__all__ = [
    "ArrivalStream", "ChronowattError", "EngineOptions", "LpiParams", "Mode", "OnOffSourceParams", "PolicyConfig",
    "Scenario", "SimResult", "Simulation", "breakdown_report", "calibrate", "delay_summary", "device_power",
    "duty_cycle_power", "ecr", "efficiency_curve", "estimate_hurst", "generate_aggregate", "generate_poisson",
    "instantaneous_power", "integrate_energy", "load_device_model", "load_scenario", "lpi_advance", "may_sleep",
    "scenario_from_dict", "tolerance_matrix", "__version__",
]
