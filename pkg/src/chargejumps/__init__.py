"""Charge-jump detection and rate analysis for offset-charge-sensitive qubits."""
from .errors import (
    AnalysisError, BadEfficiency, BinningMismatch, ChargeJumpError, ConfigInvalid, DataError,
    DegenerateRatio, EmptyAboveThreshold, EmptySegment, GridMismatch, ScreenFailed, TemplateMissing,
    TooFewScans,
)
from .jumpfind import DetectionConfig, JumpEvent, SegmentFit, best_fit_phase, find_jumps, rolling_chi2_scan
from .kernels import BACKEND
from .model import ChargeScan, CurveModel, QubitConfig, ScanSchedule, p1_of_offset_charge, phase_of_offset_charge, wrap_charge
from .rates import (
    CoincidencePair, ExcessSolution, RateEstimate, SpectrumHistogram, corrected_rate, lmo_flux_ratio,
    pair_coincidences, poisson_interval, pooled_rate, solve_excess_rate, stochastic_coincidence_rate,
)
from .synth import EfficiencyReport, InjectionPlan, NoiseModel, generate_scan, inject_jumps, run_efficiency_mc
from .template import Template, build_template, stitch_template, template_predict

__version__ = "0.1.0"

__all__ = [
    "AnalysisError", "BadEfficiency", "BinningMismatch", "ChargeJumpError", "ConfigInvalid", "DataError",
    "DegenerateRatio", "EmptyAboveThreshold", "EmptySegment", "GridMismatch", "ScreenFailed",
    "TemplateMissing", "TooFewScans",
    "DetectionConfig", "JumpEvent", "SegmentFit", "best_fit_phase", "find_jumps", "rolling_chi2_scan",
    "BACKEND",
    "ChargeScan", "CurveModel", "QubitConfig", "ScanSchedule", "p1_of_offset_charge",
    "phase_of_offset_charge", "wrap_charge",
    "CoincidencePair", "ExcessSolution", "RateEstimate", "SpectrumHistogram", "corrected_rate",
    "lmo_flux_ratio", "pair_coincidences", "poisson_interval", "pooled_rate", "solve_excess_rate",
    "stochastic_coincidence_rate",
    "EfficiencyReport", "InjectionPlan", "NoiseModel", "generate_scan", "inject_jumps", "run_efficiency_mc",
    "Template", "build_template", "stitch_template", "template_predict",
]
