"""Single-step CZ gates through a shared center mode with tunable couplers."""

from .analysis import inverse_participation_ratio, leakage_report, occupation_map
from .calibrate import LabeledSpectrum, eigensolve, idle_spectrum, zz_report
from .effective import analytic_propagators, jacobi_propagator, schrieffer_wolff
from .gates import (
    NoiseSpec,
    average_fidelity_with_decoherence,
    average_gate_fidelity_unitary,
    closed_form_decoherence_infidelity,
    optimize_cz,
    optimize_single_qubit,
    run_cz,
    run_single_qubit_gate,
    state_fidelity,
)
from .model import FockSpace, SystemModel, unit_cell_model
from .propagate import MagnusConfig, evolve
from .pulses import ChargeDrive, CZParams, FlatTopPulse, PulseSchedule, schedule_cz

__all__ = [
    "CZParams",
    "ChargeDrive",
    "FlatTopPulse",
    "FockSpace",
    "LabeledSpectrum",
    "MagnusConfig",
    "NoiseSpec",
    "PulseSchedule",
    "SystemModel",
    "analytic_propagators",
    "average_fidelity_with_decoherence",
    "average_gate_fidelity_unitary",
    "closed_form_decoherence_infidelity",
    "eigensolve",
    "evolve",
    "idle_spectrum",
    "inverse_participation_ratio",
    "jacobi_propagator",
    "leakage_report",
    "occupation_map",
    "optimize_cz",
    "optimize_single_qubit",
    "run_cz",
    "run_single_qubit_gate",
    "schedule_cz",
    "schrieffer_wolff",
    "state_fidelity",
    "unit_cell_model",
    "zz_report",
]
