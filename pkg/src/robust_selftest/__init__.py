"""Robust self-testing of entangled states from Bell correlations."""

from .bell import MeasurementAngles, chsh_operator, max_chsh_violation, max_mermin_violation, mermin_operator, observable
from .config import DEFAULT_TOL, Tolerances
from .device import CorrelationTable, born_table, no_signalling_check, sample_counts
from .qcore import DensityMatrix, fidelity, min_eigenvalue, partial_trace, pauli_expansion, tensor
from .selftest import (
    ExtractionChannel,
    chsh_bounds,
    chsh_margin,
    chsh_target,
    extractability,
    extraction_channel,
    mermin_bound,
    mermin_margin,
    mermin_target,
)
from .states import StateSpec

__all__ = [
    "DEFAULT_TOL",
    "CorrelationTable",
    "DensityMatrix",
    "ExtractionChannel",
    "MeasurementAngles",
    "StateSpec",
    "Tolerances",
    "born_table",
    "chsh_bounds",
    "chsh_margin",
    "chsh_operator",
    "chsh_target",
    "extractability",
    "extraction_channel",
    "fidelity",
    "max_chsh_violation",
    "max_mermin_violation",
    "mermin_bound",
    "mermin_margin",
    "mermin_operator",
    "mermin_target",
    "min_eigenvalue",
    "no_signalling_check",
    "observable",
    "partial_trace",
    "pauli_expansion",
    "sample_counts",
    "tensor",
]
