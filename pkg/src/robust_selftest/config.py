"""Numerical tolerances shared by every module.

All thresholds live in a single frozen record so that a run can be
reproduced by recording one object. ``DEFAULT_TOL`` is used whenever a
function is not handed an explicit record.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace


@dataclass(frozen=True)
class Tolerances:
    hermitian: float = 1e-12
    trace: float = 1e-10
    psd: float = 1e-10
    eigen: float = 1e-12
    choi_psd: float = 1e-9
    cptp: float = 1e-9
    margin: float = 1e-9
    projector_purity: float = 1e-10
    exact_no_signalling: float = 1e-12
    seesaw_improvement: float = 1e-9
    refine: float = 1e-8

    def with_overrides(self, overrides: dict[str, float]) -> "Tolerances":
        known = {f.name for f in fields(self)}
        unknown = set(overrides) - known
        if unknown:
            raise KeyError(f"unknown tolerance name(s): {sorted(unknown)}")
        return replace(self, **{k: float(v) for k, v in overrides.items()})


DEFAULT_TOL = Tolerances()
