"""State families used in the self-testing experiments.

Qubit order conventions:

* two-qubit states are ordered (A, B);
* the register family ``rho_xyab`` is ordered (X, Y, A, B), registers first,
  so Alice's lab is factors (0, 2) and Bob's lab is factors (1, 3);
* three-qubit states are ordered (A, B, C).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .qcore import I2, SX, SY, SZ, DensityMatrix, ket, pauli_resum, tensor

SQRT2 = np.sqrt(2.0)

# Relative phase of |111> at which the XY-plane Mermin family reaches 4 with
# all angles equal to pi/4; see tests/test_bell.py::test_ghz_phase_derivation.
GHZ_PHASE = 3 * np.pi / 4

REGISTER_LABELS = ("00", "01", "10", "11")

# Pauli coefficients of the maximally entangled register component.
TAU11_PAULI = {
    "II": 0.25,
    "XX": 0.25 / SQRT2,
    "XZ": 0.25 / SQRT2,
    "ZX": 0.25 / SQRT2,
    "ZZ": -0.25 / SQRT2,
    "YY": 0.25,
}


def _check_weight(name: str, value: float, lo: float = 0.0, hi: float = 1.0, open_interval: bool = False) -> float:
    value = float(value)
    ok = lo < value < hi if open_interval else lo <= value <= hi
    if not ok:
        bracket = f"({lo}, {hi})" if open_interval else f"[{lo}, {hi}]"
        raise ValueError(f"{name}={value} outside {bracket}")
    return value


def phi_plus() -> DensityMatrix:
    return DensityMatrix.from_ket(ket("00") + ket("11"))


def partially_entangled(theta: float) -> DensityMatrix:
    """Projector onto cos(theta)|00> + sin(theta)|11>."""
    theta = _check_weight("theta", theta, 0.0, np.pi / 2)
    return DensityMatrix.from_ket(np.cos(theta) * ket("00") + np.sin(theta) * ket("11"))


def werner(v: float) -> DensityMatrix:
    v = _check_weight("v", v)
    return DensityMatrix.from_matrix(v * phi_plus().matrix + (1 - v) * np.eye(4) / 4)


def dephased(v: float) -> DensityMatrix:
    """``v * Phi+ + (1 - v) * dephased(Phi+)``; only the |00><11| coherence shrinks."""
    v = _check_weight("v", v)
    classical = 0.5 * (np.outer(ket("00"), ket("00")) + np.outer(ket("11"), ket("11")))
    return DensityMatrix.from_matrix(v * phi_plus().matrix + (1 - v) * classical)


def tau_component(xy: str) -> DensityMatrix:
    if xy not in REGISTER_LABELS:
        raise ValueError(f"register label must be one of {REGISTER_LABELS}, got {xy!r}")
    if xy == "11":
        return DensityMatrix.from_matrix(pauli_resum(TAU11_PAULI))
    return DensityMatrix.from_matrix((tensor(I2, I2) + tensor(SX, SX)) / 4)


def singlet() -> DensityMatrix:
    """The maximally entangled state in the measurement frame: the pure component tau^11."""
    return tau_component("11")


def register_weights(nu: float) -> dict[str, float]:
    rest = (1 - nu) / 3
    return {"00": rest, "01": rest, "10": rest, "11": nu}


def rho_xyab(nu: float) -> DensityMatrix:
    """Register-flagged mixture sum_xy p_xy |x><x| (x) |y><y| (x) tau^xy, ordered X, Y, A, B."""
    nu = _check_weight("nu", nu, open_interval=True)
    out = np.zeros((16, 16), dtype=complex)
    for xy, p in register_weights(nu).items():
        flag = np.outer(ket(xy), ket(xy))
        out += p * np.kron(flag, tau_component(xy).matrix)
    return DensityMatrix.from_matrix(out)


def ghz(phi: float = GHZ_PHASE) -> DensityMatrix:
    return DensityMatrix.from_ket(ket("000") + np.exp(1j * phi) * ket("111"))


def nu_abc() -> DensityMatrix:
    """Biseparable partner |Phi+>_AB |0>_C."""
    return phi_plus().kron(DensityMatrix.from_ket(ket("0")))


def tripartite_mixture(w: float, noise: float = 0.0, phi: float = GHZ_PHASE) -> DensityMatrix:
    """``w * GHZ + (1 - w) * nu_abc``, optionally blended with white noise at rate ``noise``."""
    w = _check_weight("w", w)
    noise = _check_weight("noise", noise)
    mix = w * ghz(phi).matrix + (1 - w) * nu_abc().matrix
    return DensityMatrix.from_matrix((1 - noise) * mix + noise * np.eye(8) / 8)


_FAMILIES: dict[str, tuple[str, ...]] = {
    "singlet": (),
    "phi_plus": (),
    "partial": ("theta",),
    "werner": ("v",),
    "dephased": ("v",),
    "tau": ("xy",),
    "rho_xyab": ("nu",),
    "ghz": ("phi",),
    "tripartite_mixture": ("w", "noise"),
}
_DEFAULTS: dict[str, dict[str, Any]] = {
    "ghz": {"phi": GHZ_PHASE},
    "tripartite_mixture": {"noise": 0.0},
}


def family_parameters(family: str) -> tuple[str, ...]:
    """Parameter names accepted by a state family."""
    if family not in _FAMILIES:
        raise ValueError(f"unknown state family {family!r}; expected one of {sorted(_FAMILIES)}")
    return _FAMILIES[family]


@dataclass(frozen=True)
class StateSpec:
    """A named state family plus its parameters.

    Text form is one ``key = value`` pair per line; ``#`` starts a comment::

        family = werner
        v = 0.8
    """

    family: str
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown state family {self.family!r}; expected one of {sorted(_FAMILIES)}")
        allowed = set(_FAMILIES[self.family])
        extra = set(self.params) - allowed
        if extra:
            raise ValueError(f"family {self.family!r} does not take parameter(s) {sorted(extra)}")
        params = dict(_DEFAULTS.get(self.family, {}))
        params.update(self.params)
        missing = allowed - set(params)
        if missing:
            raise ValueError(f"family {self.family!r} needs parameter(s) {sorted(missing)}")
        for key, value in params.items():
            if key != "xy":
                params[key] = float(value)
                if key in ("v", "w", "nu", "noise"):
                    _check_weight(key, params[key])
            elif str(value) not in REGISTER_LABELS:
                raise ValueError(f"register label must be one of {REGISTER_LABELS}, got {value!r}")
            else:
                params[key] = str(value)
        object.__setattr__(self, "params", params)

    @property
    def n_parties(self) -> int:
        return 3 if self.family in ("ghz", "tripartite_mixture") else 2

    def build(self) -> DensityMatrix:
        p = self.params
        match self.family:
            case "singlet":
                return singlet()
            case "phi_plus":
                return phi_plus()
            case "partial":
                return partially_entangled(p["theta"])
            case "werner":
                return werner(p["v"])
            case "dephased":
                return dephased(p["v"])
            case "tau":
                return tau_component(p["xy"])
            case "rho_xyab":
                return rho_xyab(p["nu"])
            case "ghz":
                return ghz(p["phi"])
            case "tripartite_mixture":
                return tripartite_mixture(p["w"], p["noise"])
        raise AssertionError(self.family)

    def to_text(self) -> str:
        lines = [f"family = {self.family}"]
        lines += [f"{k} = {v!r}" if isinstance(v, float) else f"{k} = {v}" for k, v in sorted(self.params.items())]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "StateSpec":
        pairs = parse_key_values(text)
        if "family" not in pairs:
            raise ValueError("state spec is missing 'family'")
        family = pairs.pop("family")
        return cls(family, pairs)


def parse_key_values(text: str) -> dict[str, str]:
    """Parse ``key = value`` (or ``key: value``) lines, ignoring blanks and ``#`` comments."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        sep = "=" if "=" in line else ":"
        if sep not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split(sep, 1))
        if not key:
            raise ValueError(f"line {lineno}: empty key")
        out[key] = value
    return out
