"""Extraction channels, fidelity operators, robustness bounds and extractability.

Channels are stored as Choi matrices ``J = sum_ij |i><j| (x) L(|i><j|)``
with the input factor first; a channel is CPTP iff ``J >= 0`` and the
partial trace of ``J`` over the output equals the identity on the input.
"""

from __future__ import annotations

import csv
import io
import itertools
import logging
import string
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Literal, Sequence

import cvxpy as cp
import numpy as np
from scipy.optimize import brentq

from . import bell
from .bell import MeasurementAngles, Plane
from .config import DEFAULT_TOL, Tolerances
from .qcore import SX, SY, SZ, DensityMatrix, as_matrix, dagger, is_hermitian, min_eigenvalue, ptrace
from .states import GHZ_PHASE, ghz, singlet

log = logging.getLogger(__name__)

SQRT2 = np.sqrt(2.0)
CHSH_SLOPE = (4 + 5 * SQRT2) / 16
CHSH_OFFSET = (1 + 2 * SQRT2) / 4
MERMIN_SLOPE = (2 + SQRT2) / 8
MERMIN_OFFSET = 1 / SQRT2
CHSH_RANGE = (2.0, 2 * SQRT2)
MERMIN_RANGE = (2 * SQRT2, 4.0)

Scenario = Literal["CHSH", "Mermin"]


# ---------------------------------------------------------------------------
# channels


@dataclass(frozen=True, eq=False)
class ExtractionChannel:
    choi: np.ndarray
    d_in: int
    d_out: int = 2

    def __post_init__(self) -> None:
        j = np.array(self.choi, dtype=complex)
        if j.shape != (self.d_in * self.d_out,) * 2:
            raise ValueError(f"Choi shape {j.shape} does not match {self.d_in}->{self.d_out}")
        j.setflags(write=False)
        object.__setattr__(self, "choi", j)

    @property
    def tensor(self) -> np.ndarray:
        """Choi entries as ``J[i, o, j, q]`` (input row, output row, input col, output col)."""
        return self.choi.reshape(self.d_in, self.d_out, self.d_in, self.d_out)

    def cptp_violation(self) -> tuple[float, float]:
        """(most negative Choi eigenvalue, max deviation of Tr_out J from identity)."""
        lam = float(np.linalg.eigvalsh(0.5 * (self.choi + dagger(self.choi)))[0])
        tp = np.abs(ptrace(self.choi, (self.d_in, self.d_out), [0]) - np.eye(self.d_in)).max()
        return lam, float(tp)

    def is_cptp(self, tol: Tolerances = DEFAULT_TOL) -> bool:
        lam, tp = self.cptp_violation()
        return is_hermitian(self.choi, tol.cptp) and lam >= -tol.choi_psd and tp <= tol.cptp

    def apply(self, rho: np.ndarray) -> np.ndarray:
        return np.einsum("iojq,ij->oq", self.tensor, np.asarray(rho))

    def adjoint(self, op: np.ndarray) -> np.ndarray:
        return np.einsum("iojq,qo->ji", self.tensor, np.asarray(op))

    @classmethod
    def from_map(cls, fn, d_in: int, d_out: int = 2) -> "ExtractionChannel":
        j = np.zeros((d_in * d_out, d_in * d_out), dtype=complex)
        for i, k in itertools.product(range(d_in), repeat=2):
            unit = np.zeros((d_in, d_in), dtype=complex)
            unit[i, k] = 1.0
            j += np.kron(unit, fn(unit))
        return cls(j, d_in, d_out)

    @classmethod
    def identity(cls, d: int = 2) -> "ExtractionChannel":
        return cls.from_map(lambda x: x, d, d)


def dephasing_strength(angle: float) -> float:
    """``g(angle) = (1 + sqrt2)(cos + sin - 1)``: 0 at the ends of [0, pi/2], 1 at pi/4."""
    return float((1 + SQRT2) * (np.cos(angle) + np.sin(angle) - 1))


def _dephasing_map(angle: float, plane: Plane):
    if not 0.0 <= angle <= np.pi / 2 + 1e-12:
        raise ValueError(f"extraction angle {angle} outside [0, pi/2]")
    g = min(max(dephasing_strength(angle), 0.0), 1.0)
    gamma = SX if angle < np.pi / 4 else (SZ if plane == "XZ" else SY)
    return lambda rho: 0.5 * (1 + g) * rho + 0.5 * (1 - g) * gamma @ rho @ gamma


def extraction_channel(angle: float, plane: Plane = "XZ") -> ExtractionChannel:
    """Qubit dephasing channel matched to the observables at ``angle``."""
    return ExtractionChannel.from_map(_dephasing_map(angle, plane), 2)


# maps Z -> Y and keeps X; carries an XZ-plane Jordan frame into the XY plane
_XZ_TO_XY = (np.eye(2) + 1j * SX) / SQRT2


@dataclass(frozen=True)
class JordanBlock:
    isometry: np.ndarray  # rows: qubit basis, columns: lab coordinates
    angle: float


def jordan_blocks(a0: np.ndarray, a1: np.ndarray, atol: float = 1e-8) -> list[JordanBlock]:
    """Split two +-1 observables into qubit blocks where they read ``cos a X +- sin a Z``.

    One-dimensional blocks (where both observables act as the same sign) are
    embedded into a qubit as an X or Z eigenvector.
    """
    t = a0 + a1
    s = a0 - a1
    w, v = np.linalg.eigh(0.5 * (t @ t + dagger(t @ t)))
    clusters: list[list[int]] = []
    for k in range(len(w)):
        if clusters and abs(w[k] - w[clusters[-1][-1]]) < 1e-6:
            clusters[-1].append(k)
        else:
            clusters.append([k])

    zero, one = np.array([1, 0], complex), np.array([0, 1], complex)
    plus, minus = (zero + one) / SQRT2, (zero - one) / SQRT2
    blocks = []
    for idx in clusters:
        e = v[:, idx]
        c = float(np.clip(np.mean(w[idx]), 0.0, 4.0))
        if atol < c < 4 - atol:
            sv, su = np.linalg.eigh(dagger(e) @ s @ e)
            for col in np.where(sv > 0)[0]:
                x = e @ su[:, col]
                y = t @ x / np.sqrt(c)
                iso = np.outer(zero, x.conj()) + np.outer(one, y.conj())
                blocks.append(JordanBlock(iso, float(np.arccos(np.sqrt(c) / 2))))
            continue
        # edge clusters: A0 = A1 (c = 4, angle 0) or A0 = -A1 (c = 0, angle pi/2)
        angle = 0.0 if c >= 4 - atol else np.pi / 2
        ev, eu = np.linalg.eigh(dagger(e) @ a0 @ e)
        pos = [e @ eu[:, k] for k in np.where(ev > 0)[0]]
        neg = [e @ eu[:, k] for k in np.where(ev <= 0)[0]]
        up, down = (plus, minus) if angle == 0.0 else (zero, one)
        for p, m in zip(pos, neg):
            blocks.append(JordanBlock(np.outer(up, p.conj()) + np.outer(down, m.conj()), angle))
        for p in pos[len(neg):]:
            blocks.append(JordanBlock(np.outer(up, p.conj()), angle))
        for m in neg[len(pos):]:
            blocks.append(JordanBlock(np.outer(down, m.conj()), angle))
    return blocks


def jordan_channel(a0: np.ndarray, a1: np.ndarray, plane: Plane = "XZ") -> ExtractionChannel:
    """Extraction channel built from an arbitrary pair of +-1 observables.

    Each Jordan block is rotated into the canonical frame of the
    angle-parameterised family and then dephased by ``extraction_channel``.
    """
    a0, a1 = np.asarray(a0, complex), np.asarray(a1, complex)
    d = a0.shape[0]
    pieces = []
    for block in jordan_blocks(a0, a1):
        iso = block.isometry if plane == "XZ" else _XZ_TO_XY @ block.isometry
        pieces.append((iso, _dephasing_map(block.angle, plane)))

    def fn(x):
        return sum(deph(iso @ x @ dagger(iso)) for iso, deph in pieces)

    return ExtractionChannel.from_map(fn, d, 2)


def random_channel(d_in: int, d_out: int, rng: np.random.Generator) -> ExtractionChannel:
    n = d_in * d_out
    g = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return ExtractionChannel(project_cptp(g @ dagger(g), d_in, d_out), d_in, d_out)


def project_cptp(j: np.ndarray, d_in: int, d_out: int) -> np.ndarray:
    """Clip negative Choi eigenvalues and renormalise so ``Tr_out J = 1``."""
    j = 0.5 * (j + dagger(j))
    w, v = np.linalg.eigh(j)
    j = (v * np.clip(w, 0.0, None)) @ dagger(v)
    t = ptrace(j, (d_in, d_out), [0])
    tw, tv = np.linalg.eigh(0.5 * (t + dagger(t)))
    if tw[0] <= 1e-12:
        raise ValueError("Choi matrix has a singular input marginal; cannot renormalise")
    l = np.kron((tv / np.sqrt(tw)) @ dagger(tv), np.eye(d_out))
    j = l @ j @ l
    return 0.5 * (j + dagger(j))


# ---------------------------------------------------------------------------
# targets and fidelity operators


@dataclass(frozen=True, eq=False)
class TargetState:
    projector: DensityMatrix
    scenario: Scenario

    def __post_init__(self) -> None:
        if abs(self.projector.purity() - 1.0) > DEFAULT_TOL.projector_purity:
            raise ValueError("target state must be pure")


def chsh_target() -> TargetState:
    return TargetState(singlet(), "CHSH")


def mermin_target(phi: float = GHZ_PHASE) -> TargetState:
    return TargetState(ghz(phi), "Mermin")


@dataclass(frozen=True, eq=False)
class FidelityOperator:
    matrix: np.ndarray
    angles: MeasurementAngles | None
    target: TargetState


def _local_apply(t: np.ndarray, j4: np.ndarray, p: int, n: int) -> np.ndarray:
    res = np.tensordot(j4, t, axes=([0, 2], [p, n + p]))
    return np.moveaxis(res, [0, 1], [p, n + p])


def _local_adjoint(t: np.ndarray, j4: np.ndarray, p: int, n: int) -> np.ndarray:
    # (L^+ X)[j, i] = sum_{o,q} J[i, o, j, q] X[q, o]
    res = np.tensordot(j4, t, axes=([3, 1], [p, n + p]))  # -> (i, j, rest)
    return np.moveaxis(res, [1, 0], [p, n + p])


def heisenberg(op: np.ndarray, channels: Sequence[ExtractionChannel]) -> np.ndarray:
    """``(L_1^+ (x) ... (x) L_n^+)(op)`` for an operator on the output qubits."""
    n = len(channels)
    t = np.asarray(op, complex).reshape([c.d_out for c in channels] * 2)
    for p, ch in enumerate(channels):
        t = _local_adjoint(t, ch.tensor, p, n)
    d = int(np.prod([c.d_in for c in channels]))
    return t.reshape(d, d)


def apply_channels(rho: np.ndarray, channels: Sequence[ExtractionChannel]) -> np.ndarray:
    n = len(channels)
    t = np.asarray(rho, complex).reshape([c.d_in for c in channels] * 2)
    for p, ch in enumerate(channels):
        t = _local_apply(t, ch.tensor, p, n)
    d = int(np.prod([c.d_out for c in channels]))
    return t.reshape(d, d)


def fidelity_operator_chsh(angles: MeasurementAngles, target: TargetState | None = None) -> FidelityOperator:
    if angles.tripartite:
        raise ValueError("CHSH fidelity operator takes two angles")
    target = target or chsh_target()
    chans = [extraction_channel(angles.a), extraction_channel(angles.b)]
    return FidelityOperator(heisenberg(target.projector.matrix, chans), angles, target)


def fidelity_operator_mermin(angles: MeasurementAngles, target: TargetState | None = None) -> FidelityOperator:
    if not angles.tripartite:
        raise ValueError("Mermin fidelity operator needs three angles")
    target = target or mermin_target()
    chans = [extraction_channel(t, "XY") for t in angles.as_tuple()]
    return FidelityOperator(heisenberg(target.projector.matrix, chans), angles, target)


def chsh_margin(angles: MeasurementAngles, tol: Tolerances = DEFAULT_TOL) -> float:
    """Smallest eigenvalue of ``K - s W + mu 1``; non-negative when the CHSH operator inequality holds."""
    k = fidelity_operator_chsh(angles).matrix
    w = bell.chsh_operator(angles).matrix
    return min_eigenvalue(k - CHSH_SLOPE * w + CHSH_OFFSET * np.eye(4), tol)


def mermin_margin(angles: MeasurementAngles, tol: Tolerances = DEFAULT_TOL) -> float:
    k = fidelity_operator_mermin(angles).matrix
    w = bell.mermin_operator(angles).matrix
    return min_eigenvalue(k - MERMIN_SLOPE * w + MERMIN_OFFSET * np.eye(8), tol)


# ---------------------------------------------------------------------------
# analytic bounds


@dataclass(frozen=True)
class BoundReport:
    beta: float
    lower: float
    upper: float | None
    scenario: Scenario
    trivial: bool = False

    CSV_HEADER = ("beta", "lower", "upper", "scenario")

    def csv_row(self) -> tuple[str, str, str, str]:
        up = "" if self.upper is None else repr(self.upper)
        return (repr(self.beta), repr(self.lower), up, self.scenario)


def write_bounds_csv(reports: Sequence[BoundReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BoundReport.CSV_HEADER)
    for r in reports:
        w.writerow(r.csv_row())
    return buf.getvalue()


def read_bounds_csv(text: str) -> list[BoundReport]:
    rows = list(csv.DictReader(io.StringIO(text)))
    return [
        BoundReport(float(r["beta"]), float(r["lower"]), float(r["upper"]) if r["upper"] else None, r["scenario"])
        for r in rows
    ]


def chsh_lower(beta: float) -> float:
    return float(CHSH_SLOPE * beta - CHSH_OFFSET)


def chsh_bounds(beta: float) -> BoundReport:
    lo, hi = CHSH_RANGE
    if not lo - 1e-12 <= beta <= hi + 1e-12:
        raise ValueError(f"CHSH value {beta} outside [{lo}, {hi:.6f}]")
    upper = 0.5 + (beta - 2) / (2 * (2 * SQRT2 - 2))
    return BoundReport(float(beta), chsh_lower(beta), float(upper), "CHSH")


def chsh_threshold(level: float = 0.5) -> float:
    """CHSH value at which the guaranteed extractability first reaches ``level``."""
    return float(brentq(lambda b: chsh_lower(b) - level, *CHSH_RANGE, xtol=1e-15))


def mermin_bound(beta: float) -> BoundReport:
    """Tight Mermin robustness bound; at or below 2*sqrt2 it returns 1/2 flagged trivial."""
    lo, hi = MERMIN_RANGE
    if beta > hi + 1e-12:
        raise ValueError(f"Mermin value {beta} exceeds the quantum maximum 4")
    if beta <= lo:
        return BoundReport(float(beta), 0.5, 0.5, "Mermin", trivial=True)
    q = 0.5 + (beta - lo) / (2 * (hi - lo))
    return BoundReport(float(beta), float(q), float(q), "Mermin")


# ---------------------------------------------------------------------------
# extractability by see-saw


@lru_cache(maxsize=None)
def _step_problem(d_in: int, d_out: int):
    n = d_in * d_out
    j = cp.Variable((n, n), hermitian=True)
    c = cp.Parameter((n, n), hermitian=True)
    cons = [j >> 0, cp.partial_trace(j, [d_in, d_out], axis=1) == np.eye(d_in)]
    return cp.Problem(cp.Maximize(cp.real(cp.trace(c @ j))), cons), j, c


def best_response(cost: np.ndarray, d_in: int, d_out: int) -> np.ndarray:
    """Choi matrix maximising ``Tr(J cost)`` over CPTP maps ``d_in -> d_out``."""
    prob, j, c = _step_problem(d_in, d_out)
    c.value = 0.5 * (cost + dagger(cost))
    prob.solve(solver=cp.CLARABEL)
    if j.value is None or prob.status not in ("optimal", "optimal_inaccurate"):
        raise RuntimeError(f"single-party step failed with status {prob.status}")
    return project_cptp(j.value, d_in, d_out)


def _letters(n: int):
    pool = iter(string.ascii_letters)
    return [next(pool) for _ in range(n)]


def effective_cost(rho_t: np.ndarray, channels: Sequence[ExtractionChannel], k: int, proj_t: np.ndarray) -> np.ndarray:
    """Operator ``C`` with ``fidelity = Tr(J_k C)`` when every other channel is held fixed."""
    n = len(channels)
    t = rho_t
    for p, ch in enumerate(channels):
        if p != k:
            t = _local_apply(t, ch.tensor, p, n)
    row, col = _letters(n), _letters(2 * n)[n:]
    o, q = "Y", "Z"  # output indices of party k
    p_row = [q if p == k else col[p] for p in range(n)]
    p_col = [o if p == k else row[p] for p in range(n)]
    spec = f"{''.join(row)}{''.join(col)},{''.join(p_row)}{''.join(p_col)}->{row[k]}{o}{col[k]}{q}"
    m = np.einsum(spec, t, proj_t)
    d = channels[k].d_in * channels[k].d_out
    return m.reshape(d, d).T


@dataclass(frozen=True, eq=False)
class SeesawRun:
    label: str
    value: float
    history: tuple[float, ...]
    channels: tuple[ExtractionChannel, ...]


@dataclass(frozen=True, eq=False)
class ExtractabilityResult:
    xi: float
    channels: tuple[ExtractionChannel, ...]
    start_fidelity: float
    start_beta: float
    history: tuple[float, ...]
    runs: tuple[SeesawRun, ...] = field(default=())


def extracted_fidelity(rho: np.ndarray, channels: Sequence[ExtractionChannel], target: TargetState) -> float:
    out = apply_channels(rho, channels)
    return float(np.real(np.trace(out @ target.projector.matrix)))


def _partition_state(rho: DensityMatrix, partition: Sequence[Sequence[int]] | None) -> tuple[np.ndarray, list[int]]:
    if partition is None:
        partition = [[k] for k in range(rho.n_factors)]
    flat = [k for lab in partition for k in lab]
    if sorted(flat) != list(range(rho.n_factors)):
        raise ValueError(f"partition {partition} does not cover factors 0..{rho.n_factors - 1} exactly once")
    dims = [int(np.prod([rho.dims[k] for k in lab])) for lab in partition]
    return rho.permute(flat).matrix, dims


def observable_start(rho: np.ndarray, dims: Sequence[int], target: TargetState, seed: int = 0):
    """Extraction channels built from violation-optimal observables; returns (channels, beta)."""
    if target.scenario == "CHSH":
        if len(dims) != 2:
            raise ValueError("CHSH extraction needs two labs")
        if tuple(dims) == (2, 2):
            vr = bell.max_chsh_violation(rho)
            alice, bob = vr.observables()
            beta = vr.beta
        else:
            strat = bell.optimize_chsh_observables(rho, tuple(dims), seed=seed)
            alice, bob, beta = strat.alice, strat.bob, strat.beta
        return (jordan_channel(*alice), jordan_channel(*bob)), beta
    if tuple(dims) != (2, 2, 2):
        raise ValueError("Mermin extraction needs three qubit labs")
    vr = bell.max_mermin_violation(rho)
    return tuple(extraction_channel(t, "XY") for t in vr.angles.as_tuple()), vr.beta


def _readout_channel(d_in: int) -> ExtractionChannel:
    """Discard everything but the last qubit of the lab (registers are listed first)."""
    return ExtractionChannel.from_map(lambda x: ptrace(x, (d_in // 2, 2), [1]), d_in, 2)


def seesaw(
    rho: np.ndarray,
    channels: Sequence[ExtractionChannel],
    target: TargetState,
    max_iter: int = 200,
    tol: Tolerances = DEFAULT_TOL,
    label: str = "",
) -> SeesawRun:
    """Alternating single-party maximisation from the given starting channels.

    A step is kept only if it raises the objective, so the recorded history
    is non-decreasing; this is asserted on every sweep.
    """
    chans = list(channels)
    n = len(chans)
    rho_t = np.asarray(rho, complex).reshape([c.d_in for c in chans] * 2)
    proj_t = target.projector.matrix.reshape([2] * 2 * n)
    cur = extracted_fidelity(rho, chans, target)
    history = [cur]
    for _ in range(max_iter):
        start = cur
        for k in range(n):
            cost = effective_cost(rho_t, chans, k, proj_t)
            cand = ExtractionChannel(best_response(cost, chans[k].d_in, chans[k].d_out), chans[k].d_in, chans[k].d_out)
            trial = chans[:k] + [cand] + chans[k + 1:]
            val = extracted_fidelity(rho, trial, target)
            if val > cur:
                chans, cur = trial, val
        if cur < history[-1]:
            raise AssertionError("see-saw objective decreased")
        history.append(cur)
        if cur - start < tol.seesaw_improvement:
            break
    return SeesawRun(label, cur, tuple(history), tuple(chans))


def extractability(
    rho: DensityMatrix,
    target: TargetState,
    partition: Sequence[Sequence[int]] | None = None,
    restarts: int = 8,
    seed: int = 0,
    max_iter: int = 200,
    tol: Tolerances = DEFAULT_TOL,
) -> ExtractabilityResult:
    """See-saw lower bound on the best fidelity to ``target`` reachable by local channels.

    ``partition`` groups factors of ``rho`` into labs (default: one factor per
    lab); lab order must match the factor order of the target.
    Starting points: the extraction channels at the violation-optimal
    observables, a register-discarding start for labs larger than a qubit,
    and ``restarts`` random CPTP maps.
    """
    m, dims = _partition_state(rho, partition)
    n = target.projector.n_factors
    if len(dims) != n:
        raise ValueError(f"{len(dims)} labs but the target has {n} qubits")
    if any(d % 2 for d in dims):
        raise ValueError(f"lab dimensions must be multiples of 2, got {dims}")

    start_chans, beta = observable_start(m, dims, target, seed)
    start_fid = extracted_fidelity(m, start_chans, target)
    inits = [("observables", start_chans)]
    if any(d > 2 for d in dims):
        inits.append(("readout", tuple(_readout_channel(d) if d > 2 else ExtractionChannel.identity() for d in dims)))
    rng = np.random.default_rng(seed)
    for r in range(restarts):
        inits.append((f"random{r}", tuple(random_channel(d, 2, rng) for d in dims)))

    runs = []
    for label, chans in inits:
        run = seesaw(m, chans, target, max_iter=max_iter, tol=tol, label=label)
        log.debug("see-saw %s: %.12f after %d sweeps", label, run.value, len(run.history) - 1)
        runs.append(run)
    best = max(runs, key=lambda r: r.value)
    return ExtractabilityResult(best.value, best.channels, start_fid, beta, best.history, tuple(runs))
