"""Simulated black-box devices and no-signalling checks.

A ``CorrelationTable`` stores one row per measurement context (a tuple of
setting bits, one per party). Each row holds either Born-rule
probabilities or sampled counts over the joint outcomes. Outcomes are
indexed with +1 before -1 for every party, party 0 most significant: for
two parties the columns are (+,+), (+,-), (-,+), (-,-).
"""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .bell import MERMIN_CONTEXTS, MeasurementAngles, Plane, observable
from .config import DEFAULT_TOL, Tolerances
from .qcore import DensityMatrix, as_matrix, tensor

Mode = Literal["exact", "sampled"]
Scenario = Literal["chsh", "mermin", "full"]

CSV_TAG = "correlation-table"


def scenario_contexts(n_parties: int, scenario: Scenario) -> tuple[tuple[int, ...], ...]:
    if scenario == "mermin":
        if n_parties != 3:
            raise ValueError("the mermin scenario needs three parties")
        return MERMIN_CONTEXTS
    if scenario == "chsh" and n_parties != 2:
        raise ValueError("the chsh scenario needs two parties")
    if scenario not in ("chsh", "full"):
        raise ValueError(f"unknown scenario {scenario!r}")
    return tuple(itertools.product((0, 1), repeat=n_parties))


def outcome_signs(n_parties: int) -> np.ndarray:
    """``signs[k, p]`` is party p's outcome (+1 or -1) in joint outcome column k."""
    return np.array([[1 - 2 * bit for bit in bits] for bits in itertools.product((0, 1), repeat=n_parties)])


@dataclass(frozen=True, eq=False)
class CorrelationTable:
    n_parties: int
    contexts: tuple[tuple[int, ...], ...]
    values: np.ndarray  # (n_contexts, 2**n_parties)
    mode: Mode
    scenario: Scenario
    angles: MeasurementAngles | None = None
    shots: int | None = None

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=float if self.mode == "exact" else np.int64)
        contexts = tuple(tuple(int(s) for s in c) for c in self.contexts)
        if v.shape != (len(contexts), 2**self.n_parties):
            raise ValueError(f"values shape {v.shape} does not match {len(contexts)} contexts")
        if any(len(c) != self.n_parties or set(c) - {0, 1} for c in contexts):
            raise ValueError("contexts must be tuples of setting bits, one per party")
        if len(set(contexts)) != len(contexts):
            raise ValueError("duplicate measurement context")
        if self.mode == "exact":
            if v.min(initial=0.0) < -1e-12 or np.abs(v.sum(axis=1) - 1).max(initial=0.0) > 1e-12:
                raise ValueError("exact rows must be probability distributions")
        elif self.mode == "sampled":
            if self.shots is None or self.shots < 1:
                raise ValueError("sampled tables need a positive shot total")
            if v.min(initial=0) < 0 or np.any(v.sum(axis=1) != self.shots):
                raise ValueError("each sampled row must sum to the shot total")
        else:
            raise ValueError(f"unknown mode {self.mode!r}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "contexts", contexts)

    def row(self, context: Sequence[int]) -> np.ndarray:
        try:
            return self.values[self.contexts.index(tuple(context))]
        except ValueError:
            raise KeyError(f"context {tuple(context)} not in table") from None

    def probabilities(self, context: Sequence[int]) -> np.ndarray:
        r = self.row(context)
        return r / self.shots if self.mode == "sampled" else r

    def correlator(self, context: Sequence[int], parties: Sequence[int] | None = None) -> float:
        """Mean of the product of the chosen parties' outcomes (all parties by default)."""
        parties = range(self.n_parties) if parties is None else parties
        signs = outcome_signs(self.n_parties)[:, list(parties)].prod(axis=1)
        return float(signs @ self.probabilities(context))

    def chsh_value(self) -> float:
        return sum((-1) ** (x * y) * self.correlator((x, y)) for x, y in itertools.product((0, 1), repeat=2))

    def mermin_value(self) -> float:
        signs = (1, -1, -1, -1)
        return sum(s * self.correlator(c) for s, c in zip(signs, MERMIN_CONTEXTS))

    def to_csv(self) -> str:
        buf = io.StringIO()
        angles = "" if self.angles is None else ",".join(repr(t) for t in self.angles.as_tuple())
        shots = "" if self.shots is None else str(self.shots)
        buf.write(
            f"# {CSV_TAG} parties={self.n_parties} mode={self.mode} scenario={self.scenario} "
            f"shots={shots} angles={angles}\n"
        )
        settings = [f"s{p}" for p in range(self.n_parties)]
        outcomes = [f"o{p}" for p in range(self.n_parties)]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(settings + outcomes + ["count" if self.mode == "sampled" else "probability"])
        signs = outcome_signs(self.n_parties)
        for ctx, row in zip(self.contexts, self.values):
            for sgn, val in zip(signs, row):
                w.writerow([*ctx, *(int(s) for s in sgn), repr(float(val)) if self.mode == "exact" else int(val)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "CorrelationTable":
        lines = text.splitlines()
        if not lines or not lines[0].startswith(f"# {CSV_TAG}"):
            raise ValueError("missing correlation-table header line")
        meta = dict(tok.split("=", 1) for tok in lines[0][len(f"# {CSV_TAG}"):].split())
        n = int(meta["parties"])
        mode = meta["mode"]
        angles = MeasurementAngles(*map(float, meta["angles"].split(","))) if meta.get("angles") else None
        shots = int(meta["shots"]) if meta.get("shots") else None
        reader = csv.reader(lines[1:])
        next(reader)
        index = {tuple(sgn): k for k, sgn in enumerate(outcome_signs(n).tolist())}
        rows: dict[tuple[int, ...], np.ndarray] = {}
        for rec in reader:
            ctx = tuple(int(x) for x in rec[:n])
            out = tuple(int(x) for x in rec[n:2 * n])
            val = float(rec[2 * n]) if mode == "exact" else int(rec[2 * n])
            rows.setdefault(ctx, np.zeros(2**n, dtype=float if mode == "exact" else np.int64))[index[out]] = val
        contexts = tuple(rows)
        return cls(n, contexts, np.array([rows[c] for c in contexts]), mode, meta["scenario"], angles, shots)


def _default_plane(n_parties: int) -> Plane:
    return "XZ" if n_parties == 2 else "XY"


def _projectors(angle: float, setting: int, plane: Plane) -> tuple[np.ndarray, np.ndarray]:
    obs = observable(angle, setting, plane)
    eye = np.eye(2)
    return (eye + obs) / 2, (eye - obs) / 2


def born_table(
    rho: DensityMatrix | np.ndarray,
    angles: MeasurementAngles,
    scenario: Scenario | None = None,
    plane: Plane | None = None,
) -> CorrelationTable:
    """Exact outcome distributions for the angle-parameterised observables of each party."""
    m = as_matrix(rho)
    n = len(angles.as_tuple())
    if m.shape != (2**n, 2**n):
        raise ValueError(f"state of dimension {m.shape[0]} does not match {n} qubit parties")
    scenario = scenario or ("chsh" if n == 2 else "mermin")
    plane = plane or _default_plane(n)
    contexts = scenario_contexts(n, scenario)
    rows = []
    for ctx in contexts:
        local = [_projectors(t, s, plane) for t, s in zip(angles.as_tuple(), ctx)]
        probs = [np.real(np.trace(m @ tensor(*(local[p][bit] for p, bit in enumerate(bits)))))
                 for bits in itertools.product((0, 1), repeat=n)]
        p = np.clip(np.array(probs), 0.0, None)
        rows.append(p / p.sum())
    return CorrelationTable(n, contexts, np.array(rows), "exact", scenario, angles)


def sample_counts(table: CorrelationTable, shots: int, seed: int) -> CorrelationTable:
    """One multinomial draw of ``shots`` events per context.

    Context ``k`` uses ``default_rng([seed, k])`` so the result does not
    depend on the order contexts are processed in.
    """
    if table.mode != "exact":
        raise ValueError("sampling needs an exact table")
    if shots < 1:
        raise ValueError("shots must be at least 1")
    counts = []
    for k, row in enumerate(table.values):
        rng = np.random.default_rng([seed, k])
        counts.append(rng.multinomial(shots, row / row.sum()))
    return CorrelationTable(table.n_parties, table.contexts, np.array(counts), "sampled", table.scenario, table.angles, shots)


def inject_signalling(table: CorrelationTable, context_index: int = 0, party: int = 0, shift: float = 0.05) -> CorrelationTable:
    """Move probability ``shift`` from ``party``'s -1 outcome to +1 in one context.

    The result violates no-signalling by construction; it is a fixture for
    checking that the detector fires.
    """
    if table.mode != "exact":
        raise ValueError("signalling is injected into exact tables")
    values = np.array(table.values)
    row = values[context_index]
    signs = outcome_signs(table.n_parties)
    minus = np.where(signs[:, party] == -1)[0]
    available = row[minus].sum()
    if available < shift:
        raise ValueError(f"only {available:.3g} probability on the -1 outcome; cannot shift {shift}")
    for k in minus:
        partner = k ^ (1 << (table.n_parties - 1 - party))  # same outcomes, party flipped to +1
        moved = shift * row[k] / available
        row[k] -= moved
        row[partner] += moved
    return CorrelationTable(table.n_parties, table.contexts, values, "exact", table.scenario, table.angles)


@dataclass(frozen=True)
class MarginalEstimate:
    party: int
    setting: int
    context: tuple[int, ...]
    mean: float
    std: float


@dataclass(frozen=True)
class MarginalComparison:
    party: int
    setting: int
    context_a: tuple[int, ...]
    context_b: tuple[int, ...]
    difference: float
    sigma: float  # |difference| in units of the combined standard error; nan in exact mode


@dataclass(frozen=True)
class NoSignallingReport:
    mode: Mode
    estimates: tuple[MarginalEstimate, ...]
    comparisons: tuple[MarginalComparison, ...]
    max_deviation: float  # max |difference| (exact) or max sigma (sampled)
    threshold: float
    passed: bool

    CSV_HEADER = ("party", "setting", "context_a", "context_b", "difference", "sigma")

    def records(self) -> list[dict]:
        return [
            {
                "party": c.party,
                "setting": c.setting,
                "context_a": "".join(map(str, c.context_a)),
                "context_b": "".join(map(str, c.context_b)),
                "difference": c.difference,
                "sigma": c.sigma,
            }
            for c in self.comparisons
        ]


def no_signalling_check(
    table: CorrelationTable,
    threshold_sigma: float = 3.0,
    tol: Tolerances = DEFAULT_TOL,
) -> NoSignallingReport:
    """Compare every party's marginal mean across the other parties' settings.

    Exact tables must agree to ``tol.exact_no_signalling``. Sampled tables
    compare each pair of contexts with ``|m1 - m2| / sqrt(v1 + v2)`` where
    ``v = (1 - m^2) / N`` is the binomial variance of a +-1 mean.
    """
    expected = scenario_contexts(table.n_parties, table.scenario)
    if set(table.contexts) != set(expected):
        raise ValueError(f"table covers {len(table.contexts)} of the {len(expected)} contexts of its scenario")

    estimates = []
    comparisons = []
    for party, setting in itertools.product(range(table.n_parties), (0, 1)):
        group = [c for c in expected if c[party] == setting]
        group_est = []
        for ctx in group:
            mean = table.correlator(ctx, [party])
            std = np.sqrt(max(1 - mean**2, 0.0) / table.shots) if table.mode == "sampled" else 0.0
            group_est.append(MarginalEstimate(party, setting, ctx, mean, float(std)))
        estimates += group_est
        for e1, e2 in itertools.combinations(group_est, 2):
            diff = e1.mean - e2.mean
            if table.mode == "exact":
                sigma = float("nan")
            else:
                se = np.hypot(e1.std, e2.std)
                sigma = abs(diff) / se if se > 0 else (0.0 if diff == 0 else float("inf"))
            comparisons.append(MarginalComparison(party, setting, e1.context, e2.context, diff, float(sigma)))

    if table.mode == "exact":
        max_dev = max((abs(c.difference) for c in comparisons), default=0.0)
        threshold = tol.exact_no_signalling
    else:
        max_dev = max((c.sigma for c in comparisons), default=0.0)
        threshold = float(threshold_sigma)
    return NoSignallingReport(table.mode, tuple(estimates), tuple(comparisons), float(max_dev), threshold, max_dev <= threshold)
