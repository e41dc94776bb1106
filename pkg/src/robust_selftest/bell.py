"""Dichotomic observables, CHSH/Mermin operators and maximal-violation search.

Bipartite observables live in the XZ plane,
``A_r(a) = cos(a) X + (-1)^r sin(a) Z``; the tripartite (Mermin) family
replaces Z by Y. Angles are used exactly as passed.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np
from scipy.linalg import expm
from scipy.optimize import minimize, minimize_scalar

from .config import DEFAULT_TOL, Tolerances
from .qcore import I2, SX, SY, SZ, DensityMatrix, as_matrix, dagger, ptrace, tensor

Plane = Literal["XZ", "XY"]
HALF_PI = np.pi / 2
GRID_POINTS = 64
FRAME_GRID_POINTS = 16
TSIRELSON = 2 * np.sqrt(2.0)


@dataclass(frozen=True)
class MeasurementAngles:
    a: float
    b: float
    c: float | None = None

    def __post_init__(self) -> None:
        vals = [self.a, self.b] + ([] if self.c is None else [self.c])
        if not all(np.isfinite(v) for v in vals):
            raise ValueError(f"angles must be finite, got {vals}")
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "b", float(self.b))
        if self.c is not None:
            object.__setattr__(self, "c", float(self.c))

    @property
    def tripartite(self) -> bool:
        return self.c is not None

    def as_tuple(self) -> tuple[float, ...]:
        return (self.a, self.b) if self.c is None else (self.a, self.b, self.c)


@dataclass(frozen=True, eq=False)
class BellOperator:
    matrix: np.ndarray
    scenario: Literal["CHSH", "Mermin"]
    angles: MeasurementAngles | None = None


def _plane_matrix(plane: Plane) -> np.ndarray:
    if plane == "XZ":
        return SZ
    if plane == "XY":
        return SY
    raise ValueError(f"plane must be 'XZ' or 'XY', got {plane!r}")


def observable(angle: float, r: int, plane: Plane = "XZ") -> np.ndarray:
    if r not in (0, 1):
        raise ValueError(f"setting bit must be 0 or 1, got {r}")
    return np.cos(angle) * SX + (-1) ** r * np.sin(angle) * _plane_matrix(plane)


def chsh_from_observables(a_obs: Sequence[np.ndarray], b_obs: Sequence[np.ndarray]) -> np.ndarray:
    """``sum_jk (-1)^(jk) A_j (x) B_k`` for arbitrary local observables."""
    return sum((-1) ** (j * k) * np.kron(a_obs[j], b_obs[k]) for j in (0, 1) for k in (0, 1))


def chsh_operator(angles: MeasurementAngles) -> BellOperator:
    if angles.tripartite:
        raise ValueError("CHSH operator takes two angles, got three")
    a_obs = [observable(angles.a, r) for r in (0, 1)]
    b_obs = [observable(angles.b, r) for r in (0, 1)]
    return BellOperator(chsh_from_observables(a_obs, b_obs), "CHSH", angles)


# (r_A, r_B, r_C, sign) for A0B0C0 - A0B1C1 - A1B0C1 - A1B1C0
MERMIN_TERMS = ((0, 0, 0, 1), (0, 1, 1, -1), (1, 0, 1, -1), (1, 1, 0, -1))
MERMIN_CONTEXTS = tuple(t[:3] for t in MERMIN_TERMS)


def mermin_from_observables(a_obs, b_obs, c_obs) -> np.ndarray:
    return sum(s * tensor(a_obs[i], b_obs[j], c_obs[k]) for i, j, k, s in MERMIN_TERMS)


def mermin_operator(angles: MeasurementAngles) -> BellOperator:
    if not angles.tripartite:
        raise ValueError("Mermin operator needs three angles")
    obs = [[observable(t, r, "XY") for r in (0, 1)] for t in angles.as_tuple()]
    return BellOperator(mermin_from_observables(*obs), "Mermin", angles)


def expectation(rho: DensityMatrix | np.ndarray, op, tol: Tolerances = DEFAULT_TOL) -> float:
    """``Tr(rho op)`` for a Bell operator, fidelity operator or plain matrix."""
    m = as_matrix(rho)
    o = np.asarray(getattr(op, "matrix", op))
    if m.shape != o.shape:
        raise ValueError(f"dimension mismatch: state {m.shape} vs operator {o.shape}")
    val = np.trace(m @ o)
    if abs(val.imag) > 1e-10:
        raise ValueError(f"expectation has imaginary part {val.imag:.3e}; operator not Hermitian?")
    return float(val.real)


# ---------------------------------------------------------------------------
# local frames (orthogonal maps of the XZ plane realised by qubit unitaries)


@dataclass(frozen=True)
class LocalFrame:
    """Rotation by ``rotation`` about Y, preceded by Z -> -Z when ``reflect``."""

    rotation: float = 0.0
    reflect: bool = False

    def unitary(self) -> np.ndarray:
        u = expm(-0.5j * self.rotation * SY)
        return u @ SX if self.reflect else u

    def bloch(self) -> np.ndarray:
        """2x2 action on (x, z) Bloch components: ``U (n.sigma) U^+ = (O n).sigma``."""
        return _bloch_xz(self.unitary())

    def apply(self, obs: np.ndarray) -> np.ndarray:
        u = self.unitary()
        return u @ obs @ dagger(u)


def _bloch_xz(u: np.ndarray) -> np.ndarray:
    basis = (SX, SZ)
    return np.array([[0.5 * np.trace(p @ u @ q @ dagger(u)).real for q in basis] for p in basis])


def correlation_block(rho: DensityMatrix | np.ndarray, plane: Plane = "XZ") -> np.ndarray:
    """Correlation tensor ``T[i,j(,k)] = <sigma_i (x) sigma_j (x) ...>`` over (X, plane-axis)."""
    m = as_matrix(rho)
    n = int(round(np.log2(m.shape[0])))
    paulis = (SX, _plane_matrix(plane))
    t = np.empty((2,) * n)
    for idx in itertools.product((0, 1), repeat=n):
        t[idx] = np.trace(m @ tensor(*(paulis[i] for i in idx))).real
    return t


def _setting_vectors(angle, r):
    angle = np.asarray(angle)
    return np.stack([np.cos(angle), (-1) ** r * np.sin(angle)], axis=-1)


def chsh_value_from_block(t: np.ndarray, a, b) -> np.ndarray:
    """Vectorised ``<W(a, b)>`` from a 2x2 correlation block; ``a`` and ``b`` broadcast."""
    a, b = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float))
    ca, sa, cb, sb = np.cos(a), np.sin(a), np.cos(b), np.sin(b)
    return 2 * (ca * cb * t[0, 0] + ca * sb * t[0, 1] + sa * cb * t[1, 0] - sa * sb * t[1, 1])


def mermin_value_from_tensor(t: np.ndarray, a, b, c) -> np.ndarray:
    a, b, c = np.broadcast_arrays(*(np.asarray(x, float) for x in (a, b, c)))
    total = np.zeros(a.shape)
    for i, j, k, s in MERMIN_TERMS:
        va, vb, vc = _setting_vectors(a, i), _setting_vectors(b, j), _setting_vectors(c, k)
        total = total + s * np.einsum("...i,...j,...k,ijk->...", va, vb, vc, t)
    return total


def correlation_norm_xz(rho: DensityMatrix | np.ndarray) -> float:
    """``2 sqrt(t1^2 + t2^2)`` for the singular values of the XZ correlation block."""
    return float(2 * np.linalg.norm(correlation_block(rho, "XZ")))


def correlation_norm(rho: DensityMatrix | np.ndarray) -> float:
    """Maximal CHSH value over all qubit observables (two largest singular values of T)."""
    m = as_matrix(rho)
    paulis = (SX, SY, SZ)
    t = np.array([[np.trace(m @ np.kron(p, q)).real for q in paulis] for p in paulis])
    s = np.linalg.svd(t, compute_uv=False)
    return float(2 * np.sqrt(s[0] ** 2 + s[1] ** 2))


# ---------------------------------------------------------------------------
# maximal violation search


@dataclass(frozen=True, eq=False)
class ViolationResult:
    beta: float
    angles: MeasurementAngles
    frames: tuple[LocalFrame, ...] | None = None

    def observables(self) -> list[list[np.ndarray]]:
        """Lab-frame observables ``[[A0, A1], [B0, B1](, [C0, C1])]``."""
        plane: Plane = "XY" if self.angles.tripartite else "XZ"
        out = []
        for k, t in enumerate(self.angles.as_tuple()):
            obs = [observable(t, r, plane) for r in (0, 1)]
            if self.frames is not None:
                obs = [self.frames[k].apply(o) for o in obs]
            out.append(obs)
        return out


def _coordinate_refine(f, x0: Sequence[float], bounds: Sequence[tuple[float, float]], tol: float, max_sweeps: int = 200):
    """Maximise ``f`` one coordinate at a time with bounded golden-section/Brent line searches."""
    x = np.array(x0, dtype=float)
    best = f(x)
    for _ in range(max_sweeps):
        start = best
        for i, (lo, hi) in enumerate(bounds):
            def g(t, i=i):
                y = x.copy()
                y[i] = t
                return -f(y)

            res = minimize_scalar(g, bounds=(lo, hi), method="bounded", options={"xatol": tol * 1e-2})
            if -res.fun > best:
                x[i] = res.x
                best = -res.fun
        if best - start < 1e-15:
            break
    return x, best


def _grid(points: int = GRID_POINTS) -> np.ndarray:
    return np.linspace(0.0, HALF_PI, points)


def max_chsh_violation(rho: DensityMatrix | np.ndarray, frames: bool = True, tol: Tolerances = DEFAULT_TOL) -> ViolationResult:
    """Largest ``<W(a, b)>`` over the XZ-plane family.

    With ``frames=True`` each party may also reorient its lab by an
    orthogonal map of the XZ plane (a Y rotation, optionally after
    Z -> -Z); the optimum then equals ``correlation_norm_xz``. With
    ``frames=False`` the lab frame is fixed and only ``(a, b)`` vary.
    """
    m = as_matrix(rho)
    if m.shape != (4, 4):
        raise ValueError("max_chsh_violation expects a two-qubit state")
    t0 = correlation_block(m, "XZ")
    grid = _grid()
    ga, gb = np.meshgrid(grid, grid, indexing="ij")

    if not frames:
        vals = chsh_value_from_block(t0, ga, gb)
        i, j = np.unravel_index(np.argmax(vals), vals.shape)
        coarse = vals[i, j]
        x, best = _coordinate_refine(lambda p: float(chsh_value_from_block(t0, p[0], p[1])),
                                     (grid[i], grid[j]), [(0, HALF_PI)] * 2, tol.refine)
        if best < coarse:
            x, best = (grid[i], grid[j]), coarse
        return ViolationResult(float(best), MeasurementAngles(*x))

    rot_grid = np.linspace(0.0, 2 * np.pi, FRAME_GRID_POINTS, endpoint=False)
    candidates = [(r, refl) for refl in (False, True) for r in rot_grid]
    blochs = np.array([LocalFrame(r, refl).bloch() for r, refl in candidates])
    # rotated blocks for every (Alice frame, Bob frame) pair, then the (a, b) grid on each
    blocks = np.einsum("pki,kl,qlj->pqij", blochs, t0, blochs)
    ca, sa, cb, sb = np.cos(ga), np.sin(ga), np.cos(gb), np.sin(gb)
    vals = 2 * (np.einsum("pq,ij->pqij", blocks[..., 0, 0], ca * cb)
                + np.einsum("pq,ij->pqij", blocks[..., 0, 1], ca * sb)
                + np.einsum("pq,ij->pqij", blocks[..., 1, 0], sa * cb)
                - np.einsum("pq,ij->pqij", blocks[..., 1, 1], sa * sb))
    p, q, i, j = np.unravel_index(np.argmax(vals), vals.shape)
    coarse = vals[p, q, i, j]
    (ra, refl_a), (rb, refl_b) = candidates[p], candidates[q]
    a, b = grid[i], grid[j]

    def f(p):
        oa = LocalFrame(p[0], refl_a).bloch()
        ob = LocalFrame(p[1], refl_b).bloch()
        return float(chsh_value_from_block(oa.T @ t0 @ ob, p[2], p[3]))

    step = 2 * np.pi / FRAME_GRID_POINTS
    bounds = [(ra - step, ra + step), (rb - step, rb + step), (0, HALF_PI), (0, HALF_PI)]
    x, best = _coordinate_refine(f, (ra, rb, a, b), bounds, tol.refine)
    if best < coarse:
        x, best = np.array([ra, rb, a, b]), coarse
    x[:2] = np.mod(x[:2], 2 * np.pi)
    frames_out = (LocalFrame(float(x[0]), refl_a), LocalFrame(float(x[1]), refl_b))
    return ViolationResult(float(best), MeasurementAngles(x[2], x[3]), frames_out)


def max_mermin_violation(rho: DensityMatrix | np.ndarray, tol: Tolerances = DEFAULT_TOL) -> ViolationResult:
    """Largest ``<W(a, b, c)>`` over the XY-plane family, grid plus coordinate refinement."""
    m = as_matrix(rho)
    if m.shape != (8, 8):
        raise ValueError("max_mermin_violation expects a three-qubit state")
    t = correlation_block(m, "XY")
    grid = _grid()
    ga, gb, gc = np.meshgrid(grid, grid, grid, indexing="ij")
    vals = mermin_value_from_tensor(t, ga, gb, gc)
    idx = np.unravel_index(np.argmax(vals), vals.shape)
    coarse = vals[idx]
    x0 = [grid[i] for i in idx]
    x, best = _coordinate_refine(lambda p: float(mermin_value_from_tensor(t, *p)), x0, [(0, HALF_PI)] * 3, tol.refine)
    if best < coarse:
        x, best = x0, coarse
    return ViolationResult(float(best), MeasurementAngles(*x))


# ---------------------------------------------------------------------------
# general-dimension CHSH optimisation


def _sign_observable(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (m + dagger(m)))
    return (v * np.where(w >= 0, 1.0, -1.0)) @ dagger(v)


def _random_observable(d: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return _sign_observable(g + dagger(g))


def _hermitian_from_params(p: np.ndarray, d: int) -> np.ndarray:
    iu = np.triu_indices(d, 1)
    k = len(iu[0])
    h = np.diag(p[:d]).astype(complex)
    h[iu] = p[d:d + k] + 1j * p[d + k:d + 2 * k]
    return h + np.triu(h, 1).conj().T


def _polish_observables(m: np.ndarray, obs: Sequence[np.ndarray], dims: tuple[int, int]):
    """BFGS over unitary conjugations ``U A U^+`` of the four observables.

    The sign see-saw can crawl along flat directions (e.g. when a strategy
    must condition on a rarely populated register); quasi-Newton steps on
    the unitary orbit finish the climb while keeping every observable +-1.
    """
    sizes = [dims[0]] * 2 + [dims[1]] * 2

    def build(x):
        out, off = [], 0
        for o, d in zip(obs, sizes):
            u = expm(1j * _hermitian_from_params(x[off:off + d * d], d))
            off += d * d
            out.append(u @ o @ dagger(u))
        return out

    def neg_value(x):
        o = build(x)
        return -float(np.trace(m @ chsh_from_observables(o[:2], o[2:])).real)

    res = minimize(neg_value, np.zeros(sum(d * d for d in sizes)), method="BFGS", options={"gtol": 1e-12})
    return -res.fun, build(res.x)


@dataclass(frozen=True, eq=False)
class ChshStrategy:
    beta: float
    alice: tuple[np.ndarray, np.ndarray]
    bob: tuple[np.ndarray, np.ndarray]


def optimize_chsh_observables(
    rho: DensityMatrix | np.ndarray,
    dims: tuple[int, int],
    restarts: int = 20,
    seed: int = 0,
    max_iter: int = 500,
    polish: bool = True,
) -> ChshStrategy:
    """See-saw over arbitrary +-1 observables on labs of dimension ``dims``.

    Each half-step replaces one party's pair by the sign of its effective
    operator, which is the exact optimum with the other party fixed, so the
    CHSH value never decreases. The best of ``restarts`` runs is then
    polished by a quasi-Newton search over local unitaries.
    """
    m = as_matrix(rho)
    da, db = dims
    if restarts < 1:
        raise ValueError("restarts must be at least 1")
    if m.shape != (da * db, da * db):
        raise ValueError(f"state dimension {m.shape[0]} does not match labs {dims}")
    rng = np.random.default_rng(seed)
    eye_a, eye_b = np.eye(da), np.eye(db)

    def value(a_obs, b_obs):
        return float(np.trace(m @ chsh_from_observables(a_obs, b_obs)).real)

    best = None
    for _ in range(restarts):
        a_obs = [_random_observable(da, rng) for _ in (0, 1)]
        b_obs = [None, None]
        cur = -np.inf
        for _ in range(max_iter):
            plus = ptrace(m @ np.kron(a_obs[0] + a_obs[1], eye_b), (da, db), [1])
            minus = ptrace(m @ np.kron(a_obs[0] - a_obs[1], eye_b), (da, db), [1])
            b_obs = [_sign_observable(plus), _sign_observable(minus)]
            plus = ptrace(m @ np.kron(eye_a, b_obs[0] + b_obs[1]), (da, db), [0])
            minus = ptrace(m @ np.kron(eye_a, b_obs[0] - b_obs[1]), (da, db), [0])
            a_obs = [_sign_observable(plus), _sign_observable(minus)]
            new = value(a_obs, b_obs)
            if new - cur < 1e-13:
                cur = max(cur, new)
                break
            cur = new
        if best is None or cur > best.beta:
            best = ChshStrategy(cur, (a_obs[0], a_obs[1]), (b_obs[0], b_obs[1]))
    if polish:
        value_p, obs = _polish_observables(m, [*best.alice, *best.bob], dims)
        if value_p > best.beta:
            best = ChshStrategy(value_p, (obs[0], obs[1]), (obs[2], obs[3]))
    return best
