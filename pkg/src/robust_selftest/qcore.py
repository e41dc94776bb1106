"""Dense complex linear algebra for systems of at most four qubits.

Matrices are plain ``numpy.ndarray`` objects. ``DensityMatrix`` wraps a
validated state together with the dimensions of its tensor factors.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import reduce
from typing import Iterable, Sequence

import numpy as np

from .config import DEFAULT_TOL, Tolerances

Array = np.ndarray

I2 = np.eye(2, dtype=complex)
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = {"I": I2, "X": SX, "Y": SY, "Z": SZ}

for _m in (I2, SX, SY, SZ):
    _m.setflags(write=False)


def tensor(*ops: Array) -> Array:
    """Kronecker product of one or more matrices (or vectors), left to right."""
    if not ops:
        raise ValueError("tensor() needs at least one operand")
    return reduce(np.kron, (np.asarray(op) for op in ops))


def dagger(m: Array) -> Array:
    return np.conj(np.swapaxes(m, -1, -2))


def is_hermitian(m: Array, atol: float = DEFAULT_TOL.hermitian) -> bool:
    m = np.asarray(m)
    return m.ndim == 2 and m.shape[0] == m.shape[1] and bool(np.max(np.abs(m - dagger(m)), initial=0.0) <= atol)


def _require_hermitian(m: Array, tol: Tolerances) -> Array:
    m = np.asarray(m, dtype=complex)
    if not is_hermitian(m, tol.hermitian):
        raise ValueError("matrix is not Hermitian")
    return m


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """A validated density operator on a product of qubits.

    ``dims`` lists the tensor-factor dimensions in order; their product must
    equal the matrix dimension.
    """

    matrix: Array
    dims: tuple[int, ...]

    def __post_init__(self) -> None:
        m = np.array(self.matrix, dtype=complex)
        dims = tuple(int(d) for d in self.dims)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"density matrix must be square, got shape {m.shape}")
        if int(np.prod(dims)) != m.shape[0]:
            raise ValueError(f"dims {dims} do not match matrix dimension {m.shape[0]}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "dims", dims)
        self.validate()

    def validate(self, tol: Tolerances = DEFAULT_TOL) -> None:
        m = self.matrix
        if not is_hermitian(m, tol.hermitian):
            raise ValueError("density matrix is not Hermitian")
        tr = np.trace(m).real
        if abs(tr - 1.0) > tol.trace:
            raise ValueError(f"density matrix trace is {tr!r}, expected 1")
        lam = np.linalg.eigvalsh(m)[0]
        if lam < -tol.psd:
            raise ValueError(f"density matrix has negative eigenvalue {lam:.3e}")

    @classmethod
    def from_matrix(cls, m: Array, dims: Sequence[int] | None = None) -> "DensityMatrix":
        m = np.asarray(m, dtype=complex)
        if dims is None:
            n = int(round(np.log2(m.shape[0])))
            dims = (2,) * n
        return cls(0.5 * (m + dagger(m)), tuple(dims))

    @classmethod
    def from_ket(cls, psi: Array, dims: Sequence[int] | None = None) -> "DensityMatrix":
        psi = np.asarray(psi, dtype=complex).reshape(-1)
        psi = psi / np.linalg.norm(psi)
        return cls.from_matrix(np.outer(psi, psi.conj()), dims)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_factors(self) -> int:
        return len(self.dims)

    def purity(self) -> float:
        return float(np.real(np.trace(self.matrix @ self.matrix)))

    def eigenvalues(self) -> Array:
        return np.linalg.eigvalsh(self.matrix)

    def permute(self, order: Sequence[int]) -> "DensityMatrix":
        """Reorder tensor factors so that new factor k is old factor ``order[k]``."""
        return DensityMatrix(permute_factors(self.matrix, self.dims, order), tuple(self.dims[i] for i in order))

    def kron(self, other: "DensityMatrix") -> "DensityMatrix":
        return DensityMatrix(np.kron(self.matrix, other.matrix), self.dims + other.dims)


def as_matrix(x: DensityMatrix | Array) -> Array:
    return x.matrix if isinstance(x, DensityMatrix) else np.asarray(x, dtype=complex)


def permute_factors(m: Array, dims: Sequence[int], order: Sequence[int]) -> Array:
    dims = list(dims)
    n = len(dims)
    if sorted(order) != list(range(n)):
        raise ValueError(f"order {order} is not a permutation of {n} factors")
    t = np.asarray(m).reshape(dims + dims)
    t = t.transpose(list(order) + [n + k for k in order])
    d = int(np.prod(dims))
    return t.reshape(d, d)


def ptrace(m: Array, dims: Sequence[int], keep: Iterable[int]) -> Array:
    """Partial trace of an arbitrary operator, keeping factors in ``keep`` (in ascending order)."""
    dims = list(dims)
    n = len(dims)
    keep = sorted(set(int(k) for k in keep))
    if not keep or any(k < 0 or k >= n for k in keep):
        raise ValueError(f"invalid factor index set {keep} for {n} factors")
    t = np.asarray(m).reshape(dims + dims)
    traced = [k for k in range(n) if k not in keep]
    # trace highest index first so earlier axis numbers stay valid
    for k in reversed(traced):
        cur = t.ndim // 2
        t = np.trace(t, axis1=k, axis2=k + cur)
    d = int(np.prod([dims[k] for k in keep]))
    return t.reshape(d, d)


def partial_trace(rho: DensityMatrix, keep: Iterable[int]) -> DensityMatrix:
    keep = sorted(set(int(k) for k in keep))
    return DensityMatrix(ptrace(rho.matrix, rho.dims, keep), tuple(rho.dims[k] for k in keep))


def eigh(m: Array, tol: Tolerances = DEFAULT_TOL) -> tuple[Array, Array]:
    """Eigen-decomposition of a Hermitian matrix, eigenvalues ascending."""
    m = _require_hermitian(m, tol)
    return np.linalg.eigh(0.5 * (m + dagger(m)))


def min_eigenvalue(m: Array, tol: Tolerances = DEFAULT_TOL) -> float:
    m = _require_hermitian(m, tol)
    return float(np.linalg.eigvalsh(0.5 * (m + dagger(m)))[0])


def sqrtm_psd(m: Array, tol: Tolerances = DEFAULT_TOL) -> Array:
    """Square root of a PSD matrix.

    Eigenvalues in ``[-tol.psd, 0)`` are treated as rounding noise and set to
    zero; anything more negative raises.
    """
    w, v = eigh(m, tol)
    if w[0] < -tol.psd:
        raise ValueError(f"matrix is not positive semidefinite (eigenvalue {w[0]:.3e})")
    # eigenvalues at rounding level would contribute ~sqrt(eps) after the root
    floor = 8 * len(w) * np.finfo(float).eps * max(w[-1], 0.0)
    w = np.where(w > floor, w, 0.0)
    return (v * np.sqrt(w)) @ dagger(v)


def fidelity(rho: DensityMatrix | Array, sigma: DensityMatrix | Array, tol: Tolerances = DEFAULT_TOL) -> float:
    """Uhlmann fidelity ``||sqrt(rho) sqrt(sigma)||_1 ** 2``."""
    a, b = as_matrix(rho), as_matrix(sigma)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    s = np.linalg.svd(sqrtm_psd(a, tol) @ sqrtm_psd(b, tol), compute_uv=False)
    return float(min(max(np.sum(s) ** 2, 0.0), 1.0))


def pauli_string_matrix(label: str) -> Array:
    return tensor(*(PAULIS[c] for c in label))


def _n_qubits(dim: int) -> int:
    n = int(round(np.log2(dim))) if dim > 0 else -1
    if n < 1 or 2**n != dim:
        raise ValueError(f"dimension {dim} is not a power of 2")
    return n


def pauli_expansion(m: Array, tol: Tolerances = DEFAULT_TOL) -> dict[str, float]:
    """Real coefficients ``c_s`` with ``m = sum_s c_s P_s`` over all Pauli strings."""
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("pauli_expansion needs a square matrix")
    n = _n_qubits(m.shape[0])
    m = _require_hermitian(m, tol)
    coeffs = {}
    for letters in itertools.product("IXYZ", repeat=n):
        label = "".join(letters)
        c = np.trace(pauli_string_matrix(label) @ m) / 2**n
        coeffs[label] = float(c.real)
    return coeffs


def pauli_resum(coeffs: dict[str, float]) -> Array:
    labels = list(coeffs)
    if not labels:
        raise ValueError("empty coefficient table")
    n = len(labels[0])
    out = np.zeros((2**n, 2**n), dtype=complex)
    for label, c in coeffs.items():
        out += c * pauli_string_matrix(label)
    return out


def random_density_matrix(n_qubits: int, rng: np.random.Generator, rank: int | None = None) -> DensityMatrix:
    """Ginibre-distributed random state of the given rank (full rank by default)."""
    d = 2**n_qubits
    k = d if rank is None else rank
    g = rng.normal(size=(d, k)) + 1j * rng.normal(size=(d, k))
    m = g @ dagger(g)
    return DensityMatrix.from_matrix(m / np.trace(m).real, (2,) * n_qubits)


def random_pure_state(n_qubits: int, rng: np.random.Generator) -> DensityMatrix:
    d = 2**n_qubits
    psi = rng.normal(size=d) + 1j * rng.normal(size=d)
    return DensityMatrix.from_ket(psi, (2,) * n_qubits)


def ket(bits: str) -> Array:
    v = np.zeros(2 ** len(bits), dtype=complex)
    v[int(bits, 2)] = 1.0
    return v
