"""Dense complex linear algebra over multi-leg tensor systems.

Everything here works on plain complex numpy arrays.  States carry their
subsystem structure through a :class:`SystemLayout` (an ordered list of leg
dimensions); density operators pair a matrix with a layout and enforce the
usual positivity/trace invariants at construction time.

All entropic quantities are in bits (log base 2).
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import CapExceededError

# Desk-scale limits: matrices never exceed this dimension.
MAX_DIM = 4096

# Tolerances for structural invariants.
HERMITICITY_TOL = 1e-10
EIGENVALUE_TOL = 1e-10
TRACE_TOL = 1e-10

PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)


def make_rng(seed: int) -> np.random.Generator:
    """Seedable counter-based random stream (Philox)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def split_rng(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Split a stream into ``n`` independent substreams."""
    return rng.spawn(n)


@dataclass(frozen=True)
class SystemLayout:
    """Ordered list of subsystem (leg) dimensions."""

    leg_dims: tuple[int, ...]

    def __init__(self, leg_dims: Iterable[int]):
        dims = tuple(int(d) for d in leg_dims)
        if not dims:
            raise ValueError("layout needs at least one leg")
        if any(d < 1 for d in dims):
            raise ValueError(f"leg dimensions must be >= 1, got {dims}")
        object.__setattr__(self, "leg_dims", dims)

    @property
    def total_dim(self) -> int:
        return int(np.prod(self.leg_dims))

    @property
    def num_legs(self) -> int:
        return len(self.leg_dims)

    def concat(self, other: "SystemLayout") -> "SystemLayout":
        return SystemLayout(self.leg_dims + other.leg_dims)


def _as_dims(layout) -> tuple[int, ...]:
    if isinstance(layout, SystemLayout):
        return layout.leg_dims
    return tuple(int(d) for d in layout)


def check_finite(m: np.ndarray, what: str = "matrix") -> np.ndarray:
    if not np.all(np.isfinite(m.view(float) if m.dtype == complex else m)):
        raise ValueError(f"{what} contains non-finite entries")
    return m


def kron(a: np.ndarray, b: np.ndarray, max_dim: int = MAX_DIM) -> np.ndarray:
    """Kronecker product with a desk-scale dimension cap."""
    rows = a.shape[0] * b.shape[0]
    cols = (a.shape[1] if a.ndim == 2 else 1) * (b.shape[1] if b.ndim == 2 else 1)
    if max(rows, cols) > max_dim:
        raise CapExceededError(
            f"kron result {rows}x{cols} exceeds the configured maximum {max_dim}"
        )
    return np.kron(a, b)


def kron_all(mats: Sequence[np.ndarray], max_dim: int = MAX_DIM) -> np.ndarray:
    out = np.asarray(mats[0], dtype=complex)
    for m in mats[1:]:
        out = kron(out, m, max_dim=max_dim)
    return out


def permute_legs_vector(vec: np.ndarray, dims: Sequence[int], order: Sequence[int]) -> np.ndarray:
    """Reorder the tensor legs of a state vector; ``order[p]`` is the old leg at new position ``p``."""
    dims = tuple(dims)
    order = tuple(order)
    if sorted(order) != list(range(len(dims))):
        raise ValueError(f"order {order} is not a permutation of {len(dims)} legs")
    return np.transpose(vec.reshape(dims), axes=order).reshape(-1)


def permute_legs_matrix(mat: np.ndarray, dims: Sequence[int], order: Sequence[int]) -> np.ndarray:
    """Reorder the tensor legs of an operator (rows and columns together)."""
    dims = tuple(dims)
    order = tuple(order)
    n = len(dims)
    if sorted(order) != list(range(n)):
        raise ValueError(f"order {order} is not a permutation of {n} legs")
    d = int(np.prod(dims))
    t = mat.reshape(dims + dims)
    axes = order + tuple(n + o for o in order)
    return np.transpose(t, axes=axes).reshape(d, d)


def partial_trace(m: np.ndarray, layout, keep: Iterable[int]) -> np.ndarray:
    """Trace out all legs except ``keep``; kept legs stay in their original relative order."""
    dims = _as_dims(layout)
    n = len(dims)
    d = int(np.prod(dims))
    if m.shape != (d, d):
        raise ValueError(f"matrix shape {m.shape} does not match layout dimension {d}")
    keep = sorted(set(int(k) for k in keep))
    if keep and (keep[0] < 0 or keep[-1] >= n):
        raise ValueError(f"keep indices {keep} out of range for {n} legs")
    labels = string.ascii_letters
    row = list(labels[:n])
    col = list(labels[n : 2 * n])
    for j in range(n):
        if j not in keep:
            col[j] = row[j]
    out = [row[j] for j in keep] + [col[j] for j in keep]
    spec = "".join(row + col) + "->" + "".join(out)
    dk = int(np.prod([dims[j] for j in keep])) if keep else 1
    return np.einsum(spec, m.reshape(dims + dims)).reshape(dk, dk)


def hermiticity_defect(m: np.ndarray) -> float:
    return float(np.max(np.abs(m - m.conj().T))) if m.size else 0.0


def eigh(h: np.ndarray, tol: float = HERMITICITY_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a Hermitian matrix: ascending eigenvalues, eigenvector columns.

    Inputs with a Hermiticity defect below ``tol`` are symmetrized first;
    anything worse is rejected.
    """
    defect = hermiticity_defect(h)
    if defect > tol:
        raise ValueError(f"matrix is not Hermitian (defect {defect:.3e} > {tol:.1e})")
    w, v = np.linalg.eigh((h + h.conj().T) / 2.0)
    return w, v


def clip_spectrum(w: np.ndarray, tol: float = EIGENVALUE_TOL) -> np.ndarray:
    """Clip eigenvalues in [-tol, 0) to zero; reject anything more negative."""
    low = float(np.min(w)) if w.size else 0.0
    if low < -tol:
        raise ValueError(f"spectrum has eigenvalue {low:.3e} below -{tol:.1e}")
    return np.clip(w, 0.0, None)


def sqrt_psd(m: np.ndarray) -> np.ndarray:
    """Square root of a positive semidefinite matrix via eigendecomposition."""
    w, v = eigh(m)
    w = clip_spectrum(w)
    return (v * np.sqrt(w)) @ v.conj().T


@dataclass(frozen=True)
class DensityOperator:
    """A positive semidefinite unit-trace matrix tagged with its leg layout."""

    matrix: np.ndarray
    layout: SystemLayout = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        object.__setattr__(self, "matrix", m)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"density operator must be square, got shape {m.shape}")
        layout = self.layout or SystemLayout([m.shape[0]])
        object.__setattr__(self, "layout", layout)
        if layout.total_dim != m.shape[0]:
            raise ValueError(
                f"layout dimension {layout.total_dim} does not match matrix dimension {m.shape[0]}"
            )
        check_finite(m, "density operator")
        defect = hermiticity_defect(m)
        if defect > HERMITICITY_TOL:
            raise ValueError(f"density operator not Hermitian (defect {defect:.3e})")
        tr = complex(np.trace(m))
        if abs(tr - 1.0) > TRACE_TOL:
            raise ValueError(f"density operator trace {tr} differs from 1")
        w = np.linalg.eigvalsh((m + m.conj().T) / 2.0)
        if w.size and float(w[0]) < -EIGENVALUE_TOL:
            raise ValueError(f"density operator has negative eigenvalue {float(w[0]):.3e}")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def from_vector(cls, psi: np.ndarray, layout=None) -> "DensityOperator":
        psi = np.asarray(psi, dtype=complex).reshape(-1)
        nrm = np.linalg.norm(psi)
        if nrm == 0:
            raise ValueError("cannot build a state from the zero vector")
        psi = psi / nrm
        layout = layout if layout is not None else SystemLayout([psi.size])
        return cls(np.outer(psi, psi.conj()), layout)

    @classmethod
    def maximally_mixed(cls, layout) -> "DensityOperator":
        layout = layout if isinstance(layout, SystemLayout) else SystemLayout(layout)
        d = layout.total_dim
        return cls(np.eye(d, dtype=complex) / d, layout)

    def reduced(self, keep: Iterable[int]) -> "DensityOperator":
        keep = sorted(set(int(k) for k in keep))
        sub = partial_trace(self.matrix, self.layout, keep)
        return DensityOperator(sub, SystemLayout([self.layout.leg_dims[k] for k in keep]))

    def permuted(self, order: Sequence[int]) -> "DensityOperator":
        m = permute_legs_matrix(self.matrix, self.layout.leg_dims, order)
        return DensityOperator(m, SystemLayout([self.layout.leg_dims[o] for o in order]))


def maximally_entangled_vector(d: int) -> np.ndarray:
    """(1/sqrt(d)) sum_g |g>|g> on d x d."""
    v = np.zeros(d * d, dtype=complex)
    v[np.arange(d) * d + np.arange(d)] = 1.0 / np.sqrt(d)
    return v


def entropy_of_spectrum(w: np.ndarray) -> float:
    w = clip_spectrum(np.asarray(w, dtype=float))
    pos = w[w > 0]
    return float(-np.sum(pos * np.log2(pos)))


def entropy(rho) -> float:
    """Von Neumann entropy in bits, with 0*log(0) = 0."""
    m = rho.matrix if isinstance(rho, DensityOperator) else np.asarray(rho, dtype=complex)
    w, _ = eigh(m)
    return entropy_of_spectrum(w)


def haar_unitary(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed unitary via QR of a complex Ginibre matrix.

    The R-diagonal phases are divided out so the distribution is exactly
    invariant, not just approximately.
    """
    if d < 1:
        raise ValueError("dimension must be >= 1")
    z = (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))) / np.sqrt(2.0)
    q, r = np.linalg.qr(z)
    diag = np.diagonal(r).copy()
    diag[diag == 0] = 1.0
    return q * (diag / np.abs(diag))


def haar_state(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random pure state vector of dimension d."""
    z = rng.standard_normal(d) + 1j * rng.standard_normal(d)
    return z / np.linalg.norm(z)


def uhlmann_fidelity(rho, sigma) -> float:
    """Squared Uhlmann fidelity (tr |sqrt(rho) sqrt(sigma)|)^2 in [0, 1]."""
    a = rho.matrix if isinstance(rho, DensityOperator) else np.asarray(rho, dtype=complex)
    b = sigma.matrix if isinstance(sigma, DensityOperator) else np.asarray(sigma, dtype=complex)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    ra = sqrt_psd(a)
    w, _ = eigh(ra @ b @ ra)
    w = clip_spectrum(w)
    # zero modes carry eigensolver noise that the square root would amplify
    w[w < 1e-14 * max(1.0, float(w[-1]))] = 0.0
    val = float(np.sum(np.sqrt(w)) ** 2)
    return min(val, 1.0) if val <= 1.0 + 1e-9 else val
