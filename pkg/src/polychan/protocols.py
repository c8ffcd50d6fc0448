"""Executable protocol constructions on top of the channel/fidelity layers.

Covers classically-assisted twirled channels (finite unitary ensembles stand
in for the continuous average; the single-qubit Clifford group does so
exactly), teleportation over a shared resource state, and the greedy
extraction of well-transmitted subspaces together with the phase-averaging
fidelity bound.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from ._optim import minimize_product_states
from .channels import ConnectionGraph, KrausChannel, MAX_KRAUS, check_graph_compatible, weyl_operators
from .errors import CapExceededError, PolychanError
from .fidelities import (
    QuadraticOverlap,
    _pure_amp,
    _purification_amp,
    entanglement_fidelity,
    min_subspace_fidelity,
)
from .linalg import (
    DensityOperator,
    SystemLayout,
    clip_spectrum,
    eigh,
    haar_unitary,
    kron_all,
)

UNITARITY_TOL = 1e-10


class ExtractionError(PolychanError):
    """Greedy subspace extraction could not reach the requested fidelity."""


@dataclass(frozen=True)
class UnitaryEnsemble:
    """A uniformly weighted finite set of equal-dimension unitaries."""

    elements: tuple[np.ndarray, ...]

    def __init__(self, elements: Sequence[np.ndarray]):
        mats = tuple(np.asarray(u, dtype=complex) for u in elements)
        if not mats:
            raise ValueError("ensemble needs at least one unitary")
        d = mats[0].shape[0]
        for u in mats:
            if u.shape != (d, d):
                raise ValueError("ensemble elements must share one dimension")
            defect = float(np.max(np.abs(u.conj().T @ u - np.eye(d))))
            if defect > UNITARITY_TOL:
                raise ValueError(f"ensemble element is not unitary (defect {defect:.3e})")
        object.__setattr__(self, "elements", mats)

    @property
    def dim(self) -> int:
        return self.elements[0].shape[0]

    def __len__(self) -> int:
        return len(self.elements)


@dataclass(frozen=True)
class SubspaceBasis:
    """Orthonormal columns spanning a subspace of an ambient space."""

    vectors: np.ndarray

    def __init__(self, vectors: np.ndarray):
        v = np.asarray(vectors, dtype=complex)
        if v.ndim != 2 or v.shape[1] == 0:
            raise ValueError("subspace basis must be a nonempty matrix of column vectors")
        gram = v.conj().T @ v
        if np.max(np.abs(gram - np.eye(v.shape[1]))) > UNITARITY_TOL:
            raise ValueError("subspace basis columns are not orthonormal")
        object.__setattr__(self, "vectors", v)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def ambient_dim(self) -> int:
        return self.vectors.shape[0]

    def projector(self) -> np.ndarray:
        return self.vectors @ self.vectors.conj().T

    def uniform_state(self, layout=None) -> DensityOperator:
        layout = layout if layout is not None else SystemLayout([self.ambient_dim])
        return DensityOperator(self.projector() / self.dim, layout)


def _canonical_phase(u: np.ndarray) -> np.ndarray:
    # first clearly nonzero entry sets the phase; stable under round-off even
    # when several entries tie in magnitude
    flat = u.reshape(-1)
    k = int(np.flatnonzero(np.abs(flat) > 0.25)[0])
    return u * (flat[k].conjugate() / abs(flat[k]))


@lru_cache(maxsize=1)
def _clifford_1q_elements() -> tuple[np.ndarray, ...]:
    h = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2.0)
    s = np.array([[1, 0], [0, 1j]], dtype=complex)
    seen: dict[bytes, np.ndarray] = {}

    def key(u: np.ndarray) -> bytes:
        r = np.round(_canonical_phase(u), 6) + 0.0  # +0.0 collapses negative zeros
        return r.tobytes()

    frontier = [np.eye(2, dtype=complex)]
    seen[key(frontier[0])] = frontier[0]
    while frontier:
        nxt = []
        for u in frontier:
            for g in (h, s):
                v = g @ u
                k = key(v)
                if k not in seen:
                    seen[k] = _canonical_phase(v)
                    nxt.append(v)
        frontier = nxt
    return tuple(seen.values())


def clifford_1q() -> UnitaryEnsemble:
    """The 24-element single-qubit Clifford group (modulo global phase)."""
    return UnitaryEnsemble(_clifford_1q_elements())


def haar_ensemble(d: int, size: int, rng: np.random.Generator) -> UnitaryEnsemble:
    """A sampled stand-in ensemble for dimensions without an exact small design."""
    if size < 1:
        raise ValueError("ensemble size must be >= 1")
    return UnitaryEnsemble([haar_unitary(d, rng) for _ in range(size)])


def twirl_channel(ch: KrausChannel, graph: ConnectionGraph,
                  ensembles: Sequence[UnitaryEnsemble],
                  max_kraus: int = MAX_KRAUS) -> KrausChannel:
    """Average the channel over per-connection unitary conjugations.

    The classical message (which unitary was drawn) is simulated by the uniform
    Kraus mixture ``(1/sqrt(N)) U^dag A U``.
    """
    check_graph_compatible(ch, graph)
    if len(ensembles) != graph.size:
        raise ValueError(f"need one ensemble per connection ({graph.size})")
    for i, ens in enumerate(ensembles):
        if ens.dim != graph.dims[i]:
            raise ValueError(
                f"ensemble {i} has dimension {ens.dim}, connection needs {graph.dims[i]}"
            )
    n_total = 1
    for ens in ensembles:
        n_total *= len(ens)
    count = n_total * ch.num_kraus
    if count > max_kraus:
        raise CapExceededError(f"twirl would need {count} Kraus operators (cap {max_kraus})")

    scale = 1.0 / np.sqrt(n_total)
    ops = []
    for combo in itertools.product(*[range(len(e)) for e in ensembles]):
        w_in = kron_all([ensembles[j].elements[combo[j]] for j in graph.input_order])
        w_out = kron_all([ensembles[j].elements[combo[j]] for j in graph.output_order])
        w_out_dag = w_out.conj().T
        for a in ch.kraus_ops:
            ops.append(scale * (w_out_dag @ a @ w_in))
    return KrausChannel(ops, ch.in_layout, ch.out_layout)


def teleport_channel(resource: DensityOperator) -> KrausChannel:
    """Effective channel of generalized-Bell-measurement teleportation over a resource.

    The sender measures (input, first resource leg) in the shifted maximally
    entangled basis; the receiver applies the matching shift-and-clock
    correction.  A maximally entangled resource yields the identity map.
    """
    dims = resource.layout.leg_dims
    if len(dims) != 2 or dims[0] != dims[1]:
        raise ValueError(f"teleportation resource must live on d x d legs, got {dims}")
    d = dims[0]
    w, v = eigh(resource.matrix)
    w = clip_spectrum(w)
    ops = []
    for u in weyl_operators(d):
        bell = u / np.sqrt(d)  # amplitude matrix of (U x I) |Phi+> over (input, resource A)
        for r in range(len(w)):
            if w[r] < 1e-14:
                continue
            chi = v[:, r].reshape(d, d)
            m = (bell.conj() @ chi).T
            ops.append(np.sqrt(w[r]) * (u @ m))
    layout = SystemLayout([d])
    return KrausChannel(ops, layout, layout)


def _support_basis(rho: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    w, v = eigh(rho)
    cols = [v[:, i] for i in range(len(w)) if w[i] > tol]
    if not cols:
        return np.zeros((rho.shape[0], 0), dtype=complex)
    return np.column_stack(cols)


def _min_support_fidelity(ch, graph, conn, support, entries, rng, restarts, max_iters
                          ) -> tuple[float, np.ndarray]:
    """Lowest mixed fidelity over pure states of a support, on one connection."""
    fixed = {}
    for j, (kind, val) in enumerate(entries):
        if j == conn:
            continue
        fixed[j] = _pure_amp(val) if kind == "pure" else _purification_amp(val)
    problem = QuadraticOverlap(ch, graph, {conn: support}, fixed)
    res = minimize_product_states(
        problem.batch_values, problem.part_dims, rng, restarts=restarts,
        max_iters=max_iters, gradient=problem.packed_gradient,
    )
    value, coords = problem.polish(res.states)
    return float(value), support @ coords[0]


def _largest_removable_weight(rho: np.ndarray, phi: np.ndarray, floor: float = 1e-12) -> float:
    """Largest q keeping rho - q |phi><phi| positive semidefinite, by bisection."""
    proj = np.outer(phi, phi.conj())
    hi = float(np.real(phi.conj() @ rho @ phi))
    if hi <= 0.0:
        return 0.0

    def min_eig(q: float) -> float:
        return float(np.linalg.eigvalsh(rho - q * proj)[0])

    lo = 0.0
    if min_eig(hi) >= -floor:
        return hi
    for _ in range(60):
        mid = (lo + hi) / 2
        if min_eig(mid) >= -floor:
            lo = mid
        else:
            hi = mid
    return lo


@dataclass
class ExtractionResult:
    subspaces: list[SubspaceBasis]
    alphas: list[float]
    peeled: list[list[tuple[float, np.ndarray]]]
    remainders: list[np.ndarray]


def extract_subspace(ch: KrausChannel, graph: ConnectionGraph, inputs: Sequence,
                     target_eta: float, rng: np.random.Generator,
                     restarts: int = 8, max_iters: int = 200,
                     max_removed_weight: float = 0.5) -> ExtractionResult:
    """Greedily peel worst-case directions until each connection's remaining support
    transmits with fidelity at least 1 - target_eta.

    Each step removes the (heuristically) lowest-fidelity pure state from the
    current support with the largest weight that keeps the operator positive
    semidefinite, so the peeled pairs plus the remainder reconstruct the input.
    """
    check_graph_compatible(ch, graph)
    if len(inputs) != graph.size:
        raise ValueError(f"need one input per connection ({graph.size})")
    mats = [
        (s.matrix if isinstance(s, DensityOperator) else np.asarray(s, dtype=complex)).copy()
        for s in inputs
    ]
    entries: list[tuple[str, np.ndarray]] = [("mixed", m) for m in mats]

    subspaces: list[SubspaceBasis] = []
    alphas: list[float] = []
    peeled_all: list[list[tuple[float, np.ndarray]]] = []
    remainders: list[np.ndarray] = []

    for c in range(graph.size):
        rho = mats[c].copy()
        removed: list[tuple[float, np.ndarray]] = []
        removed_weight = 0.0
        while True:
            support = _support_basis(rho)
            if support.shape[1] == 0:
                raise ExtractionError(
                    f"connection {c}: support exhausted before reaching eta={target_eta}"
                )
            probe = list(entries)
            probe[c] = ("mixed", rho / np.real(np.trace(rho)))
            value, worst = _min_support_fidelity(
                ch, graph, c, support, probe, rng, restarts, max_iters
            )
            if value >= 1.0 - target_eta:
                break
            if removed_weight > max_removed_weight:
                raise ExtractionError(
                    f"connection {c}: removed weight {removed_weight:.3f} exceeds "
                    f"{max_removed_weight} without reaching eta={target_eta}"
                )
            q = _largest_removable_weight(rho, worst)
            rho = rho - q * np.outer(worst, worst.conj())
            rho = (rho + rho.conj().T) / 2
            removed.append((q, worst))
            removed_weight += q
        subspaces.append(SubspaceBasis(support))
        alphas.append(removed_weight)
        peeled_all.append(removed)
        remainders.append(rho)
        # later connections see this one through its trimmed remaining state
        entries[c] = ("mixed", rho / np.real(np.trace(rho)))
    return ExtractionResult(subspaces, alphas, peeled_all, remainders)


@dataclass(frozen=True)
class PhaseAverageReport:
    eta: float
    entanglement_fidelity: float
    bound: float
    tol: float

    @property
    def holds(self) -> bool:
        return self.entanglement_fidelity >= self.bound - self.tol


def phase_average_bound(ch: KrausChannel, graph: ConnectionGraph, subspaces: Sequence,
                        rng: np.random.Generator, restarts: int = 32,
                        max_iters: int = 300, tol: float = 1e-9) -> PhaseAverageReport:
    """Check that uniform states on well-transmitting subspaces keep high
    entanglement fidelity: F_e >= 1 - (3/2)^{|G|} eta."""
    bases = [s if isinstance(s, SubspaceBasis) else SubspaceBasis(s) for s in subspaces]
    value, _ = min_subspace_fidelity(
        ch, graph, [b.vectors for b in bases], rng, restarts=restarts, max_iters=max_iters
    )
    eta = max(0.0, 1.0 - value)
    uniform = [b.uniform_state() for b in bases]
    fe = entanglement_fidelity(ch, uniform, graph)
    bound = 1.0 - (1.5 ** graph.size) * eta
    return PhaseAverageReport(eta=eta, entanglement_fidelity=fe, bound=bound, tol=tol)
