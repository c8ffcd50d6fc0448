"""Fidelity functionals of graph-structured channels.

Two independent evaluation routes are provided for channel fidelities: the
definitional one (purify, send through the channel with an untouched
reference, overlap with the purification) and a closed form contracting the
Kraus operators against per-connection swaps.  They must agree to high
precision; the test suite leans on that.

Per-connection references use the canonical eigen-purification
``sum_m sqrt(l_m) |m>|v_m>`` with reference dimension equal to the state's
dimension.  Fidelities do not depend on the choice of purification.
"""

from __future__ import annotations

import itertools
import string
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from ._optim import complex_parts, minimize_product_states, unpack_states
from .channels import ConnectionGraph, KrausChannel, check_graph_compatible
from .errors import CapExceededError
from .linalg import (
    DensityOperator,
    clip_spectrum,
    eigh,
    kron_all,
    permute_legs_vector,
)

SUBSET_CAP = 16


def _as_matrix(state) -> np.ndarray:
    return state.matrix if isinstance(state, DensityOperator) else np.asarray(state, dtype=complex)


def _purification_amp(rho) -> np.ndarray:
    """Amplitude matrix M[r, a] of the canonical purification of a density operator."""
    m = _as_matrix(rho)
    w, v = eigh(m)
    w = clip_spectrum(w)
    return (v * np.sqrt(w)).T


def _pure_amp(psi) -> np.ndarray:
    v = np.asarray(psi, dtype=complex).reshape(-1)
    nrm = np.linalg.norm(v)
    if nrm == 0:
        raise ValueError("zero vector is not a state")
    return (v / nrm).reshape(1, -1)


def _check_amps(graph: ConnectionGraph, amps: Sequence[np.ndarray]) -> None:
    if len(amps) != graph.size:
        raise ValueError(f"need one input per connection ({graph.size}), got {len(amps)}")
    for i, amp in enumerate(amps):
        if amp.shape[1] != graph.dims[i]:
            raise ValueError(
                f"input {i} has dimension {amp.shape[1]}, connection needs {graph.dims[i]}"
            )


def _paired_vector(amps: Sequence[np.ndarray], conns: Sequence[int], graph: ConnectionGraph,
                   side_order: Sequence[int]) -> np.ndarray:
    """Product of per-connection purification amplitudes, reference legs first.

    Legs come out as [R_i for i in ``conns`` in index order] followed by the
    channel-side legs of ``conns`` arranged by ``side_order``.
    """
    conns = list(conns)
    vec = kron_all([amps[i].reshape(-1) for i in conns]) if conns else np.ones(1, dtype=complex)
    leg_dims: list[int] = []
    tags: list[tuple[str, int]] = []
    for i in conns:
        leg_dims += [amps[i].shape[0], graph.dims[i]]
        tags += [("R", i), ("S", i)]
    pos = {t: p for p, t in enumerate(tags)}
    order = [pos[("R", i)] for i in conns] + [
        pos[("S", j)] for j in side_order if j in set(conns)
    ]
    return permute_legs_vector(vec, leg_dims, order)


def _overlap_fidelity(ch: KrausChannel, graph: ConnectionGraph, amps: Sequence[np.ndarray],
                      keep: Iterable[int] | None = None) -> float:
    """Overlap of the channel output with the product purification, on kept connections."""
    check_graph_compatible(ch, graph)
    _check_amps(graph, amps)
    g = graph.size
    keep_set = set(range(g)) if keep is None else set(int(k) for k in keep)
    if not keep_set or not keep_set.issubset(range(g)):
        raise ValueError(f"invalid connection subset {sorted(keep_set)}")

    all_conns = list(range(g))
    ket = _paired_vector(amps, all_conns, graph, graph.input_order)
    ref_dims = [amps[i].shape[0] for i in all_conns]
    d_ref = int(np.prod(ref_dims))
    ket_mat = ket.reshape(d_ref, ch.in_dim)

    if keep_set == set(all_conns):
        bra = _paired_vector(amps, all_conns, graph, graph.output_order)
        total = 0.0
        for a in ch.kraus_ops:
            w = (ket_mat @ a.T).reshape(-1)
            total += abs(np.vdot(bra, w)) ** 2
        return float(total)

    # group fidelity: trace out the connections outside keep_set first
    out_leg_dims = ref_dims + [graph.dims[j] for j in graph.output_order]
    out_tags = [("R", i) for i in all_conns] + [("B", j) for j in graph.output_order]
    pos = {t: p for p, t in enumerate(out_tags)}
    kept_order = [pos[("R", i)] for i in all_conns if i in keep_set] + [
        pos[("B", j)] for j in graph.output_order if j in keep_set
    ]
    rest = [p for p in range(len(out_tags)) if p not in set(kept_order)]
    perm = kept_order + rest
    d_keep = int(np.prod([out_leg_dims[p] for p in kept_order]))
    kept_bra = _paired_vector(amps, sorted(keep_set), graph, graph.output_order)

    total = 0.0
    for a in ch.kraus_ops:
        w = (ket_mat @ a.T).reshape(-1)
        wp = permute_legs_vector(w, out_leg_dims, perm).reshape(d_keep, -1)
        total += float(np.sum(np.abs(kept_bra.conj() @ wp) ** 2))
    return float(total)


def entanglement_fidelity(ch: KrausChannel, inputs: Sequence, graph: ConnectionGraph) -> float:
    """Overlap of (I x channel) applied to the purified product input with that purification."""
    amps = [_purification_amp(rho) for rho in inputs]
    return _overlap_fidelity(ch, graph, amps)


def group_fidelity(ch: KrausChannel, inputs: Sequence, graph: ConnectionGraph,
                   keep: Iterable[int]) -> float:
    """Entanglement fidelity after tracing everything outside the kept connections."""
    amps = [_purification_amp(rho) for rho in inputs]
    return _overlap_fidelity(ch, graph, amps, keep=keep)


def local_entanglement_fidelity(ch: KrausChannel, inputs: Sequence, graph: ConnectionGraph,
                                i: int) -> float:
    return group_fidelity(ch, inputs, graph, keep=[i])


def pure_state_fidelity(ch: KrausChannel, graph: ConnectionGraph, states: Sequence) -> float:
    """Transmission fidelity of a product pure input, identified per connection."""
    amps = [_pure_amp(psi) for psi in states]
    return _overlap_fidelity(ch, graph, amps)


def mixed_fidelity(ch: KrausChannel, graph: ConnectionGraph,
                   entries: Sequence[tuple[str, np.ndarray]]) -> float:
    """Fidelity with a mix of per-connection roles: ('pure', vector) connections are
    sent bare, ('mixed', density) connections keep an entangled reference."""
    amps = []
    for kind, val in entries:
        if kind == "pure":
            amps.append(_pure_amp(val))
        elif kind == "mixed":
            amps.append(_purification_amp(val))
        else:
            raise ValueError(f"unknown entry kind {kind!r}")
    return _overlap_fidelity(ch, graph, amps)


def _me_amps(graph: ConnectionGraph) -> list[np.ndarray]:
    return [np.eye(d, dtype=complex) / np.sqrt(d) for d in graph.dims]


def _conn_ordered_kraus(ch: KrausChannel, graph: ConnectionGraph) -> list[np.ndarray]:
    """Kraus operators as tensors with one output and one input leg per connection,
    both sides in connection-index order."""
    g = graph.size
    out_axes = [graph.output_order.index(c) for c in range(g)]
    in_axes = [g + graph.input_order.index(c) for c in range(g)]
    shape = tuple(graph.out_block_dims) + tuple(graph.in_block_dims)
    return [np.transpose(a.reshape(shape), axes=out_axes + in_axes) for a in ch.kraus_ops]


def _kraus_group_fidelity(ch: KrausChannel, graph: ConnectionGraph,
                          keep_set: frozenset[int]) -> float:
    """Swap-contraction route for channel fidelities at maximally entangled inputs."""
    check_graph_compatible(ch, graph)
    g = graph.size
    if 2 * g > len(string.ascii_letters):
        raise CapExceededError(f"too many connections for the contraction ({g})")
    labels = string.ascii_letters
    alpha = [labels[2 * i] for i in range(g)]
    beta = [labels[2 * i + 1] for i in range(g)]
    conj_out = list(alpha)
    conj_in = [""] * g
    a_out = [""] * g
    a_in = list(beta)
    for i in range(g):
        if i in keep_set:
            conj_in[i] = alpha[i]
            a_out[i] = beta[i]
        else:
            conj_in[i] = beta[i]
            a_out[i] = alpha[i]
    spec = "".join(conj_out + conj_in) + "," + "".join(a_out + a_in) + "->"
    denom = 1.0
    for i in range(g):
        denom *= graph.dims[i] ** 2 if i in keep_set else graph.dims[i]
    total = 0.0
    for t in _conn_ordered_kraus(ch, graph):
        total += float(np.real(np.einsum(spec, t.conj(), t)))
    return total / denom


def group_channel_fidelity_kraus(ch: KrausChannel, graph: ConnectionGraph,
                                 keep: Iterable[int]) -> float:
    keep_set = frozenset(int(k) for k in keep)
    if not keep_set or not keep_set.issubset(range(graph.size)):
        raise ValueError(f"invalid connection subset {sorted(keep_set)}")
    return _kraus_group_fidelity(ch, graph, keep_set)


def channel_fidelity(ch: KrausChannel, graph: ConnectionGraph,
                     mode: str = "definition") -> float:
    """Entanglement fidelity at maximally entangled inputs, by either route."""
    if mode == "definition":
        return _overlap_fidelity(ch, graph, _me_amps(graph))
    if mode == "kraus_trace":
        return _kraus_group_fidelity(ch, graph, frozenset(range(graph.size)))
    raise ValueError(f"unknown mode {mode!r} (use 'definition' or 'kraus_trace')")


def average_fidelity_exact(ch: KrausChannel, graph: ConnectionGraph) -> float:
    """Haar average of the pure-state fidelity, from the subset decomposition
    into group channel fidelities."""
    g = graph.size
    if g > SUBSET_CAP:
        raise CapExceededError(f"subset enumeration capped at {SUBSET_CAP} connections")
    dims = graph.dims
    d_total = float(np.prod(dims))
    d_plus = float(np.prod([d + 1 for d in dims]))
    total = 0.0
    for r in range(g + 1):
        for removed in itertools.combinations(range(g), r):
            coeff = d_total / float(np.prod([dims[j] for j in removed])) if removed else d_total
            kept = frozenset(range(g)) - frozenset(removed)
            fk = 1.0 if not kept else _kraus_group_fidelity(ch, graph, kept)
            total += coeff * fk
    return total / d_plus


def _product_batch(states: Sequence[np.ndarray], order: Sequence[int]) -> np.ndarray:
    """Row-wise tensor product of per-connection state batches, in the given block order."""
    b = states[0].shape[0]
    acc = np.ones((b, 1), dtype=complex)
    for j in order:
        acc = np.einsum("sa,sb->sab", acc, states[j]).reshape(b, -1)
    return acc


def _batch_pure_fidelity(ch: KrausChannel, graph: ConnectionGraph,
                         states: Sequence[np.ndarray]) -> np.ndarray:
    """Pure-state fidelities for a batch of per-connection states (rows)."""
    psi_in = _product_batch(states, graph.input_order)
    phi_out = _product_batch(states, graph.output_order)
    stack = ch.kraus_stack()
    sent = np.einsum("kij,sj->ski", stack, psi_in)
    amp = np.einsum("si,ski->sk", phi_out.conj(), sent)
    return np.sum(np.abs(amp) ** 2, axis=1)


def average_fidelity_mc(ch: KrausChannel, graph: ConnectionGraph, samples: int,
                        rng: np.random.Generator, chunk: int = 20000
                        ) -> tuple[float, float]:
    """Monte Carlo estimate of the average fidelity over independent Haar product
    states; returns (mean, standard error)."""
    check_graph_compatible(ch, graph)
    if samples < 2:
        raise ValueError("need at least 2 samples for a standard error")
    vals = np.empty(samples)
    done = 0
    while done < samples:
        b = min(chunk, samples - done)
        states = []
        for d in graph.dims:
            z = rng.standard_normal((b, d)) + 1j * rng.standard_normal((b, d))
            states.append(z / np.linalg.norm(z, axis=1, keepdims=True))
        vals[done : done + b] = _batch_pure_fidelity(ch, graph, states)
        done += b
    mean = float(np.mean(vals))
    stderr = float(np.std(vals, ddof=1) / np.sqrt(samples))
    return mean, stderr


def _subspace_matrix(basis) -> np.ndarray:
    v = getattr(basis, "vectors", basis)
    v = np.asarray(v, dtype=complex)
    if v.ndim != 2 or v.shape[1] == 0:
        raise ValueError("subspace basis must be a nonempty matrix of column vectors")
    gram = v.conj().T @ v
    if np.max(np.abs(gram - np.eye(v.shape[1]))) > 1e-10:
        raise ValueError("subspace basis columns are not orthonormal")
    return v


class QuadraticOverlap:
    """Exact value/gradient of the fidelity as a function of some connections' states.

    For fixed inputs elsewhere, each Kraus overlap is a quadratic form
    ``c^dag T c`` in every varying connection's subspace coordinates, which
    gives the fidelity and its gradient in closed form.  Fixed connections are
    described by purification amplitude matrices; only their Gram matrices
    enter the contraction.
    """

    def __init__(self, ch: KrausChannel, graph: ConnectionGraph,
                 bases: dict[int, np.ndarray], fixed_amps: dict[int, np.ndarray]):
        check_graph_compatible(ch, graph)
        g = graph.size
        if set(bases) | set(fixed_amps) != set(range(g)) or set(bases) & set(fixed_amps):
            raise ValueError("bases and fixed_amps must partition the connections")
        self.graph = graph
        self.varying = sorted(bases)
        self.bases = bases
        self.tensors = _conn_ordered_kraus(ch, graph)
        self.fixed_gram = {j: amp.conj().T @ amp for j, amp in fixed_amps.items()}
        labels = string.ascii_letters
        self.t_labels = "".join(labels[: 2 * g])
        self.pair_labels = [labels[j] + labels[g + j] for j in range(g)]
        self.part_dims = [bases[i].shape[1] for i in self.varying]

    def _grams(self, coords: Sequence[np.ndarray]) -> dict[int, np.ndarray]:
        grams = dict(self.fixed_gram)
        for i, c in zip(self.varying, coords):
            psi = self.bases[i] @ c
            grams[i] = np.outer(psi.conj(), psi)
        return grams

    def value(self, coords: Sequence[np.ndarray]) -> float:
        grams = self._grams(coords)
        spec = self.t_labels + "," + ",".join(self.pair_labels) + "->"
        total = 0.0
        for t in self.tensors:
            m = np.einsum(spec, t, *[grams[j] for j in range(self.graph.size)])
            total += abs(complex(m)) ** 2
        return total

    def value_and_grad(self, coords: Sequence[np.ndarray]
                       ) -> tuple[float, list[np.ndarray]]:
        grams = self._grams(coords)
        g = self.graph.size
        total = 0.0
        grads = [np.zeros(s, dtype=complex) for s in self.part_dims]
        for t in self.tensors:
            forms = []
            m = None
            for k, i in enumerate(self.varying):
                others = [j for j in range(g) if j != i]
                operand_specs = [self.t_labels] + [self.pair_labels[j] for j in others]
                spec = ",".join(operand_specs) + "->" + self.pair_labels[i]
                b = np.einsum(spec, t, *[grams[j] for j in others])
                form = self.bases[i].conj().T @ b @ self.bases[i]
                forms.append(form)
                if m is None:
                    m = complex(coords[k].conj() @ form @ coords[k])
            total += abs(m) ** 2
            for k in range(len(self.varying)):
                grads[k] += np.conj(m) * (forms[k] @ coords[k]) + m * (
                    forms[k].conj().T @ coords[k]
                )
        return total, grads

    def packed_gradient(self, x: np.ndarray) -> np.ndarray:
        coords = unpack_states(x, self.part_dims)
        _, grads = self.value_and_grad(coords)
        chunks = []
        for gvec in grads:
            chunks.append(np.column_stack([2 * gvec.real, 2 * gvec.imag]).reshape(-1))
        return np.concatenate(chunks)

    def batch_values(self, x_block: np.ndarray) -> np.ndarray:
        x_block = np.atleast_2d(x_block)
        batch = x_block.shape[0]
        g = self.graph.size
        grams: list[np.ndarray] = [None] * g  # type: ignore[list-item]
        for j, gram in self.fixed_gram.items():
            grams[j] = np.broadcast_to(gram, (batch,) + gram.shape)
        coords = complex_parts(x_block, self.part_dims)
        for k, i in enumerate(self.varying):
            psi = coords[k] @ self.bases[i].T
            grams[i] = psi.conj()[:, :, None] * psi[:, None, :]
        spec = (self.t_labels + ","
                + ",".join("Z" + p for p in self.pair_labels) + "->Z")
        out = np.zeros(batch)
        for t in self.tensors:
            m = np.einsum(spec, t, *grams)
            out += np.abs(m) ** 2
        return out

    def _part_models(self, coords: Sequence[np.ndarray]
                     ) -> tuple[list[np.ndarray], list[np.ndarray]]:
        """Per-part local models: the field matrix H_i (grad_i F = H_i c_i) and the
        Gauss-Newton matrix M_i = sum_K (u u^dag + w w^dag), u = T c, w = T^dag c."""
        grams = self._grams(coords)
        g = self.graph.size
        fields = [np.zeros((s, s), dtype=complex) for s in self.part_dims]
        gauss = [np.zeros((s, s), dtype=complex) for s in self.part_dims]
        for t in self.tensors:
            forms = []
            m = None
            for k, i in enumerate(self.varying):
                others = [j for j in range(g) if j != i]
                operand_specs = [self.t_labels] + [self.pair_labels[j] for j in others]
                spec = ",".join(operand_specs) + "->" + self.pair_labels[i]
                b = np.einsum(spec, t, *[grams[j] for j in others])
                form = self.bases[i].conj().T @ b @ self.bases[i]
                forms.append(form)
                if m is None:
                    m = complex(coords[k].conj() @ form @ coords[k])
            for k in range(len(self.varying)):
                fields[k] += np.conj(m) * forms[k] + m * forms[k].conj().T
                u = forms[k] @ coords[k]
                w = forms[k].conj().T @ coords[k]
                gauss[k] += np.outer(u, u.conj()) + np.outer(w, w.conj())
        return fields, gauss

    def polish(self, coords: Sequence[np.ndarray], sweeps: int = 60
               ) -> tuple[float, list[np.ndarray]]:
        """Descend to the bottom of quartic-flat valleys that defeat gradient steps.

        Each sweep proposes, per part, the smallest eigenvector of the local
        field matrix and of the Gauss-Newton matrix (the latter stays
        informative where the overlaps vanish); moves are kept only when the
        value drops.
        """
        coords = [np.asarray(c, dtype=complex).copy() for c in coords]
        val = self.value(coords)
        for _ in range(sweeps):
            improved = False
            for k in range(len(self.varying)):
                fields, gauss = self._part_models(coords)
                for model in (gauss[k], fields[k]):
                    _, v = np.linalg.eigh((model + model.conj().T) / 2.0)
                    cand = list(coords)
                    cand[k] = v[:, 0]
                    cval = self.value(cand)
                    if cval < val - 1e-18:
                        coords, val = cand, cval
                        improved = True
            if not improved:
                break
        return val, coords


def min_subspace_fidelity(ch: KrausChannel, graph: ConnectionGraph, subspaces: Sequence,
                          rng: np.random.Generator, restarts: int = 32,
                          max_iters: int = 300) -> tuple[float, list[np.ndarray]]:
    """Heuristic minimum of the pure-state fidelity over product states drawn from
    the given subspaces.

    Multi-restart projected gradient descent; the returned value is an upper
    bound on the true minimum (up to optimizer slack).  Also returns the
    minimizing per-connection states in the ambient spaces.  Deterministic for
    a fixed rng state.
    """
    check_graph_compatible(ch, graph)
    bases = [_subspace_matrix(s) for s in subspaces]
    if len(bases) != graph.size:
        raise ValueError(f"need one subspace per connection ({graph.size})")
    for i, v in enumerate(bases):
        if v.shape[0] != graph.dims[i]:
            raise ValueError(
                f"subspace {i} lives in dimension {v.shape[0]}, connection needs {graph.dims[i]}"
            )
    problem = QuadraticOverlap(ch, graph, dict(enumerate(bases)), {})
    result = minimize_product_states(
        problem.batch_values, problem.part_dims, rng, restarts=restarts,
        max_iters=max_iters, gradient=problem.packed_gradient,
    )
    value, coords = problem.polish(result.states)
    states = [bases[i] @ c for i, c in enumerate(coords)]
    return float(value), states


@dataclass(frozen=True)
class FidelityReport:
    """Channel fidelities of every connection subset, at maximally entangled inputs."""

    global_value: float
    local_values: tuple[float, ...]
    group_values: dict

    def check(self, tol: float = 1e-9) -> None:
        vals = [self.global_value, *self.local_values, *self.group_values.values()]
        for v in vals:
            if not -tol <= v <= 1.0 + tol:
                raise ValueError(f"fidelity {v} outside [0, 1]")
        for key, v in self.group_values.items():
            if self.global_value > v + tol:
                raise ValueError(
                    f"global fidelity {self.global_value} exceeds group {set(key)} value {v}"
                )


def channel_fidelity_report(ch: KrausChannel, graph: ConnectionGraph) -> FidelityReport:
    g = graph.size
    groups = {}
    for r in range(1, g + 1):
        for kept in itertools.combinations(range(g), r):
            groups[frozenset(kept)] = _kraus_group_fidelity(ch, graph, frozenset(kept))
    return FidelityReport(
        global_value=groups[frozenset(range(g))],
        local_values=tuple(groups[frozenset([i])] for i in range(g)),
        group_values=groups,
    )
