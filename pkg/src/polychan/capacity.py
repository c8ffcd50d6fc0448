"""Coherent information and achievable rate regions.

The region sampler ascends the weighted sum of per-connection coherent
informations over product input purifications (one pure state per sender) fed
into the n-fold channel, then reports per-use rates.  All points returned are
achievable inner-bound points: the rates are the coherent informations
evaluated at the returned state, up to optimizer suboptimality.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from ._optim import minimize_product_states, unpack_states
from .channels import (
    ConnectionGraph,
    KrausChannel,
    _leg_grouping_index,
    apply_with_reference,
    check_graph_compatible,
    tensor_power,
)
from .errors import CapExceededError
from .linalg import (
    DensityOperator,
    SystemLayout,
    eigh,
    entropy,
    entropy_of_spectrum,
    kron_all,
    partial_trace,
    permute_legs_vector,
    uhlmann_fidelity,
)

BLOCKLENGTH_CAP = 3


@dataclass(frozen=True)
class BipartiteSplit:
    """A disjoint covering split of a layout's legs into an A and a B side."""

    layout: SystemLayout
    a_legs: frozenset[int]
    b_legs: frozenset[int]

    def __init__(self, layout, a_legs: Iterable[int], b_legs: Iterable[int]):
        layout = layout if isinstance(layout, SystemLayout) else SystemLayout(layout)
        a = frozenset(int(i) for i in a_legs)
        b = frozenset(int(i) for i in b_legs)
        if a & b:
            raise ValueError(f"split sides overlap on legs {sorted(a & b)}")
        if a | b != set(range(layout.num_legs)):
            raise ValueError("split sides must cover all legs")
        object.__setattr__(self, "layout", layout)
        object.__setattr__(self, "a_legs", a)
        object.__setattr__(self, "b_legs", b)

    @property
    def a_dim(self) -> int:
        return int(np.prod([self.layout.leg_dims[i] for i in sorted(self.a_legs)] or [1]))

    @property
    def b_dim(self) -> int:
        return int(np.prod([self.layout.leg_dims[i] for i in sorted(self.b_legs)] or [1]))


def coherent_information(rho: DensityOperator, split: BipartiteSplit) -> float:
    """I_c(A>B) = S(rho_B) - S(rho_AB), in bits."""
    if rho.layout != split.layout:
        raise ValueError("state layout does not match the split's layout")
    s_ab = entropy(rho)
    rho_b = partial_trace(rho.matrix, rho.layout, split.b_legs)
    return entropy(rho_b) - s_ab


def check_dpi(rho: DensityOperator, split: BipartiteSplit, post: KrausChannel) -> float:
    """Margin I_c(before) - I_c(after postprocessing on B); nonnegative up to round-off."""
    before = coherent_information(rho, split)
    a_sorted = sorted(split.a_legs)
    b_sorted = sorted(split.b_legs)
    perm = a_sorted + b_sorted
    moved = rho.permuted(perm)
    b_dim = split.b_dim
    if post.in_dim != b_dim:
        raise ValueError(f"postprocessing input {post.in_dim} does not match B dimension {b_dim}")
    out = apply_with_reference(post, moved, ref_legs=len(a_sorted))
    na = len(a_sorted)
    split_after = BipartiteSplit(
        out.layout, range(na), range(na, out.layout.num_legs)
    )
    return before - coherent_information(out, split_after)


def continuity_gap(rho: DensityOperator, sigma: DensityOperator,
                   split: BipartiteSplit) -> tuple[float, float]:
    """(|delta I_c|, 4 sqrt(1-F) log2(d_A) + 2) for two states on the same split."""
    if rho.dim != sigma.dim:
        raise ValueError(f"dimension mismatch: {rho.dim} vs {sigma.dim}")
    lhs = abs(coherent_information(rho, split) - coherent_information(sigma, split))
    f = max(0.0, 1.0 - uhlmann_fidelity(rho, sigma))
    rhs = 4.0 * np.sqrt(f) * np.log2(split.a_dim) + 2.0
    return lhs, float(rhs)


@dataclass(frozen=True)
class RateTuple:
    """Rates (bits per channel use) achieved by a concrete product input purification."""

    rates: tuple[float, ...]
    dims: tuple[int, ...]
    blocklength: int
    weights: tuple[float, ...]
    objective: float
    sender_states: tuple[np.ndarray, ...]
    restart_index: int

    def __post_init__(self):
        for r, d in zip(self.rates, self.dims):
            bound = np.log2(d) + 1e-6
            if not -bound <= r <= bound:
                raise ValueError(f"rate {r} outside the coherent-information range for d={d}")

    @property
    def achievable(self) -> tuple[float, ...]:
        """Rates clamped at zero (zero is always achievable)."""
        return tuple(max(0.0, r) for r in self.rates)


class _RegionProblem:
    """Joint-state bookkeeping for the weighted coherent-information objective."""

    def __init__(self, ch: KrausChannel, graph: ConnectionGraph, n: int):
        check_graph_compatible(ch, graph)
        if n < 1:
            raise ValueError("blocklength must be >= 1")
        if n > BLOCKLENGTH_CAP:
            raise CapExceededError(f"blocklength {n} exceeds the cap {BLOCKLENGTH_CAP}")
        block_ch = KrausChannel(
            ch.kraus_ops, SystemLayout(graph.in_block_dims), SystemLayout(graph.out_block_dims)
        )
        self.base_graph = graph
        self.n = n
        self.ch = tensor_power(block_ch, n) if n > 1 else block_ch
        self.graph = graph.powered(n)
        g = self.graph.size
        self.block_dims = self.graph.dims  # per-connection dims at blocklength n
        self.groups = [grp for grp in self.graph.sender_groups() if grp]
        # sender part dimensions: refs then inputs, one pair of blocks per connection
        self.part_dims = [
            int(np.prod([self.block_dims[i] for i in grp])) ** 2 for grp in self.groups
        ]
        # joint legs (sender-major): per sender, ref blocks then input blocks
        leg_dims: list[int] = []
        tags: list[tuple[str, int]] = []
        for grp in self.groups:
            for i in grp:
                leg_dims.append(self.block_dims[i])
                tags.append(("R", i))
            for i in grp:
                leg_dims.append(self.block_dims[i])
                tags.append(("A", i))
        pos = {t: p for p, t in enumerate(tags)}
        target = [pos[("R", i)] for i in range(g)] + [
            pos[("A", j)] for j in self.graph.input_order
        ]
        self.joint_leg_dims = leg_dims
        self.joint_perm = target
        self.d_ref = int(np.prod(self.block_dims))
        # output-side leg structure after the channel: refs then output blocks
        self.out_leg_dims = list(self.block_dims) + [
            self.block_dims[j] for j in self.graph.output_order
        ]
        self.keep_perms = []
        for i in range(g):
            kept = [i, g + self.graph.output_order.index(i)]
            rest = [p for p in range(len(self.out_leg_dims)) if p not in kept]
            self.keep_perms.append(kept + rest)

    def sender_leg_dims(self, w: int) -> list[int]:
        grp = self.groups[w]
        return [self.block_dims[i] for i in grp] * 2

    def joint_ket(self, sender_states: Sequence[np.ndarray]) -> np.ndarray:
        ket = kron_all([np.asarray(s, dtype=complex) for s in sender_states])
        return permute_legs_vector(ket, self.joint_leg_dims, self.joint_perm)

    def coherent_infos(self, sender_states: Sequence[np.ndarray]) -> list[float]:
        ket = self.joint_ket(sender_states)
        ket_mat = ket.reshape(self.d_ref, self.ch.in_dim)
        branches = [(ket_mat @ a.T).reshape(-1) for a in self.ch.kraus_ops]
        infos = []
        for i in range(self.graph.size):
            d_pair = self.block_dims[i] ** 2
            rho = np.zeros((d_pair, d_pair), dtype=complex)
            for w in branches:
                wp = permute_legs_vector(w, self.out_leg_dims, self.keep_perms[i])
                wp = wp.reshape(d_pair, -1)
                rho += wp @ wp.conj().T
            w_ab, _ = eigh(rho)
            s_ab = entropy_of_spectrum(w_ab)
            rho_b = partial_trace(rho, [self.block_dims[i], self.block_dims[i]], [1])
            w_b, _ = eigh(rho_b)
            infos.append(entropy_of_spectrum(w_b) - s_ab)
        return infos

    def me_sender_state(self, w: int) -> np.ndarray:
        """Product of maximally entangled ref-input pairs for one sender."""
        grp = self.groups[w]
        vec = kron_all(
            [np.eye(self.block_dims[i], dtype=complex).reshape(-1) / np.sqrt(self.block_dims[i])
             for i in grp]
        )
        pair_dims = [d for i in grp for d in (self.block_dims[i], self.block_dims[i])]
        c = len(grp)
        order = [2 * j for j in range(c)] + [2 * j + 1 for j in range(c)]
        return permute_legs_vector(vec, pair_dims, order)


def region_sample(ch: KrausChannel, graph: ConnectionGraph, n: int,
                  weights: Sequence[float], rng: np.random.Generator,
                  restarts: int = 16, max_iters: int = 300) -> RateTuple:
    """Best found rate tuple for one weight vector at blocklength n."""
    weights = tuple(float(x) for x in weights)
    if len(weights) != graph.size:
        raise ValueError(f"need {graph.size} weights, got {len(weights)}")
    if any(x < 0 for x in weights) or not any(x > 0 for x in weights):
        raise ValueError("weights must be nonnegative and not all zero")
    problem = _RegionProblem(ch, graph, n)
    wvec = np.array(weights)

    def objective_batch(x_block: np.ndarray) -> np.ndarray:
        out = np.empty(x_block.shape[0])
        for row in range(x_block.shape[0]):
            states = unpack_states(x_block[row], problem.part_dims)
            infos = problem.coherent_infos(states)
            out[row] = -float(np.dot(wvec, infos))
        return out

    warm = [[problem.me_sender_state(w) for w in range(len(problem.groups))]]
    if n > 1:
        base = region_sample(ch, graph, 1, weights, rng.spawn(1)[0],
                             restarts=max(4, restarts // 2), max_iters=max_iters)
        lifted = []
        for w, grp in enumerate(problem.groups):
            single = base.sender_states[w]
            single_dims = [graph.dims[i] for i in grp] * 2
            # regroup n copies so the per-connection blocks stay contiguous
            vec = kron_all([single] * n)
            idx = _leg_grouping_index(single_dims, n)
            lifted.append(vec[idx])
        warm.append(lifted)

    result = minimize_product_states(
        objective_batch, problem.part_dims, rng, restarts=restarts,
        max_iters=max_iters, warm_starts=warm,
    )
    infos = problem.coherent_infos(result.states)
    rates = tuple(v / n for v in infos)
    return RateTuple(
        rates=rates,
        dims=graph.dims,
        blocklength=n,
        weights=weights,
        objective=float(np.dot(wvec, rates)),
        sender_states=tuple(result.states),
        restart_index=result.restart_index,
    )


def _dominates(a: Sequence[float], b: Sequence[float], tol: float = 1e-9) -> bool:
    return all(x >= y - tol for x, y in zip(a, b)) and any(x > y + tol for x, y in zip(a, b))


def region_pareto(ch: KrausChannel, graph: ConnectionGraph, n: int,
                  weight_grid: Sequence[Sequence[float]], rng: np.random.Generator,
                  restarts: int = 16, max_iters: int = 300) -> list[RateTuple]:
    """Scalarize over a grid of weight vectors; deduplicated, Pareto-filtered."""
    grid = [tuple(float(x) for x in w) for w in weight_grid]
    if not grid:
        raise ValueError("weight grid is empty")
    streams = rng.spawn(len(grid))
    points = [
        region_sample(ch, graph, n, w, s, restarts=restarts, max_iters=max_iters)
        for w, s in zip(grid, streams)
    ]
    seen = set()
    unique = []
    for p in points:
        key = tuple(round(r, 9) for r in p.achievable)
        if key not in seen:
            seen.add(key)
            unique.append(p)
    frontier = [
        p for p in unique
        if not any(_dominates(q.achievable, p.achievable) for q in unique if q is not p)
    ]
    return frontier


def simplex_weight_grid(size: int, count: int, rng: np.random.Generator
                        ) -> list[tuple[float, ...]]:
    """Deterministic weight vectors on the simplex: vertices, the center, then
    (for two connections) an even sweep or (otherwise) seeded Dirichlet points."""
    grid: list[tuple[float, ...]] = []
    for i in range(size):
        w = [0.0] * size
        w[i] = 1.0
        grid.append(tuple(w))
    grid.append(tuple(1.0 / size for _ in range(size)))
    extra = max(0, count - len(grid))
    if size == 2:
        for t in np.linspace(0.0, 1.0, extra + 2)[1:-1]:
            grid.append((float(t), float(1.0 - t)))
    else:
        for _ in range(extra):
            w = rng.dirichlet(np.ones(size))
            grid.append(tuple(float(x) for x in w))
    return grid
