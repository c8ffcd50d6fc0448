import itertools

import numpy as np
import pytest

from conftest import random_density
from polychan import (
    ConnectionGraph,
    DensityOperator,
    average_fidelity_exact,
    average_fidelity_mc,
    channel_fidelity,
    channel_fidelity_report,
    dephasing,
    depolarizing,
    entanglement_fidelity,
    group_channel_fidelity_kraus,
    group_fidelity,
    haar_state,
    identity_channel,
    local_entanglement_fidelity,
    make_rng,
    min_subspace_fidelity,
    product_channel,
    pure_state_fidelity,
    random_channel,
    split_rng,
)
from polychan.channels import KrausChannel
from polychan.fidelities import _conn_ordered_kraus

QUBIT_GRAPH = ConnectionGraph.single(2)
PAIR_GRAPH = ConnectionGraph.diagonal([2, 2])


def mixed_inputs(graph):
    return [DensityOperator.maximally_mixed([d]) for d in graph.dims]


def trace_form_fidelity(ch, graph, inputs):
    """Independent oracle: F_e = sum_K |tr(rho_prod A_K)|^2 with connection-ordered
    Kraus tensors (no purification machinery)."""
    rho = inputs[0].matrix if hasattr(inputs[0], "matrix") else inputs[0]
    for extra in inputs[1:]:
        rho = np.kron(rho, extra.matrix if hasattr(extra, "matrix") else extra)
    g = graph.size
    d = int(np.prod(graph.dims))
    total = 0.0
    for t in _conn_ordered_kraus(ch, graph):
        a = t.reshape(d, d)
        total += abs(np.trace(a @ rho)) ** 2
    return total


def random_pair_channel(rng, kraus=3):
    return random_channel(4, 4, kraus, rng), PAIR_GRAPH


class TestEntanglementFidelity:
    def test_identity(self, rng):
        for _ in range(3):
            rho = DensityOperator(random_density(2, rng))
            assert abs(entanglement_fidelity(identity_channel([2]), [rho], QUBIT_GRAPH) - 1) < 1e-10

    def test_fully_depolarizing(self):
        val = entanglement_fidelity(depolarizing(2, 1.0), mixed_inputs(QUBIT_GRAPH), QUBIT_GRAPH)
        assert abs(val - 0.25) < 1e-12

    def test_dephasing_direct_oracle(self):
        # 4x4 oracle: overlap of (1-p)Phi+ + p Phi- with Phi+
        p = 0.4
        val = entanglement_fidelity(dephasing(p), mixed_inputs(QUBIT_GRAPH), QUBIT_GRAPH)
        assert abs(val - (1 - p)) < 1e-12

    def test_matches_trace_form_oracle(self, rng):
        for d in (2, 3):
            graph = ConnectionGraph.single(d)
            ch = random_channel(d, d, 3, rng)
            rho = DensityOperator(random_density(d, rng))
            got = entanglement_fidelity(ch, [rho], graph)
            want = trace_form_fidelity(ch, graph, [rho])
            assert abs(got - want) < 1e-12

    def test_convexity(self, rng):
        # F_e(sum p_i rho_i) <= sum p_i F_e(rho_i)
        for _ in range(25):
            ch = random_channel(2, 2, 2, rng)
            a, b = random_density(2, rng), random_density(2, rng)
            lam = rng.uniform()
            mix = DensityOperator(lam * a + (1 - lam) * b)
            lhs = entanglement_fidelity(ch, [mix], QUBIT_GRAPH)
            rhs = lam * entanglement_fidelity(ch, [DensityOperator(a)], QUBIT_GRAPH) + (
                1 - lam
            ) * entanglement_fidelity(ch, [DensityOperator(b)], QUBIT_GRAPH)
            assert lhs <= rhs + 1e-9


class TestGroupFidelities:
    def test_identity_local_values(self, rng):
        ch = product_channel([identity_channel([2]), identity_channel([2])], PAIR_GRAPH)
        inputs = mixed_inputs(PAIR_GRAPH)
        for i in (0, 1):
            assert abs(local_entanglement_fidelity(ch, inputs, PAIR_GRAPH, i) - 1) < 1e-10

    def test_identity_times_depolarizing(self):
        ch = product_channel([identity_channel([2]), depolarizing(2, 1.0)], PAIR_GRAPH)
        inputs = mixed_inputs(PAIR_GRAPH)
        assert abs(local_entanglement_fidelity(ch, inputs, PAIR_GRAPH, 0) - 1.0) < 1e-10
        assert abs(local_entanglement_fidelity(ch, inputs, PAIR_GRAPH, 1) - 0.25) < 1e-10
        assert abs(entanglement_fidelity(ch, inputs, PAIR_GRAPH) - 0.25) < 1e-10

    def test_full_group_equals_global(self, rng):
        ch, graph = random_pair_channel(rng)
        inputs = [DensityOperator(random_density(2, rng)) for _ in range(2)]
        a = group_fidelity(ch, inputs, graph, [0, 1])
        b = entanglement_fidelity(ch, inputs, graph)
        assert abs(a - b) < 1e-10

    def test_subset_monotonicity(self, rng):
        # F^[G'] <= F^[G] + tol whenever G subset of G' (tracing cannot decrease)
        for _ in range(10):
            ch, graph = random_pair_channel(rng)
            inputs = [DensityOperator(random_density(2, rng)) for _ in range(2)]
            full = group_fidelity(ch, inputs, graph, [0, 1])
            for single in ([0], [1]):
                assert group_fidelity(ch, inputs, graph, single) >= full - 1e-9

    def test_invalid_subset(self, rng):
        ch, graph = random_pair_channel(rng)
        with pytest.raises(ValueError):
            group_fidelity(ch, mixed_inputs(graph), graph, [7])


class TestChannelFidelityRoutes:
    def test_identity(self):
        for d in (2, 3):
            g = ConnectionGraph.single(d)
            ch = identity_channel([d])
            assert abs(channel_fidelity(ch, g, "definition") - 1) < 1e-12
            assert abs(channel_fidelity(ch, g, "kraus_trace") - 1) < 1e-12

    @pytest.mark.parametrize("p", [0.0, 0.2, 0.7, 1.0])
    def test_depolarizing_closed_form(self, p):
        # both routes must agree with 1 - 3p/4 from the Kraus traces
        ch = depolarizing(2, p)
        want = 1 - 3 * p / 4
        assert abs(channel_fidelity(ch, QUBIT_GRAPH, "definition") - want) < 1e-12
        assert abs(channel_fidelity(ch, QUBIT_GRAPH, "kraus_trace") - want) < 1e-12

    def test_two_qubit_fully_depolarizing(self):
        ch = product_channel([depolarizing(2, 1.0), depolarizing(2, 1.0)], PAIR_GRAPH)
        assert abs(channel_fidelity(ch, PAIR_GRAPH, "definition") - 1 / 16) < 1e-12

    def test_routes_agree_on_random_channels(self, rng):
        for _ in range(20):
            ch, graph = random_pair_channel(rng)
            a = channel_fidelity(ch, graph, "definition")
            b = channel_fidelity(ch, graph, "kraus_trace")
            assert abs(a - b) < 1e-10

    def test_group_routes_agree(self, rng):
        for _ in range(10):
            ch, graph = random_pair_channel(rng)
            inputs = mixed_inputs(graph)
            for r in (1, 2):
                for kept in itertools.combinations(range(2), r):
                    a = group_fidelity(ch, inputs, graph, kept)
                    b = group_channel_fidelity_kraus(ch, graph, kept)
                    assert abs(a - b) < 1e-10

    def test_kraus_route_identity_group(self):
        ch = product_channel([identity_channel([2]), depolarizing(2, 1.0)], PAIR_GRAPH)
        assert abs(group_channel_fidelity_kraus(ch, PAIR_GRAPH, [0]) - 1.0) < 1e-12

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            channel_fidelity(identity_channel([2]), QUBIT_GRAPH, "nope")

    def test_rectangular_rejects_graph(self, rng):
        ch = random_channel(2, 3, 3, rng)
        with pytest.raises(ValueError):
            channel_fidelity(ch, QUBIT_GRAPH, "kraus_trace")


class TestPureStateFidelity:
    def test_identity(self, rng):
        psi = haar_state(2, rng)
        assert abs(pure_state_fidelity(identity_channel([2]), QUBIT_GRAPH, [psi]) - 1) < 1e-10

    def test_fully_depolarizing_pair(self, rng):
        ch = product_channel([depolarizing(2, 1.0), depolarizing(2, 1.0)], PAIR_GRAPH)
        states = [haar_state(2, rng), haar_state(2, rng)]
        assert abs(pure_state_fidelity(ch, PAIR_GRAPH, states) - 0.25) < 1e-12

    def test_dephasing_plus_state(self):
        # 2x2 oracle
        p = 0.3
        plus = np.array([1, 1], dtype=complex) / np.sqrt(2)
        assert abs(pure_state_fidelity(dephasing(p), QUBIT_GRAPH, [plus]) - (1 - p)) < 1e-12


class TestAverageFidelity:
    def test_exact_identity_pair(self):
        ch = product_channel([identity_channel([2]), identity_channel([2])], PAIR_GRAPH)
        assert abs(average_fidelity_exact(ch, PAIR_GRAPH) - 1.0) < 1e-12

    def test_exact_fully_depolarizing_pair(self):
        # analytic subset values: (1/9)(4/16 + 1/2 + 1/2 + 1) = 1/4
        ch = product_channel([depolarizing(2, 1.0), depolarizing(2, 1.0)], PAIR_GRAPH)
        assert abs(average_fidelity_exact(ch, PAIR_GRAPH) - 0.25) < 1e-12

    def test_single_connection_reduction(self, rng):
        # |G| = 1 closed form (d F_c + 1) / (d + 1)
        for d in (2, 3):
            graph = ConnectionGraph.single(d)
            ch = random_channel(d, d, 2, rng)
            fc = channel_fidelity(ch, graph, "kraus_trace")
            want = (d * fc + 1) / (d + 1)
            assert abs(average_fidelity_exact(ch, graph) - want) < 1e-12

    def test_mc_identity(self):
        ch = identity_channel([2])
        mean, stderr = average_fidelity_mc(ch, QUBIT_GRAPH, 2000, make_rng(3))
        assert abs(mean - 1.0) < 1e-12
        assert stderr < 1e-12

    def test_mc_constant_integrand(self, rng):
        ch = product_channel([depolarizing(2, 1.0), depolarizing(2, 1.0)], PAIR_GRAPH)
        mean, stderr = average_fidelity_mc(ch, PAIR_GRAPH, 2000, make_rng(4))
        assert abs(mean - 0.25) < 1e-12

    def test_mc_depolarizing_matches_exact(self):
        ch = depolarizing(2, 1.0)
        exact = average_fidelity_exact(ch, QUBIT_GRAPH)
        assert abs(exact - 0.5) < 1e-12
        mean, stderr = average_fidelity_mc(ch, QUBIT_GRAPH, 20000, make_rng(5))
        assert abs(mean - exact) <= 3 * stderr + 1e-12

    def test_mc_matches_exact_random(self, rng):
        cases = [(ConnectionGraph.single(2), random_channel(2, 2, 2, rng)),
                 (ConnectionGraph.single(3), random_channel(3, 3, 3, rng)),
                 (PAIR_GRAPH, random_channel(4, 4, 3, rng)),
                 (ConnectionGraph.diagonal([2, 3]), random_channel(6, 6, 3, rng))]
        for graph, ch in cases:
            exact = average_fidelity_exact(ch, graph)
            mean, stderr = average_fidelity_mc(ch, graph, 50000, make_rng(6))
            assert abs(mean - exact) <= 3 * stderr

    def test_large_d_gap_shrinks(self):
        # |F_bar - F_c| = (1 - F_c) / (d + 1) for one connection; fixed p
        p = 0.3
        gaps = []
        for d in (2, 4, 16):
            graph = ConnectionGraph.single(d)
            ch = depolarizing(d, p)
            gap = abs(average_fidelity_exact(ch, graph)
                      - channel_fidelity(ch, graph, "kraus_trace"))
            gaps.append(gap)
        assert gaps[0] > gaps[1] > gaps[2]

    def test_pure_fidelity_haar_average(self, rng):
        # sampling pure-state fidelities at Haar states estimates the exact average
        ch = random_channel(2, 2, 2, rng)
        exact = average_fidelity_exact(ch, QUBIT_GRAPH)
        vals = [
            pure_state_fidelity(ch, QUBIT_GRAPH, [haar_state(2, stream)])
            for stream in split_rng(make_rng(8), 4000)
        ]
        vals = np.asarray(vals)
        stderr = vals.std(ddof=1) / np.sqrt(len(vals))
        assert abs(vals.mean() - exact) <= 4 * stderr


class TestMinSubspaceFidelity:
    def test_identity(self):
        val, _ = min_subspace_fidelity(
            identity_channel([2]), QUBIT_GRAPH, [np.eye(2)], make_rng(0), restarts=4
        )
        assert abs(val - 1.0) < 1e-9

    def test_qutrit_killer_grid_oracle(self):
        # channel: identity on span{|0>,|1>}, |2> -> |0>
        p01 = np.diag([1.0, 1.0, 0.0]).astype(complex)
        k2 = np.zeros((3, 3), dtype=complex)
        k2[0, 2] = 1.0
        ch = KrausChannel([p01, k2], [3], [3])
        graph = ConnectionGraph.single(3)

        # coarse exhaustive grid over qutrit pure states
        def fid(psi):
            return pure_state_fidelity(ch, graph, [psi])

        grid_best = 1.0
        steps = np.linspace(0, 1, 5)
        phases = np.exp(2j * np.pi * np.linspace(0, 0.75, 4))
        for a in steps:
            for b in steps:
                if a + b > 1:
                    continue
                c = 1 - a - b
                for u in phases:
                    for v in phases:
                        psi = np.array([np.sqrt(a), np.sqrt(b) * u, np.sqrt(c) * v])
                        grid_best = min(grid_best, fid(psi))
        val, states = min_subspace_fidelity(ch, graph, [np.eye(3)], make_rng(23), restarts=8)
        assert val <= grid_best + 1e-9
        assert val < 1e-8
        assert abs(states[0][2]) ** 2 > 1 - 1e-6

    def test_dephasing_equator(self):
        # closed form: F(psi) = 1 - 2 p |alpha|^2 |beta|^2 * 2, minimized at the equator
        p = 0.25
        val, states = min_subspace_fidelity(
            dephasing(p), QUBIT_GRAPH, [np.eye(2)], make_rng(1), restarts=8
        )
        grid = [
            1 - 2 * p * (t * (1 - t)) * 2
            for t in np.linspace(0, 1, 2001)
        ]
        assert abs(val - min(grid)) < 1e-9
        assert abs(val - (1 - p)) < 1e-9
        assert abs(abs(states[0][0]) ** 2 - 0.5) < 1e-4

    def test_restricted_subspace(self):
        # restricted to the good subspace the killer channel looks perfect
        p01 = np.diag([1.0, 1.0, 0.0]).astype(complex)
        k2 = np.zeros((3, 3), dtype=complex)
        k2[0, 2] = 1.0
        ch = KrausChannel([p01, k2], [3], [3])
        graph = ConnectionGraph.single(3)
        basis = np.eye(3, dtype=complex)[:, :2]
        val, _ = min_subspace_fidelity(ch, graph, [basis], make_rng(2), restarts=4)
        assert abs(val - 1.0) < 1e-9

    def test_empty_subspace_rejected(self):
        with pytest.raises(ValueError):
            min_subspace_fidelity(
                identity_channel([2]), QUBIT_GRAPH, [np.zeros((2, 0))], make_rng(0)
            )


class TestCrossedGraph:
    """Sender 0 feeds receiver 1 and vice versa: the input and output block orders
    differ, so every ordering convention in the engine is exercised."""

    def crossed(self, rng):
        graph = ConnectionGraph([(0, 1, 2), (1, 0, 3)])
        parts = [random_channel(2, 2, 2, rng), random_channel(3, 3, 2, rng)]
        return product_channel(parts, graph), graph, parts

    def test_routes_agree(self, rng):
        ch, graph, _ = self.crossed(rng)
        a = channel_fidelity(ch, graph, "definition")
        b = channel_fidelity(ch, graph, "kraus_trace")
        assert abs(a - b) < 1e-10

    def test_product_factorizes(self, rng):
        ch, graph, parts = self.crossed(rng)
        want = channel_fidelity(parts[0], ConnectionGraph.single(2), "kraus_trace") * \
            channel_fidelity(parts[1], ConnectionGraph.single(3), "kraus_trace")
        assert abs(channel_fidelity(ch, graph, "kraus_trace") - want) < 1e-10
        for i, d in enumerate((2, 3)):
            part_fc = channel_fidelity(parts[i], ConnectionGraph.single(d), "kraus_trace")
            assert abs(group_channel_fidelity_kraus(ch, graph, [i]) - part_fc) < 1e-10

    def test_mc_matches_exact(self, rng):
        ch, graph, _ = self.crossed(rng)
        exact = average_fidelity_exact(ch, graph)
        mean, stderr = average_fidelity_mc(ch, graph, 50000, make_rng(12))
        assert abs(mean - exact) <= 3 * stderr


class TestFidelityReport:
    def test_identity_report(self):
        ch = product_channel([identity_channel([2]), identity_channel([2])], PAIR_GRAPH)
        report = channel_fidelity_report(ch, PAIR_GRAPH)
        assert abs(report.global_value - 1) < 1e-12
        assert all(abs(v - 1) < 1e-12 for v in report.local_values)
        report.check()

    def test_report_invariants_random(self, rng):
        for _ in range(5):
            ch, graph = random_pair_channel(rng)
            channel_fidelity_report(ch, graph).check(tol=1e-9)
