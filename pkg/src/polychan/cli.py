"""Command-line front end.

Subcommands: ``validate``, ``fidelity``, ``region``, ``verify``, ``twirl``,
``teleport``.  Results are emitted as CSV (default) or JSON; every stochastic
command takes an explicit ``--seed`` so output is byte-reproducible.

Exit codes: 0 ok, 1 failed check or invalid channel, 2 parse/usage error,
3 resource limit exceeded.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import capacity, channels, fidelities, protocols
from .channels import ChannelCompletenessError, ConnectionGraph, KrausChannel
from .errors import CapExceededError, ChannelFormatError
from .linalg import (
    DensityOperator,
    SystemLayout,
    haar_state,
    make_rng,
    maximally_entangled_vector,
    split_rng,
)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_PARSE = 2
EXIT_RESOURCE = 3


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _emit(header: list[str], rows: list[dict], fmt: str, out: str | None,
          command: str) -> None:
    if fmt == "json":
        text = json.dumps({"command": command, "rows": rows}, indent=1)
    else:
        lines = [",".join(header)]
        for row in rows:
            lines.append(",".join(_fmt(row[h]) for h in header))
        text = "\n".join(lines)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _load(path: str, check_completeness: bool = True
          ) -> tuple[KrausChannel, ConnectionGraph | None]:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ChannelFormatError(f"cannot read {path}: {exc}") from exc
    return channels.read_channel(text, check_completeness=check_completeness)


def _need_graph(graph: ConnectionGraph | None) -> ConnectionGraph:
    if graph is None:
        raise ChannelFormatError("channel file declares no connections; this command "
                                 "needs the sender/receiver structure")
    return graph


def _parse_weights(text: str, size: int) -> tuple[float, ...]:
    try:
        weights = tuple(float(x) for x in text.split(","))
    except ValueError as exc:
        raise ChannelFormatError(f"cannot parse weights {text!r}") from exc
    if len(weights) != size:
        raise ChannelFormatError(f"need {size} weights, got {len(weights)}")
    return weights


def cmd_validate(args) -> int:
    ch, graph = _load(args.channel, check_completeness=False)
    report = channels.validate(ch, tol=args.tol_completeness)
    print(f"in_dims: {list(ch.in_layout.leg_dims)}")
    print(f"out_dims: {list(ch.out_layout.leg_dims)}")
    print(f"kraus_count: {ch.num_kraus}")
    if graph is not None:
        conns = [(c.sender, c.receiver, c.dim) for c in graph.connections]
        print(f"connections (sender, receiver, dim): {conns}")
    else:
        print("connections (sender, receiver, dim): none")
    print(f"completeness_defect: {report.defect!r}")
    print(f"status: {'valid' if report.passed else 'invalid'}")
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def cmd_fidelity(args) -> int:
    ch, graph = _load(args.channel)
    graph = _need_graph(graph)
    rng = make_rng(args.seed)
    rows = []

    def add(name, value, method, stderr=""):
        rows.append({"name": name, "value": float(value), "method": method,
                     "stderr": stderr if stderr == "" else float(stderr)})

    add("channel_fidelity", fidelities.channel_fidelity(ch, graph, "definition"),
        "definition")
    add("channel_fidelity", fidelities.channel_fidelity(ch, graph, "kraus_trace"),
        "kraus_trace")
    report = fidelities.channel_fidelity_report(ch, graph)
    for kept in sorted(report.group_values, key=lambda s: (len(s), sorted(s))):
        if len(kept) == graph.size:
            continue
        name = "group_fidelity[" + "+".join(str(i) for i in sorted(kept)) + "]"
        add(name, report.group_values[kept], "kraus_trace")
    add("average_fidelity", fidelities.average_fidelity_exact(ch, graph),
        "subset_decomposition")
    mc_rng, opt_rng = split_rng(rng, 2)
    mean, stderr = fidelities.average_fidelity_mc(ch, graph, args.samples, mc_rng)
    add("average_fidelity", mean, "monte_carlo", stderr)
    min_val, _ = fidelities.min_subspace_fidelity(
        ch, graph, [np.eye(d, dtype=complex) for d in graph.dims], opt_rng,
        restarts=args.restarts,
    )
    add("min_fidelity_upper_bound", min_val, "optimizer")
    _emit(["name", "value", "method", "stderr"], rows, args.format, args.out, "fidelity")
    return EXIT_OK


def cmd_region(args) -> int:
    ch, graph = _load(args.channel)
    graph = _need_graph(graph)
    rng = make_rng(args.seed)
    if args.weights:
        grid = [_parse_weights(args.weights, graph.size)]
    else:
        grid = capacity.simplex_weight_grid(graph.size, args.grid, rng.spawn(1)[0])
    points = [
        capacity.region_sample(ch, graph, args.n, w, stream, restarts=args.restarts)
        for w, stream in zip(grid, rng.spawn(len(grid)))
    ]
    header = (
        [f"weight_{i}" for i in range(graph.size)]
        + [f"rate_{i}" for i in range(graph.size)]
        + [f"raw_rate_{i}" for i in range(graph.size)]
        + ["objective", "blocklength", "best_restart"]
    )
    rows = []
    for p in points:
        row: dict = {}
        for i, w in enumerate(p.weights):
            row[f"weight_{i}"] = float(w)
        for i, r in enumerate(p.achievable):
            row[f"rate_{i}"] = float(r)
        for i, r in enumerate(p.rates):
            row[f"raw_rate_{i}"] = float(r)
        row["objective"] = float(p.objective)
        row["blocklength"] = p.blocklength
        row["best_restart"] = p.restart_index
        rows.append(row)
    _emit(header, rows, args.format, args.out, "region")
    return EXIT_OK


def _verify_fixtures(seed: int) -> list[tuple[str, KrausChannel, ConnectionGraph]]:
    rng = make_rng(seed)
    r1, r2 = split_rng(rng, 2)
    pair = channels.product_channel(
        [channels.dephasing(0.1), channels.dephasing(0.4)],
        ConnectionGraph.diagonal([2, 2]),
    )
    return [
        ("identity_qubit", channels.identity_channel([2]), ConnectionGraph.single(2)),
        ("depolarizing_qubit", channels.depolarizing(2, 0.3), ConnectionGraph.single(2)),
        ("dephasing_qubit", channels.dephasing(0.2), ConnectionGraph.single(2)),
        ("random_qubit", channels.random_channel(2, 2, 2, r1), ConnectionGraph.single(2)),
        ("random_qutrit", channels.random_channel(3, 3, 3, r2), ConnectionGraph.single(3)),
        ("dephasing_pair", pair, ConnectionGraph.diagonal([2, 2])),
    ]


def _check_average_identity(ch, graph, rng, samples, tol_stat, tol_exact):
    # statistical band plus the exact-identity floor; the floor covers channels
    # whose integrand is constant (stderr collapses to rounding noise)
    exact = fidelities.average_fidelity_exact(ch, graph)
    mean, stderr = fidelities.average_fidelity_mc(ch, graph, samples, rng)
    return abs(mean - exact), tol_stat * stderr + tol_exact, "monte_carlo"


def _check_route_equality(ch, graph, tol_exact):
    import itertools as it

    worst = 0.0
    inputs = [DensityOperator.maximally_mixed([d]) for d in graph.dims]
    for r in range(1, graph.size + 1):
        for kept in it.combinations(range(graph.size), r):
            a = fidelities.group_fidelity(ch, inputs, graph, kept)
            b = fidelities.group_channel_fidelity_kraus(ch, graph, kept)
            worst = max(worst, abs(a - b))
    return worst, tol_exact, "exact"


def _random_output_state(ch, graph, rng):
    """Channel output on (reference x output legs) from a random product input."""
    amp_rows = []
    for d in graph.dims:
        z = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
        amp_rows.append(z.reshape(-1) / np.linalg.norm(z))
    vec = amp_rows[0]
    dims = [graph.dims[0], graph.dims[0]]
    for d, amp in zip(graph.dims[1:], amp_rows[1:]):
        vec = np.kron(vec, amp)
        dims += [d, d]
    order = list(range(0, 2 * graph.size, 2)) + list(range(1, 2 * graph.size, 2))
    from .linalg import permute_legs_vector

    vec = permute_legs_vector(vec, dims, order)
    ref_dim = int(np.prod(graph.dims))
    state = DensityOperator.from_vector(
        vec, SystemLayout([ref_dim] + list(graph.in_block_dims))
    )
    return channels.apply_with_reference(ch, state, ref_legs=1)


def _check_dpi_sweep(ch, graph, rng, trials, tol_exact):
    worst = float("inf")
    for stream in split_rng(rng, trials):
        out = _random_output_state(ch, graph, stream)
        split = capacity.BipartiteSplit(out.layout, [0], range(1, out.layout.num_legs))
        post = channels.random_channel(ch.out_dim, ch.out_dim, 2, stream)
        margin = capacity.check_dpi(out, split, post)
        worst = min(worst, margin)
    return -worst, tol_exact, "sweep"


def _check_lemma_sweep(ch, graph, rng, trials, tol_exact):
    worst = -float("inf")
    for stream in split_rng(rng, trials):
        a = _random_output_state(ch, graph, stream)
        b = _random_output_state(ch, graph, stream)
        split = capacity.BipartiteSplit(a.layout, [0], range(1, a.layout.num_legs))
        lhs, rhs = capacity.continuity_gap(a, b, split)
        worst = max(worst, lhs - rhs)
    return worst, tol_exact, "sweep"


def _check_two_design(ch, graph, rng, ensemble_size, tol_exact, tol_stat):
    # exact 2-design equality needs qubit connections AND the full Clifford twirl
    # under the Kraus cap; otherwise fall back to sampled ensembles, for which
    # only the Haar mean over inputs is an identity
    g = graph.size
    exact = (all(d == 2 for d in graph.dims)
             and (len(protocols.clifford_1q()) ** g) * ch.num_kraus <= channels.MAX_KRAUS)
    target = fidelities.average_fidelity_exact(ch, graph)
    if exact:
        twirled = protocols.twirl_channel(ch, graph, [protocols.clifford_1q()] * g)
        worst = 0.0
        for stream in split_rng(rng, 100):
            states = [haar_state(d, stream) for d in graph.dims]
            val = fidelities.pure_state_fidelity(twirled, graph, states)
            worst = max(worst, abs(val - target))
        return worst, tol_exact, "exact"
    size = min(ensemble_size,
               int((channels.MAX_KRAUS / ch.num_kraus) ** (1.0 / g)))
    if size < 1:
        raise CapExceededError(
            f"cannot twirl a {ch.num_kraus}-operator channel under the Kraus cap"
        )
    ensembles = [protocols.haar_ensemble(d, size, rng) for d in graph.dims]
    twirled = protocols.twirl_channel(ch, graph, ensembles)
    vals = []
    for stream in split_rng(rng, 50):
        states = [haar_state(d, stream) for d in graph.dims]
        vals.append(fidelities.pure_state_fidelity(twirled, graph, states))
    vals = np.array(vals)
    stderr = float(np.std(vals, ddof=1) / np.sqrt(len(vals)))
    measured = abs(float(np.mean(vals)) - target)
    return measured, tol_stat * stderr + tol_exact, "statistical (sampled ensemble)"


def _check_phase_average(ch, graph, rng, restarts, tol_exact):
    report = protocols.phase_average_bound(
        ch, graph, [np.eye(d, dtype=complex) for d in graph.dims], rng,
        restarts=restarts, tol=tol_exact,
    )
    return report.bound - report.entanglement_fidelity, tol_exact, "optimizer"


def cmd_verify(args) -> int:
    if args.fixtures:
        cases = _verify_fixtures(args.seed)
    else:
        if not args.channel:
            raise ChannelFormatError("verify needs a channel file or --fixtures")
        ch, graph = _load(args.channel)
        cases = [("channel", ch, _need_graph(graph))]
    rng = make_rng(args.seed)
    rows = []
    all_pass = True
    for name, ch, graph in cases:
        streams = split_rng(rng, 5)
        checks = [
            ("average_mc_vs_exact",
             _check_average_identity(ch, graph, streams[0], args.samples,
                                     args.tol_stat, args.tol_exact)),
            ("fidelity_route_equality", _check_route_equality(ch, graph, args.tol_exact)),
            ("data_processing_inequality",
             _check_dpi_sweep(ch, graph, streams[1], args.trials, args.tol_exact)),
            ("coherent_info_continuity",
             _check_lemma_sweep(ch, graph, streams[2], args.trials, args.tol_exact)),
            ("two_design_twirl",
             _check_two_design(ch, graph, streams[3], args.ensemble_size,
                               args.tol_exact, args.tol_stat)),
            ("phase_average_bound",
             _check_phase_average(ch, graph, streams[4], args.restarts, args.tol_exact)),
        ]
        for check, (measured, threshold, mode) in checks:
            passed = measured <= threshold
            all_pass = all_pass and passed
            rows.append({
                "fixture": name,
                "check": check,
                "mode": mode,
                "measured": float(measured),
                "threshold": float(threshold),
                "status": "pass" if passed else "fail",
            })
    _emit(["fixture", "check", "mode", "measured", "threshold", "status"],
          rows, args.format, args.out, "verify")
    return EXIT_OK if all_pass else EXIT_CHECK_FAILED


def cmd_twirl(args) -> int:
    ch, graph = _load(args.channel)
    graph = _need_graph(graph)
    rng = make_rng(args.seed)
    ensembles = []
    modes = []
    for d in graph.dims:
        if d == 2:
            ensembles.append(protocols.clifford_1q())
            modes.append("clifford (exact 2-design)")
        else:
            ensembles.append(protocols.haar_ensemble(d, args.ensemble_size, rng))
            modes.append(f"sampled haar ({args.ensemble_size} elements)")
    twirled = protocols.twirl_channel(ch, graph, ensembles)
    text = channels.write_channel(twirled, graph)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    for i, mode in enumerate(modes):
        print(f"connection {i}: {mode}", file=sys.stderr)
    return EXIT_OK


def cmd_teleport(args) -> int:
    ch, graph = _load(args.channel)
    graph = _need_graph(graph)
    if graph.size != 1 or ch.in_dim != ch.out_dim:
        raise ChannelFormatError(
            "teleport needs a single-connection channel with equal in/out dimensions"
        )
    d = graph.dims[0]
    resource_in = DensityOperator.from_vector(
        maximally_entangled_vector(d), SystemLayout([d, d])
    )
    resource = channels.apply_with_reference(ch, resource_in, ref_legs=1)
    effective = protocols.teleport_channel(resource)
    text = channels.write_channel(effective, ConnectionGraph.single(d))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polychan",
        description="Analyze multiparty quantum channels: fidelities, rate regions, "
                    "twirling and teleportation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, channel=True):
        if channel:
            p.add_argument("channel", help="channel file (JSON document)")
        p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
        p.add_argument("--format", choices=["csv", "json"], default="csv")
        p.add_argument("--out", default=None, help="write output to this path")

    p = sub.add_parser("validate", help="check a channel file and its completeness")
    p.add_argument("channel")
    p.add_argument("--tol-completeness", type=float, default=1e-9)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("fidelity", help="fidelity table for a channel")
    common(p)
    p.add_argument("--samples", type=int, default=100000, help="Monte Carlo samples")
    p.add_argument("--restarts", type=int, default=32, help="minimizer restarts")
    p.set_defaults(func=cmd_fidelity)

    p = sub.add_parser("region", help="sample achievable rate tuples")
    common(p)
    p.add_argument("--n", type=int, default=1, help="blocklength (<= 3)")
    p.add_argument("--weights", default=None, help="comma-separated weights w1,w2,...")
    p.add_argument("--grid", type=int, default=8, help="number of weight vectors")
    p.add_argument("--restarts", type=int, default=16)
    p.set_defaults(func=cmd_region)

    p = sub.add_parser("verify", help="run the identity/inequality suites")
    p.add_argument("channel", nargs="?", default=None)
    p.add_argument("--fixtures", action="store_true", help="use built-in fixtures")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.add_argument("--out", default=None)
    p.add_argument("--samples", type=int, default=100000)
    p.add_argument("--trials", type=int, default=200, help="sweep size for inequalities")
    p.add_argument("--ensemble-size", type=int, default=64)
    p.add_argument("--restarts", type=int, default=32)
    p.add_argument("--tol-exact", type=float, default=1e-9)
    p.add_argument("--tol-stat", type=float, default=3.0)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("twirl", help="emit the twirled channel file")
    common(p)
    p.add_argument("--ensemble-size", type=int, default=64,
                   help="sampled ensemble size for non-qubit connections")
    p.set_defaults(func=cmd_twirl)

    p = sub.add_parser("teleport", help="emit the teleportation channel built from "
                                        "entanglement shared through this channel")
    common(p)
    p.set_defaults(func=cmd_teleport)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ChannelCompletenessError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    except ChannelFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except CapExceededError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
