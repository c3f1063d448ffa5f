"""Command-line entry point: ``nmfdyn <subcommand> ...``.

Exit codes: 0 success, 1 verification failure, 2 usage or input error,
3 numerical divergence.  All randomness derives from ``--seed`` through a
fixed sub-stream per subcommand, so re-runs are byte-identical.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .cascades import (CascadeDataError, EdgeLaws, LAW_KINDS, build_dataset, load_cascades,
                       save_cascades)
from .evaluation import estimate_probs, network_metrics
from .infmax import InfMaxConfig, pgd_infmax
from .model import ModelFormatError, load_model, save_model
from .network import (InvalidSpecError, KroneckerSpec, NetworkFormatError, generate_kronecker,
                      load_network, save_network, threshold_edges)
from .ode import DivergenceError, IntegratorConfig
from .oracles import CapacityError, UnsupportedLawError
from .training import TrainConfig, train
from .verification import SUITES, run_suite

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3

# one independent random stream per subcommand
STREAMS = {"net-gen": 1, "simulate": 2, "train": 3, "infmax": 4, "verify": 5}


class UsageError(Exception):
    pass


def stream(seed: int, command: str) -> np.random.Generator:
    return np.random.default_rng([STREAMS[command], seed])


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read JSON config {path}: {exc}") from None


def parse_node_list(text: str) -> tuple:
    try:
        ids = tuple(int(v) for v in text.replace(" ", "").split(",") if v != "")
    except ValueError:
        raise UsageError(f"bad node list {text!r}") from None
    if not ids:
        raise UsageError("empty node list")
    return ids


def parse_sources(text: str):
    """Either a count of random source sets or explicit sets separated by ``;``."""
    if ";" not in text and "," not in text:
        try:
            count = int(text)
        except ValueError:
            raise UsageError(f"bad --sources value {text!r}") from None
        if count < 1:
            raise UsageError("--sources must be >= 1")
        return count, None
    sets = [parse_node_list(part) for part in text.split(";") if part.strip()]
    return len(sets), sets


def parse_grid(text: str, T: float) -> np.ndarray:
    """``L`` gives ``t_l = l T / L`` for ``l = 1..L``; a comma list gives explicit times."""
    try:
        if "," in text:
            return np.array([float(v) for v in text.split(",")])
        L = int(text)
    except ValueError:
        raise UsageError(f"bad --grid value {text!r}") from None
    if L < 1:
        raise UsageError("--grid must be >= 1")
    return T * np.arange(1, L + 1) / L


# -- subcommands -------------------------------------------------------------------

def cmd_net_gen(args) -> int:
    spec = KroneckerSpec.from_dict(_read_json(args.spec))
    net = generate_kronecker(spec, stream(args.seed, "net-gen"))
    save_network(net, args.out)
    print(json.dumps({"n": net.n, "edges": net.num_edges}))
    return EXIT_OK


def cmd_simulate(args) -> int:
    net = load_network(args.net)
    rng = stream(args.seed, "simulate")
    count, sets = parse_sources(args.sources)
    if sets is not None:
        for s in sets:
            if max(s) >= net.n or min(s) < 0:
                raise UsageError(f"source node out of range for n={net.n}")
    lo, hi = parse_node_list(args.size_range)
    laws = EdgeLaws.for_network(net, args.law, rng)
    data = build_dataset(net, laws, count, args.per_source, args.T, rng, (lo, hi), sets,
                         threads=args.threads)
    save_cascades(data, args.out)
    print(json.dumps({"cascades": len(data), "n": net.n, "T": args.T}))
    return EXIT_OK


def cmd_train(args) -> int:
    data = load_cascades(args.cascades)
    if len(data) == 0:
        raise UsageError("cascade file is empty")
    cfg = _read_json(args.config) if args.config else {}
    if "integrator" not in cfg:
        cfg["integrator"] = IntegratorConfig(T=data.horizon).to_dict()
    config = TrainConfig.from_dict(cfg)
    if config.integrator.T < data.horizon:
        raise UsageError("integrator horizon is shorter than the cascade horizon")
    support = None
    if args.edges_known:
        truth = load_network(args.edges_known)
        if truth.n != data.n:
            raise UsageError("edge file and cascades disagree on the node count")
        support = truth.edges
    model = train(data, config, stream(args.seed, "train"), support=support)
    model.metadata["seed"] = args.seed
    save_model(model, args.out)
    loss_csv = args.loss_csv or str(args.out) + ".loss.csv"
    lines = ["epoch,mean_loss"] + [f"{k + 1},{v!r}" for k, v in
                                   enumerate(model.metadata["loss_history"])]
    Path(loss_csv).write_text("\n".join(lines) + "\n")
    print(json.dumps({"epochs": config.epochs, "final_loss": (model.metadata["loss_history"] or
                                                               [None])[-1]}))
    return EXIT_OK


def cmd_estimate(args) -> int:
    model = load_model(args.model)
    source = parse_node_list(args.source)
    if max(source) >= model.n or min(source) < 0:
        raise UsageError(f"unknown node id for n={model.n}")
    grid = parse_grid(args.grid, model.T)
    curve = estimate_probs(model, source, grid)
    if args.out:
        curve.to_csv(args.out)
    for t, s in zip(curve.grid, curve.influence()):
        print(f"{float(t)!r}\t{float(s)!r}")
    return EXIT_OK


def cmd_eval_net(args) -> int:
    model = load_model(args.model)
    truth = load_network(args.truth)
    if truth.n != model.n:
        raise UsageError(f"model has n={model.n} but the true network has n={truth.n}")
    A = model.theta.A
    report = network_metrics(threshold_edges(A, args.eps), truth.edges, A, truth.A)
    print(json.dumps(report))
    return EXIT_OK


def cmd_infmax(args) -> int:
    model = load_model(args.model)
    cfg = _read_json(args.config) if args.config else {}
    cfg["n0"] = args.budget
    if args.T is not None:
        cfg["T"] = args.T
    config = InfMaxConfig.from_dict(cfg)
    if config.n0 >= model.n:
        raise UsageError(f"budget must be below n={model.n}")
    result = pgd_infmax(model, config, stream(args.seed, "infmax"))
    text = result.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_verify(args) -> int:
    checks = run_suite(args.suite, args.n, args.seed)
    failed = [c for c in checks if not c.passed]
    print(json.dumps({"suite": args.suite, "n": args.n, "seed": args.seed,
                      "passed": not failed, "checks": [c.to_dict() for c in checks]}))
    if failed:
        print(f"verification failed: {failed[0].name}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


# -- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master random seed (default 0)")
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                        help="worker threads for cascade simulation (default: all cores)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = argparse.ArgumentParser(prog="nmfdyn",
                                description="Neural mean-field dynamics for diffusion networks.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("net-gen", parents=[common], help="generate a Kronecker network")
    s.add_argument("--spec", required=True,
                   help='JSON: {"seed": "hier"|"core"|"rand"|[[a,b],[c,d]], "n" or "iterations", '
                        '"degree" or "target_edges", "rates": [lo, hi]}')
    s.add_argument("--out", required=True, help="edge-list TSV to write")
    s.set_defaults(func=cmd_net_gen)

    s = sub.add_parser("simulate", parents=[common], help="simulate cascades on a network")
    s.add_argument("--net", required=True, help="edge-list TSV")
    s.add_argument("--sources", required=True,
                   help='number of random source sets, or explicit sets like "0,3;5"')
    s.add_argument("--per-source", type=int, default=10, help="cascades per source set")
    s.add_argument("--size-range", default="1,10", help="min,max size of random source sets")
    s.add_argument("--T", type=float, default=20.0, help="observation horizon")
    s.add_argument("--law", choices=LAW_KINDS, default="exp", help="edge delay law")
    s.add_argument("--out", required=True, help="cascade JSONL to write")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("train", parents=[common], help="fit the model to cascades")
    s.add_argument("--cascades", required=True, help="cascade JSONL")
    s.add_argument("--config", help="training config JSON (TrainConfig field names)")
    s.add_argument("--out", required=True, help="model file to write (JSON)")
    s.add_argument("--edges-known", metavar="NET", help="restrict A to the edges of this network")
    s.add_argument("--loss-csv", help="loss history CSV (default: <out>.loss.csv)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("estimate", parents=[common], help="infection probabilities from a model")
    s.add_argument("--model", required=True)
    s.add_argument("--source", required=True, help='comma-separated source nodes, e.g. "3,17"')
    s.add_argument("--grid", default="20",
                   help="L for times l*T/L (l=1..L), or a comma list of times")
    s.add_argument("--out", help="probability curve CSV to write")
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("eval-net", parents=[common], help="compare inferred and true networks")
    s.add_argument("--model", required=True)
    s.add_argument("--truth", required=True, help="true edge-list TSV")
    s.add_argument("--eps", type=float, default=0.01, help="edge threshold on inferred rates")
    s.set_defaults(func=cmd_eval_net)

    s = sub.add_parser("infmax", parents=[common], help="budgeted influence maximization")
    s.add_argument("--model", required=True)
    s.add_argument("--budget", type=int, required=True, help="number of seed nodes n0")
    s.add_argument("--T", type=float, default=None, help="target time (default 10)")
    s.add_argument("--config", help="InfMaxConfig JSON")
    s.add_argument("--out", help="result JSON to write")
    s.set_defaults(func=cmd_infmax)

    s = sub.add_parser("verify", parents=[common], help="run the built-in oracle checks")
    s.add_argument("--suite", choices=SUITES + ("all",), default="all")
    s.add_argument("--n", type=int, default=8, help="network size for the checks")
    s.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: numerical divergence at t={exc.time:.6g}: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (UsageError, InvalidSpecError, NetworkFormatError, CascadeDataError, ModelFormatError,
            CapacityError, UnsupportedLawError, OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
