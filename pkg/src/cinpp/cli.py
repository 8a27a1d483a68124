"""Command line interface.

Exit codes: 0 ok, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import tensor as T
from .complex import build_graph, lift, validate
from .cwl import RefinementScheme, distinguishable, initial_coloring, refine_to_stable
from .exceptions import (
    BadParams,
    CinppError,
    CorruptBlob,
    EmptyDataset,
    EmptySplit,
    GraphError,
    Malformed,
    MissingFeatures,
    NonFinite,
    NotConverged,
    VersionMismatch,
)
from .io import (
    generate_synthetic,
    graph_from_json,
    parse_graph_jsonl,
    save_checkpoint,
    serialize_complex,
    write_graph_jsonl,
)
from .model import CinModel, ComplexBatch, ModelConfig, count_messages, input_features
from .train import PRESETS, TASKS, TrainConfig, TrainState, train_loop

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
THREADS_ENV = "CINPP_NUM_THREADS"

log = logging.getLogger("cinpp")

DATA_ERRORS = (GraphError, Malformed, EmptyDataset, EmptySplit, MissingFeatures,
               VersionMismatch, CorruptBlob, OSError, json.JSONDecodeError)
NUMERIC_ERRORS = (NonFinite, NotConverged, FloatingPointError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_graphs(path):
    """A single JSON graph document or a JSON-Lines dataset."""
    path = Path(path)
    if path.suffix == ".jsonl":
        return parse_graph_jsonl(path).graphs
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise Malformed(f"{path}: invalid JSON ({exc.msg})", exc.lineno) from None
    return [graph_from_json(obj)]


def _emit(obj, out):
    text = json.dumps(obj, indent=2)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


# -- subcommands ------------------------------------------------------------------

def cmd_lift(args):
    graphs = _load_graphs(args.graph)
    out = []
    for g in graphs:
        cx = lift(g, args.max_ring_size)
        problems = validate(cx)
        if problems:
            raise GraphError("lifted complex failed validation: " + "; ".join(problems))
        out.append(serialize_complex(cx))
    _emit(out[0] if len(out) == 1 else out, args.out)
    return EXIT_OK


def _features(cx):
    g = cx.source_graph
    if g.node_features is None and g.edge_features is None:
        raise MissingFeatures(f"--init features needs node or edge features")
    nd = 1 if g.node_features is None else g.node_features.shape[1]
    ed = 1 if g.edge_features is None else g.edge_features.shape[1]
    return input_features(cx, nd, ed)


def cmd_cwl_test(args):
    (ga,), (gb,) = _load_graphs(args.graph_a), _load_graphs(args.graph_b)
    a, b = lift(ga, args.max_ring_size), lift(gb, args.max_ring_size)
    fa = fb = None
    if args.init == "features":
        fa, fb = _features(a), _features(b)
    result = {
        "scheme": args.scheme,
        "init": args.init,
        "max_ring_size": args.max_ring_size,
        "distinguishable": distinguishable(a, b, args.scheme, args.init, fa, fb),
    }
    if args.stats:
        for name, cx, feats in (("a", a, fa), ("b", b, fb)):
            start = None if feats is None else initial_coloring(cx, "features", feats)
            res = refine_to_stable(cx, start, args.scheme)
            result[f"stats_{name}"] = {
                "counts": list(cx.counts),
                "iterations": res.iterations,
                "dim_stable_at": list(res.dim_stable_at),
                "num_colors": res.coloring.num_classes(),
            }
    _emit(result, None)
    return EXIT_OK


def _parse_splits(spec, n, seed):
    if spec is None:
        spec = "0.8,0.1,0.1"
    if os.path.exists(spec):
        with open(spec, encoding="utf-8") as fh:
            idx = json.load(fh)
        missing = {"train", "val"} - set(idx)
        if missing:
            raise Malformed(f"splits file lacks {sorted(missing)}")
        for name, ids in idx.items():
            if any(not 0 <= int(i) < n for i in ids):
                raise Malformed(f"split {name!r} has indices outside 0..{n - 1}")
        return {k: [int(i) for i in v] for k, v in idx.items()}
    try:
        ratios = [float(r) for r in spec.split(",")]
    except ValueError:
        raise BadParams(f"--splits must be a JSON file or comma-separated ratios, got {spec!r}") from None
    if len(ratios) not in (2, 3) or any(r < 0 for r in ratios) or not np.isclose(sum(ratios), 1.0):
        raise BadParams("--splits ratios must be 2 or 3 non-negative numbers summing to 1")
    order = T.make_rng(seed, "splits").permutation(n)
    cuts = np.round(np.cumsum(ratios)[:-1] * n).astype(int)
    parts = np.split(order, cuts)
    names = ["train", "val", "test"][: len(parts)]
    return {name: sorted(p.tolist()) for name, p in zip(names, parts)}


def cmd_train(args):
    data = parse_graph_jsonl(args.data)
    if data.targets is None:
        raise Malformed(f"{args.data}: graphs carry no targets")
    splits = _parse_splits(args.splits, len(data), args.seed)
    for name in ("train", "val"):
        if not splits.get(name):
            raise EmptySplit(f"split {name!r} is empty")

    preset = PRESETS.get(args.preset, {"model": {}, "train": {}})
    g0 = data.graphs[0]
    model_kw = dict(
        node_dim=1 if g0.node_features is None else g0.node_features.shape[1],
        edge_dim=1 if g0.edge_features is None else g0.edge_features.shape[1],
        out_dim=data.targets.shape[1],
        seed=args.seed,
    )
    model_kw.update(preset["model"])
    for key in ("layers", "hidden", "readout", "dropout"):
        if getattr(args, key) is not None:
            model_kw[key] = getattr(args, key)
    train_kw = dict(preset["train"])
    train_kw.update(seed=args.seed)
    for key in ("lr", "batch_size", "max_epochs", "weight_decay", "task"):
        if getattr(args, key) is not None:
            train_kw[key] = getattr(args, key)
    mcfg = ModelConfig(**model_kw)
    tcfg = TrainConfig(**train_kw)

    complexes = [lift(g, args.max_ring_size) for g in data.graphs]
    sets = {name: ([complexes[i] for i in ids], data.targets[ids])
            for name, ids in splits.items() if ids}
    model = CinModel(mcfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    resolved = {
        "data": {"path": data.path, "sha256": data.sha256, "num_graphs": len(data)},
        "splits": {k: len(v) for k, v in splits.items()},
        "max_ring_size": args.max_ring_size,
        "preset": args.preset,
        "deterministic": args.deterministic,
        "model": mcfg.to_dict(),
        "train": tcfg.to_dict(),
    }
    (out / "config.json").write_text(json.dumps(resolved, indent=2) + "\n", encoding="utf-8")
    report = train_loop(model, sets, tcfg)
    metrics = {
        "history": report.history,
        "best_epoch": report.best_epoch,
        "best_val_metric": report.best_val_metric,
        "test_metrics": report.test_metrics,
        "stop_reason": report.stop_reason,
        "wall_time": report.wall_time,
    }
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2) + "\n", encoding="utf-8")
    state = TrainState(lr=report.history[-1]["next_lr"], best_metric=report.best_val_metric,
                       best_epoch=report.best_epoch)
    save_checkpoint(model, state, out / "checkpoint.bin", extra={"max_ring_size": args.max_ring_size})
    summary = {"best_epoch": report.best_epoch, "best_val_metric": report.best_val_metric,
               "test_metrics": report.test_metrics, "stop_reason": report.stop_reason}
    _emit(summary, None)
    return EXIT_OK


def random_complexes(count, num_nodes, p, seed, node_dim=3, edge_dim=2, max_ring_size=6):
    """Random Erdos-Renyi graphs with Gaussian features, lifted."""
    out = []
    for i in range(count):
        rng = T.make_rng(seed, "random-complex", i)
        edges = [(u, v) for u in range(num_nodes) for v in range(u + 1, num_nodes) if rng.random() < p]
        g = build_graph(num_nodes, edges, rng.normal(size=(num_nodes, node_dim)),
                        rng.normal(size=(len(edges), edge_dim)))
        out.append(lift(g, max_ring_size))
    return out


def gradcheck_model(model, complexes, max_entries=None, tol=1e-6, seed=0):
    """Eval-mode finite-difference check of ``sum(model(cx))`` per complex."""
    model.eval()
    reports = []
    for i, cx in enumerate(complexes):
        batch = ComplexBatch([cx])
        inputs = model.featurize(batch)
        rep = T.finite_difference_check(
            lambda: T.sum_all(model.forward(batch, inputs)),
            model.parameters().values(),
            tol=tol,
            max_entries=max_entries,
            rng=T.make_rng(seed, "gradcheck-sample", i),
        )
        reports.append(rep)
    return reports


def prepare_gradcheck_model(layers, hidden, seed, complexes, node_dim=3, edge_dim=2):
    """A model with non-trivial normalisation statistics and affine terms."""
    model = CinModel(node_dim=node_dim, edge_dim=edge_dim, hidden=hidden, layers=layers, seed=seed)
    model.train()
    with T.no_grad():
        for _ in range(3):
            model.forward(complexes)
    rng = T.make_rng(seed, "gradcheck-perturb")
    for p in model.parameters().values():
        if p.name.endswith(("gamma", "beta", "bias", "eps")):
            p.data[...] = rng.normal(scale=0.3, size=p.shape) + (1.0 if p.name.endswith("gamma") else 0.0)
    return model.eval()


def cmd_gradcheck(args):
    cxs = random_complexes(args.complexes, args.nodes, args.edge_prob, args.seed)
    model = prepare_gradcheck_model(args.layers, args.hidden, args.seed, cxs)
    start = time.perf_counter()
    reports = gradcheck_model(model, cxs, args.max_entries or None, args.tol, args.seed)
    worst = max(r.max_rel_error for r in reports)
    summary = {
        "complexes": [list(c.counts) for c in cxs],
        "max_rel_error": worst,
        "checked": sum(r.checked for r in reports),
        "skipped": sum(r.skipped for r in reports),
        "tol": args.tol,
        "passed": all(r.passed for r in reports),
        "seconds": time.perf_counter() - start,
    }
    _emit(summary, None)
    return EXIT_OK if summary["passed"] else EXIT_NUMERIC


def cmd_profile(args):
    from .io import fused_chain

    model = CinModel(hidden=args.hidden, layers=args.layers, seed=args.seed)
    rows = []
    for n in args.lengths:
        cx = lift(fused_chain(n), 6)
        batch = ComplexBatch([cx] * args.copies)
        model.train()
        t0 = time.perf_counter()
        for _ in range(args.repeats):
            for p in model.parameters().values():
                p.grad = None
            T.backward(T.sum_all(model.forward(batch)))
        elapsed = (time.perf_counter() - t0) / args.repeats
        rows.append({"n": n, "counts": list(cx.counts), "messages": count_messages(cx),
                     "seconds_per_step": elapsed})
    _emit(rows, args.out)
    return EXIT_OK


def cmd_synth(args):
    params = json.loads(args.params) if args.params else {}
    if args.n is not None:
        params["n_graphs"] = args.n
    ds = generate_synthetic(args.family, params, args.seed)
    write_graph_jsonl(ds.graphs, args.out)
    print(json.dumps({"family": args.family, "graphs": len(ds), "out": str(args.out)}))
    return EXIT_OK


# -- wiring -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cinpp", description="Cell complex lifting, CWL tests and CIN++ training.")
    parser.add_argument("--deterministic", action="store_true",
                        help="single-threaded numeric kernels")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("lift", help="lift a graph (or JSONL dataset) to a cell complex")
    p.add_argument("graph")
    p.add_argument("--max-ring-size", type=int, default=6)
    p.add_argument("--out")
    p.set_defaults(func=cmd_lift)

    p = sub.add_parser("cwl-test", help="CWL distinguishability of two graphs")
    p.add_argument("graph_a")
    p.add_argument("graph_b")
    p.add_argument("--max-ring-size", type=int, default=6)
    p.add_argument("--scheme", choices=["cin", "cinpp"], default="cinpp")
    p.add_argument("--init", choices=["uniform", "features"], default="uniform")
    p.add_argument("--stats", action="store_true",
                   help="per-dimension stabilisation iterations as JSON")
    p.set_defaults(func=cmd_cwl_test)

    p = sub.add_parser("train", help="train a CIN++ model on a JSONL dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--splits", help="JSON file of index lists or ratios such as 0.8,0.1,0.1")
    p.add_argument("--max-ring-size", type=int, default=6)
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--layers", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--readout", choices=["sum", "mean"])
    p.add_argument("--dropout", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--task", choices=sorted(TASKS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full model")
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--hidden", type=int, default=8)
    p.add_argument("--complexes", type=int, default=3)
    p.add_argument("--nodes", type=int, default=7)
    p.add_argument("--edge-prob", type=float, default=0.45)
    p.add_argument("--max-entries", type=int, default=32,
                   help="entries sampled per parameter tensor (0 = all)")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("profile", help="message counts and step timing on fused-ring chains")
    p.add_argument("--lengths", type=int, nargs="+", default=[2, 4, 8, 16, 32, 64])
    p.add_argument("--layers", type=int, default=3)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--copies", type=int, default=1)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("synth", help="write a synthetic JSONL dataset")
    p.add_argument("family", choices=["ring-count", "fused-chain", "cycle-pair"])
    p.add_argument("--n", type=int, help="number of graphs (ring-count)")
    p.add_argument("--params", help="family parameters as a JSON object")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def _thread_limit(args):
    if args.deterministic:
        return 1
    value = os.environ.get(THREADS_ENV)
    if value is None:
        return None
    try:
        n = int(value)
    except ValueError:
        raise BadParams(f"{THREADS_ENV} must be an integer, got {value!r}") from None
    if n < 1:
        raise BadParams(f"{THREADS_ENV} must be >= 1")
    return n


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        limit = _thread_limit(args)
        if limit is not None:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=limit):
                return args.func(args)
        return args.func(args)
    except (BadParams, ValueError) as exc:
        if isinstance(exc, DATA_ERRORS):
            print(f"data error: {exc}", file=sys.stderr)
            return EXIT_DATA
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NUMERIC_ERRORS as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except CinppError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
