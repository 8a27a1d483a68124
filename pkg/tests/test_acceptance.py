"""Acceptance criteria, one test per criterion.

Each test prints a single ``CRITERION n: PASS|FAIL`` line (visible even under
output capture) and then asserts the same condition, so a failing criterion
shows up both in the printed summary and as a failed test.
"""

import json
import time

import networkx as nx
import numpy as np
import pytest

from cinpp import tensor as T
from cinpp.cli import gradcheck_model, main, prepare_gradcheck_model, random_complexes
from cinpp.complex import build_graph, enumerate_induced_cycles, lift, validate
from cinpp.cwl import coloring_equivalent, distinguishable, refine_to_stable
from cinpp.io import (
    cycle_graph,
    fused_chain,
    generate_synthetic,
    load_checkpoint,
    parse_graph_jsonl,
    save_checkpoint,
    write_graph_jsonl,
)
from cinpp.model import CinModel, ComplexBatch, InjectiveStubs, count_messages
from cinpp.train import evaluate

from conftest import brute_force_induced_cycles

# pinned tolerances and budgets
GRAD_TOL = 1e-6
PERM_TOL = 1e-9
LINEAR_R2 = 0.999
TIME_EXPONENT = 1.3
RING_COUNT_MAE = 0.15
CONTROL_BAND = 0.05


@pytest.fixture
def report(capsys):
    def emit(number, passed, detail):
        with capsys.disabled():
            print(f"\nCRITERION {number}: {'PASS' if passed else 'FAIL'} | {detail}")
        return passed

    return emit


def to_nx(g):
    ref = nx.Graph(list(g.edges))
    ref.add_nodes_from(range(g.num_nodes))
    return ref


def from_nx(ref):
    mapping = {v: i for i, v in enumerate(ref.nodes)}
    return build_graph(len(mapping), [(mapping[u], mapping[v]) for u, v in ref.edges])


def r_squared(x, y):
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    return 1.0 - resid @ resid / np.sum((y - y.mean()) ** 2)


def test_criterion_1_lifting_oracle(report):
    start = time.perf_counter()
    mismatches, checked = 0, 0
    for ref in nx.graph_atlas_g()[1:]:  # every graph on 1..7 vertices up to isomorphism
        if not nx.is_connected(ref):
            continue
        g = from_nx(ref)
        ours = {frozenset(c) for c in enumerate_induced_cycles(g, max(3, g.num_nodes))}
        mismatches += ours != brute_force_induced_cycles(g, g.num_nodes)
        checked += 1
    rng = np.random.default_rng(2024)
    for _ in range(500):
        n = int(rng.integers(3, 13))
        p = float(rng.uniform(0.1, 0.7))
        g = build_graph(n, [(u, v) for u in range(n) for v in range(u + 1, n) if rng.random() < p])
        ours = {frozenset(c) for c in enumerate_induced_cycles(g, max(3, n))}
        mismatches += ours != brute_force_induced_cycles(g, n)
        checked += 1
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and elapsed < 120
    report(1, ok, f"{checked} graphs, {mismatches} mismatches, {elapsed:.1f}s (budget 120s)")
    assert ok


def adjacency_violations(cx):
    bad = 0
    for c in cx.cells:
        s = c.id
        bad += sum(s not in cx.coboundary(t) for t in cx.boundary(s))
        bad += sum(s not in cx.boundary(t) for t in cx.coboundary(s))
        for t, d in cx.upper_neighbors(s):
            bad += t == s or d not in cx.coboundary(s) or d not in cx.coboundary(t)
            bad += (s, d) not in cx.upper_neighbors(t)
        for t, d in cx.lower_neighbors(s):
            bad += t == s or d not in cx.boundary(s) or d not in cx.boundary(t)
            bad += (s, d) not in cx.lower_neighbors(t)
        # every pair sharing a co-boundary (boundary) cell must be listed with that witness
        for d in cx.coboundary(s):
            bad += sum((t, d) not in cx.upper_neighbors(s) for t in cx.boundary(d) if t != s)
        for d in cx.boundary(s):
            bad += sum((t, d) not in cx.lower_neighbors(s) for t in cx.coboundary(d) if t != s)
    return bad + len(validate(cx))


def test_criterion_2_adjacency_invariants(report):
    rng = np.random.default_rng(7)
    violations = 0
    for _ in range(1000):
        n = int(rng.integers(1, 13))
        p = float(rng.uniform(0.1, 0.6))
        g = build_graph(n, [(u, v) for u in range(n) for v in range(u + 1, n) if rng.random() < p])
        violations += adjacency_violations(lift(g, int(rng.integers(3, 9))))
    ok = violations == 0
    report(2, ok, f"1000 complexes, {violations} violations")
    assert ok


def test_criterion_3_wl_hierarchy(report):
    start = time.perf_counter()
    c6 = build_graph(6, cycle_graph(6))
    two_c3 = build_graph(6, cycle_graph(3) + cycle_graph(3, 3))
    wl_equal = nx.weisfeiler_lehman_graph_hash(to_nx(c6)) == nx.weisfeiler_lehman_graph_hash(to_nx(two_c3))
    cwl = {s: distinguishable(lift(c6, 6), lift(two_c3, 6), s) for s in ("cin", "cinpp")}
    elapsed = time.perf_counter() - start
    ok = wl_equal and all(cwl.values()) and elapsed < 1.0
    report(3, ok, f"1-WL equal={wl_equal}, CWL distinguishes={cwl}, {elapsed:.3f}s (budget 1s)")
    assert ok


def test_criterion_4_fused_chain_convergence(report):
    start = time.perf_counter()
    rows = {}
    for n in range(2, 7):
        cx = lift(fused_chain(n), 6)
        rows[n] = tuple(refine_to_stable(cx, scheme=s).dim_stable_at[2] for s in ("cin", "cinpp"))
    elapsed = time.perf_counter() - start
    failing = [n for n, (cin, cinpp) in rows.items() if not cinpp < cin]
    ok = not failing and elapsed < 10
    detail = ", ".join(f"n={n}: CIN {a} / CIN++ {b}" for n, (a, b) in rows.items())
    report(4, ok, f"ring stabilisation {detail}; not strict at {failing}; {elapsed:.2f}s")
    assert ok


def test_criterion_5_footprint_equivalence(report):
    start = time.perf_counter()
    rng = np.random.default_rng(11)
    failures, layers = 0, 0
    corpus = []
    for _ in range(50):
        n = int(rng.integers(4, 12))
        p = float(rng.uniform(0.2, 0.6))
        corpus.append(lift(build_graph(n, [(u, v) for u in range(n) for v in range(u + 1, n)
                                           if rng.random() < p]), 6))
    for scheme in ("cin", "cinpp"):
        for cx in corpus:
            res = refine_to_stable(cx, scheme=scheme)
            prints = InjectiveStubs(scheme).footprints(cx, res.iterations)
            for layer, coloring in enumerate(res.history):
                failures += not coloring_equivalent(prints[layer], coloring)
                layers += 1
    elapsed = time.perf_counter() - start
    ok = failures == 0 and elapsed < 60
    report(5, ok, f"{layers} (complex, scheme, layer) comparisons, {failures} failures, {elapsed:.1f}s")
    assert ok


def test_criterion_6_gradient_check(report):
    start = time.perf_counter()
    cxs = random_complexes(3, 7, 0.45, seed=0)
    model = prepare_gradcheck_model(2, 8, 0, cxs)
    # 32 entries sampled per parameter tensor (every entry of smaller tensors)
    reports = gradcheck_model(model, cxs, max_entries=32, tol=GRAD_TOL, seed=0)
    elapsed = time.perf_counter() - start
    worst = max(r.max_rel_error for r in reports)
    checked = sum(r.checked for r in reports)
    ok = all(r.passed for r in reports) and worst < GRAD_TOL and elapsed < 120
    report(6, ok, f"max rel error {worst:.2e} over {checked} entries (tol {GRAD_TOL}), {elapsed:.1f}s")
    assert ok


def test_criterion_7_permutation_invariance(report):
    start = time.perf_counter()
    cxs = random_complexes(100, 8, 0.4, seed=3)
    model = CinModel(node_dim=3, edge_dim=2, hidden=32, layers=3, seed=3)
    model.train()
    with T.no_grad():
        model.forward(cxs[:32])
    model.eval()
    rng = np.random.default_rng(5)
    worst = 0.0
    with T.no_grad():
        for cx in cxs:
            x = model.featurize(ComplexBatch([cx]))
            base = model.forward(ComplexBatch([cx]), x).data
            for _ in range(5):
                perms = [rng.permutation(n) for n in cx.counts]
                xp = []
                for k in range(3):
                    arr = np.empty_like(x[k])
                    arr[perms[k]] = x[k]
                    xp.append(arr)
                out = model.forward(ComplexBatch([cx.permute(perms)]), xp).data
                worst = max(worst, float(np.max(np.abs(out - base))))
    elapsed = time.perf_counter() - start
    ok = worst <= PERM_TOL and elapsed < 60
    report(7, ok, f"max |delta| {worst:.2e} over 100x5 relabelings (tol {PERM_TOL}), {elapsed:.1f}s")
    assert ok


def test_criterion_8_complexity(report):
    start = time.perf_counter()
    lengths = np.array([2, 4, 8, 16, 32, 64])
    counts = {"boundary": [], "upper": [], "lower": []}
    seconds = []
    model = CinModel(hidden=64, layers=3).train()
    params = model.parameters()
    for n in lengths:
        cx = lift(fused_chain(int(n)), 6)
        for kind, c in count_messages(cx).items():
            counts[kind].append(c)
        batch = ComplexBatch([cx])
        inputs = model.featurize(batch)
        best = np.inf
        for _ in range(5):
            t0 = time.perf_counter()
            for p in params.values():
                p.grad = None
            T.backward(T.sum_all(model.forward(batch, inputs)))
            best = min(best, time.perf_counter() - t0)
        seconds.append(best)
    totals = np.sum([counts[k] for k in counts], axis=0)
    fits = {k: r_squared(lengths, np.array(v, float)) for k, v in counts.items()}
    fits["total"] = r_squared(lengths, totals.astype(float))
    exponent = np.polyfit(np.log(lengths), np.log(seconds), 1)[0]
    elapsed = time.perf_counter() - start
    ok = min(fits.values()) > LINEAR_R2 and exponent < TIME_EXPONENT and elapsed < 300
    fit_text = ", ".join(f"{k} R2={v:.6f}" for k, v in fits.items())
    report(8, ok, f"{fit_text}; time exponent {exponent:.3f} (< {TIME_EXPONENT}); {elapsed:.1f}s")
    assert ok


# -- criteria 9 and 10 share one end-to-end CLI run -------------------------------------

# 3 layers x 64 with the default plateau protocol.  Both runs (main and shuffled
# control) must fit the 30 minute budget together, so each is capped at 100 of
# the allowed 200 epochs.
RING_COUNT_EPOCHS = 100
RING_COUNT_ARGS = ["--layers", "3", "--hidden", "64", "--max-epochs", str(RING_COUNT_EPOCHS), "--seed", "0"]


@pytest.fixture(scope="module")
def ring_count_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("ring-count")
    ds = generate_synthetic("ring-count", {"n_graphs": 2000}, seed=0)
    data = root / "ring-count.jsonl"
    write_graph_jsonl(ds.graphs, data)
    shuffled = root / "ring-count-shuffled.jsonl"
    perm = T.make_rng(0, "control-shuffle").permutation(len(ds))
    control_graphs = [
        build_graph(g.num_nodes, g.edges, g.node_features, g.edge_features, target=ds.targets[j])
        for g, j in zip(ds.graphs, perm)
    ]
    write_graph_jsonl(control_graphs, shuffled)
    runs = {}
    for name, path in (("main", data), ("control", shuffled)):
        out = root / name
        t0 = time.perf_counter()
        code = main(["--deterministic", "train", "--data", str(path), *RING_COUNT_ARGS, "--out", str(out)])
        runs[name] = {"code": code, "dir": out, "data": path, "seconds": time.perf_counter() - t0,
                      "metrics": json.loads((out / "metrics.json").read_text()),
                      "config": json.loads((out / "config.json").read_text())}
    return runs


def predict_mean_baseline(run):
    """MAE on the test split of a constant prediction equal to the training mean."""
    ds = parse_graph_jsonl(run["data"])
    order = T.make_rng(0, "splits").permutation(len(ds))
    n_train = int(round(0.8 * len(ds)))
    n_val = int(round(0.9 * len(ds))) - n_train
    train, test = order[:n_train], order[n_train + n_val:]
    y = ds.targets.ravel()
    return float(np.mean(np.abs(y[test] - y[train].mean())))


@pytest.mark.slow
def test_criterion_9_learning_sanity(report, ring_count_runs):
    main_run, control = ring_count_runs["main"], ring_count_runs["control"]
    test_mae = main_run["metrics"]["test_metrics"]["mae"]
    epochs = len(main_run["metrics"]["history"])
    control_mae = control["metrics"]["test_metrics"]["mae"]
    baseline = predict_mean_baseline(control)
    gap = abs(control_mae - baseline) / baseline
    seconds = main_run["seconds"] + control["seconds"]
    ok = (main_run["code"] == 0 and control["code"] == 0 and test_mae < RING_COUNT_MAE
          and epochs <= 200 and gap <= CONTROL_BAND and seconds < 1800)
    report(9, ok, f"test MAE {test_mae:.4f} (< {RING_COUNT_MAE}) after {epochs} epochs; "
                  f"shuffled control {control_mae:.4f} vs predict-mean {baseline:.4f} "
                  f"({100 * gap:.1f}% apart, band {100 * CONTROL_BAND:.0f}%); "
                  f"both runs {seconds / 60:.1f} min (budget 30)")
    assert ok


def replay_plateau(val_losses, lr, patience, factor, threshold, stop_lr):
    """The plateau rule written out again: one lr per epoch, then the stopping lr."""
    trace, best, bad = [], None, 0
    for loss in val_losses:
        trace.append(lr)
        if best is None or loss < best - threshold * abs(best):
            best, bad = loss, 0
        else:
            bad += 1
            if bad >= patience:
                lr, bad = lr * factor, 0
        if lr <= stop_lr:
            break
    return trace, lr


@pytest.mark.slow
def test_criterion_10_protocol_conformance(report, ring_count_runs, tmp_path):
    run = ring_count_runs["main"]
    cfg = run["config"]["train"]
    history = run["metrics"]["history"]
    protocol = (cfg["plateau_patience"], cfg["lr_halve_factor"], cfg["early_stop_lr"]) == (20, 0.5, 1e-5)
    trace, final_lr = replay_plateau([h["val_loss"] for h in history], cfg["lr"], cfg["plateau_patience"],
                                     cfg["lr_halve_factor"], cfg["plateau_threshold"], cfg["early_stop_lr"])
    replay_ok = trace == [h["lr"] for h in history] and final_lr == history[-1]["next_lr"]
    stopped_right = (run["metrics"]["stop_reason"] == "early_stop_lr") == (final_lr <= 1e-5)

    # the checkpoint reproduces the reported test metric, and survives another round trip
    model, _, _ = load_checkpoint(run["dir"] / "checkpoint.bin")
    ds = parse_graph_jsonl(run["data"])
    order = T.make_rng(0, "splits").permutation(len(ds))
    test_idx = sorted(order[int(round(0.9 * len(ds))):].tolist())
    test_x = [lift(ds.graphs[i], 6) for i in test_idx]
    before = model.predict(test_x)
    save_checkpoint(model, None, tmp_path / "again.bin")
    after = load_checkpoint(tmp_path / "again.bin")[0].predict(test_x)
    mae = evaluate(model, test_x, ds.targets[test_idx])["mae"]
    bit_exact = np.array_equal(before, after) and mae == run["metrics"]["test_metrics"]["mae"]

    ok = protocol and replay_ok and stopped_right and bit_exact
    halvings = sum(1 for a, b in zip(trace, trace[1:]) if b < a)
    report(10, ok, f"lr trace replay {'matches' if replay_ok else 'differs'} over {len(history)} epochs "
                   f"({halvings} halvings, stop {run['metrics']['stop_reason']}); "
                   f"checkpoint bit-exact={bit_exact}")
    assert ok
