"""Acceptance suite: one test per criterion, each reporting PASS or FAIL.

Run with ``pytest tests/test_acceptance.py -v``; the summary lines are
repeated at the end of the pytest output under ``acceptance``.
"""

import csv
import statistics
import time

import numpy as np
import pytest

from codepersona import blocks
from codepersona.autograd import PRIMITIVES, Graph, Parameter
from codepersona.checkpoint import Checkpoint
from codepersona.corpus import ProjectCorpus, shared_matrix
from codepersona.flops import flops_forward_per_token, flops_train_step
from codepersona.harness import ExperimentConfig, run_experiment, summarize
from codepersona.metrics import abstract_match, bleu4, exact_match, kruskal_wallis
from codepersona.model import REFERENCE_CONFIG, ModelConfig, build_model, count_parameters, pad_batch
from codepersona.optim import Adam
from codepersona.strategies import (
    ALL_STRATEGIES,
    StrategyKind,
    apply_freeze_plan,
    attach_prefix,
    drift_report,
    init_prefix,
    make_freeze_plan,
)
from codepersona.bpe import train_vocab
from codepersona.synth import generate_synthetic_projects

from conftest import check_grads, report_criterion
from test_metrics import brute_bleu4


# --- 1. parameter census ----------------------------------------------------


def test_criterion_1_reference_census():
    t0 = time.perf_counter()
    total = count_parameters(REFERENCE_CONFIG, "Custom")[0]
    fractions = {s: count_parameters(REFERENCE_CONFIG, s, 200) for s in ("Custom", "L-EO", "L-LDB", "Prefix")}
    frac = {s: tr / tot for s, (tot, tr) in fractions.items()}
    prefix_count = fractions["Prefix"][1]
    seconds = time.perf_counter() - t0
    ok = (
        abs(total - 406e6) / 406e6 <= 0.03
        and frac["Custom"] == 1.0
        and abs(frac["L-EO"] - 0.13) <= 0.005
        and abs(frac["L-LDB"] - 0.042) <= 0.005
        and abs(frac["Prefix"] - 0.024) <= 0.003
        and prefix_count == 9_830_400
        and seconds < 1.0
    )
    detail = (f"total {total:,}, L-EO {frac['L-EO']:.4f}, L-LDB {frac['L-LDB']:.4f}, "
              f"Prefix {frac['Prefix']:.4f} ({prefix_count:,}), {seconds:.3f}s")
    assert report_criterion(1, ok, detail)


# --- 2. gradients -----------------------------------------------------------


def _primitive_cases(rng):
    def p(shape, name, scale=1.0):
        return Parameter(name, "test", rng.normal(size=shape) * scale)

    a, b = p((2, 3, 4), "a"), p((2, 4, 5), "b")
    w = p((3, 4), "w")
    bias = p((4,), "bias")
    gamma, beta = p((4,), "gamma"), p((4,), "beta")
    emb = p((6, 3), "emb")
    logits = p((2, 3, 5), "logits")
    c1, c2 = p((2, 3), "c1"), p((2, 2), "c2")
    mix = rng.normal(size=(3, 4))
    return {
        "matmul": (lambda g: g.sum(g.matmul(a, b)), [a, b]),
        "add": (lambda g: g.sum(g.mul(g.add(w, bias), mix)), [w, bias]),
        "mul": (lambda g: g.sum(g.mul(w, w)), [w]),
        "scale": (lambda g: g.sum(g.mul(g.scale(w, -1.3), mix)), [w]),
        "sum": (lambda g: g.sum(g.mul(g.sum(w, axis=0), bias)), [w, bias]),
        "softmax": (lambda g: g.sum(g.mul(g.softmax(w), mix)), [w]),
        "layernorm": (lambda g: g.sum(g.mul(g.layernorm(w, gamma, beta), mix)), [w, gamma, beta]),
        "gelu": (lambda g: g.sum(g.mul(g.gelu(w), mix)), [w]),
        "embedding-lookup": (lambda g: g.sum(g.mul(g.embedding(emb, np.array([[1, 4, 1], [0, 5, 1]])),
                                                   rng_fixed(2, 3, 3))), [emb]),
        "concat": (lambda g: g.sum(g.mul(g.concat([c1, c2], axis=1), rng_fixed(2, 5))), [c1, c2]),
        "slice": (lambda g: g.sum(g.mul(g.slice(w, (slice(1, 3), slice(None))), rng_fixed(2, 4))), [w]),
        "reshape": (lambda g: g.sum(g.mul(g.reshape(w, (6, 2)), rng_fixed(6, 2))), [w]),
        "transpose": (lambda g: g.sum(g.mul(g.transpose(w, (1, 0)), rng_fixed(4, 3))), [w]),
        "cross-entropy": (lambda g: g.sum(g.cross_entropy(logits, np.array([[1, 4, -100], [0, -100, 2]]))),
                          [logits]),
    }


def rng_fixed(*shape):
    return np.random.default_rng(sum(shape)).normal(size=shape)


def test_criterion_2_gradients():
    t0 = time.perf_counter()
    cases = _primitive_cases(np.random.default_rng(7))
    errors = {name: check_grads(build, params) for name, (build, params) in cases.items()}
    cfg = ModelConfig(vocab_size=12, d_model=4, num_heads=2, ffn_dim=6, encoder_layers=1,
                      decoder_layers=1, max_positions=6)
    m = build_model(cfg, seed=11, init_std=0.5)
    src = np.array([[3, 4, 5], [6, 7, 0]])
    tgt = np.array([[8, 9, 2], [10, 2, 0]])
    errors["mini-model"] = check_grads(lambda g: m.batch_loss(g, src, tgt)[0], m.parameters())
    seconds = time.perf_counter() - t0
    worst = max(errors, key=errors.get)
    ok = set(cases) == set(PRIMITIVES) and all(e < 1e-4 for e in errors.values()) and seconds < 60
    assert report_criterion(2, ok, f"{len(errors)} checks, worst {worst} {errors[worst]:.2e}, {seconds:.1f}s")


# --- 3. freeze contract -----------------------------------------------------

MINI = ModelConfig(vocab_size=300, d_model=8, num_heads=2, ffn_dim=16, encoder_layers=2,
                   decoder_layers=2, max_positions=24)


def test_criterion_3_changed_set_equals_trainable_set():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    vocab = train_vocab(["foo bar baz foo"], 300)
    outcome = {}
    for strategy in ALL_STRATEGIES:
        model = build_model(MINI, seed=0)
        if strategy is StrategyKind.PREFIX:
            attach_prefix(model, init_prefix(ProjectCorpus("p", ("foo bar baz",)), model, 3, vocab))
        plan = make_freeze_plan(strategy, model.registry)
        apply_freeze_plan(model, plan)
        before = {p.id: p.values.tobytes() for p in model.parameters()}
        trainable = {p.id for p in model.parameters() if not p.frozen}
        opt = Adam([p for p in model.parameters() if not p.frozen], 1e-2)
        for _ in range(100):
            src = pad_batch([list(rng.integers(3, 300, size=rng.integers(2, 8))) + [2] for _ in range(4)])
            tgt = pad_batch([list(rng.integers(3, 300, size=rng.integers(2, 8))) + [2] for _ in range(4)])
            g = Graph()
            loss, _ = model.batch_loss(g, src, tgt)
            g.backward(loss)
            opt.step()
        changed = {p.id for p in model.parameters() if p.values.tobytes() != before[p.id]}
        outcome[str(strategy)] = (changed == trainable, len(changed), len(trainable))
    seconds = time.perf_counter() - t0
    ok = all(v[0] for v in outcome.values()) and seconds < 120
    detail = ", ".join(f"{s} {c}/{t}" for s, (_, c, t) in outcome.items()) + f", {seconds:.1f}s"
    assert report_criterion(3, ok, detail)


# --- 4. compute model -------------------------------------------------------


def test_criterion_4_compute_model():
    from test_flops import traced_matmul_flops_per_token

    cfg = ModelConfig(vocab_size=1000, d_model=128, num_heads=4, ffn_dim=512, encoder_layers=3,
                      decoder_layers=3, max_positions=64)
    oracle = traced_matmul_flops_per_token(cfg, cfg.max_positions // 2)
    t0 = time.perf_counter()
    gap = abs(flops_forward_per_token(cfg) - oracle) / oracle
    labels = blocks.base_labels(12, 12)
    step = {}
    for s in ("L-LDB", "Prefix", "L-EO", "Custom"):
        step[s] = flops_train_step(REFERENCE_CONFIG, make_freeze_plan(s, labels), 1,
                                   prefix_length=200 if s == "Prefix" else 0)
    fwd = flops_forward_per_token(REFERENCE_CONFIG)
    seconds = time.perf_counter() - t0
    ok = (gap < 0.10 and step["L-LDB"] < step["Prefix"] <= step["L-EO"] <= step["Custom"]
          and step["Custom"] == 3 * fwd and seconds < 1.0)
    detail = (f"oracle gap {gap:.3f}, ratios " + " < ".join(f"{s} {v / fwd:.3f}" for s, v in step.items())
              + f", {seconds:.3f}s")
    assert report_criterion(4, ok, detail)


# --- 5. metric oracles ------------------------------------------------------


def _fuzz_code(rng):
    atoms = ["x", "y", "foo", "Bar", "(", ")", "=", ";", "1", "2.0", '"s"', ".", ",", "new", "int", "\t", "\n"]
    return " ".join(rng.choice(atoms, size=rng.integers(0, 12)))


def test_criterion_5_metric_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(42)
    bleu_gap = 0.0
    for _ in range(100):
        cand = [int(t) for t in rng.integers(0, 6, size=rng.integers(1, 15))]
        ref = [int(t) for t in rng.integers(0, 6, size=rng.integers(1, 15))]
        bleu_gap = max(bleu_gap, abs(bleu4(cand, ref) - brute_bleu4(cand, ref)))
    kw = kruskal_wallis([1, 2, 3], [4, 5, 6])
    kw_same = kruskal_wallis([3, 3, 3], [3, 3, 3])
    implies = 0
    for _ in range(1000):
        a = _fuzz_code(rng)
        b = a if rng.random() < 0.3 else _fuzz_code(rng)
        b = b.replace(" ", "  ") if rng.random() < 0.5 else b
        if exact_match(a, b):
            assert abstract_match(a, b)
        implies += 1
    vocab = train_vocab(["public void testFoo() { assertEquals(1, x); }"], 300)
    alphabet = [chr(c) for c in (9, 10, 32, 65, 97, 123, 233, 0x4E2D, 0x1F600)]
    lossless = sum(
        vocab.decode(vocab.encode(s)) == s
        for s in ("".join(rng.choice(alphabet, size=rng.integers(0, 20))) for _ in range(1000))
    )
    seconds = time.perf_counter() - t0
    ok = (bleu_gap < 1e-9 and abs(kw.statistic - 3.857) < 1e-3 and abs(kw.pvalue - 0.0495) <= 1e-3
          and (kw_same.statistic, kw_same.pvalue) == (0.0, 1.0) and implies == 1000
          and lossless == 1000 and seconds < 60)
    detail = (f"BLEU gap {bleu_gap:.1e}, KW H={kw.statistic:.3f} p={kw.pvalue:.4f}, "
              f"exact=>abstract {implies}/1000, round trips {lossless}/1000, {seconds:.1f}s")
    assert report_criterion(5, ok, detail)


# --- 6 and 8. toy experiment -------------------------------------------------


@pytest.fixture(scope="module")
def toy_experiment(tmp_path_factory):
    out = tmp_path_factory.mktemp("toy_experiment")
    t0 = time.perf_counter()
    result = run_experiment(ExperimentConfig(n_projects=4, folds=2), out_dir=out)
    return result, out, time.perf_counter() - t0


def test_criterion_6_toy_experiment(toy_experiment):
    result, _, seconds = toy_experiment
    n_params = build_model(result.config.model).n_parameters()
    rows = summarize(result)
    losers = [f"{r['project']}/{r['strategy']}" for r in rows
              if not (r["ppl"] < r["base_ppl"] and r["bleu4"] > r["base_bleu4"])]
    cells = {(r["project"], r["strategy"]) for r in rows}
    complete = len(cells) == 4 * 4 and not any(r.failed for r in result.records)
    custom = result.reports("Custom")
    topk_ok = all(r.exact_at[4] >= r.exact_at[0] for r in custom)
    style_custom = statistics.median(r.style_similarity for r in custom)
    style_base = statistics.median(r.style_similarity for r in result.reports("Baseline"))
    ok = (complete and not losers and topk_ok and style_custom > style_base
          and n_params <= 5_000_000 and seconds < 30 * 60)
    detail = (f"{len(result.records)} runs, {n_params:,} params, "
              f"{len(rows) - len(losers)}/{len(rows)} project-strategy cells beat baseline"
              + (f" (not: {', '.join(losers)})" if losers else "")
              + f", style median {style_custom:.3f} vs {style_base:.3f}, {seconds / 60:.1f} min")
    assert report_criterion(6, ok, detail)


def test_criterion_8_drift(toy_experiment):
    result, out, _ = toy_experiment
    model = build_model(result.config.model, seed=3)
    untrained = drift_report(Checkpoint.capture(model.parameters()), Checkpoint.capture(model.parameters()))
    zero = all(v == 0.0 for _, v in untrained.rows)
    labels = model.registry
    support_ok = True
    for rec in result.records:
        expected = {blocks.PREFIX} if rec.strategy == "Prefix" else make_freeze_plan(rec.strategy, labels).trainable
        moved = rec.best_val_loss < rec.val_history[0][1]
        support_ok &= rec.drift.nonzero_labels() == (expected if moved else set())
    with open(out / "drift.csv") as fh:
        custom_rows = [r for r in csv.DictReader(fh) if r["strategy"] == "Custom"]
    csv_ok = len(custom_rows) == len(result.reports("Custom")) * len(blocks.base_labels(2, 2))
    # non-gating: do deeper blocks move more than shallow ones?
    by_label = {}
    for r in custom_rows:
        by_label.setdefault(r["block_label"], []).append(float(r["mean_abs_change"]))
    order = [label for label in blocks.base_labels(2, 2) if label.startswith(("encoder", "decoder"))]
    means = [statistics.fmean(by_label[label]) for label in order]
    deep = means[-1] >= means[0]
    print(f"drift pattern (non-gating): deepest block {'moves more' if deep else 'moves less'} than the first "
          + ", ".join(f"{label} {m:.2e}" for label, m in zip(order, means)))
    ok = zero and support_ok and csv_ok
    assert report_criterion(8, ok, f"untrained zero {zero}, support matches {support_ok}, "
                                   f"Custom CSV rows {len(custom_rows)}, deep-changes-most {deep}")


# --- 7. diversity statistic -------------------------------------------------


def test_criterion_7_shared_matrix():
    t0 = time.perf_counter()
    projects = generate_synthetic_projects(10, 0.13, seed=0)
    median = shared_matrix([p.corpus for p in projects]).median_off_diagonal()
    rng = np.random.default_rng(7)
    invariants = 0
    for i in range(50):
        ps = generate_synthetic_projects(int(rng.integers(2, 6)), float(rng.random()), (2, 5), seed=i)
        r = shared_matrix([p.corpus for p in ps]).ratios
        if np.all(np.diag(r) == 1.0) and np.all((r >= 0) & (r <= 1)):
            invariants += 1
    seconds = time.perf_counter() - t0
    ok = abs(median - 0.13) <= 0.05 and invariants == 50 and seconds < 60
    assert report_criterion(7, ok, f"median {median:.4f}, invariants {invariants}/50, {seconds:.1f}s")

