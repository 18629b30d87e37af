"""Cross-validated personalization experiments and their reports.

A run pretrains one baseline model on generic projects, then for every
(project, strategy, fold) cell restores that baseline, applies the
strategy, trains to the best validation loss and evaluates on the held-out
fold.  Every emitted table is assembled from the resulting RunRecords.
"""

from __future__ import annotations

import csv
import logging
import platform
import statistics
import time
from dataclasses import asdict, dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .autograd import Graph, NonFiniteError
from .bpe import VERSION as BPE_VERSION
from .bpe import SubwordVocabulary, train_vocab
from .checkpoint import Checkpoint, save_checkpoint
from .corpus import TOKENIZER_VERSION
from .flops import FlopLedger, flops_train_step, write_curve_csv
from .metrics import MAX_K, Prediction, evaluate_predictions, kruskal_wallis, write_reports_csv
from .model import EOS_ID, ModelConfig, beam_decode_many, build_model, pad_batch, strip_special
from .optim import make_optimizer
from .strategies import (
    ALL_STRATEGIES,
    StrategyKind,
    apply_freeze_plan,
    attach_prefix,
    detach_prefix,
    drift_report,
    init_prefix,
    make_freeze_plan,
)
from .synth import generate_synthetic_projects

log = logging.getLogger(__name__)

BASELINE = "Baseline"
METRIC_COLUMNS = ("bleu4", "perplexity", "exact@1", "exact@5", "abstract@1", "abstract@5", "style_similarity")


@dataclass
class TrainHyper:
    lr: float = 1e-3
    batch_size: int = 16
    patience: int = 3
    max_steps: int = 300
    eval_every: int = 50
    optimizer: str = "adam"
    seed: int = 0


@dataclass
class ExperimentConfig:
    n_projects: int = 4
    n_generic: int = 24
    vocab_overlap: float = 0.13
    size_range: tuple = (8, 10)
    strategies: tuple = ALL_STRATEGIES
    folds: int = 4
    model: ModelConfig = field(default_factory=lambda: ModelConfig(vocab_size=1024))
    bpe_vocab_size: int = 1024
    pretrain: TrainHyper = field(default_factory=lambda: TrainHyper(lr=2e-3, max_steps=1500, eval_every=100))
    finetune: TrainHyper = field(default_factory=lambda: TrainHyper(max_steps=100, eval_every=25))
    # prefix rows sit in embedding space and need a much larger step
    strategy_lr: dict = field(default_factory=lambda: {"Prefix": 0.3})
    prefix_length: int = 32
    beam_width: int = 5
    max_decode_len: int = 96
    seed: int = 0

    def __post_init__(self):
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        self.strategies = tuple(StrategyKind.parse(s) for s in self.strategies)
        if not self.strategies:
            raise ValueError("strategy set must be non-empty")
        if self.beam_width < MAX_K:
            raise ValueError(f"beam_width must be >= {MAX_K} for top-{MAX_K} metrics")

    def lr_for(self, strategy):
        return self.strategy_lr.get(str(strategy), self.finetune.lr)

    def to_text(self):
        lines = []
        for k, v in asdict(self).items():
            if k == "model":
                continue
            if k == "strategies":
                v = [str(s) for s in self.strategies]
            lines.append(f"{k} = {v}")
        lines.append("[model]")
        lines.append(self.model.to_text().rstrip())
        return "\n".join(lines) + "\n"


@dataclass
class RunRecord:
    project: str
    strategy: str
    fold: int
    best_val_loss: float
    steps: int
    ledger: FlopLedger
    report: object = None  # EvalReport
    checkpoint_path: str = ""
    failed: bool = False
    error: str = ""
    val_history: list = field(default_factory=list)  # [(step, val_loss)]
    drift: object = None  # DriftReport


# --- data -----------------------------------------------------------------


def kfold_split(examples, folds, seed=0, val_fraction=0.1):
    """``folds`` (train, val, test) partitions with disjoint, covering test sets."""
    examples = list(examples)
    if folds < 2:
        raise ValueError("folds must be >= 2")
    if len(examples) < folds:
        raise ValueError(f"{len(examples)} examples cannot fill {folds} folds")
    order = np.random.default_rng(seed).permutation(len(examples))
    chunks = np.array_split(order, folds)
    out = []
    for f, test_idx in enumerate(chunks):
        rest = [int(i) for c in chunks[:f] + chunks[f + 1:] for i in c]
        n_val = max(1, int(round(val_fraction * len(rest)))) if len(rest) > 1 else 0
        val_idx, train_idx = rest[:n_val], rest[n_val:]
        out.append((
            [examples[i] for i in train_idx],
            [examples[i] for i in val_idx],
            [examples[int(i)] for i in test_idx],
        ))
    return out


@dataclass
class EncodedPair:
    focal_id: str
    src: list
    tgt: list


def encode_examples(vocab, examples, max_positions):
    out = []
    for e in examples:
        src = vocab.encode(e.focal_method)[: max_positions - 1] + [EOS_ID]
        tgt = vocab.encode(e.test_case)[: max_positions - 1] + [EOS_ID]
        out.append(EncodedPair(e.focal_id, src, tgt))
    return out


def _batches(pairs, batch_size, rng):
    order = rng.permutation(len(pairs))
    for i in range(0, len(order), batch_size):
        yield [pairs[j] for j in order[i:i + batch_size]]


def mean_loss(model, pairs, batch_size=32):
    """Token-weighted mean NLL and the flat per-token NLL array."""
    nlls = []
    for i in range(0, len(pairs), batch_size):
        chunk = pairs[i:i + batch_size]
        tgt = pad_batch([p.tgt for p in chunk])
        _, nll = model.batch_loss(Graph(record=False), pad_batch([p.src for p in chunk]), tgt)
        nlls.append(nll[tgt != 0])
    flat = np.concatenate(nlls)
    return float(flat.mean()), flat


# --- training -------------------------------------------------------------


def train_to_best(model, plan, train, val, hyper, project="", strategy="", fold=0, val_loss_fn=None):
    """Train trainable parameters until validation stops improving.

    Validation runs at step 0 and every ``hyper.eval_every`` steps; after
    ``hyper.patience`` evaluations without improvement training stops and
    the best parameters are restored.  A non-finite loss aborts the run and
    marks the record failed (the best parameters are still restored).
    """
    if not train or not val:
        raise ValueError("train and validation splits must be non-empty")
    val_loss_fn = val_loss_fn or (lambda: mean_loss(model, val)[0])
    apply_freeze_plan(model, plan)
    params = model.parameters()
    trainable = [p for p in params if not p.frozen]
    opt = make_optimizer(hyper.optimizer, trainable, hyper.lr)
    rng = np.random.default_rng(hyper.seed)
    ledger = FlopLedger()
    prefix_length = model.prefix.prefix_length if model.prefix is not None else 0

    best = val_loss_fn()
    best_ckpt = Checkpoint.capture(trainable)
    ledger.record(0.0, best)
    history = [(0, best)]
    bad = 0
    step = 0
    failed, error = False, ""

    def batches():
        while True:
            yield from _batches(train, hyper.batch_size, rng)

    stream = batches()
    while step < hyper.max_steps:
        batch = next(stream)
        src = pad_batch([p.src for p in batch])
        tgt = pad_batch([p.tgt for p in batch])
        try:
            g = Graph()
            loss, _ = model.batch_loss(g, src, tgt)
            if not np.isfinite(loss.values):
                raise NonFiniteError("non-finite training loss")
            g.backward(loss)
            opt.step()
        except NonFiniteError as exc:
            failed, error = True, str(exc)
            log.warning("run %s/%s/%d diverged at step %d: %s", project, strategy, fold, step, exc)
            break
        step += 1
        n_tgt = int((tgt != 0).sum())
        ledger.record(
            flops_train_step(model.config, plan, n_tgt, int((src != 0).sum()), prefix_length=prefix_length),
            tokens=n_tgt,
        )
        if step % hyper.eval_every == 0 or step == hyper.max_steps:
            v = val_loss_fn()
            ledger.record(0.0, v)
            history.append((step, v))
            if np.isfinite(v) and v < best:
                best, bad = v, 0
                best_ckpt = Checkpoint.capture(trainable)
            else:
                bad += 1
                if bad > hyper.patience - 1:
                    break
    best_ckpt.restore(trainable)
    for p in params:
        p.grad = None
    return RunRecord(project, str(strategy), fold, best, step, ledger,
                     failed=failed, error=error, val_history=history)


# --- evaluation -----------------------------------------------------------


def predict(model, vocab, pairs, beam_width=5, max_len=96, chunk=32):
    preds = []
    for i in range(0, len(pairs), chunk):
        part = pairs[i:i + chunk]
        for p, hyps in zip(part, beam_decode_many(model, [p.src for p in part], beam_width, max_len)):
            preds.append(Prediction(
                p.focal_id,
                [vocab.decode(strip_special(h.tokens)) for h in hyps],
                [h.score for h in hyps],
            ))
    return preds


def evaluate(model, vocab, project, strategy, fold, test_pairs, references, beam_width=5, max_len=96):
    _, nll = mean_loss(model, test_pairs)
    preds = predict(model, vocab, test_pairs, beam_width, max_len)
    return evaluate_predictions(project, str(strategy), fold, preds, references, nll)


# --- the experiment -------------------------------------------------------


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    baseline_records: list
    records: list
    vocab: SubwordVocabulary
    projects: list
    outputs: dict = field(default_factory=dict)  # name -> path
    seconds: float = 0.0

    def reports(self, strategy=None):
        pool = self.baseline_records if strategy == BASELINE else self.records
        return [r.report for r in pool if r.report is not None
                and (strategy in (None, BASELINE) or r.strategy == str(strategy))]


def _pretrain(config, generic, vocab):
    model = build_model(config.model, seed=config.seed)
    pairs = encode_examples(vocab, [e for p in generic for e in p.examples], config.model.max_positions)
    rng = np.random.default_rng(config.seed)
    idx = rng.permutation(len(pairs))
    n_val = max(1, len(pairs) // 10)
    val, train = [pairs[i] for i in idx[:n_val]], [pairs[i] for i in idx[n_val:]]
    plan = make_freeze_plan(StrategyKind.CUSTOM, model.registry)
    rec = train_to_best(model, plan, train, val, config.pretrain, project="generic", strategy="pretrain")
    log.info("pretrained baseline: %d steps, val loss %.4f", rec.steps, rec.best_val_loss)
    return model, rec


def run_experiment(config, out_dir=None, progress=None):
    """Run every (project, strategy, fold) cell and emit the report bundle."""
    t0 = time.time()
    say = progress or (lambda msg: log.info(msg))
    projects = generate_synthetic_projects(
        config.n_projects, config.vocab_overlap, config.size_range, seed=config.seed, id_prefix="proj")
    generic = generate_synthetic_projects(
        config.n_generic, config.vocab_overlap, config.size_range, seed=config.seed + 1000, id_prefix="generic")
    # the tokenizer sees generic pairs plus the target projects' source files
    # (never their tests), like a tokenizer trained on a broad code corpus
    vocab = train_vocab(
        [t for p in generic for t in p.corpus.texts]
        + [e.test_case for p in generic for e in p.examples]
        + [t for p in projects for t in p.corpus.texts],
        config.bpe_vocab_size,
    )
    if vocab.size > config.model.vocab_size:
        raise ValueError(f"BPE vocabulary ({vocab.size}) exceeds model vocab_size {config.model.vocab_size}")
    model, pre = _pretrain(config, generic, vocab)
    say(f"pretrained baseline in {pre.steps} steps (val loss {pre.best_val_loss:.4f})")
    base_ckpt = Checkpoint.capture(model.base_parameters())
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(base_ckpt, out / "checkpoints" / "baseline.ckpt")
        vocab.save(out / "vocab.json")

    baseline_records, records = [], []
    for proj in projects:
        splits = kfold_split(proj.examples, config.folds, seed=config.seed)
        refs = {e.focal_id: e.test_case for e in proj.examples}
        for fold, (train, val, test) in enumerate(splits):
            enc = lambda xs: encode_examples(vocab, xs, config.model.max_positions)  # noqa: E731
            train_p, val_p, test_p = enc(train), enc(val), enc(test)
            base_ckpt.restore(model.base_parameters())
            detach_prefix(model)
            ledger = FlopLedger()
            b = RunRecord(proj.project_id, BASELINE, fold, mean_loss(model, val_p)[0], 0, ledger)
            b.report = evaluate(model, vocab, proj.project_id, BASELINE, fold, test_p, refs,
                                config.beam_width, config.max_decode_len)
            baseline_records.append(b)
            say(f"{proj.project_id} fold {fold} baseline: bleu {b.report.bleu4:.3f} ppl {b.report.perplexity:.3f}")
            for strategy in config.strategies:
                rec = _run_cell(config, model, vocab, base_ckpt, proj, strategy, fold,
                                train_p, val_p, test_p, refs, out)
                records.append(rec)
                r = rec.report
                say(f"{proj.project_id} fold {fold} {strategy}: "
                    + ("FAILED " + rec.error if rec.failed or r is None
                       else f"bleu {r.bleu4:.3f} ppl {r.perplexity:.3f} steps {rec.steps}"))
    base_ckpt.restore(model.base_parameters())
    detach_prefix(model)
    result = ExperimentResult(config, baseline_records, records, vocab, projects, seconds=time.time() - t0)
    if out:
        result.outputs = write_bundle(result, out)
    return result


def _run_cell(config, model, vocab, base_ckpt, proj, strategy, fold, train_p, val_p, test_p, refs, out):
    base_ckpt.restore(model.base_parameters())
    detach_prefix(model)
    if strategy is StrategyKind.PREFIX:
        attach_prefix(model, init_prefix(proj.corpus, model, config.prefix_length, vocab))
    plan = make_freeze_plan(strategy, model.registry)
    before = Checkpoint.capture(model.parameters())
    hyper = TrainHyper(**{**asdict(config.finetune), "lr": config.lr_for(strategy),
                          "seed": config.seed + 7919 * fold})
    rec = train_to_best(model, plan, train_p, val_p, hyper, proj.project_id, str(strategy), fold)
    rec.drift = drift_report(before, Checkpoint.capture(model.parameters()))
    if out:
        path = out / "checkpoints" / f"{proj.project_id}_{strategy}_{fold}.ckpt"
        save_checkpoint(model.parameters(), path)
        rec.checkpoint_path = str(path)
    try:
        rec.report = evaluate(model, vocab, proj.project_id, strategy, fold, test_p, refs,
                              config.beam_width, config.max_decode_len)
    except (ValueError, NonFiniteError) as exc:
        rec.failed, rec.error = True, f"evaluation failed: {exc}"
    detach_prefix(model)
    return rec


# --- report assembly ------------------------------------------------------


def _metric(report, name):
    if name in ("exact@1", "exact@5", "abstract@1", "abstract@5"):
        kind, k = name.split("@")
        return getattr(report, f"{kind}_at")[int(k) - 1]
    return getattr(report, name)


def _approaches(result):
    return [BASELINE] + [str(s) for s in result.config.strategies]


def metrics_table(result):
    """Rows of (project, approach, metric means over folds), plus an ``all`` block."""
    rows = []
    groups = {}
    for r in result.baseline_records + result.records:
        if r.report is not None:
            groups.setdefault((r.project, r.strategy), []).append(r.report)
    projects = [p.project_id for p in result.projects] + ["all"]
    for proj in projects:
        for a in _approaches(result):
            if proj == "all":
                reps = [x for (p, s), v in groups.items() if s == a for x in v]
            else:
                reps = groups.get((proj, a), [])
            row = {"project": proj, "approach": a, "n": len(reps)}
            for m in METRIC_COLUMNS:
                row[m] = float(np.mean([_metric(x, m) for x in reps])) if reps else float("nan")
            rows.append(row)
    return rows


def kw_matrix(result, metric="bleu4"):
    """Pairwise Kruskal-Wallis tests between approaches over (project, fold) cells."""
    values = {a: [_metric(x, metric) for x in result.reports(a)] for a in _approaches(result)}
    rows = []
    for a, b in combinations(_approaches(result), 2):
        if len(values[a]) + len(values[b]) < 3 or not values[a] or not values[b]:
            continue
        res = kruskal_wallis(values[a], values[b])
        rows.append({"metric": metric, "a": a, "b": b, "H": res.statistic, "pvalue": res.pvalue})
    return rows


def _write_rows(path, rows):
    if not rows:
        Path(path).write_text("")
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def _markdown(rows, floatfmt="{:.4f}"):
    if not rows:
        return ""
    cols = list(rows[0])
    lines = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
    for row in rows:
        cells = [floatfmt.format(row[c]) if isinstance(row[c], float) else str(row[c]) for c in cols]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def write_bundle(result, out):
    out = Path(out)
    paths = {}
    table = metrics_table(result)
    paths["metrics_table.csv"] = out / "metrics_table.csv"
    _write_rows(paths["metrics_table.csv"], table)
    paths["metrics_table.md"] = out / "metrics_table.md"
    paths["metrics_table.md"].write_text(_markdown(table))

    kw = kw_matrix(result, "bleu4") + kw_matrix(result, "perplexity")
    paths["kruskal_wallis.csv"] = out / "kruskal_wallis.csv"
    _write_rows(paths["kruskal_wallis.csv"], kw)
    paths["kruskal_wallis.md"] = out / "kruskal_wallis.md"
    paths["kruskal_wallis.md"].write_text(_markdown(kw))

    all_records = result.baseline_records + result.records
    paths["reports.csv"] = out / "reports.csv"
    write_reports_csv(paths["reports.csv"], [r.report for r in all_records if r.report is not None])

    topk = []
    for r in all_records:
        if r.report is None:
            continue
        for k in range(1, MAX_K + 1):
            topk.append({"strategy": r.strategy, "project": r.project, "fold": r.fold, "k": k,
                         "exact": r.report.exact_at[k - 1], "abstract": r.report.abstract_at[k - 1]})
    paths["topk.csv"] = out / "topk.csv"
    _write_rows(paths["topk.csv"], topk)

    style = [{"strategy": r.strategy, "project": r.project, "fold": r.fold,
              "style_similarity": r.report.style_similarity} for r in all_records if r.report is not None]
    paths["style.csv"] = out / "style.csv"
    _write_rows(paths["style.csv"], style)

    paths["curves.csv"] = out / "curves.csv"
    write_curve_csv(paths["curves.csv"], [(r.strategy, r.project, r.fold, r.ledger) for r in result.records])

    drift = [{"strategy": r.strategy, "project": r.project, "fold": r.fold,
              "block_label": label, "mean_abs_change": v}
             for r in result.records if r.drift is not None for label, v in r.drift.rows]
    paths["drift.csv"] = out / "drift.csv"
    _write_rows(paths["drift.csv"], drift)

    runs = [{"project": r.project, "strategy": r.strategy, "fold": r.fold, "steps": r.steps,
             "best_val_loss": r.best_val_loss, "pf_seconds": r.ledger.pf_seconds,
             "failed": int(r.failed), "error": r.error, "checkpoint": r.checkpoint_path}
            for r in all_records]
    paths["runs.csv"] = out / "runs.csv"
    _write_rows(paths["runs.csv"], runs)

    paths["manifest.txt"] = out / "manifest.txt"
    paths["manifest.txt"].write_text(manifest_text(result))
    return {k: str(v) for k, v in paths.items()}


def manifest_text(result):
    cfg = result.config
    lines = [
        "# codepersona experiment manifest",
        f"package_version = {__version__}",
        f"python = {platform.python_version()}",
        f"numpy = {np.__version__}",
        f"scipy = {scipy.__version__}",
        f"analysis_tokenizer = {TOKENIZER_VERSION}",
        f"bpe = {BPE_VERSION} ({result.vocab.size} tokens)",
        f"seed = {cfg.seed}",
        "baseline = evaluated per fold on the same test partition, then averaged",
        "validation_compute = excluded from FLOP ledgers",
        f"runs = {len(result.records)} ({sum(r.failed for r in result.records)} failed)",
        f"baseline_runs = {len(result.baseline_records)}",
        f"wall_seconds = {result.seconds:.1f}",
        "",
        "[experiment]",
        cfg.to_text().rstrip(),
        "",
    ]
    return "\n".join(lines)


def summarize(result):
    """Per-project comparisons used by the acceptance suite and the CLI."""
    base = {}
    for r in result.baseline_records:
        base.setdefault(r.project, []).append(r.report)
    mine = {}
    for r in result.records:
        if r.report is not None:
            mine.setdefault((r.project, r.strategy), []).append(r.report)
    rows = []
    for (proj, strat), reps in sorted(mine.items()):
        b = base[proj]
        rows.append({
            "project": proj,
            "strategy": strat,
            "ppl": statistics.fmean(x.perplexity for x in reps),
            "base_ppl": statistics.fmean(x.perplexity for x in b),
            "bleu4": statistics.fmean(x.bleu4 for x in reps),
            "base_bleu4": statistics.fmean(x.bleu4 for x in b),
        })
    return rows


__all__ = [
    "BASELINE", "ExperimentConfig", "ExperimentResult", "RunRecord", "TrainHyper",
    "encode_examples", "evaluate", "kfold_split", "mean_loss", "metrics_table", "kw_matrix",
    "run_experiment", "summarize", "train_to_best", "write_bundle"
]
