"""Command-line entry point: ``codepersona <group> <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .blocks import base_labels
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .corpus import corpus_stats, load_corpora, shared_matrix
from .dataset import read_jsonl, write_jsonl
from .flops import PETA, flops_forward_per_token, flops_train_step
from .harness import (
    ExperimentConfig,
    TrainHyper,
    encode_examples,
    evaluate,
    kfold_split,
    run_experiment,
    summarize,
    train_to_best,
)
from .metrics import kruskal_wallis, write_reports_csv
from .model import REFERENCE_CONFIG, TOY_CONFIG, ModelConfig, build_model, count_parameters
from .strategies import (
    ALL_STRATEGIES,
    DEFAULT_PREFIX_LENGTH,
    StrategyKind,
    attach_prefix,
    drift_report,
    init_prefix,
    make_freeze_plan,
)


def _config(path, preset="toy"):
    if path:
        return ModelConfig.load(path)
    return {"toy": TOY_CONFIG, "reference": REFERENCE_CONFIG}[preset]


def _strategies(names):
    return tuple(StrategyKind.parse(s) for s in names) if names else ALL_STRATEGIES


def cmd_corpus_stats(args):
    rows = [corpus_stats(c) for c in load_corpora(args.path)]
    print("project_id,files,tokens,unique_tokens")
    for r in rows:
        print(f"{r['project_id']},{r['files']},{r['tokens']},{r['unique_tokens']}")


def cmd_corpus_matrix(args):
    m = shared_matrix(load_corpora(args.path))
    if args.out:
        m.to_csv(args.out)
    print(f"projects: {len(m.project_ids)}")
    print(f"median off-diagonal shared-token ratio: {m.median_off_diagonal():.4f}")
    print(f"p10 / p90: {m.quantile_off_diagonal(0.1):.4f} / {m.quantile_off_diagonal(0.9):.4f}")


def cmd_synth_gen(args):
    from .corpus import write_corpora_jsonl
    from .synth import generate_synthetic_projects

    projects = generate_synthetic_projects(args.projects, args.overlap, (args.min_nouns, args.max_nouns), args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_corpora_jsonl(out / "corpora.jsonl", [p.corpus for p in projects])
    write_jsonl(out / "examples.jsonl", [e for p in projects for e in p.examples])
    print(f"wrote {len(projects)} projects to {out}")


def cmd_params_count(args):
    cfg = _config(args.config, args.preset)
    print("strategy,total,trainable,fraction")
    for s in _strategies(args.strategy):
        total, trainable = count_parameters(cfg, s, args.prefix_length)
        print(f"{s},{total},{trainable},{trainable / total:.4f}")


def cmd_flops_estimate(args):
    cfg = _config(args.config, args.preset)
    fwd = flops_forward_per_token(cfg, args.n_ctx)
    print(f"forward_per_token,{fwd:.6g}")
    print("strategy,train_flops_per_token,ratio_to_forward,pf_seconds_for_tokens")
    for s in _strategies(args.strategy):
        plan = make_freeze_plan(s, base_labels(cfg.encoder_layers, cfg.decoder_layers))
        prefix = args.prefix_length if s is StrategyKind.PREFIX else 0
        per_tok = flops_train_step(cfg, plan, 1, n_ctx=args.n_ctx, prefix_length=prefix)
        print(f"{s},{per_tok:.6g},{per_tok / fwd:.4f},{per_tok * args.tokens / PETA:.6g}")


def _load_examples(path, project):
    examples = read_jsonl(path)
    if project:
        examples = [e for e in examples if e.project_id == project]
    if not examples:
        raise SystemExit("no examples selected")
    return examples


def _vocab(path):
    from .bpe import SubwordVocabulary

    return SubwordVocabulary.load(path)


def cmd_train(args):
    vocab = _vocab(args.vocab)
    cfg = _config(args.config)
    model = build_model(cfg, seed=args.seed)
    if args.init:
        load_checkpoint(args.init).restore(model.base_parameters())
    examples = _load_examples(args.data, args.project)
    train, val, _ = kfold_split(examples, args.folds, args.seed)[args.fold]
    strategy = StrategyKind.parse(args.strategy)
    if strategy is StrategyKind.PREFIX:
        from .corpus import ProjectCorpus

        corpus = ProjectCorpus(args.project or "data", tuple(e.focal_method for e in train))
        attach_prefix(model, init_prefix(corpus, model, args.prefix_length, vocab))
    plan = make_freeze_plan(strategy, model.registry)
    hyper = TrainHyper(lr=args.lr, batch_size=args.batch_size, patience=args.patience,
                       max_steps=args.max_steps, eval_every=args.eval_every, seed=args.seed)
    enc = lambda xs: encode_examples(vocab, xs, cfg.max_positions)  # noqa: E731
    rec = train_to_best(model, plan, enc(train), enc(val), hyper, args.project or "", str(strategy), args.fold)
    save_checkpoint(model.parameters(), args.out)
    print(f"steps={rec.steps} best_val_loss={rec.best_val_loss:.6f} pf_seconds={rec.ledger.pf_seconds:.6g}"
          + (f" FAILED: {rec.error}" if rec.failed else ""))


def cmd_eval(args):
    vocab = _vocab(args.vocab)
    cfg = _config(args.config)
    model = build_model(cfg)
    ckpt = load_checkpoint(args.checkpoint)
    if any(e.block_label == "prefix" for e in ckpt):
        from .strategies import PrefixBank

        rows = ckpt["prefix.encoder.0.key"].values if cfg.encoder_layers else ckpt["prefix.decoder.0.key"].values
        attach_prefix(model, PrefixBank(cfg.d_model, rows.shape[0], cfg.encoder_layers, cfg.decoder_layers))
    ckpt.restore(model.parameters())
    examples = _load_examples(args.data, args.project)
    _, _, test = kfold_split(examples, args.folds, args.seed)[args.fold]
    refs = {e.focal_id: e.test_case for e in test}
    report = evaluate(model, vocab, args.project or "data", args.label, args.fold,
                      encode_examples(vocab, test, cfg.max_positions), refs, args.beam_width)
    for k, v in report.row().items():
        print(f"{k},{v}")
    if args.out:
        write_reports_csv(args.out, [report])


def cmd_stats_kw(args):
    groups = []
    for g in args.groups:
        groups.append([float(x) for x in g.split(",") if x.strip()])
    res = kruskal_wallis(*groups)
    print(f"H={res.statistic:.6f} df={res.df} p={res.pvalue:.6g}")


def cmd_experiment_run(args):
    kwargs = {}
    if args.config:
        kwargs = json.loads(Path(args.config).read_text())
    if "model" in kwargs:
        kwargs["model"] = ModelConfig(**kwargs["model"])
    for key in ("pretrain", "finetune"):
        if key in kwargs:
            kwargs[key] = TrainHyper(**kwargs[key])
    if args.projects is not None:
        kwargs["n_projects"] = args.projects
    if args.folds is not None:
        kwargs["folds"] = args.folds
    if args.strategy:
        kwargs["strategies"] = tuple(args.strategy)
    if args.seed is not None:
        kwargs["seed"] = args.seed
    cfg = ExperimentConfig(**kwargs)
    result = run_experiment(cfg, args.out, progress=print)
    for row in summarize(result):
        print(f"{row['project']} {row['strategy']}: ppl {row['ppl']:.3f} (baseline {row['base_ppl']:.3f}) "
              f"bleu4 {row['bleu4']:.3f} (baseline {row['base_bleu4']:.3f})")
    print(f"outputs in {args.out} ({result.seconds:.0f}s)")


def cmd_drift_report(args):
    before = load_checkpoint(args.before)
    after = load_checkpoint(args.after)
    if set(before.ids()) != set(after.ids()):
        # a prefix-tuned checkpoint compared with its base: compare the shared part
        shared = set(before.ids()) & set(after.ids())
        before = Checkpoint([e for e in before if e.id in shared])
        after = Checkpoint([e for e in after if e.id in shared])
    report = drift_report(before, after)
    if args.out:
        report.to_csv(args.out)
    for label, v in report.rows:
        print(f"{label},{v:.6g}")


def build_parser():
    p = argparse.ArgumentParser(prog="codepersona", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="group", required=True)

    corpus = sub.add_parser("corpus", help="shared-token analysis of project corpora")
    csub = corpus.add_subparsers(dest="command", required=True)
    c = csub.add_parser("stats")
    c.add_argument("path", help="directory of project folders or a corpora JSONL file")
    c.set_defaults(func=cmd_corpus_stats)
    c = csub.add_parser("matrix")
    c.add_argument("path")
    c.add_argument("--out", help="CSV path for the ratio matrix")
    c.set_defaults(func=cmd_corpus_matrix)

    synth = sub.add_parser("synth", help="synthetic projects")
    ssub = synth.add_subparsers(dest="command", required=True)
    s = ssub.add_parser("gen")
    s.add_argument("--projects", type=int, default=4)
    s.add_argument("--overlap", type=float, default=0.13)
    s.add_argument("--min-nouns", type=int, default=10)
    s.add_argument("--max-nouns", type=int, default=14)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth_gen)

    params = sub.add_parser("params", help="parameter accounting")
    psub = params.add_subparsers(dest="command", required=True)
    s = psub.add_parser("count")
    s.add_argument("--config")
    s.add_argument("--preset", choices=("toy", "reference"), default="reference")
    s.add_argument("--strategy", action="append")
    s.add_argument("--prefix-length", type=int, default=DEFAULT_PREFIX_LENGTH)
    s.set_defaults(func=cmd_params_count)

    flops = sub.add_parser("flops", help="compute model")
    fsub = flops.add_subparsers(dest="command", required=True)
    s = fsub.add_parser("estimate")
    s.add_argument("--config")
    s.add_argument("--preset", choices=("toy", "reference"), default="reference")
    s.add_argument("--strategy", action="append")
    s.add_argument("--n-ctx", type=int)
    s.add_argument("--prefix-length", type=int, default=DEFAULT_PREFIX_LENGTH)
    s.add_argument("--tokens", type=float, default=1e6, help="tokens for the PF-seconds column")
    s.set_defaults(func=cmd_flops_estimate)

    t = sub.add_parser("train", help="train one (strategy, fold) cell")
    t.add_argument("--data", required=True, help="examples JSONL")
    t.add_argument("--vocab", required=True)
    t.add_argument("--config")
    t.add_argument("--init", help="baseline checkpoint manifest")
    t.add_argument("--project")
    t.add_argument("--strategy", default="Custom")
    t.add_argument("--folds", type=int, default=4)
    t.add_argument("--fold", type=int, default=0)
    t.add_argument("--prefix-length", type=int, default=16)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--batch-size", type=int, default=16)
    t.add_argument("--patience", type=int, default=3)
    t.add_argument("--max-steps", type=int, default=300)
    t.add_argument("--eval-every", type=int, default=50)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True, help="checkpoint manifest to write")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a test fold")
    e.add_argument("--data", required=True)
    e.add_argument("--vocab", required=True)
    e.add_argument("--config")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--project")
    e.add_argument("--label", default="model")
    e.add_argument("--folds", type=int, default=4)
    e.add_argument("--fold", type=int, default=0)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--beam-width", type=int, default=5)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    stats = sub.add_parser("stats", help="statistical tests")
    stsub = stats.add_subparsers(dest="command", required=True)
    s = stsub.add_parser("kw", help="Kruskal-Wallis over comma-separated groups")
    s.add_argument("groups", nargs="+")
    s.set_defaults(func=cmd_stats_kw)

    ex = sub.add_parser("experiment", help="cross-validated experiment grid")
    exsub = ex.add_subparsers(dest="command", required=True)
    s = exsub.add_parser("run")
    s.add_argument("--config", help="JSON file with ExperimentConfig fields")
    s.add_argument("--projects", type=int)
    s.add_argument("--folds", type=int)
    s.add_argument("--strategy", action="append")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_experiment_run)

    d = sub.add_parser("drift", help="per-block parameter drift")
    dsub = d.add_subparsers(dest="command", required=True)
    s = dsub.add_parser("report")
    s.add_argument("before")
    s.add_argument("after")
    s.add_argument("--out")
    s.set_defaults(func=cmd_drift_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
