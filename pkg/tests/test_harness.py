import numpy as np
import pytest

from codepersona import blocks
from codepersona.dataset import FocalExample, read_jsonl, write_jsonl
from codepersona.harness import (
    BASELINE,
    EncodedPair,
    ExperimentConfig,
    TrainHyper,
    kfold_split,
    kw_matrix,
    metrics_table,
    run_experiment,
    train_to_best,
)
from codepersona.model import ModelConfig, build_model
from codepersona.strategies import make_freeze_plan

TINY_MODEL = ModelConfig(vocab_size=300, d_model=16, num_heads=2, ffn_dim=32, encoder_layers=1,
                         decoder_layers=1, max_positions=128)


def _examples(n):
    return [FocalExample("p", f"int m{i}() {{ return {i}; }}", f"assertEquals({i}, m{i}());", f"f{i}")
            for i in range(n)]


def test_kfold_eight_into_four():
    splits = kfold_split(_examples(8), 4, seed=0)
    tests = [{e.focal_id for e in te} for _, _, te in splits]
    assert [len(t) for t in tests] == [2, 2, 2, 2]
    assert set().union(*tests) == {f"f{i}" for i in range(8)}
    assert sum(len(t) for t in tests) == 8


def test_kfold_validation_carved_from_train():
    for train, val, test in kfold_split(_examples(40), 4, seed=3):
        ids = [{e.focal_id for e in part} for part in (train, val, test)]
        assert len(val) == 3
        assert not (ids[0] & ids[1]) and not (ids[0] & ids[2]) and not (ids[1] & ids[2])


def test_kfold_deterministic_in_seed():
    a = kfold_split(_examples(10), 2, seed=5)
    b = kfold_split(_examples(10), 2, seed=5)
    c = kfold_split(_examples(10), 2, seed=6)
    assert a == b
    assert a != c


def test_kfold_too_few_examples():
    with pytest.raises(ValueError):
        kfold_split(_examples(3), 4)


def test_jsonl_round_trip(tmp_path):
    write_jsonl(tmp_path / "d.jsonl", _examples(3))
    assert read_jsonl(tmp_path / "d.jsonl") == _examples(3)


def _pairs():
    return [EncodedPair("a", [5, 6, 2], [7, 8, 2]), EncodedPair("b", [9, 2], [10, 2])]


def _fake_val(losses):
    it = iter(losses)
    return lambda: next(it)


def test_patience_zero_stops_at_first_non_improving_eval():
    model = build_model(TINY_MODEL)
    plan = make_freeze_plan("Custom", model.registry)
    hyper = TrainHyper(patience=0, max_steps=100, eval_every=1, batch_size=2)
    rec = train_to_best(model, plan, _pairs(), _pairs(), hyper, val_loss_fn=_fake_val([3.0, 2.0, 2.5, 1.0]))
    assert rec.steps == 2
    assert rec.best_val_loss == 2.0


def test_monotone_run_stops_at_max_steps():
    model = build_model(TINY_MODEL)
    plan = make_freeze_plan("Custom", model.registry)
    hyper = TrainHyper(patience=1, max_steps=5, eval_every=1, batch_size=2)
    rec = train_to_best(model, plan, _pairs(), _pairs(), hyper, val_loss_fn=_fake_val([5, 4, 3, 2, 1, 0]))
    assert rec.steps == 5
    assert [v for _, v in rec.val_history] == [5, 4, 3, 2, 1, 0]


def test_best_checkpoint_is_restored():
    model = build_model(TINY_MODEL, seed=4)
    plan = make_freeze_plan("Custom", model.registry)
    start = {p.id: p.values.copy() for p in model.parameters()}
    hyper = TrainHyper(patience=2, max_steps=10, eval_every=1, batch_size=2, lr=1e-2)
    # the untrained model is best, so its weights come back
    train_to_best(model, plan, _pairs(), _pairs(), hyper, val_loss_fn=_fake_val([1.0, 2.0, 3.0]))
    for p in model.parameters():
        assert p.values.tobytes() == start[p.id].tobytes()
        assert p.grad is None


def test_compute_ledger_accumulates():
    model = build_model(TINY_MODEL)
    plan = make_freeze_plan("L-LDB", model.registry)
    hyper = TrainHyper(patience=5, max_steps=3, eval_every=1, batch_size=2)
    rec = train_to_best(model, plan, _pairs(), _pairs(), hyper)
    flops = [c for c, _ in rec.ledger.curve]
    assert flops[0] == 0.0
    assert flops == sorted(flops) and flops[-1] > 0
    assert len(rec.ledger.curve) == 4


def test_empty_splits_rejected():
    model = build_model(TINY_MODEL)
    with pytest.raises(ValueError):
        train_to_best(model, make_freeze_plan("Custom", model.registry), [], _pairs(), TrainHyper())


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(folds=1)
    with pytest.raises(ValueError):
        ExperimentConfig(strategies=())
    with pytest.raises(ValueError):
        ExperimentConfig(beam_width=3)


def tiny_config(**kw):
    base = dict(
        n_projects=2, n_generic=1, size_range=(2, 2), folds=2, model=TINY_MODEL, bpe_vocab_size=300,
        pretrain=TrainHyper(max_steps=4, eval_every=2), finetune=TrainHyper(max_steps=2, eval_every=1),
        prefix_length=4, max_decode_len=6,
    )
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("exp")
    return run_experiment(tiny_config(), out_dir=out), out


def test_grid_arithmetic(tiny_run):
    result, _ = tiny_run
    assert len(result.records) == 2 * 4 * 2
    assert len(result.baseline_records) == 2 * 2
    assert {(r.project, r.strategy, r.fold) for r in result.records} == {
        (p.project_id, str(s), f) for p in result.projects for s in result.config.strategies for f in range(2)}


def test_bundle_files(tiny_run):
    result, out = tiny_run
    for name in ("metrics_table.csv", "metrics_table.md", "kruskal_wallis.csv", "reports.csv",
                 "curves.csv", "drift.csv", "runs.csv", "manifest.txt", "vocab.json"):
        assert (out / name).exists(), name
    assert (out / "checkpoints" / "baseline.ckpt").exists()
    assert "seed" in (out / "manifest.txt").read_text()


def test_tables_cover_every_approach(tiny_run):
    result, _ = tiny_run
    rows = metrics_table(result)
    assert {r["approach"] for r in rows} == {BASELINE, "Custom", "L-EO", "L-LDB", "Prefix"}
    kw = kw_matrix(result)
    assert all(0.0 <= r["pvalue"] <= 1.0 for r in kw)


def test_drift_support_equals_trainable_set(tiny_run):
    result, _ = tiny_run
    labels = build_model(TINY_MODEL).registry
    improved = 0
    for rec in result.records:
        expected = make_freeze_plan(rec.strategy, labels).trainable
        if rec.strategy == "Prefix":
            expected = {blocks.PREFIX}
        support = rec.drift.nonzero_labels()
        # a run whose best checkpoint is step 0 restores the starting weights
        if rec.best_val_loss < rec.val_history[0][1]:
            assert support == expected
            improved += 1
        else:
            assert support == set()
    assert improved > 0


def test_rerun_gives_identical_tables(tiny_run):
    result, _ = tiny_run
    again = run_experiment(tiny_config())
    assert metrics_table(again) == metrics_table(result)
    assert np.array_equal([r.best_val_loss for r in again.records], [r.best_val_loss for r in result.records])
