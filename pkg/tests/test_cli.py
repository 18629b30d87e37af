from codepersona.bpe import train_vocab
from codepersona.cli import main
from codepersona.dataset import read_jsonl
from codepersona.model import ModelConfig


def test_params_count_reference(capsys):
    assert main(["params", "count", "--strategy", "Prefix", "--prefix-length", "200"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "strategy,total,trainable,fraction"
    assert out[1].split(",")[2] == "9830400"


def test_flops_estimate_orders_strategies(capsys):
    assert main(["flops", "estimate"]) == 0
    rows = {line.split(",")[0]: float(line.split(",")[2]) for line in capsys.readouterr().out.splitlines()[2:]}
    assert rows["Custom"] == 3.0
    assert rows["L-LDB"] < rows["Prefix"] <= rows["L-EO"] <= rows["Custom"]


def test_stats_kw(capsys):
    assert main(["stats", "kw", "1,2,3", "4,5,6"]) == 0
    assert capsys.readouterr().out.startswith("H=3.857143 df=1 p=0.0495")


def test_bad_input_exits_with_two(capsys):
    assert main(["stats", "kw", "1,2,3"]) == 2
    assert "error" in capsys.readouterr().err


def test_synth_then_corpus(tmp_path, capsys):
    assert main(["synth", "gen", "--projects", "3", "--out", str(tmp_path)]) == 0
    assert main(["corpus", "matrix", str(tmp_path / "corpora.jsonl"), "--out", str(tmp_path / "m.csv")]) == 0
    assert main(["corpus", "stats", str(tmp_path / "corpora.jsonl")]) == 0
    out = capsys.readouterr().out
    assert "median off-diagonal shared-token ratio" in out
    assert (tmp_path / "m.csv").read_text().startswith("project,")


def test_train_eval_drift(tmp_path, capsys):
    main(["synth", "gen", "--projects", "1", "--min-nouns", "2", "--max-nouns", "2", "--out", str(tmp_path)])
    examples = read_jsonl(tmp_path / "examples.jsonl")
    vocab = train_vocab([e.focal_method + e.test_case for e in examples], 300)
    vocab.save(tmp_path / "vocab.json")
    ModelConfig(vocab_size=300, d_model=16, num_heads=2, ffn_dim=32, encoder_layers=1, decoder_layers=1,
                max_positions=128).save(tmp_path / "m.toml")
    common = ["--data", str(tmp_path / "examples.jsonl"), "--vocab", str(tmp_path / "vocab.json"),
              "--config", str(tmp_path / "m.toml"), "--folds", "2"]
    assert main(["train", *common, "--strategy", "L-LDB", "--max-steps", "0", "--out", str(tmp_path / "a.ckpt")]) == 0
    assert main(["train", *common, "--strategy", "L-LDB", "--max-steps", "3", "--eval-every", "1",
                 "--lr", "0.01", "--out", str(tmp_path / "b.ckpt")]) == 0
    assert main(["eval", *common, "--checkpoint", str(tmp_path / "b.ckpt"), "--out", str(tmp_path / "r.csv")]) == 0
    capsys.readouterr()
    assert main(["drift", "report", str(tmp_path / "a.ckpt"), str(tmp_path / "b.ckpt"),
                 "--out", str(tmp_path / "d.csv")]) == 0
    rows = dict(line.split(",") for line in capsys.readouterr().out.splitlines())
    assert {k for k, v in rows.items() if float(v) != 0} <= {"decoder-block[0]"}
    assert (tmp_path / "r.csv").exists()
