import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from codepersona.corpus import (
    JAVA_KEYWORDS,
    ProjectCorpus,
    analysis_tokens,
    corpus_stats,
    load_corpora,
    shared_matrix,
    strip_noise,
    write_corpora_jsonl,
)
from codepersona.synth import generate_synthetic_projects


def test_strip_line_comment():
    assert strip_noise("int x; // hi") == "int x; "


def test_strip_block_comment():
    assert strip_noise("/* a */ y") == " y"


def test_comment_markers_inside_strings_survive():
    code = 's = "http://x /* no */";'
    assert strip_noise(code) == code


def test_keep_comments_but_drop_license_header():
    code = "/* Licensed under Apache */\nclass A { /* keep */ }"
    assert strip_noise(code, drop_comments=False) == "\nclass A { /* keep */ }"


def test_analysis_tokens_fold_case_and_drop_keywords():
    assert analysis_tokens("public Foo getFoo()") == {"foo", "getfoo"}


def test_keywords_only_gives_empty_set():
    assert analysis_tokens("if while for") == set()


def test_digits_split_words():
    assert analysis_tokens("x1y 42") == {"x", "y"}


def test_stoplist_size():
    assert len(JAVA_KEYWORDS) == 53


def test_tokens_deterministic():
    text = "class Foo { int barBaz = qux(1); }"
    assert analysis_tokens(text) == analysis_tokens(text)


def _corpus(pid, tokens):
    return ProjectCorpus(pid, (" ".join(tokens),))


def test_shared_matrix_hand_example():
    m = shared_matrix([_corpus("p1", "abcd"), _corpus("p2", "cd")])
    i = {pid: k for k, pid in enumerate(m.project_ids)}
    assert m.ratios[i["p1"], i["p2"]] == 0.5
    assert m.ratios[i["p2"], i["p1"]] == 1.0


def test_disjoint_sets_give_zero():
    m = shared_matrix([_corpus("a", "xy"), _corpus("b", "uv"), _corpus("c", "w")])
    assert np.all(m.off_diagonal() == 0)


def test_rows_ordered_by_size():
    m = shared_matrix([_corpus("big", "abcde"), _corpus("small", "ab")])
    assert m.project_ids == ("small", "big")
    assert m.sizes == (2, 5)


def test_empty_project_rejected():
    with pytest.raises(ValueError):
        shared_matrix([_corpus("a", "xy"), ProjectCorpus("b", ("if else",))])
    with pytest.raises(ValueError):
        shared_matrix([_corpus("a", "xy")])


def test_matrix_csv(tmp_path):
    m = shared_matrix([_corpus("p1", "abcd"), _corpus("p2", "cd")])
    m.to_csv(tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "project,p2,p1"
    assert lines[1] == "p2,1.000000,1.000000"


def test_corpus_stats():
    s = corpus_stats(ProjectCorpus("p", ("foo foo bar // baz", "if qux")))
    assert (s["files"], s["tokens"], s["unique_tokens"]) == (2, 4, 3)


def test_load_directory_and_jsonl(tmp_path):
    (tmp_path / "d" / "alpha").mkdir(parents=True)
    (tmp_path / "d" / "alpha" / "A.java").write_text("class Alpha {}")
    (tmp_path / "d" / "alpha" / "notes.txt").write_text("ignored")
    corpora = load_corpora(tmp_path / "d")
    assert [(c.project_id, c.texts) for c in corpora] == [("alpha", ("class Alpha {}",))]
    write_corpora_jsonl(tmp_path / "c.jsonl", corpora)
    assert json.loads((tmp_path / "c.jsonl").read_text())["project_id"] == "alpha"
    assert load_corpora(tmp_path / "c.jsonl") == corpora


@settings(max_examples=50, deadline=None)
@given(st.lists(st.sets(st.sampled_from(["a", "b", "c", "d", "e", "f", "gh", "ij"]), min_size=1),
                min_size=2, max_size=6))
def test_matrix_invariants(sets):
    corpora = [_corpus(f"p{i}", sorted(s)) for i, s in enumerate(sets)]
    m = shared_matrix(corpora)
    assert np.all(np.diag(m.ratios) == 1.0)
    assert np.all((m.ratios >= 0) & (m.ratios <= 1))
    # |A & B| is symmetric, so R_ij * |T_i| == R_ji * |T_j|
    sizes = np.array(m.sizes, dtype=float)
    inter = m.ratios * sizes[:, None]
    assert np.allclose(inter, inter.T)


@pytest.mark.parametrize("overlap,lo,hi", [(0.0, 0.0, 0.2), (1.0, 0.9, 1.0)])
def test_generator_extremes(overlap, lo, hi):
    projects = generate_synthetic_projects(6, overlap, seed=3)
    median = shared_matrix([p.corpus for p in projects]).median_off_diagonal()
    assert lo <= median <= hi


def test_generator_calibrated_overlap():
    projects = generate_synthetic_projects(10, 0.13, seed=0)
    median = shared_matrix([p.corpus for p in projects]).median_off_diagonal()
    assert abs(median - 0.13) <= 0.05


def test_generator_deterministic():
    a = generate_synthetic_projects(3, 0.13, seed=9)
    b = generate_synthetic_projects(3, 0.13, seed=9)
    assert [p.corpus for p in a] == [p.corpus for p in b]
    assert [p.examples for p in a] == [p.examples for p in b]


def test_generator_rejects_bad_overlap():
    with pytest.raises(ValueError):
        generate_synthetic_projects(3, 1.5)
