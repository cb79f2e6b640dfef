import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pertprune.perturb import (
    WORD_RE,
    Edit,
    PerturbationSpec,
    apply_edits,
    classify_edit,
    lexicon_for_method,
    load_lexicon,
    perturb_corpus,
    perturb_insert,
    perturb_replace,
    perturb_swap,
    perturbed_views,
)

SAMPLES = [
    "The meeting will start later today.",
    "The child looks happy in the garden.",
    "The host carried the lamp by the river.",
    "A quiet traveller reads the old letter.",
]


class TestEdits:
    def test_swap_later_alter(self):
        assert perturb_swap("later", 0) == "alter"

    def test_replace_happy_nappy(self):
        assert perturb_replace("happy", 0, "n") == "nappy"

    def test_insert_host_ghost(self):
        assert perturb_insert("host", 0, "g") == "ghost"

    def test_swap_last_pair(self):
        assert perturb_swap("ab", 0) == "ba"

    @pytest.mark.parametrize("word,pos", [("a", 0), ("abc", 2), ("abc", -1)])
    def test_swap_errors(self, word, pos):
        with pytest.raises((ValueError, IndexError)):
            perturb_swap(word, pos)

    def test_replace_same_char_rejected(self):
        with pytest.raises(ValueError):
            perturb_replace("host", 1, "o")

    def test_replace_single_char(self):
        assert perturb_replace("x", 0, "y") == "y"

    def test_insert_into_empty_word(self):
        assert perturb_insert("", 0, "a") == "a"

    def test_equal_adjacent_chars_retried(self):
        # only position 1 of "aab" gives a real swap
        pair = perturb_corpus(["aab"], PerturbationSpec(method="swap"), 0)[0]
        assert pair.perturbed == "aba"

    def test_insert_at_end(self):
        assert perturb_insert("host", 4, "s") == "hosts"

    @pytest.mark.parametrize(
        "before,after,kind",
        [("later", "alter", "swap"), ("happy", "nappy", "replace"), ("host", "ghost", "insert"),
         ("host", "host", None), ("host", "hose", "replace"), ("abcd", "badc", None)],
    )
    def test_classify(self, before, after, kind):
        assert classify_edit(before, after) == kind


class TestLexicon:
    def test_bundled_contains_examples(self):
        pairs = set(load_lexicon())
        assert {("later", "alter"), ("happy", "nappy"), ("host", "ghost")} <= pairs

    def test_every_pair_is_a_single_edit(self):
        for src, dst in load_lexicon():
            assert classify_edit(src, dst) is not None, (src, dst)

    def test_bad_line(self, tmp_path):
        path = tmp_path / "lex.tsv"
        path.write_text("later alter\n")
        with pytest.raises(ValueError, match="line 1"):
            load_lexicon(path)

    def test_method_filter(self):
        lex = lexicon_for_method(load_lexicon(), "insert")
        assert "ghost" in lex["host"] and "later" not in lex

    def test_lexicon_edits_preferred(self):
        spec = PerturbationSpec(method="swap", lexicon=tuple(load_lexicon()), draws=1)
        pair = perturb_corpus(["The meeting will start later today."], spec, 0)[0]
        assert pair.perturbed == "The meeting will start alter today."


class TestCorpus:
    def test_deterministic(self):
        spec = PerturbationSpec(seed=3)
        assert perturb_corpus(SAMPLES, spec, 2) == perturb_corpus(SAMPLES, spec, 2)

    def test_draws_distinct(self):
        views = perturbed_views(SAMPLES, PerturbationSpec(draws=4, seed=0))
        assert len({tuple(v) for v in views}) == 4

    def test_draw_index_range(self):
        with pytest.raises(IndexError):
            perturb_corpus(SAMPLES, PerturbationSpec(draws=2), 2)

    def test_empty_corpus(self):
        with pytest.raises(ValueError):
            perturb_corpus([], PerturbationSpec(), 0)

    def test_too_few_words(self):
        with pytest.raises(ValueError):
            perturb_corpus(["one"], PerturbationSpec(words_per_sample=2), 0)

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            PerturbationSpec(method="delete")

    def test_uneditable_word_is_skipped(self, caplog):
        pair = perturb_corpus(["aa"], PerturbationSpec(method="swap"), 0)[0]
        assert pair.perturbed == "aa" and pair.skipped == [0]
        assert "skipped" in caplog.text


@settings(max_examples=60, deadline=None)
@given(
    words=st.lists(st.text(alphabet="abcdefghij", min_size=2, max_size=8), min_size=3, max_size=10),
    method=st.sampled_from(["swap", "replace", "insert"]),
    k=st.integers(1, 3),
    seed=st.integers(0, 2**16),
)
def test_edits_reconstruct_and_stay_local(words, method, k, seed):
    text = " ".join(words) + "."
    spec = PerturbationSpec(method=method, words_per_sample=k, seed=seed, draws=1)
    pair = perturb_corpus([text], spec, 0)[0]
    assert apply_edits(text, pair.edits) == pair.perturbed
    assert len(pair.edits) == k or pair.skipped
    for e in pair.edits:
        assert classify_edit(e.before, e.after) == method
    # untouched words survive verbatim
    edited = {e.word_position for e in pair.edits}
    before = [m.group() for m in WORD_RE.finditer(text)]
    after = [m.group() for m in WORD_RE.finditer(pair.perturbed)]
    assert len(before) == len(after)
    for i, (a, b) in enumerate(zip(before, after)):
        assert (a != b) == (i in edited)


def test_apply_edits_rejects_mismatch():
    with pytest.raises(ValueError):
        apply_edits("the host", [Edit(1, "guest", "ghost")])


def test_spec_seed_changes_output():
    a = perturb_corpus(SAMPLES, PerturbationSpec(seed=0), 0)
    b = perturb_corpus(SAMPLES, PerturbationSpec(seed=1), 0)
    assert [p.perturbed for p in a] != [p.perturbed for p in b]
    assert np.all([p.original == s for p, s in zip(a, SAMPLES)])
