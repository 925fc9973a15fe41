import math
import warnings

import numpy as np
import pytest

from _helpers import make_threads
from cqathread.corpus import Comment, Thread
from cqathread.exceptions import FeatureError
from cqathread.features import (
    DEFAULT_CATEGORIES,
    FeatureConfig,
    build_dialogue_chains,
    extract_local_features,
    extract_pairwise_features,
    format_sparse,
    thread_local_features,
    thread_pairwise_features,
)
from cqathread.textsim import TokenSequence

pytestmark = pytest.mark.filterwarnings("ignore:POS annotations unavailable")


def thread_of(authors, bodies=None, asker="Q", category="Cars"):
    bodies = bodies or [f"comment number {k}" for k in range(len(authors))]
    comments = [
        Comment(f"C{k}", a, "", b) for k, (a, b) in enumerate(zip(authors, bodies))
    ]
    return Thread("Q1", category, asker, "subject here", "is there a driving school?", comments)


def chain_map(thread, gap=3):
    return {users: positions for users, positions in build_dialogue_chains(thread, gap)}


class TestDialogueChains:
    def test_alternating_pair(self):
        assert chain_map(thread_of(["A", "B", "A"])) == {("A", "B"): (0, 1, 2)}

    def test_three_users(self):
        assert chain_map(thread_of(["A", "B", "C"])) == {
            ("A", "B"): (0, 1),
            ("B", "C"): (1, 2),
            ("A", "C"): (0, 2),
        }

    def test_single_comment(self):
        assert len(build_dialogue_chains(thread_of(["A"]))) == 0

    def test_gap_breaks_chain(self):
        # four other posts between A and B exceed the gap of 3
        chains = chain_map(thread_of(["A", "x", "y", "z", "w", "B"]))
        assert ("A", "B") not in chains
        chains = chain_map(thread_of(["A", "x", "y", "z", "B"]))
        assert chains[("A", "B")] == (0, 4)

    def test_one_sided_segment_is_not_a_chain(self):
        assert chain_map(thread_of(["A", "A", "A"])) == {}

    def test_invariants_on_random_threads(self):
        for thread in make_threads(5, 30):
            authors = [c.author_id for c in thread.comments]
            for (u, v), positions in build_dialogue_chains(thread):
                assert list(positions) == sorted(set(positions))
                assert all(authors[k] in (u, v) for k in positions)


class TestLocalFeatures:
    def test_url(self):
        t = thread_of(["A"], ["see http://x.y for details"])
        assert extract_local_features(t, 0)["bool:has_url"] == 1.0
        t = thread_of(["A"], ["no link here"])
        assert extract_local_features(t, 0)["bool:has_url"] == 0.0

    def test_same_user(self):
        t = thread_of(["Q", "B", "Q"], ["any idea?", "yes", "thanks a lot"])
        first, other, second = (extract_local_features(t, k) for k in range(3))
        assert first["same_user:any"] == 1.0
        assert first["same_user:question"] == 1.0
        assert first["same_user:first"] == 1.0
        assert second["same_user:ack"] == 1.0
        assert second["same_user:first"] == 0.0
        assert all(other[f"same_user:{k}"] == 0.0 for k in ("any", "question", "ack", "first"))

    def test_position(self):
        t = thread_of(["A", "B", "C", "D"])
        f = extract_local_features(t, 0)
        assert f["position:raw"] == 1.0
        assert f["position:norm"] == 0.25
        assert extract_local_features(t, 3)["position:norm"] == 1.0

    def test_index_range(self):
        with pytest.raises(FeatureError):
            extract_local_features(thread_of(["A"]), 1)

    def test_boolean_block_has_43_features(self):
        f = extract_local_features(thread_of(["A"]), 0)
        names = [k for k in f if k.startswith(("bool:", "cat:", "same_user:"))]
        assert len(names) == 43
        assert sum(k.startswith("cat:") for k in names) == 26
        assert all(f[k] in (0.0, 1.0) for k in names)

    def test_category_one_hot(self):
        f = extract_local_features(thread_of(["A"], category="Visas and Permits"), 0)
        assert sum(f[f"cat:{c}"] for c in DEFAULT_CATEGORIES) == 1.0
        f = extract_local_features(thread_of(["A"], category="Not a category"), 0)
        assert sum(f[f"cat:{c}"] for c in DEFAULT_CATEGORIES) == 0.0

    def test_signal_words(self):
        t = thread_of(["A"], ["Yes, sure. OK, no idea; a.b@c.com"])
        f = extract_local_features(t, 0)
        for name in ("word_yes", "word_sure", "word_okay", "word_no", "starts_with_yes", "has_email", "has_at"):
            assert f[f"bool:{name}"] == 1.0, name
        assert f["bool:word_neither"] == 0.0

    def test_long_word(self):
        f = extract_local_features(thread_of(["A"], ["supercalifragilistic"]), 0)
        assert f["bool:long_word"] == 1.0

    def test_asker_proximity(self):
        t = thread_of(["B", "Q", "C", "Q"], ["try this", "thanks!", "hmm", "where exactly?"])
        f = extract_local_features(t, 0)
        assert f["asker:ack_follows"] == 1.0
        assert f["asker:nonack_follows"] == 1.0
        assert f["asker:question_follows"] == 1.0
        assert f["asker:question_precedes"] == 0.0
        assert extract_local_features(t, 2)["asker:question_follows"] == 1.0

    def test_chain_and_author_features(self):
        t = thread_of(["Q", "B", "Q", "B"])
        f = [extract_local_features(t, k) for k in range(4)]
        assert f[0]["chain:asker:begin"] == 1.0
        assert f[1]["chain:any:middle"] == 1.0
        assert f[3]["chain:asker:end"] == 1.0
        assert f[1]["author:first"] == 1.0 and f[3]["author:last"] == 1.0
        assert f[1]["author:count"] == 2.0

    def test_length(self):
        f = extract_local_features(thread_of(["A"], ["one two three"]), 0)
        assert f["len:tokens"] == 3.0
        assert f["len:chars"] == 13.0
        assert f["len:log_tokens"] == pytest.approx(math.log(4))

    def test_deterministic_and_finite(self):
        for thread in make_threads(1, 10):
            a = thread_local_features(thread)
            b = thread_local_features(thread)
            assert a == b
            for vec in a:
                assert list(vec) == list(b[0])
                assert all(math.isfinite(v) for v in vec.values())
                for name, value in vec.items():
                    if name.startswith("sim:"):
                        assert 0.0 <= value <= 1.0

    def test_pos_warning_and_annotations(self):
        t = thread_of(["A"], ["cats ran"])
        with pytest.warns(UserWarning, match="POS"):
            extract_local_features(t, 0)
        ann = {
            "Q1": TokenSequence(("cats", "ran"), ("cat", "run"), ("NNS", "VBD")),
            "C0": TokenSequence(("cats", "ran"), ("cat", "run"), ("NNS", "VBD")),
        }
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            f = extract_local_features(t, 0, annotations=ann)
        assert f["sim:jaccard:pos:1"] == 1.0
        assert f["sim:jaccard:lemma:2"] == 1.0

    def test_config_round_trip(self):
        cfg = FeatureConfig(ngram_orders=(2, 1), chain_gap=1)
        assert cfg.ngram_orders == (1, 2)
        assert FeatureConfig.from_dict(cfg.to_dict()) == cfg
        with pytest.raises(FeatureError):
            FeatureConfig(ngram_orders=(5,))

    def test_format_sparse(self):
        assert format_sparse({"b": 1.0, "a": 0.5}) == "a:0.5\nb:1.0"


class TestPairwiseFeatures:
    def setup_method(self):
        self.thread = thread_of(
            ["A", "B", "C"],
            ["same words here", "same words here", "something else entirely?"],
        )
        self.vecs = thread_local_features(self.thread)

    def test_identical_comments(self):
        vecs = [dict(self.vecs[0]), dict(self.vecs[0]), self.vecs[2]]
        f = extract_pairwise_features(self.thread, 0, 1, vecs, [0.5, 0.5, 0.5])
        assert all(v == 0.0 for k, v in f.items() if k.startswith("diff:"))
        sims = {k: v for k, v in f.items() if k.startswith("pair:") and ":pos:" not in k}
        for name, value in sims.items():
            # a 3-token body has no 4-grams, which gives the empty-bag 0
            if name.endswith(":4"):
                continue
            assert value == pytest.approx(1.0), name

    def test_prediction_features(self):
        f = extract_pairwise_features(self.thread, 0, 2, self.vecs, [0.9, 0.5, 0.2])
        assert f["pred:product"] == pytest.approx(0.18)
        assert f["pred:identical"] == 0.0
        assert (f["pred:i_good"], f["pred:j_good"], f["pred:i_bad"], f["pred:j_bad"]) == (1, 0, 0, 1)

    def test_swap_changes_only_orientation(self):
        preds = [0.9, 0.5, 0.2]
        fwd = extract_pairwise_features(self.thread, 0, 2, self.vecs, preds)
        rev_thread = Thread(
            "Q1", "Cars", "Q", "subject here", "is there a driving school?",
            [self.thread.comments[2], self.thread.comments[1], self.thread.comments[0]],
        )
        rev_vecs = [self.vecs[2], self.vecs[1], self.vecs[0]]
        rev = extract_pairwise_features(rev_thread, 0, 2, rev_vecs, preds[::-1])
        assert set(fwd) == set(rev)
        for name in fwd:
            if name.startswith(("diff:", "pair:")):
                assert fwd[name] == pytest.approx(rev[name]), name
        assert fwd["pred:i_good"] == rev["pred:j_good"]
        assert fwd["pred:i_bad"] == rev["pred:j_bad"]
        assert fwd["pred:product"] == pytest.approx(rev["pred:product"])
        assert fwd["pred:identical"] == rev["pred:identical"]

    def test_union_of_names(self):
        f = extract_pairwise_features(
            self.thread, 0, 1, [{"x": 2.0}, {"y": 1.5}, {}], [0.1, 0.2, 0.3]
        )
        assert f["diff:x"] == 2.0 and f["diff:y"] == 1.5

    def test_pair_order_enforced(self):
        with pytest.raises(FeatureError):
            extract_pairwise_features(self.thread, 1, 0, self.vecs, [0.5] * 3)
        with pytest.raises(FeatureError):
            extract_pairwise_features(self.thread, 0, 1, self.vecs[:2], [0.5] * 3)

    def test_thread_pairs_match_single_extraction(self):
        thread = make_threads(2, 1)[0]
        vecs = thread_local_features(thread)
        preds = list(np.linspace(0.1, 0.9, len(thread.comments)))
        allp = thread_pairwise_features(thread, vecs, preds)
        n = len(thread.comments)
        assert len(allp) == n * (n - 1) // 2
        for (i, j), vec in allp.items():
            assert vec == extract_pairwise_features(thread, i, j, vecs, preds)
            assert all(math.isfinite(v) for v in vec.values())
