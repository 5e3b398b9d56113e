import numpy as np
import pytest

from arcparse.conllx import Relation, Sentence
from arcparse.evaluator import AlignmentError, attachment_scores, is_punctuation
from arcparse.synthetic import NON_ROOT, random_heads, random_treebank


def corrupt(sentence, rng, p_head=0.3, p_label=0.3):
    heads, rels = [], []
    n = len(sentence)
    for h, r in zip(sentence.heads, sentence.rels):
        heads.append(int(rng.integers(0, n + 1)) if rng.random() < p_head else h)
        rels.append(NON_ROOT[int(rng.integers(len(NON_ROOT)))] if rng.random() < p_label else r)
    return sentence.with_annotation(heads, rels)


def test_identity_is_perfect():
    corpus = random_treebank(30, seed=1)
    result = attachment_scores(corpus, corpus)
    assert result.uas == result.las == 1.0
    assert result.token_count == sum(len(s) for s in corpus)


def test_constructed_counts():
    rng = np.random.default_rng(0)
    gold = Sentence.from_columns([f"w{i}" for i in range(10)], random_heads(10, rng),
                                 [Relation.ATT] * 10)
    heads, rels = list(gold.heads), list(gold.rels)
    for d in (0, 1):  # two wrong heads
        heads[d] = next(h for h in range(11) if h != gold.heads[d])
    rels[2] = Relation.SBV  # right head, wrong label
    pred = gold.with_annotation(heads, rels)
    result = attachment_scores([gold], [pred])
    assert result.head_correct == 8 and result.labeled_correct == 7
    assert result.uas == 0.80 and result.las == 0.70


def test_all_heads_wrong():
    gold = Sentence.from_columns(["a", "b", "c"], [0, 1, 1], [Relation.HED, Relation.ATT, Relation.ATT])
    pred = gold.with_annotation([2, 3, 0], gold.rels)
    result = attachment_scores([gold], [pred])
    assert result.uas == 0.0 and result.las == 0.0


def test_las_never_exceeds_uas():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        gold = random_treebank(1, seed=int(rng.integers(1 << 30)), max_len=8)
        pred = [corrupt(s, rng) for s in gold]
        result = attachment_scores(gold, pred)
        assert result.las <= result.uas


def test_sentence_order_does_not_matter():
    rng = np.random.default_rng(4)
    gold = random_treebank(20, seed=4)
    pred = [corrupt(s, rng) for s in gold]
    order = rng.permutation(20)
    a = attachment_scores(gold, pred)
    b = attachment_scores([gold[i] for i in order], [pred[i] for i in order])
    assert (a.uas, a.las) == (b.uas, b.las)


def test_concatenation_is_token_weighted():
    rng = np.random.default_rng(5)
    gold = random_treebank(40, seed=5)
    pred = [corrupt(s, rng) for s in gold]
    left = attachment_scores(gold[:13], pred[:13])
    right = attachment_scores(gold[13:], pred[13:])
    both = attachment_scores(gold, pred)
    total = left.token_count + right.token_count
    assert both.uas == pytest.approx((left.uas * left.token_count + right.uas * right.token_count) / total,
                                     abs=1e-12)
    assert both.las == pytest.approx((left.las * left.token_count + right.las * right.token_count) / total,
                                     abs=1e-12)


def test_empty():
    result = attachment_scores([], [])
    assert result.token_count == 0 and result.uas == 0.0


def test_breakdowns_sum_to_total():
    rng = np.random.default_rng(6)
    gold = random_treebank(50, seed=6, max_len=25)
    pred = [corrupt(s, rng) for s in gold]
    result = attachment_scores(gold, pred)
    assert sum(t.total for t in result.per_relation.values()) == result.token_count
    assert sum(t.heads for t in result.per_length.values()) == result.head_correct
    assert list(result.per_length) == sorted(result.per_length, key=lambda b: int(b.split("-")[0]))


class TestPunctuation:
    def test_classifier(self):
        assert is_punctuation("，") and is_punctuation("...") and is_punctuation("《")
        assert not is_punctuation("书") and not is_punctuation("a.") and not is_punctuation("")

    def test_excluded_only_when_mt(self):
        gold = Sentence.from_columns(["他", "，", "。"], [0, 1, 1], [Relation.HED, Relation.MT, Relation.ATT])
        pred = gold.with_annotation([0, 3, 2], gold.rels)
        assert attachment_scores([gold], [pred]).token_count == 3
        result = attachment_scores([gold], [pred], exclude_mt_punct=True)
        assert result.token_count == 2
        assert result.uas == 0.5


class TestAlignment:
    def test_sentence_count(self):
        corpus = random_treebank(3, seed=0)
        with pytest.raises(AlignmentError):
            attachment_scores(corpus, corpus[:2])

    def test_token_count(self):
        a = random_treebank(1, seed=0, min_len=3, max_len=3)
        b = random_treebank(1, seed=1, min_len=4, max_len=4)
        with pytest.raises(AlignmentError):
            attachment_scores(a, b)

    def test_form_mismatch(self):
        gold = Sentence.from_columns(["a"], [0], [Relation.HED])
        pred = Sentence.from_columns(["b"], [0], [Relation.HED])
        with pytest.raises(AlignmentError, match="form"):
            attachment_scores([gold], [pred])


def test_key_value_block():
    corpus = random_treebank(2, seed=0, min_len=2, max_len=2)
    text = attachment_scores(corpus, corpus).key_values()
    assert text == "uas=1.000000\nlas=1.000000\ntokens=4\n"
