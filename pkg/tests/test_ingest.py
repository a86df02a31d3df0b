import json
from pathlib import Path

import numpy as np
import pytest

from resembed.ingest import (ItemVocab, ingest_amazon, ingest_movielens, is_train_user,
                             sequences_for_graph)

FIX = Path(__file__).parent / "fixtures"
ML = FIX / "ml_ratings.csv"
AMZ = FIX / "amazon_reviews.jsonl"


def ml_file(tmp_path, rows):
    p = tmp_path / "r.csv"
    p.write_text("userId,movieId,rating,timestamp\n" + "".join(f"{r}\n" for r in rows))
    return p


class TestMovieLens:
    def test_six_row_fixture(self):
        assert is_train_user("1")
        res = ingest_movielens(ML, n=5)
        assert res.vocab.keys == ["10", "20", "30", "40", "50", "60"]
        assert res.train == [([0, 1, 2, 3, 4], 5, 1)]
        assert res.test == []
        assert res.sequences == [("1", [0, 1, 2, 3, 4, 5])]

    def test_rating_three_is_negative(self, tmp_path):
        rows = ["1,10,4,1", "1,20,4,2", "1,30,3,3"]
        res = ingest_movielens(ml_file(tmp_path, rows), n=2)
        assert res.train == [([0, 1], 2, 0)]

    def test_low_ratings_excluded_from_history(self, tmp_path):
        rows = ["1,10,4,1", "1,20,2,2", "1,30,5,3", "1,40,5,4"]
        res = ingest_movielens(ml_file(tmp_path, rows), n=2)
        assert res.train == [([0, 2], 3, 1)]

    def test_short_history_gives_no_samples(self, tmp_path):
        with pytest.raises(ValueError, match="no samples"):
            ingest_movielens(ml_file(tmp_path, ["1,10,4,1", "1,20,5,2"]), n=5)

    def test_malformed_rows_are_counted(self, tmp_path):
        rows = ["1,10,4,1", "1,20,x,2", "1,30,5,-4", "1,40,5,3"]
        res = ingest_movielens(ml_file(tmp_path, rows), n=1)
        assert res.skipped == 2 and res.train == [([0], 1, 1)]

    def test_test_users_never_feed_the_graph(self, tmp_path):
        rows = [f"{u},{m},4,{m}" for u in ("1", "9") for m in range(1, 5)]
        res = ingest_movielens(ml_file(tmp_path, rows), n=2)
        assert res.train_users == ["1"] and res.test_users == ["9"]
        assert [u for u, _ in res.sequences] == ["1"]
        assert len(res.test) == 2
        H = len(res.vocab)
        assert all(i < H for s in sequences_for_graph(res) for i in s)

    def test_byte_stable_output(self, tmp_path):
        for name in ("a", "b"):
            ingest_movielens(ML, n=5).write(tmp_path / name)
        for f in ("train.jsonl", "test.jsonl", "vocab.json", "sequences.jsonl"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
        assert json.loads((tmp_path / "a" / "vocab.json").read_text())["items"][0] == "10"


class TestAmazon:
    def test_five_line_fixture(self):
        assert is_train_user("A1") and not is_train_user("A2")
        res = ingest_amazon(AMZ, seed=0)
        assert res.vocab.keys == ["a", "b", "c", "d", "e"]
        (pos, neg), (tpos, tneg) = res.train, res.test
        assert pos == ([0, 1], 2, 1)
        assert neg[0] == [0, 1] and neg[2] == 0 and neg[1] != 2 and 0 <= neg[1] < 5
        assert tpos == ([3], 4, 1)
        assert tneg[0] == [3] and tneg[2] == 0 and tneg[1] != 4
        assert res.sequences == [("A1", [0, 1, 2])]

    def test_same_seed_same_negatives(self):
        assert ingest_amazon(AMZ, seed=3).train == ingest_amazon(AMZ, seed=3).train

    def test_negative_never_equals_positive(self, tmp_path):
        p = tmp_path / "r.jsonl"
        p.write_text("".join(json.dumps({"user": f"u{k}", "item": it, "timestamp": t}) + "\n"
                             for k in range(30) for t, it in enumerate(("x", "y", f"z{k % 3}"))))
        res = ingest_amazon(p, seed=1)
        for (h, t, y), (h2, t2, y2) in zip(res.train[::2] + res.test[::2], res.train[1::2] + res.test[1::2]):
            assert y == 1 and y2 == 0 and h == h2 and t != t2

    def test_single_review_user_and_bad_line(self, tmp_path):
        p = tmp_path / "r.jsonl"
        p.write_text('{"reviewerID": "A1", "asin": "a", "unixReviewTime": 1}\nnot json\n')
        res = ingest_amazon(p)
        assert res.train == [] and res.test == [] and res.skipped == 1


def test_vocab_round_trip(tmp_path):
    v = ItemVocab(["b", "a", "b", "c"])
    assert len(v) == 3 and v["a"] == 1
    v.write(tmp_path / "v.json")
    assert ItemVocab.read(tmp_path / "v.json").keys == ["b", "a", "c"]
    data = ingest_movielens(ML, n=5).data("train")
    np.testing.assert_array_equal(data.target, [5])
