import random

import pytest

from fedleak import _kernels
from fedleak._kernels import pure

compiled = pytest.importorskip(
    "fedleak._kernels._speedups", reason="compiled kernels not built"
)


def as_q(seq):
    from array import array

    return array("q", seq)


class TestCountNgrams:
    def test_boundary_never_in_context_but_may_follow(self):
        ids = [1, 2, 0, 3, 4]  # boundary id 0 between documents
        tables = pure.count_ngrams(ids, 3, 0)
        assert tables[1] == {(1,): {2: 1}, (2,): {0: 1}, (3,): {4: 1}}
        for ctx in tables[2]:
            assert 0 not in ctx
        assert tables[2] == {(1, 2): {0: 1}}

    def test_counts_sum_to_positions(self):
        ids = [5, 6, 7, 5, 6]
        tables = pure.count_ngrams(ids, 1, -1)
        assert sum(tables[0][()].values()) == len(ids)

    @pytest.mark.parametrize("trial", range(20))
    def test_parity_with_compiled(self, trial):
        rng = random.Random(trial)
        n = rng.randint(0, 200)
        ids = [rng.randint(0, 6) for _ in range(n)]
        order = rng.randint(1, 5)
        boundary = rng.choice([0, -5])
        assert compiled.count_ngrams(as_q(ids), order, boundary) == (
            pure.count_ngrams(ids, order, boundary)
        )


class TestSubsequenceSearch:
    def test_empty_needle_matches_at_zero(self):
        assert pure.find_subsequence([1, 2], []) == 0
        assert compiled.find_subsequence(as_q([1, 2]), as_q([])) == 0

    def test_needle_longer_than_haystack(self):
        assert pure.find_subsequence([1], [1, 2]) == -1
        assert compiled.find_subsequence(as_q([1]), as_q([1, 2])) == -1

    @pytest.mark.parametrize("trial", range(30))
    def test_parity_with_compiled(self, trial):
        rng = random.Random(1000 + trial)
        hay = [rng.randint(0, 3) for _ in range(rng.randint(0, 60))]
        needles = [
            [rng.randint(0, 3) for _ in range(rng.randint(1, 4))]
            for _ in range(8)
        ]
        assert compiled.contains_flags(
            as_q(hay), [as_q(n) for n in needles]
        ) == pure.contains_flags(hay, needles)
        for needle in needles:
            assert compiled.find_subsequence(
                as_q(hay), as_q(needle)
            ) == pure.find_subsequence(hay, needle)


class TestDocFrequencies:
    @pytest.mark.parametrize("trial", range(20))
    def test_parity_with_compiled(self, trial):
        rng = random.Random(2000 + trial)
        docs = [
            [rng.randint(0, 4) for _ in range(rng.randint(0, 25))]
            for _ in range(rng.randint(0, 10))
        ]
        needles = [
            [rng.randint(0, 4) for _ in range(rng.randint(1, 3))]
            for _ in range(6)
        ]
        assert compiled.doc_frequencies(
            [as_q(d) for d in docs], [as_q(n) for n in needles]
        ) == pure.doc_frequencies(docs, needles)


class TestEditDistance:
    @pytest.mark.parametrize(
        "a,b,expected",
        [
            ([], [], 0),
            ([1, 2, 3], [1, 2, 3], 0),
            ([1, 2, 3], [], 3),
            ([1, 2, 3], [1, 3], 1),
            ([1, 2], [3, 4], 2),
            ([1, 2, 3, 4], [2, 3, 4, 5], 2),
        ],
    )
    def test_known_values(self, a, b, expected):
        assert pure.edit_distance(a, b) == expected
        assert compiled.edit_distance(as_q(a), as_q(b)) == expected

    @pytest.mark.parametrize("trial", range(30))
    def test_parity_with_compiled(self, trial):
        rng = random.Random(3000 + trial)
        a = [rng.randint(0, 4) for _ in range(rng.randint(0, 30))]
        b = [rng.randint(0, 4) for _ in range(rng.randint(0, 30))]
        assert compiled.edit_distance(as_q(a), as_q(b)) == pure.edit_distance(a, b)


def test_dispatch_layer_accepts_plain_lists():
    assert _kernels.edit_distance([1, 2], [1]) == 1
    assert _kernels.find_subsequence([1, 2, 3], [2, 3]) == 1
    assert _kernels.contains_flags([1, 2, 3], [[2], [9]]) == [True, False]
    assert _kernels.doc_frequencies([[1, 2]], [[1], [7]]) == [1, 0]
    tables = _kernels.count_ngrams([1, 2, 1, 2], 2, -1)
    assert tables[1][(1,)] == {2: 2}
