import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synthdata import random_corpus

from fedleak.attack import (
    AttackConfig,
    build_contextual,
    build_generalized,
    build_laft_dataset,
    default_budgets,
    execute_queries,
    frequency_select,
    load_generation_set,
)
from fedleak.corpus import (
    BOUNDARY_TOKEN,
    AnnotatedCorpus,
    Document,
    PiiSpan,
    TokenStream,
    PiiOccurrence,
    concatenate,
)
from fedleak.errors import BackendError, ConfigurationError, StorageError
from fedleak.lm import NGramBackend, train
from fedleak.tokenizers import Tokenizer


def stream_of(tokens, locs, boundary=None):
    occurrences = [
        PiiOccurrence(
            loc=loc,
            span=PiiSpan("d", 0, 1, "Basic", "Name", (tokens[loc],)),
        )
        for loc in locs
    ]
    return TokenStream(tokens=list(tokens), occurrences=occurrences, boundary=boundary)


class TestBuildContextual:
    def test_window_before_occurrence(self):
        ms = build_contextual(stream_of(["a", "b", "c", "P"], [3]), 2)
        assert ms.entries == {("b", "c"): 1}
        assert ms.provenance == "contextual"

    def test_corpus_start_truncation(self):
        ms = build_contextual(stream_of(["t0", "P", "x"], [1]), 50)
        assert ms.entries == {("t0",): 1}

    def test_multiset_merge(self):
        ms = build_contextual(
            stream_of(["b", "c", "P", "b", "c", "Q"], [2, 5]), 2
        )
        assert ms.entries == {("b", "c"): 2}

    def test_occurrence_at_position_zero_skipped(self):
        ms = build_contextual(stream_of(["P", "b", "c", "Q"], [0, 3]), 2)
        assert ms.entries == {("b", "c"): 1}

    def test_boundary_truncates_window(self):
        tokens = ["x", "y", BOUNDARY_TOKEN, "z", "P"]
        ms = build_contextual(stream_of(tokens, [4], boundary=BOUNDARY_TOKEN), 4)
        assert ms.entries == {("z",): 1}

    def test_occurrence_right_after_boundary_skipped(self):
        tokens = ["x", BOUNDARY_TOKEN, "P"]
        ms = build_contextual(stream_of(tokens, [2], boundary=BOUNDARY_TOKEN), 4)
        assert ms.entries == {}


class TestBuildGeneralized:
    def test_all_suffix_windows(self):
        ms = build_generalized(stream_of(["a", "b", "P"], [2]), 2)
        assert ms.entries == {("b",): 1, ("a", "b"): 1}

    def test_multiset_size_formula_single_doc(self):
        rng = random.Random(3)
        tokens = [rng.choice("abcd") for _ in range(40)]
        locs = sorted(rng.sample(range(1, 40), 6))
        lam = 7
        ms = build_generalized(stream_of(tokens, locs), lam)
        assert ms.multiset_size() == sum(min(lam, loc) for loc in locs)
        assert ms.unique_size() <= ms.multiset_size()

    @settings(max_examples=30, deadline=None)
    @given(st.integers(min_value=0, max_value=10_000))
    def test_invariant_under_document_reordering(self, seed):
        rng = random.Random(seed)
        corpus = random_corpus(rng, span_prob=0.9)
        if len(corpus.spans) < 2:
            return
        reordered = AnnotatedCorpus(
            documents=list(reversed(corpus.documents)),
            spans=corpus.spans,
            owner=corpus.owner,
            tokenizer=corpus.tokenizer,
        )
        lam = 4
        for builder in (build_contextual, build_generalized):
            a = builder(concatenate(corpus, boundary=BOUNDARY_TOKEN), lam)
            b = builder(concatenate(reordered, boundary=BOUNDARY_TOKEN), lam)
            assert a.entries == b.entries

    @settings(max_examples=40, deadline=None)
    @given(st.integers(min_value=0, max_value=10_000))
    def test_contextual_subset_of_generalized(self, seed):
        corpus = random_corpus(random.Random(seed), span_prob=0.9)
        if not corpus.spans:
            return
        stream = concatenate(corpus, boundary=BOUNDARY_TOKEN)
        lam = 3
        contextual = build_contextual(stream, lam)
        generalized = build_generalized(stream, lam)
        assert set(contextual.entries) <= set(generalized.entries)
        for prefix in generalized.entries:
            assert BOUNDARY_TOKEN not in prefix
        for prefix in contextual.entries:
            assert BOUNDARY_TOKEN not in prefix


class TestFrequencySelect:
    def setup_method(self):
        from fedleak.attack import PrefixMultiset

        self.ms = PrefixMultiset(
            entries={("p1",): 3, ("p2",): 1, ("p3",): 3},
            provenance="generalized",
            prefix_length=5,
        )

    def test_threshold_partition(self):
        assert frequency_select(self.ms, freq_threshold=2) == [("p1",), ("p3",)]

    def test_full_set_sorted_by_frequency(self):
        assert frequency_select(self.ms) == [("p1",), ("p3",), ("p2",)]

    def test_budget_top_one(self):
        from fedleak.attack import PrefixMultiset

        ms = PrefixMultiset(
            entries={("p1",): 3, ("p2",): 5},
            provenance="generalized",
            prefix_length=5,
        )
        assert frequency_select(ms, budget=1) == [("p2",)]

    def test_threshold_above_max_yields_empty(self):
        assert frequency_select(self.ms, freq_threshold=10) == []

    def test_empty_multiset_rejected(self):
        from fedleak.attack import PrefixMultiset

        empty = PrefixMultiset(entries={}, provenance="contextual", prefix_length=5)
        with pytest.raises(ConfigurationError):
            frequency_select(empty)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(min_value=0, max_value=10_000))
    def test_counts_nonincreasing(self, seed):
        corpus = random_corpus(random.Random(seed), span_prob=0.9)
        if not corpus.spans:
            return
        stream = concatenate(corpus, boundary=BOUNDARY_TOKEN)
        ms = build_generalized(stream, 4)
        if not ms.entries:
            return
        ranked = frequency_select(ms)
        counts = [ms.entries[p] for p in ranked]
        assert counts == sorted(counts, reverse=True)


def test_default_budgets():
    assert default_budgets(50) == [50]
    assert default_budgets(100) == [100]
    assert default_budgets(3500) == [100, 1000, 3500]
    assert default_budgets(3_013_161) == [
        100,
        1000,
        10_000,
        100_000,
        1_000_000,
        3_013_161,
    ]


def training_corpus():
    texts = ["u v w name P0 x", "u v w name P1 y", "m n name P0 z"]
    docs = [
        Document(
            doc_id=f"d{i}", text=t, tokens=tuple(t.split()), task_tag=None
        )
        for i, t in enumerate(texts)
    ]
    return AnnotatedCorpus(documents=docs, spans=[], owner="a", tokenizer="whitespace")


class CountingBackend(NGramBackend):
    def __init__(self, model):
        super().__init__(model)
        self.calls = 0

    def generate(self, req):
        self.calls += 1
        return super().generate(req)


class FailingBackend(NGramBackend):
    """Raises for chosen prefixes until told to heal."""

    def __init__(self, model, poison):
        super().__init__(model)
        self.poison = set(poison)

    def generate(self, req):
        if req.prefix in self.poison:
            raise BackendError("injected failure", status=500)
        return super().generate(req)


class TestExecuteQueries:
    def setup_method(self):
        self.model = train(training_corpus(), order=3)
        self.cfg = AttackConfig(
            prefix_length=2,
            samples_per_prefix=3,
            max_new_tokens=2,
            temperature=1.0,
            seed=11,
        )
        self.prefixes = [("w", "name"), ("n", "name"), ("v", "w")]

    def test_query_accounting_and_lengths(self):
        gens = execute_queries(
            NGramBackend(self.model), self.prefixes, self.cfg
        )
        assert gens.total_queries == 3 * len(self.prefixes)
        assert len(gens.records) == 3 * len(self.prefixes)
        assert all(len(r.output) <= 2 for r in gens.records)

    def test_deterministic_rerun(self):
        a = execute_queries(NGramBackend(self.model), self.prefixes, self.cfg)
        b = execute_queries(NGramBackend(self.model), self.prefixes, self.cfg)
        assert a.records == b.records
        assert a.total_queries == b.total_queries

    def test_order_independent_of_workers(self):
        seq = execute_queries(NGramBackend(self.model), self.prefixes, self.cfg)
        par = execute_queries(
            NGramBackend(self.model), self.prefixes, self.cfg, max_workers=4
        )
        assert seq.records == par.records

    def test_journal_resume_skips_completed(self, tmp_path):
        backend = CountingBackend(self.model)
        tok = Tokenizer("whitespace")
        first = execute_queries(
            backend, self.prefixes, self.cfg, journal_dir=tmp_path, tokenizer=tok
        )
        assert backend.calls == len(self.prefixes)
        second = execute_queries(
            backend, self.prefixes, self.cfg, journal_dir=tmp_path, tokenizer=tok
        )
        assert backend.calls == len(self.prefixes)  # nothing re-queried
        assert second.records == first.records
        loaded = load_generation_set(tmp_path, self.cfg, tok)
        assert loaded.records == first.records
        assert loaded.total_queries == first.total_queries

    def test_journal_config_mismatch_rejected(self, tmp_path):
        tok = Tokenizer("whitespace")
        execute_queries(
            NGramBackend(self.model),
            self.prefixes,
            self.cfg,
            journal_dir=tmp_path,
            tokenizer=tok,
        )
        other = AttackConfig(
            prefix_length=2,
            samples_per_prefix=5,
            max_new_tokens=2,
            seed=11,
        )
        with pytest.raises(StorageError):
            execute_queries(
                NGramBackend(self.model),
                self.prefixes,
                other,
                journal_dir=tmp_path,
                tokenizer=tok,
            )

    def test_partial_failure_reported_then_healed(self, tmp_path):
        tok = Tokenizer("whitespace")
        backend = FailingBackend(self.model, poison=[("n", "name")])
        partial = execute_queries(
            backend, self.prefixes, self.cfg, journal_dir=tmp_path, tokenizer=tok
        )
        assert partial.failed_prefixes == [1]
        assert partial.total_queries == 3 * 2
        assert {r.prefix_idx for r in partial.records} == {0, 2}

        backend.poison.clear()
        healed = execute_queries(
            backend, self.prefixes, self.cfg, journal_dir=tmp_path, tokenizer=tok
        )
        assert healed.failed_prefixes == []
        assert healed.total_queries == 3 * 3
        assert {r.prefix_idx for r in healed.records} == {0, 1, 2}

    def test_empty_prefixes_rejected(self):
        with pytest.raises(ConfigurationError):
            execute_queries(NGramBackend(self.model), [], self.cfg)


class TestLaftDataset:
    def test_reproducible(self):
        prefixes = [("p1",), ("p2",)]
        pii = [("s1",), ("s2",)]
        a = build_laft_dataset(prefixes, pii, k_prefixes=2, k_pii=2, seed=3)
        b = build_laft_dataset(prefixes, pii, k_prefixes=2, k_pii=2, seed=3)
        assert a == b
        assert len(a) == 2
        assert {pair[0] for pair in a} == {("p1",), ("p2",)}

    def test_sampling_with_replacement_when_pool_small(self):
        pairs = build_laft_dataset(
            [("p",)], [("only",)], k_prefixes=1, k_pii=5, seed=0
        )
        assert pairs == [(("p",), ("only",))]

    def test_positional_pairing_sizes(self):
        prefixes = [(f"p{i}",) for i in range(10)]
        pii = [(f"s{i}",) for i in range(100)]
        pairs = build_laft_dataset(prefixes, pii, k_prefixes=7, k_pii=4, seed=1)
        assert len(pairs) == 7  # min(k_prefixes, |prefixes|), cycled PII
        used = [t for _, t in pairs]
        assert len(set(used)) <= 4

    def test_empty_prefixes_rejected(self):
        with pytest.raises(ConfigurationError):
            build_laft_dataset([], [("s",)], k_prefixes=1, k_pii=1, seed=0)
