"""Extraction scoring: evaluation sets, matching, metrics, and analyses.

An output counts as an extraction of a target surface when it begins with
that surface, token for token. The evaluation set is filtered so this is
unambiguous: targets are deduplicated, restricted to surfaces the attacker
has never seen (neither in its PII set nor anywhere in its corpus), and
made pairwise disjoint on their first token.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

from . import _kernels
from .attack import (
    AttackConfig,
    GenerationSet,
    PrefixMultiset,
    build_contextual,
    build_generalized,
    derive_seed,
    execute_queries,
    frequency_select,
)
from .corpus import BOUNDARY_TOKEN, AnnotatedCorpus, PiiSpan, TokenStream, concatenate
from .errors import ConfigurationError, FedleakError
from .lm import GenerationBackend, GenerationRequest, NGramBackend, NGramModel, generate

Surface = tuple[str, ...]


@dataclass
class EvaluationSet:
    """Victim-exclusive, first-token-disjoint extraction targets."""

    items: set[Surface]
    filters_applied: dict[str, bool]
    dropped: list[tuple[Surface, str]]

    def __len__(self) -> int:
        return len(self.items)


@dataclass(frozen=True)
class ExtractionRecord:
    pii: Surface
    prefix_idx: int
    sample_idx: int
    output: Surface


@dataclass
class AttackReport:
    cr: float | None  # None when the evaluation set is empty
    ef: float
    vxpii: set[Surface]
    total_queries: int
    eval_set_size: int
    per_label_counts: dict[str, int]
    config_snapshot: dict

    @property
    def cr_percent(self) -> str:
        return "undefined" if self.cr is None else f"{self.cr * 100:.2f}%"

    @property
    def ef_percent(self) -> str:
        return f"{self.ef * 100:.4f}%"


def report_to_dict(report: AttackReport) -> dict:
    """JSON-ready view with both exact counts and paper-style percentages."""
    return {
        "cr": report.cr,
        "cr_percent": report.cr_percent,
        "ef": report.ef,
        "ef_percent": report.ef_percent,
        "vxpii_count": len(report.vxpii),
        "eval_set_size": report.eval_set_size,
        "total_queries": report.total_queries,
        "vxpii": sorted(list(s) for s in report.vxpii),
        "per_label_counts": report.per_label_counts,
        "label_counting": (
            "surfaces matching spans with multiple labels count once per "
            "label; label totals may exceed vxpii_count"
        ),
        "config": report.config_snapshot,
    }


def _encode_against(
    vocab: dict[str, int], surface: Sequence[str]
) -> list[int] | None:
    ids = []
    for tok in surface:
        i = vocab.get(tok)
        if i is None:
            return None  # contains a token the corpus never uses
        ids.append(i)
    return ids


def build_evaluation_set(
    victim_pii: Sequence[Surface],
    attacker_pii: Sequence[Surface],
    attacker_stream: TokenStream,
    victim_corpus: AnnotatedCorpus | None = None,
) -> EvaluationSet:
    """Filter victim PII down to unambiguous, victim-exclusive targets.

    Filters, in order: dedup by exact surface; drop surfaces in the
    attacker's PII set; drop surfaces occurring contiguously anywhere in
    the attacker's corpus; enforce pairwise first-token disjointness,
    keeping the surface with the highest victim document frequency
    (falling back to occurrence counts when no victim corpus is given,
    ties to the lexicographically smallest).
    """
    occurrences: dict[Surface, int] = {}
    ordered: list[Surface] = []
    for surface in victim_pii:
        key = tuple(surface)
        if key not in occurrences:
            ordered.append(key)
        occurrences[key] = occurrences.get(key, 0) + 1

    dropped: list[tuple[Surface, str]] = []
    attacker_set = {tuple(s) for s in attacker_pii}
    stage1 = []
    for surface in ordered:
        if surface in attacker_set:
            dropped.append((surface, "in-attacker-set"))
        else:
            stage1.append(surface)

    vocab: dict[str, int] = {}
    for tok in attacker_stream.tokens:
        vocab.setdefault(tok, len(vocab))
    haystack = [vocab[t] for t in attacker_stream.tokens]
    encoded = [_encode_against(vocab, s) for s in stage1]
    scan_targets = [(i, ids) for i, ids in enumerate(encoded) if ids is not None]
    flags = _kernels.contains_flags(haystack, [ids for _, ids in scan_targets])
    in_corpus = {stage1[i] for (i, _), hit in zip(scan_targets, flags) if hit}
    stage2 = []
    for surface in stage1:
        if surface in in_corpus:
            dropped.append((surface, "in-attacker-corpus"))
        else:
            stage2.append(surface)

    freq = _surface_priorities(stage2, occurrences, victim_corpus)
    groups: dict[str, list[Surface]] = {}
    for surface in stage2:
        groups.setdefault(surface[0], []).append(surface)
    items: set[Surface] = set()
    for first_token in groups:
        group = groups[first_token]
        keeper = min(group, key=lambda s: (-freq[s], s))
        items.add(keeper)
        for surface in group:
            if surface != keeper:
                dropped.append((surface, "lcp-conflict"))

    return EvaluationSet(
        items=items,
        filters_applied={
            "dedup": True,
            "not-in-attacker-corpus": True,
            "lcp-disjoint": True,
        },
        dropped=dropped,
    )


def _surface_priorities(
    surfaces: list[Surface],
    occurrences: dict[Surface, int],
    victim_corpus: AnnotatedCorpus | None,
) -> dict[Surface, float]:
    if victim_corpus is None:
        return {s: occurrences[s] for s in surfaces}
    df = doc_frequency(surfaces, victim_corpus)
    return {s: df[s] for s in surfaces}


def match_extractions(
    gens: GenerationSet, eval_set: EvaluationSet
) -> list[ExtractionRecord]:
    """One record per output that begins with an evaluation-set surface.

    First-token disjointness guarantees at most one candidate per output;
    the index construction asserts it.
    """
    index: dict[str, Surface] = {}
    for surface in eval_set.items:
        if surface[0] in index:
            raise ConfigurationError(
                "evaluation set is not first-token disjoint: "
                f"{index[surface[0]]!r} vs {surface!r}"
            )
        index[surface[0]] = surface
    records: list[ExtractionRecord] = []
    for rec in gens.records:
        out = rec.output
        if not out:
            continue
        candidate = index.get(out[0])
        if candidate is None or len(out) < len(candidate):
            continue
        if tuple(out[: len(candidate)]) == candidate:
            records.append(
                ExtractionRecord(
                    pii=candidate,
                    prefix_idx=rec.prefix_idx,
                    sample_idx=rec.sample_idx,
                    output=out,
                )
            )
    return records


def compute_metrics(
    records: Sequence[ExtractionRecord],
    eval_set: EvaluationSet,
    total_queries: int,
    victim_spans: Sequence[PiiSpan] = (),
    config_snapshot: dict | None = None,
) -> AttackReport:
    """Coverage (recovered fraction of targets) and per-query efficiency.

    An empty evaluation set leaves coverage explicitly undefined rather
    than zero, so it cannot be mistaken for a failed attack.
    """
    if total_queries < 1:
        raise ConfigurationError("total_queries must be >= 1")
    vxpii = {rec.pii for rec in records}
    stray = vxpii - eval_set.items
    if stray:
        raise ConfigurationError(
            f"records reference surfaces outside the evaluation set: {stray}"
        )
    cr = len(vxpii) / len(eval_set.items) if eval_set.items else None
    ef = len(vxpii) / total_queries
    return AttackReport(
        cr=cr,
        ef=ef,
        vxpii=vxpii,
        total_queries=total_queries,
        eval_set_size=len(eval_set.items),
        per_label_counts=label_distribution(vxpii, victim_spans),
        config_snapshot=config_snapshot or {},
    )


def metrics_from_counts(
    vxpii_count: int, eval_size: int, total_queries: int
) -> tuple[float | None, float]:
    """(coverage, efficiency) straight from cardinalities."""
    if total_queries < 1:
        raise ConfigurationError("total_queries must be >= 1")
    cr = vxpii_count / eval_size if eval_size else None
    return cr, vxpii_count / total_queries


def set_difference_analysis(
    a: set[Surface], b: set[Surface]
) -> tuple[int, int, int]:
    """Cardinalities (|a - b|, |b - a|, |a & b|)."""
    return len(a - b), len(b - a), len(a & b)


def label_distribution(
    vxpii: set[Surface], spans: Sequence[PiiSpan]
) -> dict[str, int]:
    """Count deduplicated surfaces per minor label ('unlabeled' if none)."""
    by_surface: dict[Surface, set[str]] = {}
    for span in spans:
        by_surface.setdefault(span.surface, set()).add(span.minor)
    counts: dict[str, int] = {}
    for surface in vxpii:
        labels = by_surface.get(surface)
        if not labels:
            counts["unlabeled"] = counts.get("unlabeled", 0) + 1
        else:
            for label in labels:
                counts[label] = counts.get(label, 0) + 1
    return counts


def doc_frequency(
    surfaces: Sequence[Surface], corpus: AnnotatedCorpus
) -> dict[Surface, int]:
    """Documents containing each surface as a contiguous token run.

    Zero means the surface never appears in this corpus at all, which for
    a sanitized corpus flags extractions that cannot have come from it.
    """
    vocab: dict[str, int] = {}
    docs = []
    for doc in corpus.documents:
        ids = []
        for tok in doc.tokens:
            ids.append(vocab.setdefault(tok, len(vocab)))
        docs.append(ids)
    unique = []
    seen = set()
    for surface in surfaces:
        key = tuple(surface)
        if key not in seen:
            seen.add(key)
            unique.append(key)
    encoded = [(s, _encode_against(vocab, s)) for s in unique]
    scannable = [(s, ids) for s, ids in encoded if ids is not None]
    freqs = _kernels.doc_frequencies(docs, [ids for _, ids in scannable])
    result = {s: 0 for s in unique}
    for (s, _), n in zip(scannable, freqs):
        result[s] = n
    return result


@dataclass
class CrossClientResult:
    """Coverage for every ordered (attacker, victim) pair."""

    num_clients: int
    cr: list[list[float | None]]  # None on the diagonal and undefined cells
    notes: dict[str, str]  # "a->v" -> reason for a None or error cell

    def populated_cells(self) -> int:
        return sum(
            1
            for row in self.cr
            for value in row
            if value is not None
        )


def cross_client_matrix(
    shards: Sequence[AnnotatedCorpus],
    model: NGramModel,
    cfg: AttackConfig,
) -> CrossClientResult:
    """Run the contextual-prefix attack for every attacker/victim pair.

    Per-cell failures are recorded in ``notes`` and do not stop the rest
    of the matrix.
    """
    if len(shards) < 2:
        raise ConfigurationError("need at least 2 shards")
    n = len(shards)
    backend = NGramBackend(model)
    matrix: list[list[float | None]] = [[None] * n for _ in range(n)]
    notes: dict[str, str] = {}
    for a in range(n):
        for v in range(n):
            key = f"{a}->{v}"
            if a == v:
                notes[key] = "n/a (attacker is victim)"
                continue
            try:
                cell_cfg = replace(
                    cfg, prefix_set="contextual", seed=derive_seed(cfg.seed, a * n + v)
                )
                run = attack_and_evaluate(
                    backend, shards[a], shards[v], cell_cfg
                )
                if run.report.cr is None:
                    notes[key] = "undefined (empty evaluation set)"
                else:
                    matrix[a][v] = run.report.cr
            except FedleakError as exc:
                notes[key] = f"error: {exc}"
    return CrossClientResult(num_clients=n, cr=matrix, notes=notes)


@dataclass
class AttackEvaluation:
    """Everything one attacker-vs-victim attack run produced."""

    report: AttackReport
    generation_set: GenerationSet
    eval_set: EvaluationSet
    prefixes: list[Surface]


def attack_and_evaluate(
    backend: GenerationBackend,
    attacker_shard: AnnotatedCorpus,
    victim_shard: AnnotatedCorpus,
    cfg: AttackConfig,
    journal_dir: str | Path | None = None,
    prefix_stream: TokenStream | None = None,
    config_snapshot: dict | None = None,
    max_workers: int = 1,
) -> AttackEvaluation:
    """Build prefixes, query, filter targets, and score one attack run.

    ``prefix_stream`` overrides the stream prefixes are built from (the
    attacker's raw concatenation by default); evaluation filters always
    use the attacker shard as given.
    """
    attacker_stream = concatenate(attacker_shard, boundary=BOUNDARY_TOKEN)
    source = prefix_stream if prefix_stream is not None else attacker_stream
    builder = build_contextual if cfg.prefix_set == "contextual" else build_generalized
    ms: PrefixMultiset = builder(source, cfg.prefix_length)
    prefixes = frequency_select(ms, cfg.freq_threshold, cfg.budget)
    gens = execute_queries(
        backend,
        prefixes,
        cfg,
        journal_dir=journal_dir,
        tokenizer=attacker_shard.tok if journal_dir is not None else None,
        max_workers=max_workers,
    )
    eval_set = build_evaluation_set(
        victim_shard.pii_surfaces(),
        attacker_shard.pii_surfaces(),
        attacker_stream,
        victim_corpus=victim_shard,
    )
    records = match_extractions(gens, eval_set)
    report = compute_metrics(
        records,
        eval_set,
        gens.total_queries,
        victim_spans=victim_shard.spans,
        config_snapshot=config_snapshot,
    )
    return AttackEvaluation(
        report=report,
        generation_set=gens,
        eval_set=eval_set,
        prefixes=prefixes,
    )


def verbatim_score(
    model: NGramModel,
    samples: Sequence[tuple[Surface, Surface]],
    threshold: float,
) -> float:
    """Fraction of (prefix, suffix) pairs the model regenerates near-verbatim.

    Greedy-generates a continuation the length of each suffix; similarity
    is 1 - edit_distance/max_length, and a sample counts once it reaches
    the threshold.
    """
    if not samples:
        raise ConfigurationError("no samples to score")
    if not 0 <= threshold <= 1:
        raise ConfigurationError("threshold must be in [0, 1]")
    extracted = 0
    for prefix, suffix in samples:
        req = GenerationRequest(
            prefix=tuple(prefix),
            max_new_tokens=max(1, len(suffix)),
            num_samples=1,
            mode="greedy",
        )
        produced = tuple(generate(model, req)[0])
        vocab: dict[str, int] = {}
        a = [vocab.setdefault(t, len(vocab)) for t in produced]
        b = [vocab.setdefault(t, len(vocab)) for t in suffix]
        longest = max(len(a), len(b))
        if longest == 0:
            similarity = 1.0
        else:
            similarity = 1.0 - _kernels.edit_distance(a, b) / longest
        if similarity >= threshold:
            extracted += 1
    return extracted / len(samples)
