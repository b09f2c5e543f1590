"""PII masking defense and the defended-vs-undefended comparison."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

from .corpus import AnnotatedCorpus, Document, PiiSpan, concatenate, BOUNDARY_TOKEN
from .errors import ConfigurationError
from .federation import FlConfig, run_federation
from .attack import AttackConfig
from .judge import AttackEvaluation, AttackReport, attack_and_evaluate, set_difference_analysis
from .lm import NGramBackend


@dataclass(frozen=True)
class MaskingPolicy:
    mask_char: str = "*"
    scope: str = "all-labels"  # or "label-subset"
    labels: frozenset[str] | None = None

    def validate(self) -> None:
        if len(self.mask_char) != 1:
            raise ConfigurationError("mask_char must be a single character")
        if self.scope not in ("all-labels", "label-subset"):
            raise ConfigurationError(
                f"scope must be all-labels or label-subset, got {self.scope!r}"
            )
        if self.scope == "label-subset" and not self.labels:
            raise ConfigurationError("label-subset scope needs labels")

    def applies_to(self, span: PiiSpan) -> bool:
        if self.scope == "all-labels":
            return True
        assert self.labels is not None
        return span.minor in self.labels or span.major in self.labels


def mask_corpus(corpus: AnnotatedCorpus, policy: MaskingPolicy) -> AnnotatedCorpus:
    """Replace every in-scope span's characters with the mask character.

    Replacement is character-for-character inside the span's tokens, so
    document text length, token boundaries, and token counts all survive.
    Span records are kept (flagged masked) with their original surfaces,
    so analyses can still locate what used to be there. Overlapping spans
    mask their union; masking is idempotent.
    """
    policy.validate()
    tok = corpus.tok
    new_docs: list[Document] = []
    new_spans: list[PiiSpan] = []
    for doc in corpus.documents:
        doc_spans = corpus.spans_for(doc.doc_id)
        masked_token_idx: set[int] = set()
        for span in doc_spans:
            if policy.applies_to(span):
                masked_token_idx.update(range(span.start, span.end))
        if masked_token_idx:
            token_spans = tok.token_spans(doc.text)
            chars = list(doc.text)
            for i in masked_token_idx:
                s, e = token_spans[i]
                chars[s:e] = policy.mask_char * (e - s)
            text = "".join(chars)
            new_docs.append(
                Document(
                    doc_id=doc.doc_id,
                    text=text,
                    tokens=tuple(tok.tokenize(text)),
                    task_tag=doc.task_tag,
                )
            )
        else:
            new_docs.append(doc)
        for span in doc_spans:
            if policy.applies_to(span):
                # keep the original surface; it is already preserved on
                # spans that were masked in an earlier pass
                new_spans.append(replace(span, masked=True))
            else:
                new_spans.append(span)
    return AnnotatedCorpus(
        documents=new_docs,
        spans=new_spans,
        owner=corpus.owner,
        tokenizer=corpus.tokenizer,
    )


@dataclass
class DefenseComparison:
    defended: AttackReport
    undefended: AttackReport
    only_undefended: int
    only_defended: int
    common: int


def defended_run(
    shards: Sequence[AnnotatedCorpus],
    fl_cfg: FlConfig,
    attack_cfg: AttackConfig,
    policy: MaskingPolicy,
    attacker_idx: int = 0,
    victim_idx: int = 1,
    prefix_source: str = "unmasked",
) -> tuple[DefenseComparison, AttackEvaluation, AttackEvaluation]:
    """Train and attack twice, with and without masking, same seeds.

    All clients sanitize their shards in the defended run. The attacker
    still owns its raw data, so prefixes come from the unmasked local
    shard by default (``prefix_source="masked"`` flips that). Evaluation
    targets and filters are identical across the two runs.
    """
    if attacker_idx == victim_idx:
        raise ConfigurationError("attacker and victim must differ")
    if prefix_source not in ("unmasked", "masked"):
        raise ConfigurationError(
            f"prefix_source must be unmasked or masked, got {prefix_source!r}"
        )
    attacker = shards[attacker_idx]
    victim = shards[victim_idx]

    plain_model, _ = run_federation(list(shards), fl_cfg)
    undefended = attack_and_evaluate(
        NGramBackend(plain_model), attacker, victim, attack_cfg
    )

    masked_shards = [mask_corpus(s, policy) for s in shards]
    masked_model, _ = run_federation(masked_shards, fl_cfg)
    prefix_stream = None
    if prefix_source == "masked":
        prefix_stream = concatenate(
            masked_shards[attacker_idx], boundary=BOUNDARY_TOKEN
        )
    defended = attack_and_evaluate(
        NGramBackend(masked_model),
        attacker,
        victim,
        attack_cfg,
        prefix_stream=prefix_stream,
    )

    only_u, only_d, common = set_difference_analysis(
        undefended.report.vxpii, defended.report.vxpii
    )
    comparison = DefenseComparison(
        defended=defended.report,
        undefended=undefended.report,
        only_undefended=only_u,
        only_defended=only_d,
        common=common,
    )
    return comparison, defended, undefended
