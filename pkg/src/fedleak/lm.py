"""Trainable backoff n-gram language model with federated aggregation.

The model is a stack of count tables, one per context length 0..order-1,
over integer token ids. Ids are always assigned in sorted-vocabulary
order, which makes greedy tie-breaking (smallest id = lexicographically
smallest token) and sampling iteration order canonical regardless of how
a model was built (trained, aggregated, fine-tuned, or loaded from disk).

Decoding uses longest-match backoff: the next-token distribution comes
from the longest context suffix whose table entry has a nonzero total,
with raw scores damped by ``backoff_factor`` per level backed off. The
damping cancels under normalization but is visible through the
distribution inspection hook.

Documents are separated by a reserved boundary token during training, so
n-grams never cross documents; the boundary can be *emitted* (that is how
the model represents "the document ends here"), which terminates
generation early.
"""

from __future__ import annotations

import json
import math
import random
from bisect import bisect_right
from dataclasses import dataclass
from itertools import accumulate
from pathlib import Path
from typing import Iterable, Protocol, Sequence

from . import _kernels
from .corpus import BOUNDARY_TOKEN, AnnotatedCorpus, concatenate
from .errors import (
    AggregationError,
    ConfigurationError,
    GenerationError,
    StorageError,
    TrainingError,
)

MODEL_FORMAT_VERSION = 1
DEFAULT_ORDER = 5
DEFAULT_BACKOFF = 0.4

Tables = list[dict[tuple[int, ...], dict[int, float]]]


@dataclass(frozen=True)
class GenerationRequest:
    prefix: tuple[str, ...]
    max_new_tokens: int
    num_samples: int = 1
    temperature: float = 1.0
    seed: int = 0
    mode: str = "sample"  # "sample" or "greedy"; temperature 0 means greedy

    def validate(self) -> None:
        if self.max_new_tokens < 1:
            raise ConfigurationError("max_new_tokens must be >= 1")
        if self.num_samples < 1:
            raise ConfigurationError("num_samples must be >= 1")
        if self.temperature < 0:
            raise ConfigurationError("temperature must be >= 0")
        if self.mode not in ("sample", "greedy"):
            raise ConfigurationError(f"unknown generation mode: {self.mode!r}")

    @property
    def greedy(self) -> bool:
        return self.mode == "greedy" or self.temperature == 0


class NGramModel:
    """Immutable count model; all mutating operations return new models."""

    def __init__(
        self,
        order: int,
        tables: Tables,
        vocab: Sequence[str],
        backoff_factor: float = DEFAULT_BACKOFF,
        boundary: str = BOUNDARY_TOKEN,
    ):
        if order < 1:
            raise ConfigurationError("order must be >= 1")
        if len(tables) != order:
            raise ConfigurationError("need one table per context length")
        self.order = order
        self.backoff_factor = backoff_factor
        self.boundary = boundary
        self.vocab = tuple(sorted(vocab))
        self.vocab_index = {tok: i for i, tok in enumerate(self.vocab)}
        self.tables = tables
        self.totals: list[dict[tuple[int, ...], float]] = [
            {ctx: sum(bucket.values()) for ctx, bucket in table.items()}
            for table in tables
        ]
        self.boundary_id = self.vocab_index.get(boundary, -1)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        """Token ids; unknown tokens map to -1 (never matches a context)."""
        idx = self.vocab_index
        return [idx.get(t, -1) for t in tokens]

    def decode(self, ids: Iterable[int]) -> tuple[str, ...]:
        return tuple(self.vocab[i] for i in ids)

    def context_counts(
        self, context: Sequence[str]
    ) -> tuple[dict[str, float], float, int]:
        """(next-token counts, total, levels backed off) for a context."""
        ctx_len, bucket, total, levels = self._match(self.encode(context))
        return (
            {self.vocab[i]: c for i, c in bucket.items()},
            total,
            levels,
        )

    def _match(
        self, ctx_ids: Sequence[int]
    ) -> tuple[int, dict[int, float], float, int]:
        start = min(self.order - 1, len(ctx_ids))
        for ctx_len in range(start, -1, -1):
            key = tuple(ctx_ids[len(ctx_ids) - ctx_len :])
            bucket = self.tables[ctx_len].get(key)
            if bucket:
                total = self.totals[ctx_len][key]
                if total > 0:
                    return ctx_len, bucket, total, start - ctx_len
        raise GenerationError("model has no counts for any context")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, NGramModel):
            return NotImplemented
        return (
            self.order == other.order
            and self.backoff_factor == other.backoff_factor
            and self.boundary == other.boundary
            and self.vocab == other.vocab
            and self.tables == other.tables
        )

    def __repr__(self) -> str:
        entries = sum(len(t) for t in self.tables)
        return (
            f"NGramModel(order={self.order}, vocab={len(self.vocab)}, "
            f"contexts={entries})"
        )


def train(
    corpus: AnnotatedCorpus,
    order: int = DEFAULT_ORDER,
    backoff_factor: float = DEFAULT_BACKOFF,
) -> NGramModel:
    """Count n-grams of the boundary-separated corpus concatenation."""
    if order < 1:
        raise ConfigurationError("order must be >= 1")
    if not corpus.documents:
        raise TrainingError("cannot train on an empty corpus")
    stream = concatenate(corpus, boundary=BOUNDARY_TOKEN)
    content = set()
    for doc in corpus.documents:
        content.update(doc.tokens)
    if BOUNDARY_TOKEN in content:
        raise TrainingError(
            f"corpus contains the reserved boundary token {BOUNDARY_TOKEN!r}"
        )
    # Separator style: the boundary sits between documents, not after the
    # last one, so a single-document corpus has no boundary transitions.
    tokens = stream.tokens[:-1] if stream.tokens else stream.tokens
    vocab = sorted(set(tokens))
    index = {tok: i for i, tok in enumerate(vocab)}
    ids = [index[t] for t in tokens]
    boundary_id = index.get(BOUNDARY_TOKEN, -1)
    tables = _kernels.count_ngrams(ids, order, boundary_id)
    return NGramModel(
        order=order,
        tables=tables,
        vocab=vocab,
        backoff_factor=backoff_factor,
        boundary=BOUNDARY_TOKEN,
    )


@dataclass(frozen=True)
class NextTokenDistribution:
    """Inspection view of one decoding step."""

    probs: dict[str, float]
    raw_scores: dict[str, float]
    backoff_levels: int
    context_length: int


def _step_weights(
    items: list[tuple[int, float]], temperature: float
) -> list[float]:
    if temperature == 1.0:
        return [c for _, c in items]
    # log-space for numerical stability at small temperatures
    inv = 1.0 / temperature
    logs = [math.log(c) * inv for _, c in items]
    peak = max(logs)
    return [math.exp(lg - peak) for lg in logs]


def _pick_greedy(items: list[tuple[int, float]]) -> int:
    best_id, best_count = items[0]
    for tok_id, count in items[1:]:
        if count > best_count:
            best_id, best_count = tok_id, count
    return best_id


def next_token_distribution(
    model: NGramModel, context: Sequence[str], temperature: float = 1.0
) -> NextTokenDistribution:
    """Normalized next-token distribution for a context (inspection hook)."""
    ctx_len, bucket, total, levels = model._match(model.encode(context))
    damp = model.backoff_factor**levels
    items = sorted(bucket.items())
    weights = _step_weights(items, temperature) if temperature > 0 else None
    if weights is None:
        probs = {model.vocab[_pick_greedy(items)]: 1.0}
    else:
        norm = sum(weights)
        probs = {
            model.vocab[tok_id]: w / norm
            for (tok_id, _), w in zip(items, weights)
        }
    raw = {model.vocab[tok_id]: c / total * damp for tok_id, c in items}
    return NextTokenDistribution(
        probs=probs,
        raw_scores=raw,
        backoff_levels=levels,
        context_length=ctx_len,
    )


def generate(model: NGramModel, req: GenerationRequest) -> list[list[str]]:
    """Sample ``num_samples`` continuations of at most ``max_new_tokens``.

    Greedy mode is a pure function of (model, prefix): ties break toward
    the lexicographically smallest token. Sampling draws from one RNG
    seeded by ``req.seed``, so a request is reproducible in isolation.
    """
    req.validate()
    if not model.vocab:
        raise GenerationError("model has an empty vocabulary")
    greedy = req.greedy
    rng = random.Random(req.seed)
    prefix_ids = model.encode(req.prefix)
    outputs: list[list[str]] = []
    for _ in range(req.num_samples):
        seq = list(prefix_ids)
        out: list[str] = []
        for _ in range(req.max_new_tokens):
            _, bucket, _, _ = model._match(seq)
            items = sorted(bucket.items())
            if greedy:
                tok_id = _pick_greedy(items)
            else:
                weights = _step_weights(items, req.temperature)
                cum = list(accumulate(weights))
                tok_id = items[bisect_right(cum, rng.random() * cum[-1])][0]
            if tok_id == model.boundary_id:
                break
            seq.append(tok_id)
            out.append(model.vocab[tok_id])
        outputs.append(out)
    return outputs


def weighted_merge(
    models: Sequence[NGramModel], multipliers: Sequence[float]
) -> NGramModel:
    """Sum count tables scaled per model; multipliers are used as given."""
    if not models:
        raise AggregationError("no models to aggregate")
    first = models[0]
    for m in models[1:]:
        if m.order != first.order:
            raise AggregationError(
                f"mismatched orders: {first.order} vs {m.order}"
            )
        if m.backoff_factor != first.backoff_factor:
            raise AggregationError("mismatched backoff factors")
        if m.boundary != first.boundary:
            raise AggregationError("mismatched boundary tokens")
    if len(multipliers) != len(models):
        raise AggregationError("need one multiplier per model")
    if any(w < 0 for w in multipliers):
        raise AggregationError("multipliers must be nonnegative")

    vocab = sorted(set().union(*(m.vocab for m in models)))
    index = {tok: i for i, tok in enumerate(vocab)}
    tables: Tables = [{} for _ in range(first.order)]
    for model, w in zip(models, multipliers):
        if w == 0:
            continue
        remap = [index[tok] for tok in model.vocab]
        for ctx_len in range(first.order):
            out_table = tables[ctx_len]
            for ctx, bucket in model.tables[ctx_len].items():
                new_ctx = tuple(remap[i] for i in ctx)
                out_bucket = out_table.setdefault(new_ctx, {})
                for tok_id, count in bucket.items():
                    new_id = remap[tok_id]
                    out_bucket[new_id] = out_bucket.get(new_id, 0.0) + w * count
    return NGramModel(
        order=first.order,
        tables=tables,
        vocab=vocab,
        backoff_factor=first.backoff_factor,
        boundary=first.boundary,
    )


def fedavg(
    models: Sequence[NGramModel], weights: Sequence[float] | None = None
) -> NGramModel:
    """Aggregate client models: weighted sum of counts, union vocabulary.

    Weights are normalized to sum to 1 (uniform when omitted).
    """
    if weights is None:
        weights = [1.0] * len(models)
    if len(weights) != len(models):
        raise AggregationError("need one weight per model")
    if any(w < 0 for w in weights):
        raise AggregationError("weights must be nonnegative")
    total_w = sum(weights)
    if total_w <= 0:
        raise AggregationError("weights must not all be zero")
    return weighted_merge(models, [w / total_w for w in weights])


def finetune_pairs(
    model: NGramModel,
    pairs: Sequence[tuple[Sequence[str], Sequence[str]]],
    weight: float = 1.0,
) -> NGramModel:
    """Inject (prefix, target) transitions into a copy of the model.

    Every n-gram window of the concatenated pair whose predicted token
    lies inside the target gets its count raised by ``weight``; windows
    entirely inside the prefix are left alone.
    """
    if weight < 0:
        raise ConfigurationError("weight must be nonnegative")
    if not pairs or weight == 0:
        return model
    new_tokens = set()
    for prefix, target in pairs:
        for tok in (*prefix, *target):
            if tok == model.boundary:
                raise ConfigurationError(
                    "pairs must not contain the boundary token"
                )
            if tok not in model.vocab_index:
                new_tokens.add(tok)

    vocab = sorted(set(model.vocab) | new_tokens)
    index = {tok: i for i, tok in enumerate(vocab)}
    remap = [index[tok] for tok in model.vocab]
    tables: Tables = []
    for table in model.tables:
        tables.append(
            {
                tuple(remap[i] for i in ctx): {
                    remap[t]: c for t, c in bucket.items()
                }
                for ctx, bucket in table.items()
            }
        )

    for prefix, target in pairs:
        seq = [index[t] for t in (*prefix, *target)]
        plen = len(prefix)
        for ctx_len in range(model.order):
            table = tables[ctx_len]
            for pos in range(max(plen, ctx_len), len(seq)):
                ctx = tuple(seq[pos - ctx_len : pos])
                bucket = table.setdefault(ctx, {})
                bucket[seq[pos]] = bucket.get(seq[pos], 0.0) + weight
    return NGramModel(
        order=model.order,
        tables=tables,
        vocab=vocab,
        backoff_factor=model.backoff_factor,
        boundary=model.boundary,
    )


def model_to_bytes(model: NGramModel) -> bytes:
    """Canonical serialized form; identical models yield identical bytes."""
    tables_out = []
    for table in model.tables:
        entries = []
        for ctx in sorted(table):
            bucket = table[ctx]
            entries.append([list(ctx), [[t, bucket[t]] for t in sorted(bucket)]])
        tables_out.append(entries)
    payload = {
        "format_version": MODEL_FORMAT_VERSION,
        "order": model.order,
        "backoff_factor": model.backoff_factor,
        "boundary": model.boundary,
        "vocab": list(model.vocab),
        "tables": tables_out,
    }
    return (
        json.dumps(payload, ensure_ascii=False, separators=(",", ":")) + "\n"
    ).encode("utf-8")


def save_model(model: NGramModel, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(model_to_bytes(model))


def load_model(path: str | Path) -> NGramModel:
    path = Path(path)
    if not path.exists():
        raise StorageError(f"no model file at {path}")
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
        if payload.get("format_version") != MODEL_FORMAT_VERSION:
            raise StorageError(
                f"unsupported model format version in {path}"
            )
        tables: Tables = []
        for entries in payload["tables"]:
            tables.append(
                {
                    tuple(ctx): {t: c for t, c in bucket}
                    for ctx, bucket in entries
                }
            )
        return NGramModel(
            order=payload["order"],
            tables=tables,
            vocab=payload["vocab"],
            backoff_factor=payload["backoff_factor"],
            boundary=payload["boundary"],
        )
    except StorageError:
        raise
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise StorageError(f"corrupt model file {path}: {exc}") from exc


class GenerationBackend(Protocol):
    """Anything that can serve generation requests."""

    def generate(self, req: GenerationRequest) -> list[list[str]]: ...

    def generate_many(
        self, reqs: Sequence[GenerationRequest]
    ) -> list[list[list[str]]]: ...


class NGramBackend:
    """Backend over an in-memory n-gram model."""

    def __init__(self, model: NGramModel):
        self.model = model

    def generate(self, req: GenerationRequest) -> list[list[str]]:
        return generate(self.model, req)

    def generate_many(
        self, reqs: Sequence[GenerationRequest]
    ) -> list[list[list[str]]]:
        return [self.generate(r) for r in reqs]

    def finetune_pairs(
        self,
        pairs: Sequence[tuple[Sequence[str], Sequence[str]]],
        weight: float = 1.0,
    ) -> "NGramBackend":
        return NGramBackend(finetune_pairs(self.model, pairs, weight))
