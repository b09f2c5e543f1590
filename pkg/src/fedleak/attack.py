"""Attacker-side prefix construction, query planning, and execution.

Prefixes are windows of the attacker's concatenated corpus ending just
before its own PII occurrences: the contextual set keeps the full-length
window per occurrence, the generalized set keeps every suffix window of
length 1..prefix_length. Windows never cross document boundaries and an
occurrence at a document start contributes nothing.
"""

from __future__ import annotations

import hashlib
import json
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .corpus import TokenStream
from .errors import BackendError, ConfigurationError, StorageError
from .lm import GenerationBackend, GenerationRequest
from .tokenizers import Tokenizer

JOURNAL_VERSION = 1


@dataclass(frozen=True)
class AttackConfig:
    prefix_length: int = 50
    samples_per_prefix: int = 15
    max_new_tokens: int = 10
    budget: int | None = None
    freq_threshold: int | None = None
    temperature: float = 1.0
    seed: int = 0
    prefix_set: str = "contextual"  # or "generalized"

    def validate(self) -> None:
        if self.prefix_length < 1:
            raise ConfigurationError("prefix_length must be >= 1")
        if self.samples_per_prefix < 1:
            raise ConfigurationError("samples_per_prefix must be >= 1")
        if self.max_new_tokens < 1:
            raise ConfigurationError("max_new_tokens must be >= 1")
        if self.budget is not None and self.budget < 1:
            raise ConfigurationError("budget must be >= 1 when given")
        if self.freq_threshold is not None and self.freq_threshold < 1:
            raise ConfigurationError("freq_threshold must be >= 1 when given")
        if self.temperature < 0:
            raise ConfigurationError("temperature must be >= 0")
        if self.prefix_set not in ("contextual", "generalized"):
            raise ConfigurationError(
                f"prefix_set must be contextual or generalized, "
                f"got {self.prefix_set!r}"
            )

    @property
    def mode(self) -> str:
        return "greedy" if self.temperature == 0 else "sample"


@dataclass
class PrefixMultiset:
    entries: dict[tuple[str, ...], int]
    provenance: str  # "contextual" or "generalized"
    prefix_length: int

    def multiset_size(self) -> int:
        return sum(self.entries.values())

    def unique_size(self) -> int:
        return len(self.entries)


def _usable_window(
    tokens: list[str], loc: int, prefix_length: int, boundary: str | None
) -> list[str]:
    window = tokens[max(0, loc - prefix_length) : loc]
    if boundary is not None and boundary in window:
        # keep only the part after the last document edge
        cut = len(window) - 1 - window[::-1].index(boundary)
        window = window[cut + 1 :]
    return window


def build_contextual(stream: TokenStream, prefix_length: int) -> PrefixMultiset:
    """Full-length context windows, one per PII occurrence, multiset-merged."""
    if not stream.tokens:
        raise ConfigurationError("empty token stream")
    entries: dict[tuple[str, ...], int] = {}
    for occ in stream.occurrences:
        if occ.loc == 0:
            continue
        window = _usable_window(
            stream.tokens, occ.loc, prefix_length, stream.boundary
        )
        if not window:
            continue
        key = tuple(window)
        entries[key] = entries.get(key, 0) + 1
    return PrefixMultiset(
        entries=entries, provenance="contextual", prefix_length=prefix_length
    )


def build_generalized(stream: TokenStream, prefix_length: int) -> PrefixMultiset:
    """All suffix windows of length 1..prefix_length before each occurrence."""
    if not stream.tokens:
        raise ConfigurationError("empty token stream")
    entries: dict[tuple[str, ...], int] = {}
    for occ in stream.occurrences:
        window = _usable_window(
            stream.tokens, occ.loc, prefix_length, stream.boundary
        )
        for length in range(1, len(window) + 1):
            key = tuple(window[len(window) - length :])
            entries[key] = entries.get(key, 0) + 1
    return PrefixMultiset(
        entries=entries, provenance="generalized", prefix_length=prefix_length
    )


def frequency_select(
    ms: PrefixMultiset,
    freq_threshold: int | None = None,
    budget: int | None = None,
) -> list[tuple[str, ...]]:
    """Unique prefixes with count >= threshold, most frequent first.

    Ties break lexicographically so budget sweeps are reproducible; with
    threshold 1 (the default) this is the full unique prefix set sorted
    by frequency.
    """
    if not ms.entries:
        raise ConfigurationError("empty prefix multiset")
    threshold = 1 if freq_threshold is None else freq_threshold
    if threshold < 1:
        raise ConfigurationError("freq_threshold must be >= 1")
    if budget is not None and budget < 1:
        raise ConfigurationError("budget must be >= 1")
    selected = [
        (count, prefix)
        for prefix, count in ms.entries.items()
        if count >= threshold
    ]
    selected.sort(key=lambda item: (-item[0], item[1]))
    prefixes = [prefix for _, prefix in selected]
    return prefixes[:budget] if budget is not None else prefixes


def default_budgets(num_prefixes: int) -> list[int]:
    """Base-10 ladder (100, 1000, ...) capped at the prefix list length."""
    budgets: list[int] = []
    b = 100
    while b < num_prefixes:
        budgets.append(b)
        b *= 10
    budgets.append(num_prefixes)
    return budgets


@dataclass(frozen=True)
class GenerationRecord:
    prefix_idx: int
    sample_idx: int
    output: tuple[str, ...]


@dataclass
class GenerationSet:
    records: list[GenerationRecord]
    total_queries: int
    failed_prefixes: list[int] = field(default_factory=list)


def derive_seed(base: int, index: int) -> int:
    digest = hashlib.blake2b(
        f"{base}:{index}".encode(), digest_size=8
    ).digest()
    return int.from_bytes(digest, "big") >> 1


def _prefix_digest(prefix: Sequence[str]) -> str:
    payload = json.dumps(list(prefix), ensure_ascii=False).encode("utf-8")
    return hashlib.blake2b(payload, digest_size=8).hexdigest()


class QueryJournal:
    """Resume state for a query run: completed prefixes and their records.

    Each completed prefix is recorded with a content digest, so a journal
    can be reused by any run whose prefix list agrees index-by-index with
    the original (for example, the same ordered list under a different
    budget cap); anything else is rejected.
    """

    def __init__(
        self,
        directory: Path,
        cfg: AttackConfig,
        tokenizer: Tokenizer,
        prefixes: Sequence[tuple[str, ...]],
    ):
        self.dir = directory
        self.cfg = cfg
        self.tokenizer = tokenizer
        self.records_path = directory / "records.jsonl"
        self.state_path = directory / "journal.json"
        self.completed: set[int] = set()
        self.digests: dict[int, str] = {}
        self.records: list[GenerationRecord] = []
        self._load(prefixes)

    def _fingerprint(self) -> dict:
        return {
            "version": JOURNAL_VERSION,
            "samples_per_prefix": self.cfg.samples_per_prefix,
            "max_new_tokens": self.cfg.max_new_tokens,
            "temperature": self.cfg.temperature,
            "seed": self.cfg.seed,
        }

    def _load(self, prefixes: Sequence[tuple[str, ...]]) -> None:
        if not self.state_path.exists():
            return
        state = json.loads(self.state_path.read_text(encoding="utf-8"))
        expected = self._fingerprint()
        stored = {k: state.get(k) for k in expected}
        if stored != expected:
            raise StorageError(
                f"journal at {self.dir} belongs to a different query run; "
                "remove it or use a fresh directory"
            )
        self.digests = {int(k): v for k, v in state.get("digests", {}).items()}
        for idx in state["completed"]:
            if idx >= len(prefixes):
                continue  # recorded under a larger budget; ignore here
            if self.digests.get(idx) != _prefix_digest(prefixes[idx]):
                raise StorageError(
                    f"journal at {self.dir} was written for different "
                    f"prefixes (index {idx} disagrees)"
                )
            self.completed.add(idx)
        if self.records_path.exists():
            with self.records_path.open(encoding="utf-8") as fh:
                for line in fh:
                    rec = json.loads(line)
                    if rec["prefix_idx"] not in self.completed:
                        continue
                    self.records.append(
                        GenerationRecord(
                            prefix_idx=rec["prefix_idx"],
                            sample_idx=rec["sample_idx"],
                            output=tuple(
                                self.tokenizer.tokenize(rec["output"])
                            ),
                        )
                    )

    def append(
        self,
        prefixes: Sequence[tuple[str, ...]],
        new_records: list[GenerationRecord],
        newly_completed: list[int],
    ) -> None:
        with self.records_path.open("a", encoding="utf-8") as fh:
            for rec in new_records:
                fh.write(
                    json.dumps(
                        {
                            "prefix_idx": rec.prefix_idx,
                            "sample_idx": rec.sample_idx,
                            "prefix": self.tokenizer.join(
                                prefixes[rec.prefix_idx]
                            ),
                            "output": self.tokenizer.join(rec.output),
                        },
                        ensure_ascii=False,
                    )
                    + "\n"
                )
        self.completed.update(newly_completed)
        for idx in newly_completed:
            self.digests[idx] = _prefix_digest(prefixes[idx])
        state = self._fingerprint()
        state["completed"] = sorted(self.completed)
        state["digests"] = {str(k): self.digests[k] for k in sorted(self.digests)}
        self.state_path.write_text(
            json.dumps(state) + "\n", encoding="utf-8"
        )


def load_generation_set(
    journal_dir: str | Path, cfg: AttackConfig, tokenizer: Tokenizer
) -> GenerationSet:
    """Rebuild a GenerationSet from a completed (or partial) query journal."""
    directory = Path(journal_dir)
    state_path = directory / "journal.json"
    if not state_path.exists():
        raise StorageError(f"no query journal at {directory}")
    state = json.loads(state_path.read_text(encoding="utf-8"))
    expected = {
        "version": JOURNAL_VERSION,
        "samples_per_prefix": cfg.samples_per_prefix,
        "max_new_tokens": cfg.max_new_tokens,
        "temperature": cfg.temperature,
        "seed": cfg.seed,
    }
    stored = {k: state.get(k) for k in expected}
    if stored != expected:
        raise StorageError(
            f"journal at {directory} does not match the attack configuration"
        )
    records: list[GenerationRecord] = []
    records_path = directory / "records.jsonl"
    if records_path.exists():
        with records_path.open(encoding="utf-8") as fh:
            for line in fh:
                rec = json.loads(line)
                records.append(
                    GenerationRecord(
                        prefix_idx=rec["prefix_idx"],
                        sample_idx=rec["sample_idx"],
                        output=tuple(tokenizer.tokenize(rec["output"])),
                    )
                )
    records.sort(key=lambda r: (r.prefix_idx, r.sample_idx))
    return GenerationSet(
        records=records,
        total_queries=cfg.samples_per_prefix * len(state["completed"]),
    )


def execute_queries(
    backend: GenerationBackend,
    prefixes: Sequence[tuple[str, ...]],
    cfg: AttackConfig,
    journal_dir: str | Path | None = None,
    tokenizer: Tokenizer | None = None,
    max_workers: int = 1,
) -> GenerationSet:
    """Query the backend once per prefix, n samples each, resumably.

    Per-prefix seeds derive from (cfg.seed, prefix index) so results do
    not depend on scheduling. Prefixes whose backend calls fail after the
    backend's own retries are reported in ``failed_prefixes`` and skipped.
    """
    cfg.validate()
    if not prefixes:
        raise ConfigurationError("no prefixes to query")
    journal = None
    if journal_dir is not None:
        if tokenizer is None:
            raise ConfigurationError("journaling requires a tokenizer")
        directory = Path(journal_dir)
        directory.mkdir(parents=True, exist_ok=True)
        journal = QueryJournal(directory, cfg, tokenizer, prefixes)

    records: list[GenerationRecord] = list(journal.records) if journal else []
    done = set(journal.completed) if journal else set()
    pending = [i for i in range(len(prefixes)) if i not in done]
    failed: list[int] = []

    def run_one(idx: int) -> list[GenerationRecord]:
        req = GenerationRequest(
            prefix=tuple(prefixes[idx]),
            max_new_tokens=cfg.max_new_tokens,
            num_samples=cfg.samples_per_prefix,
            temperature=cfg.temperature,
            seed=derive_seed(cfg.seed, idx),
            mode=cfg.mode,
        )
        outputs = backend.generate(req)
        return [
            GenerationRecord(prefix_idx=idx, sample_idx=s, output=tuple(out))
            for s, out in enumerate(outputs)
        ]

    chunk_size = 256
    for start in range(0, len(pending), chunk_size):
        chunk = pending[start : start + chunk_size]
        results: list[tuple[int, list[GenerationRecord] | None]] = []
        if max_workers > 1:
            with ThreadPoolExecutor(max_workers=max_workers) as pool:
                futures = {i: pool.submit(run_one, i) for i in chunk}
            for i in chunk:
                try:
                    results.append((i, futures[i].result()))
                except BackendError:
                    results.append((i, None))
        else:
            for i in chunk:
                try:
                    results.append((i, run_one(i)))
                except BackendError:
                    results.append((i, None))
        new_records: list[GenerationRecord] = []
        newly_completed: list[int] = []
        for i, recs in results:
            if recs is None:
                failed.append(i)
            else:
                new_records.extend(recs)
                newly_completed.append(i)
        records.extend(new_records)
        done.update(newly_completed)
        if journal is not None:
            journal.append(prefixes, new_records, newly_completed)

    records.sort(key=lambda r: (r.prefix_idx, r.sample_idx))
    completed_count = len(done)
    return GenerationSet(
        records=records,
        total_queries=cfg.samples_per_prefix * completed_count,
        failed_prefixes=sorted(failed),
    )


def build_laft_dataset(
    prefixes: Sequence[tuple[str, ...]],
    attacker_pii: Sequence[tuple[str, ...]],
    k_prefixes: int,
    k_pii: int,
    seed: int = 0,
) -> list[tuple[tuple[str, ...], tuple[str, ...]]]:
    """Pair top-frequency prefixes with sampled attacker PII, positionally.

    The PII sample is drawn without replacement when possible (with
    replacement once k_pii exceeds the pool) and cycled when the two
    sides have different sizes.
    """
    if not prefixes:
        raise ConfigurationError("no prefixes for fine-tuning pairs")
    if not attacker_pii:
        raise ConfigurationError("no attacker PII to pair")
    if k_prefixes < 1 or k_pii < 1:
        raise ConfigurationError("k_prefixes and k_pii must be >= 1")
    rng = random.Random(seed)
    pii_pool = list(attacker_pii)
    if k_pii <= len(pii_pool):
        sample = rng.sample(pii_pool, k_pii)
    else:
        sample = [rng.choice(pii_pool) for _ in range(k_pii)]
    rng.shuffle(sample)
    chosen = list(prefixes[:k_prefixes])
    return [(tuple(p), tuple(sample[i % len(sample)])) for i, p in enumerate(chosen)]
