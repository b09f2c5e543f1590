"""Non-IID partitioning of a global corpus into client shards.

Both strategies draw per-client label proportions from a symmetric
Dirichlet(alpha) and then allocate documents so that every client ends up
with a near-equal share (sizes differ by at most one document): the skew
lives in each shard's label composition, not its size. ``by-label-skew``
groups documents by their task tag; ``by-cluster`` first groups them by
k-means over feature-hashed bag-of-token vectors.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import AnnotatedCorpus, emit
from .errors import ConfigurationError

STRATEGIES = ("by-label-skew", "by-cluster")

_HASH_DIM = 256
_KMEANS_ITERS = 20


@dataclass(frozen=True)
class PartitionSpec:
    num_clients: int
    skew_alpha: float = 0.5
    seed: int = 0
    strategy: str = "by-label-skew"

    def validate(self) -> None:
        if self.num_clients < 2:
            raise ConfigurationError(
                f"num_clients must be >= 2, got {self.num_clients}"
            )
        if not self.skew_alpha > 0:
            raise ConfigurationError(
                f"skew_alpha must be > 0, got {self.skew_alpha}"
            )
        if self.strategy not in STRATEGIES:
            raise ConfigurationError(
                f"strategy must be one of {STRATEGIES}, got {self.strategy!r}"
            )


def _stable_token_hash(token: str) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def _hashed_features(corpus: AnnotatedCorpus) -> np.ndarray:
    feats = np.zeros((len(corpus.documents), _HASH_DIM))
    for i, doc in enumerate(corpus.documents):
        for token in doc.tokens:
            feats[i, _stable_token_hash(token) % _HASH_DIM] += 1.0
    norms = np.linalg.norm(feats, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return feats / norms


def _kmeans_labels(feats: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = feats.shape[0]
    centers = feats[rng.choice(n, size=k, replace=False)].copy()
    labels = np.zeros(n, dtype=int)
    for _ in range(_KMEANS_ITERS):
        dists = ((feats[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = dists.argmin(axis=1)
        for j in range(k):
            members = feats[labels == j]
            if len(members):
                centers[j] = members.mean(axis=0)
    return labels


def _group_documents(
    corpus: AnnotatedCorpus, spec: PartitionSpec, rng: np.random.Generator
) -> dict[str, list[int]]:
    groups: dict[str, list[int]] = {}
    if spec.strategy == "by-label-skew":
        for i, doc in enumerate(corpus.documents):
            tag = doc.task_tag if doc.task_tag is not None else "__untagged__"
            groups.setdefault(tag, []).append(i)
    else:
        labels = _kmeans_labels(
            _hashed_features(corpus), spec.num_clients, rng
        )
        for i, lab in enumerate(labels):
            groups.setdefault(f"cluster-{lab}", []).append(i)
    return groups


def _largest_remainder(weights: np.ndarray, total: int) -> np.ndarray:
    """Integer allocation of `total` proportional to `weights`."""
    if total == 0:
        return np.zeros(len(weights), dtype=int)
    s = weights.sum()
    shares = (
        weights / s * total if s > 0 else np.full(len(weights), total / len(weights))
    )
    base = np.floor(shares).astype(int)
    leftover = total - int(base.sum())
    order = np.argsort(-(shares - base), kind="stable")
    base[order[:leftover]] += 1
    return base


def partition(
    global_corpus: AnnotatedCorpus, spec: PartitionSpec
) -> list[AnnotatedCorpus]:
    """Split a corpus into disjoint, exhaustive, near-equal client shards."""
    spec.validate()
    n_docs = len(global_corpus.documents)
    c = spec.num_clients
    if n_docs < c:
        raise ConfigurationError(
            f"cannot partition {n_docs} documents across {c} clients"
        )
    rng = np.random.default_rng(spec.seed)
    groups = _group_documents(global_corpus, spec, rng)
    group_keys = sorted(groups)
    for key in group_keys:
        rng.shuffle(groups[key])

    # Per-client proportions over groups, then per-group integer splits.
    props = np.stack(
        [rng.dirichlet(np.full(len(group_keys), spec.skew_alpha)) for _ in range(c)]
    )
    alloc: list[dict[str, list[int]]] = [
        {key: [] for key in group_keys} for _ in range(c)
    ]
    for g, key in enumerate(group_keys):
        docs = groups[key]
        counts = _largest_remainder(props[:, g], len(docs))
        pos = 0
        for i in range(c):
            alloc[i][key] = docs[pos : pos + counts[i]]
            pos += counts[i]

    # Rebalance to near-equal quotas; moves come from a client's largest
    # group so the skew is disturbed as little as possible.
    quotas = [n_docs // c + (1 if i < n_docs % c else 0) for i in range(c)]
    sizes = [sum(len(v) for v in alloc[i].values()) for i in range(c)]
    while True:
        over = [i for i in range(c) if sizes[i] > quotas[i]]
        if not over:
            break
        under = [i for i in range(c) if sizes[i] < quotas[i]]
        src, dst = over[0], under[0]
        donor_key = max(alloc[src], key=lambda k: (len(alloc[src][k]), k))
        alloc[dst][donor_key].append(alloc[src][donor_key].pop())
        sizes[src] -= 1
        sizes[dst] += 1

    shards: list[AnnotatedCorpus] = []
    for i in range(c):
        indices = sorted(idx for docs in alloc[i].values() for idx in docs)
        docs = [global_corpus.documents[j] for j in indices]
        ids = {d.doc_id for d in docs}
        spans = [s for s in global_corpus.spans if s.doc_id in ids]
        shards.append(
            AnnotatedCorpus(
                documents=docs,
                spans=spans,
                owner=f"client-{i}",
                tokenizer=global_corpus.tokenizer,
            )
        )
    return shards


def write_partition(
    shards: list[AnnotatedCorpus], out_dir: str | Path, spec: PartitionSpec
) -> Path:
    """Write one corpus file per client plus the partition manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    clients = []
    for i, shard in enumerate(shards):
        emit(shard, out_dir / f"client_{i}.jsonl")
        clients.append({"id": i, "num_docs": len(shard.documents)})
    manifest = {"seed": spec.seed, "strategy": spec.strategy, "clients": clients}
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(
        json.dumps(manifest, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )
    return manifest_path


def load_partition(out_dir: str | Path, tokenizer: str = "auto") -> list[AnnotatedCorpus]:
    """Load shards written by :func:`write_partition`."""
    from .corpus import ingest
    from .errors import StorageError

    out_dir = Path(out_dir)
    manifest_path = out_dir / "manifest.json"
    if not manifest_path.exists():
        raise StorageError(f"no partition manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    shards = []
    for client in manifest["clients"]:
        i = client["id"]
        shards.append(
            ingest(
                out_dir / f"client_{i}.jsonl",
                tokenizer=tokenizer,
                owner=f"client-{i}",
            )
        )
    return shards
