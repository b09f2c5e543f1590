"""Federated training loop: rounds of client updates plus aggregation.

The server only ever sees client models; shards never cross the
client/server boundary. For the count learner the local step is a
stateless recount of the client's shard, which makes every round produce
the same global model (the per-round arg-min of a count model ignores its
initialization). The ``incremental`` flag switches to a carry-over local
step (incoming global scaled by 1/num_clients plus fresh counts) for
studying round dynamics.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

from .corpus import AnnotatedCorpus
from .errors import ConfigurationError, StorageError
from .lm import (
    DEFAULT_BACKOFF,
    DEFAULT_ORDER,
    NGramModel,
    fedavg,
    load_model,
    save_model,
    train,
    weighted_merge,
)

AGGREGATORS = ("fedavg-weighted", "fedavg-uniform")


@dataclass(frozen=True)
class FlConfig:
    rounds: int = 10
    num_clients: int = 5
    aggregator: str = "fedavg-weighted"
    learner_order: int = DEFAULT_ORDER
    seed: int = 0
    backoff_factor: float = DEFAULT_BACKOFF
    incremental: bool = False

    def validate(self) -> None:
        if self.rounds < 1:
            raise ConfigurationError("rounds must be >= 1")
        # Relaxed from >= 2 so a single-client run (which must reduce to
        # plain training) stays expressible.
        if self.num_clients < 1:
            raise ConfigurationError("num_clients must be >= 1")
        if self.aggregator not in AGGREGATORS:
            raise ConfigurationError(
                f"aggregator must be one of {AGGREGATORS}"
            )
        if self.learner_order < 1:
            raise ConfigurationError("learner_order must be >= 1")


@dataclass
class RoundLog:
    round: int
    per_client_token_counts: list[int]
    global_checkpoint_ref: str | None


def _client_update(
    shard: AnnotatedCorpus, incoming: NGramModel | None, cfg: FlConfig
) -> NGramModel:
    local = train(shard, order=cfg.learner_order, backoff_factor=cfg.backoff_factor)
    if not cfg.incremental or incoming is None:
        return local
    return weighted_merge([incoming, local], [1.0 / cfg.num_clients, 1.0])


def run_federation(
    shards: list[AnnotatedCorpus],
    cfg: FlConfig,
    checkpoint_dir: str | Path | None = None,
    run_id: str = "fl",
) -> tuple[NGramModel, list[RoundLog]]:
    """Run ``cfg.rounds`` rounds of client updates plus aggregation."""
    cfg.validate()
    if len(shards) != cfg.num_clients:
        raise ConfigurationError(
            f"expected {cfg.num_clients} shards, got {len(shards)}"
        )
    for i, shard in enumerate(shards):
        if not shard.documents:
            raise ConfigurationError(f"client {i} has an empty shard")

    token_counts = [shard.token_count() for shard in shards]
    if cfg.aggregator == "fedavg-weighted":
        weights = [float(n) for n in token_counts]
    else:
        weights = [1.0] * len(shards)

    run_dir = None
    if checkpoint_dir is not None:
        run_dir = Path(checkpoint_dir) / run_id
        run_dir.mkdir(parents=True, exist_ok=True)
        manifest = {
            "config": asdict(cfg),
            "shards": [
                {
                    "id": i,
                    "owner": shard.owner,
                    "num_docs": len(shard.documents),
                    "num_tokens": token_counts[i],
                }
                for i, shard in enumerate(shards)
            ],
        }
        (run_dir / "manifest.json").write_text(
            json.dumps(manifest, ensure_ascii=False, indent=2) + "\n",
            encoding="utf-8",
        )

    logs: list[RoundLog] = []
    global_model: NGramModel | None = None
    client_models: list[NGramModel] | None = None
    for rnd in range(1, cfg.rounds + 1):
        if cfg.incremental or client_models is None:
            client_models = [
                _client_update(shard, global_model, cfg) for shard in shards
            ]
        # Stateless recounts never change between rounds, so later rounds
        # reuse the round-1 client models.
        global_model = fedavg(client_models, weights)
        ref = None
        if run_dir is not None:
            path = run_dir / f"round_{rnd}" / "global.model"
            save_model(global_model, path)
            ref = str(path)
        logs.append(
            RoundLog(
                round=rnd,
                per_client_token_counts=list(token_counts),
                global_checkpoint_ref=ref,
            )
        )
    assert global_model is not None
    return global_model, logs


def load_checkpoint(ref: str | Path) -> NGramModel:
    """Load a round checkpoint; accepts the model file or its directory."""
    path = Path(ref)
    if path.is_dir():
        path = path / "global.model"
    if not path.exists():
        raise StorageError(f"no checkpoint at {ref}")
    return load_model(path)
