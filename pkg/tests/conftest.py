from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from synthdata import build_planted_corpus  # noqa: E402

from fedleak.federation import FlConfig, run_federation  # noqa: E402
from fedleak.partition import PartitionSpec, partition  # noqa: E402


@pytest.fixture(scope="session")
def planted_corpus():
    return build_planted_corpus()


@pytest.fixture(scope="session")
def planted_shards(planted_corpus):
    spec = PartitionSpec(num_clients=5, skew_alpha=0.5, seed=7)
    return partition(planted_corpus, spec)


@pytest.fixture(scope="session")
def planted_model(planted_shards):
    cfg = FlConfig(rounds=10, num_clients=5, learner_order=5, seed=7)
    model, _ = run_federation(planted_shards, cfg)
    return model


@pytest.fixture(scope="session")
def small_planted_corpus():
    return build_planted_corpus(
        num_templates=40,
        dominant_repeats=3,
        scattered_repeats=2,
        extra_pii_per_doc=1,
        extra_value_pool=60,
        filler_docs=100,
        seed=99,
    )
