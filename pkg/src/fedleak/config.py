"""Declarative experiment configuration (TOML or JSON).

One file drives the whole pipeline; unknown keys are rejected so typos
surface as validation errors instead of silently-ignored settings. A
top-level ``seed`` fills in any section seed that is not set explicitly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from .attack import AttackConfig
from .defense import MaskingPolicy
from .errors import ConfigurationError
from .federation import FlConfig
from .partition import PartitionSpec
from .remote import RemoteBackendConfig


@dataclass(frozen=True)
class LaftSettings:
    """Association fine-tuning: pair frequent prefixes with own PII.

    The count learner only uses ``weight``; the optimizer fields are
    recorded for neural or remote backends that honor them.
    """

    k_prefixes: int = 10000
    k_pii: int = 10000
    weight: float = 1.0
    seed: int = 0
    learning_rate: float = 5e-5
    epochs: int = 1
    lora_rank: int = 16
    lora_alpha: int = 32

    def validate(self) -> None:
        if self.k_prefixes < 1 or self.k_pii < 1:
            raise ConfigurationError("laft.k_prefixes and laft.k_pii must be >= 1")
        if self.weight < 0:
            raise ConfigurationError("laft.weight must be >= 0")


@dataclass(frozen=True)
class DefenseSettings:
    policy: MaskingPolicy
    prefix_source: str = "unmasked"

    def validate(self) -> None:
        self.policy.validate()
        if self.prefix_source not in ("unmasked", "masked"):
            raise ConfigurationError(
                "defense.prefix_source must be unmasked or masked"
            )


@dataclass
class ExperimentConfig:
    corpus_path: str
    output_dir: str
    partition: PartitionSpec
    fl: FlConfig
    attack: AttackConfig
    tokenizer: str = "auto"
    attacker_id: int = 0
    victim_id: int | str = 1  # client index or "all-pairs"
    backend: str = "builtin"  # or "remote"
    laft: LaftSettings | None = None
    remote: RemoteBackendConfig | None = None
    defense: DefenseSettings | None = None

    def validate(self) -> None:
        self.partition.validate()
        self.fl.validate()
        self.attack.validate()
        if self.tokenizer not in ("auto", "codepoint", "whitespace"):
            raise ConfigurationError(
                "tokenizer must be auto, codepoint, or whitespace"
            )
        if self.backend not in ("builtin", "remote"):
            raise ConfigurationError("backend must be builtin or remote")
        if self.backend == "remote" and self.remote is None:
            raise ConfigurationError("backend=remote requires a [remote] section")
        c = self.partition.num_clients
        if not 0 <= self.attacker_id < c:
            raise ConfigurationError(
                f"attacker_id must be in [0, {c}), got {self.attacker_id}"
            )
        if self.victim_id != "all-pairs":
            if not isinstance(self.victim_id, int) or not 0 <= self.victim_id < c:
                raise ConfigurationError(
                    f"victim_id must be 'all-pairs' or in [0, {c}), "
                    f"got {self.victim_id!r}"
                )
            if self.victim_id == self.attacker_id:
                raise ConfigurationError("attacker_id and victim_id must differ")
        if self.laft is not None:
            self.laft.validate()
        if self.remote is not None:
            self.remote.validate()
        if self.defense is not None:
            self.defense.validate()


def _take(section: dict, name: str, keys: dict[str, Any]) -> dict:
    unknown = set(section) - set(keys)
    if unknown:
        raise ConfigurationError(
            f"unknown keys in [{name}]: {', '.join(sorted(unknown))}"
        )
    out = dict(keys)
    out.update(section)
    return out


def _read_raw(path: Path) -> dict:
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        return json.loads(text)
    if path.suffix == ".toml":
        return tomllib.loads(text)
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return tomllib.loads(text)


_TOP_LEVEL_KEYS = {
    "corpus_path",
    "output_dir",
    "tokenizer",
    "attacker_id",
    "victim_id",
    "backend",
    "seed",
    "partition",
    "fl",
    "attack",
    "laft",
    "remote",
    "defense",
}


def parse_experiment_config(raw: dict) -> ExperimentConfig:
    unknown = set(raw) - _TOP_LEVEL_KEYS
    if unknown:
        raise ConfigurationError(
            f"unknown top-level keys: {', '.join(sorted(unknown))}"
        )
    for required in ("corpus_path", "output_dir"):
        if required not in raw:
            raise ConfigurationError(f"missing required key: {required}")
    base_seed = raw.get("seed", 0)

    part = _take(
        raw.get("partition", {}),
        "partition",
        {
            "num_clients": 5,
            "skew_alpha": 0.5,
            "seed": base_seed,
            "strategy": "by-label-skew",
        },
    )
    partition = PartitionSpec(**part)

    fl_raw = _take(
        raw.get("fl", {}),
        "fl",
        {
            "rounds": 10,
            "aggregator": "fedavg-weighted",
            "learner_order": 5,
            "seed": base_seed,
            "backoff_factor": 0.4,
            "incremental": False,
        },
    )
    fl = FlConfig(num_clients=partition.num_clients, **fl_raw)

    attack_raw = _take(
        raw.get("attack", {}),
        "attack",
        {
            "prefix_length": 50,
            "samples_per_prefix": 15,
            "max_new_tokens": 10,
            "budget": None,
            "freq_threshold": None,
            "temperature": 1.0,
            "seed": base_seed,
            "prefix_set": "contextual",
        },
    )
    attack = AttackConfig(**attack_raw)

    laft = None
    if "laft" in raw:
        laft_raw = _take(
            raw["laft"],
            "laft",
            {
                "k_prefixes": 10000,
                "k_pii": 10000,
                "weight": 1.0,
                "seed": base_seed,
                "learning_rate": 5e-5,
                "epochs": 1,
                "lora_rank": 16,
                "lora_alpha": 32,
            },
        )
        laft = LaftSettings(**laft_raw)

    remote = None
    if "remote" in raw:
        remote_raw = _take(
            raw["remote"],
            "remote",
            {
                "endpoint_url": "",
                "auth_token": None,
                "timeout": 30.0,
                "max_retries": 3,
                "max_concurrency": 4,
                "retry_backoff": 0.05,
            },
        )
        remote = RemoteBackendConfig(**remote_raw)

    defense = None
    if "defense" in raw:
        defense_raw = _take(
            raw["defense"],
            "defense",
            {
                "mask_char": "*",
                "scope": "all-labels",
                "labels": None,
                "prefix_source": "unmasked",
            },
        )
        labels = defense_raw.pop("labels")
        prefix_source = defense_raw.pop("prefix_source")
        defense = DefenseSettings(
            policy=MaskingPolicy(
                labels=frozenset(labels) if labels else None, **defense_raw
            ),
            prefix_source=prefix_source,
        )

    cfg = ExperimentConfig(
        corpus_path=raw["corpus_path"],
        output_dir=raw["output_dir"],
        partition=partition,
        fl=fl,
        attack=attack,
        tokenizer=raw.get("tokenizer", "auto"),
        attacker_id=raw.get("attacker_id", 0),
        victim_id=raw.get("victim_id", 1),
        backend=raw.get("backend", "builtin"),
        laft=laft,
        remote=remote,
        defense=defense,
    )
    cfg.validate()
    return cfg


def load_experiment_config(
    path: str | Path, overrides: dict[str, Any] | None = None
) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    raw = _read_raw(path)
    if not isinstance(raw, dict):
        raise ConfigurationError("config root must be a table/object")
    for key, value in (overrides or {}).items():
        section, _, leaf = key.partition(".")
        if leaf:
            raw.setdefault(section, {})[leaf] = value
        else:
            raw[key] = value
    return parse_experiment_config(raw)


def semantic_dict(cfg: ExperimentConfig) -> dict:
    """Config as a plain dict, minus filesystem paths and secrets.

    This is what reports embed: everything needed to regenerate the run
    on the same corpus, independent of where artifacts happen to live.
    """
    from dataclasses import asdict

    out: dict[str, Any] = {
        "tokenizer": cfg.tokenizer,
        "attacker_id": cfg.attacker_id,
        "victim_id": cfg.victim_id,
        "backend": cfg.backend,
        "partition": asdict(cfg.partition),
        "fl": asdict(cfg.fl),
        "attack": asdict(cfg.attack),
    }
    if cfg.laft is not None:
        out["laft"] = asdict(cfg.laft)
    if cfg.remote is not None:
        remote = asdict(cfg.remote)
        remote.pop("auth_token", None)
        out["remote"] = remote
    if cfg.defense is not None:
        out["defense"] = {
            "mask_char": cfg.defense.policy.mask_char,
            "scope": cfg.defense.policy.scope,
            "labels": sorted(cfg.defense.policy.labels or []),
            "prefix_source": cfg.defense.prefix_source,
        }
    return out


def config_hash(cfg: ExperimentConfig) -> str:
    canon = json.dumps(
        semantic_dict(cfg), sort_keys=True, ensure_ascii=False, separators=(",", ":")
    )
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]
