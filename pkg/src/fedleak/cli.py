"""Experiment pipeline CLI.

Subcommands cover the pipeline stages: ``partition``, ``train``,
``attack``, ``evaluate``, ``defend``, ``sweep``, ``cross-client``, and
``report``. Every stage reads the same declarative config (TOML or JSON,
flags override), writes its artifacts under the experiment's output
directory, and records completion in a manifest so re-invocations are
no-ops unless ``--force``. Reports embed the semantic config and seeds
(never filesystem paths), so reruns with the same config and corpus are
byte-identical on the builtin backend.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path
from typing import Any, Sequence

from .attack import (
    AttackConfig,
    GenerationSet,
    build_generalized,
    build_laft_dataset,
    default_budgets,
    execute_queries,
    frequency_select,
    load_generation_set,
)
from .config import (
    ExperimentConfig,
    config_hash,
    load_experiment_config,
    semantic_dict,
)
from .corpus import BOUNDARY_TOKEN, AnnotatedCorpus, concatenate, ingest
from .defense import defended_run
from .errors import ConfigurationError, FedleakError
from .federation import load_checkpoint, run_federation
from .judge import (
    build_evaluation_set,
    compute_metrics,
    cross_client_matrix,
    match_extractions,
    report_to_dict,
    set_difference_analysis,
)
from .lm import NGramBackend, NGramModel, finetune_pairs
from .partition import load_partition, partition, write_partition
from .remote import RemoteBackend
from .tokenizers import Tokenizer

MANIFEST_NAME = "manifest.json"
REMOTE_TOKEN_ENV = "FEDLEAK_REMOTE_TOKEN"


def _write_json(path: Path, obj: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(obj, sort_keys=True, ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )


class Experiment:
    """One configured experiment rooted at its output directory."""

    def __init__(self, cfg: ExperimentConfig, force: bool = False):
        self.cfg = cfg
        self.out = Path(cfg.output_dir)
        self.force = force
        self.hash = config_hash(cfg)
        self.manifest = self._load_manifest()

    def _load_manifest(self) -> dict:
        path = self.out / MANIFEST_NAME
        if path.exists():
            manifest = json.loads(path.read_text(encoding="utf-8"))
            if manifest.get("config_hash") != self.hash and not self.force:
                raise ConfigurationError(
                    f"output dir {self.out} holds artifacts for a different "
                    "configuration; use --force to overwrite or pick a new "
                    "output_dir"
                )
            if manifest.get("config_hash") == self.hash:
                return manifest
        return {
            "config_hash": self.hash,
            "config": semantic_dict(self.cfg),
            "corpus_path": self.cfg.corpus_path,
            "stages": {},
        }

    def _save_manifest(self) -> None:
        _write_json(self.out / MANIFEST_NAME, self.manifest)

    def done(self, stage: str) -> bool:
        return not self.force and bool(
            self.manifest["stages"].get(stage, {}).get("completed")
        )

    def mark(self, stage: str) -> None:
        self.manifest["stages"][stage] = {"completed": True}
        self._save_manifest()

    @property
    def tokenizer(self) -> Tokenizer:
        mode = self.manifest.get("tokenizer_resolved")
        if mode is None:
            raise ConfigurationError("run the partition stage first")
        return Tokenizer(mode)

    def snapshot(self) -> dict:
        snap = semantic_dict(self.cfg)
        snap["config_hash"] = self.hash
        return snap

    # ----- stages ---------------------------------------------------------

    def stage_partition(self) -> list[AnnotatedCorpus]:
        part_dir = self.out / "partition"
        if self.done("partition"):
            return load_partition(
                part_dir, tokenizer=self.manifest["tokenizer_resolved"]
            )
        global_corpus = ingest(self.cfg.corpus_path, tokenizer=self.cfg.tokenizer)
        shards = partition(global_corpus, self.cfg.partition)
        write_partition(shards, part_dir, self.cfg.partition)
        self.manifest["tokenizer_resolved"] = global_corpus.tokenizer
        self.mark("partition")
        print(f"partition: {len(shards)} shards -> {part_dir}")
        return shards

    def _final_checkpoint(self) -> Path:
        return (
            self.out
            / "federation"
            / "fl"
            / f"round_{self.cfg.fl.rounds}"
            / "global.model"
        )

    def stage_train(self) -> NGramModel:
        ckpt = self._final_checkpoint()
        if self.done("train") and ckpt.exists():
            return load_checkpoint(ckpt)
        shards = self.stage_partition()
        model, logs = run_federation(
            shards,
            self.cfg.fl,
            checkpoint_dir=self.out / "federation",
            run_id="fl",
        )
        _write_json(
            self.out / "federation" / "rounds.json",
            [
                {
                    "round": log.round,
                    "per_client_token_counts": log.per_client_token_counts,
                }
                for log in logs
            ],
        )
        self.mark("train")
        print(f"train: {self.cfg.fl.rounds} rounds -> {ckpt}")
        return model

    def _require_single_victim(self) -> int:
        if self.cfg.victim_id == "all-pairs":
            raise ConfigurationError(
                "victim_id=all-pairs only applies to the cross-client stage"
            )
        return int(self.cfg.victim_id)

    def _attack_model(self) -> NGramModel:
        model = self.stage_train()
        if self.cfg.laft is None:
            return model
        shards = self.stage_partition()
        attacker = shards[self.cfg.attacker_id]
        stream = concatenate(attacker, boundary=BOUNDARY_TOKEN)
        ranked = frequency_select(
            build_generalized(stream, self.cfg.attack.prefix_length)
        )
        pairs = build_laft_dataset(
            ranked,
            attacker.pii_surfaces(),
            k_prefixes=self.cfg.laft.k_prefixes,
            k_pii=self.cfg.laft.k_pii,
            seed=self.cfg.laft.seed,
        )
        print(f"laft: injecting {len(pairs)} prefix/PII pairs")
        return finetune_pairs(model, pairs, weight=self.cfg.laft.weight)

    def _backend(self, model: NGramModel | None):
        if self.cfg.backend == "remote":
            assert self.cfg.remote is not None
            remote_cfg = self.cfg.remote
            token = os.environ.get(REMOTE_TOKEN_ENV)
            if token:
                from dataclasses import replace

                remote_cfg = replace(remote_cfg, auth_token=token)
            return RemoteBackend(remote_cfg, self.tokenizer)
        assert model is not None
        return NGramBackend(model)

    def _build_prefixes(
        self, attack_cfg: AttackConfig, budget: int | None
    ) -> list[tuple[str, ...]]:
        from .attack import build_contextual

        shards = self.stage_partition()
        attacker = shards[self.cfg.attacker_id]
        stream = concatenate(attacker, boundary=BOUNDARY_TOKEN)
        builder = (
            build_contextual
            if attack_cfg.prefix_set == "contextual"
            else build_generalized
        )
        ms = builder(stream, attack_cfg.prefix_length)
        return frequency_select(ms, attack_cfg.freq_threshold, budget)

    def stage_attack(self) -> GenerationSet:
        self._require_single_victim()
        attack_dir = self.out / "attack"
        if self.done("attack"):
            return load_generation_set(attack_dir, self.cfg.attack, self.tokenizer)
        if self.cfg.laft is not None and self.cfg.backend == "remote":
            raise ConfigurationError(
                "laft requires the builtin backend; remote backends do not "
                "support local fine-tuning"
            )
        model = self._attack_model() if self.cfg.backend == "builtin" else None
        backend = self._backend(model)
        prefixes = self._build_prefixes(self.cfg.attack, self.cfg.attack.budget)
        tok = self.tokenizer
        _write_json(
            attack_dir / "prefixes.json",
            [tok.join(p) for p in prefixes],
        )
        workers = (
            self.cfg.remote.max_concurrency
            if self.cfg.backend == "remote" and self.cfg.remote
            else 1
        )
        gens = execute_queries(
            backend,
            prefixes,
            self.cfg.attack,
            journal_dir=attack_dir,
            tokenizer=tok,
            max_workers=workers,
        )
        if gens.failed_prefixes:
            _write_json(
                attack_dir / "failures.json",
                {"unqueried_prefix_indices": gens.failed_prefixes},
            )
            print(
                f"attack: WARNING {len(gens.failed_prefixes)} prefixes failed; "
                "re-run to retry them",
                file=sys.stderr,
            )
        else:
            self.mark("attack")
        print(
            f"attack: {gens.total_queries} queries over "
            f"{len(prefixes)} prefixes -> {attack_dir}"
        )
        return gens

    def stage_evaluate(self, compare: str | None = None) -> dict:
        victim_id = self._require_single_victim()
        gens = self.stage_attack()
        shards = self.stage_partition()
        attacker = shards[self.cfg.attacker_id]
        victim = shards[victim_id]
        eval_set = build_evaluation_set(
            victim.pii_surfaces(),
            attacker.pii_surfaces(),
            concatenate(attacker, boundary=BOUNDARY_TOKEN),
            victim_corpus=victim,
        )
        records = match_extractions(gens, eval_set)
        report = compute_metrics(
            records,
            eval_set,
            gens.total_queries,
            victim_spans=victim.spans,
            config_snapshot=self.snapshot(),
        )
        report_dict = report_to_dict(report)
        report_path = self.out / "reports" / "attack_report.json"
        _write_json(report_path, report_dict)
        self.mark("evaluate")
        print(
            f"evaluate: CR {report.cr_percent}, EF {report.ef_percent}, "
            f"VxPII {len(report.vxpii)} -> {report_path}"
        )
        if compare is not None:
            other = json.loads(Path(compare).read_text(encoding="utf-8"))
            other_vx = {tuple(s) for s in other["vxpii"]}
            f_only, b_only, common = set_difference_analysis(
                report.vxpii, other_vx
            )
            compare_dict = {
                "current_minus_other": f_only,
                "other_minus_current": b_only,
                "intersection": common,
                "current_vxpii": len(report.vxpii),
                "other_vxpii": len(other_vx),
            }
            compare_path = self.out / "reports" / "compare.json"
            _write_json(compare_path, compare_dict)
            print(
                f"compare: |F\\B|={f_only} |B\\F|={b_only} |F&B|={common} "
                f"-> {compare_path}"
            )
            report_dict["compare"] = compare_dict
        return report_dict

    def stage_defend(self) -> dict:
        victim_id = self._require_single_victim()
        if self.cfg.backend != "builtin":
            raise ConfigurationError("defend requires the builtin backend")
        settings = self.cfg.defense
        if settings is None:
            raise ConfigurationError("config has no [defense] section")
        shards = self.stage_partition()
        comparison, _, _ = defended_run(
            shards,
            self.cfg.fl,
            self.cfg.attack,
            settings.policy,
            attacker_idx=self.cfg.attacker_id,
            victim_idx=victim_id,
            prefix_source=settings.prefix_source,
        )
        for rep in (comparison.defended, comparison.undefended):
            rep.config_snapshot = self.snapshot()
        out = {
            "defended": report_to_dict(comparison.defended),
            "undefended": report_to_dict(comparison.undefended),
            "vxpii_only_undefended": comparison.only_undefended,
            "vxpii_only_defended": comparison.only_defended,
            "vxpii_common": comparison.common,
        }
        path = self.out / "reports" / "defense_report.json"
        _write_json(path, out)
        self.mark("defend")
        print(
            f"defend: CR {comparison.defended.cr_percent} (masked) vs "
            f"{comparison.undefended.cr_percent} (plain) -> {path}"
        )
        return out

    def stage_sweep(self, budgets: Sequence[int] | None = None) -> list[dict]:
        self._require_single_victim()
        victim_id = int(self.cfg.victim_id)
        model = self._attack_model() if self.cfg.backend == "builtin" else None
        backend = self._backend(model)
        ordered = self._build_prefixes(self.cfg.attack, budget=None)
        if budgets is None or not budgets:
            budgets = default_budgets(len(ordered))
        budgets = sorted(set(budgets))
        max_budget = min(max(budgets), len(ordered))

        tok = self.tokenizer
        sweep_dir = self.out / "sweep"
        gens = execute_queries(
            backend,
            ordered[:max_budget],
            self.cfg.attack,
            journal_dir=sweep_dir,
            tokenizer=tok,
        )
        shards = self.stage_partition()
        attacker = shards[self.cfg.attacker_id]
        victim = shards[victim_id]
        eval_set = build_evaluation_set(
            victim.pii_surfaces(),
            attacker.pii_surfaces(),
            concatenate(attacker, boundary=BOUNDARY_TOKEN),
            victim_corpus=victim,
        )
        all_matches = match_extractions(gens, eval_set)
        n = self.cfg.attack.samples_per_prefix
        rows = []
        for budget in budgets:
            completed = {
                r.prefix_idx for r in gens.records if r.prefix_idx < budget
            }
            queries = n * len(completed)
            vxpii = {m.pii for m in all_matches if m.prefix_idx < budget}
            cr = len(vxpii) / len(eval_set.items) if eval_set.items else None
            ef = len(vxpii) / queries if queries else 0.0
            rows.append(
                {
                    "budget": budget,
                    "prefixes_used": len(completed),
                    "Q": queries,
                    "vxpii": len(vxpii),
                    "cr": cr,
                    "ef": ef,
                }
            )
        csv_path = self.out / "reports" / "sweep.csv"
        csv_path.parent.mkdir(parents=True, exist_ok=True)
        with csv_path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["budget", "prefixes_used", "Q", "vxpii", "cr", "ef"])
            for row in rows:
                writer.writerow(
                    [
                        row["budget"],
                        row["prefixes_used"],
                        row["Q"],
                        row["vxpii"],
                        "" if row["cr"] is None else repr(row["cr"]),
                        repr(row["ef"]),
                    ]
                )
        self.mark("sweep")
        print(f"sweep: {len(rows)} budgets -> {csv_path}")
        return rows

    def stage_cross_client(self) -> dict:
        model = self._attack_model() if self.cfg.backend == "builtin" else None
        if model is None:
            raise ConfigurationError("cross-client requires the builtin backend")
        shards = self.stage_partition()
        result = cross_client_matrix(shards, model, self.cfg.attack)
        out = {
            "num_clients": result.num_clients,
            "cr": result.cr,
            "notes": result.notes,
        }
        json_path = self.out / "reports" / "cross_client.json"
        _write_json(json_path, out)
        csv_path = self.out / "reports" / "cross_client.csv"
        with csv_path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            header = ["attacker_id"] + [
                f"victim_{v}" for v in range(result.num_clients)
            ] + ["average"]
            writer.writerow(header)
            for a in range(result.num_clients):
                cells = result.cr[a]
                values = [c for c in cells if c is not None]
                avg = sum(values) / len(values) if values else ""
                writer.writerow(
                    [a]
                    + ["-" if c is None else repr(c) for c in cells]
                    + [repr(avg) if values else "-"]
                )
        self.mark("cross-client")
        print(f"cross-client: {result.populated_cells()} cells -> {csv_path}")
        return out

    def stage_report(self) -> dict:
        reports_dir = self.out / "reports"
        summary: dict[str, Any] = {
            "config_hash": self.hash,
            "config": semantic_dict(self.cfg),
            "stages_completed": sorted(
                name
                for name, state in self.manifest["stages"].items()
                if state.get("completed")
            ),
        }
        for name, filename in (
            ("attack", "attack_report.json"),
            ("defense", "defense_report.json"),
            ("compare", "compare.json"),
            ("cross_client", "cross_client.json"),
        ):
            path = reports_dir / filename
            if path.exists():
                summary[name] = json.loads(path.read_text(encoding="utf-8"))
        sweep_path = reports_dir / "sweep.csv"
        if sweep_path.exists():
            with sweep_path.open(newline="", encoding="utf-8") as fh:
                summary["sweep"] = list(csv.DictReader(fh))
        path = reports_dir / "report.json"
        _write_json(path, summary)
        print(f"report: stages {summary['stages_completed']} -> {path}")
        if "attack" in summary:
            rep = summary["attack"]
            print(
                f"  attack: CR {rep['cr_percent']} EF {rep['ef_percent']} "
                f"VxPII {rep['vxpii_count']}/{rep['eval_set_size']} "
                f"Q {rep['total_queries']}"
            )
        if "defense" in summary:
            d = summary["defense"]
            print(
                f"  defense: CR {d['defended']['cr_percent']} masked vs "
                f"{d['undefended']['cr_percent']} plain"
            )
        return summary


def _parse_budget_list(text: str) -> list[int]:
    try:
        budgets = [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"invalid budget list {text!r}") from exc
    if not budgets or any(b < 1 for b in budgets):
        raise ConfigurationError("budgets must be positive integers")
    return budgets


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedleak",
        description=(
            "Federated n-gram memorization simulator and PII "
            "extraction-attack harness"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "partition": "split the corpus into client shards",
        "train": "run federated training and checkpoint each round",
        "attack": "build prefixes and query the model",
        "evaluate": "score recorded generations against the victim",
        "defend": "compare masked vs unmasked training under attack",
        "sweep": "coverage/efficiency across prefix budgets",
        "cross-client": "attack matrix over all client pairs",
        "report": "consolidate stage outputs into one report",
    }
    for name, help_text in commands.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="TOML or JSON config file")
        p.add_argument("--force", action="store_true", help="re-run completed stages")
        p.add_argument("--output-dir", help="override output_dir")
        p.add_argument("--seed", type=int, help="override every stage seed")
        p.add_argument("--attacker", type=int, help="override attacker_id")
        p.add_argument("--victim", help="override victim_id (index or all-pairs)")
        p.add_argument("--budget", type=int, help="override attack.budget")
        p.add_argument(
            "--temperature", type=float, help="override attack.temperature"
        )
        if name == "attack":
            p.add_argument(
                "--budget-sweep",
                help="comma-separated budgets; runs the sweep stage instead",
            )
        if name == "sweep":
            p.add_argument(
                "--budgets", help="comma-separated budgets (default: powers of 10)"
            )
        if name == "evaluate":
            p.add_argument(
                "--compare",
                help="path to another attack report; emits set differences",
            )
    return parser


def _collect_overrides(args: argparse.Namespace) -> dict[str, Any]:
    overrides: dict[str, Any] = {}
    if args.output_dir is not None:
        overrides["output_dir"] = args.output_dir
    if args.seed is not None:
        overrides["seed"] = args.seed
        overrides["partition.seed"] = args.seed
        overrides["fl.seed"] = args.seed
        overrides["attack.seed"] = args.seed
    if args.attacker is not None:
        overrides["attacker_id"] = args.attacker
    if args.victim is not None:
        overrides["victim_id"] = (
            args.victim if args.victim == "all-pairs" else int(args.victim)
        )
    if args.budget is not None:
        overrides["attack.budget"] = args.budget
    if args.temperature is not None:
        overrides["attack.temperature"] = args.temperature
    return overrides


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_experiment_config(args.config, _collect_overrides(args))
        experiment = Experiment(cfg, force=args.force)
    except FedleakError as exc:
        print(f"fedleak: configuration error: {exc}", file=sys.stderr)
        return 2

    command = args.command
    try:
        if command == "partition":
            experiment.stage_partition()
        elif command == "train":
            experiment.stage_train()
        elif command == "attack":
            sweep_arg = getattr(args, "budget_sweep", None)
            if sweep_arg:
                experiment.stage_sweep(_parse_budget_list(sweep_arg))
            else:
                experiment.stage_attack()
        elif command == "evaluate":
            experiment.stage_evaluate(compare=getattr(args, "compare", None))
        elif command == "defend":
            experiment.stage_defend()
        elif command == "sweep":
            budgets_arg = getattr(args, "budgets", None)
            experiment.stage_sweep(
                _parse_budget_list(budgets_arg) if budgets_arg else None
            )
        elif command == "cross-client":
            experiment.stage_cross_client()
        elif command == "report":
            experiment.stage_report()
    except FedleakError as exc:
        print(f"fedleak: {command} failed: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"fedleak: {command} failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
