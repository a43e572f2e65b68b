"""Command line entry points: run, train-verifier, sweep, report.

Configuration is one declarative JSON file plus flag overrides (flags win).
Endpoints accept either an http(s) URL or a mock spec of the form
``mock:scripted:<path>`` / ``mock:ngram:<path>`` so everything runs offline.

Exit codes: 0 success, 1 config error, 2 backend failure, 3 internal
invariant violation.  ``MC_SEED`` overrides the config seed.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import random
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from . import baselines, harness, training
from .backend import Backend, HttpBackend, NGramBackend, ScriptedBackend
from .engine import Verifier, run_generation
from .errors import (
    BackendUnavailable,
    ConfigError,
    EmptyBatch,
    MentorCollabError,
    SingleClassError,
)
from .stream import (
    BaselineKind,
    RunConfig,
    Source,
    VerifierKind,
    write_traces_jsonl,
)
from .verifier import load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_BACKEND = 2
EXIT_INTERNAL = 3


@dataclass
class CliConfig:
    run: RunConfig
    generator_endpoint: str
    mentor_endpoint: str
    dataset_path: Optional[str] = None
    template_id: Optional[str] = None
    output_dir: str = "runs/out"
    checkpoint_path: Optional[str] = None
    concurrency: int = 1
    training_set_path: Optional[str] = None
    collect_from_dataset: bool = False
    max_epochs: int = 500

    def to_dict(self) -> dict:
        d = {
            "rho": self.run.rho,
            "segment_len": self.run.segment_len,
            "max_new_tokens": self.run.max_new_tokens,
            "seed": self.run.seed,
            "verifier_kind": self.run.verifier_kind.value,
            "baseline_kind": self.run.baseline_kind.value if self.run.baseline_kind else None,
            "gamma": self.run.gamma,
            "alpha": self.run.alpha,
            "beta": self.run.beta,
            "tau": self.run.tau,
            "top_k": self.run.top_k,
            "stop_sequences": list(self.run.stop_sequences),
            "generator_endpoint": self.generator_endpoint,
            "mentor_endpoint": self.mentor_endpoint,
            "dataset_path": self.dataset_path,
            "template_id": self.template_id,
            "output_dir": self.output_dir,
            "checkpoint_path": self.checkpoint_path,
            "concurrency": self.concurrency,
            "training_set_path": self.training_set_path,
            "collect_from_dataset": self.collect_from_dataset,
            "max_epochs": self.max_epochs,
        }
        return d


def load_cli_config(path: Optional[str], overrides: Dict[str, object]) -> CliConfig:
    raw: Dict[str, object] = {}
    if path:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    raw.update({k: v for k, v in overrides.items() if v is not None})
    if "MC_SEED" in os.environ:
        raw["seed"] = int(os.environ["MC_SEED"])
    try:
        run = RunConfig(
            rho=float(raw.get("rho", 0.25)),
            segment_len=int(raw.get("segment_len", 16)),
            max_new_tokens=int(raw.get("max_new_tokens", 512)),
            seed=int(raw.get("seed", 0)),
            verifier_kind=VerifierKind(raw.get("verifier_kind", "free")),
            baseline_kind=BaselineKind(raw["baseline_kind"]) if raw.get("baseline_kind") else None,
            gamma=float(raw.get("gamma", 0.40)),
            alpha=float(raw.get("alpha", 0.50)),
            beta=float(raw.get("beta", 0.50)),
            tau=float(raw.get("tau", 0.03)),
            top_k=int(raw.get("top_k", 5)),
            stop_sequences=tuple(raw.get("stop_sequences", ())),
        )
    except (ValueError, KeyError) as err:
        raise ConfigError(f"invalid run configuration: {err}") from err
    if "generator_endpoint" not in raw or "mentor_endpoint" not in raw:
        raise ConfigError("generator_endpoint and mentor_endpoint are required")
    return CliConfig(
        run=run,
        generator_endpoint=str(raw["generator_endpoint"]),
        mentor_endpoint=str(raw["mentor_endpoint"]),
        dataset_path=raw.get("dataset_path"),
        template_id=raw.get("template_id"),
        output_dir=str(raw.get("output_dir", "runs/out")),
        checkpoint_path=raw.get("checkpoint_path"),
        concurrency=int(raw.get("concurrency", 1)),
        training_set_path=raw.get("training_set_path"),
        collect_from_dataset=bool(raw.get("collect_from_dataset", False)),
        max_epochs=int(raw.get("max_epochs", 500)),
    )


def resolve_backend(spec: str, role: Source) -> Backend:
    if spec.startswith("mock:scripted:"):
        path = spec[len("mock:scripted:") :]
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
        return ScriptedBackend(
            texts=obj["texts"],
            name=obj.get("name", f"scripted-{role.value}"),
            hidden_dim=obj.get("hidden_dim"),
        )
    if spec.startswith("mock:ngram:"):
        path = spec[len("mock:ngram:") :]
        corpus = Path(path).read_text(encoding="utf-8")
        return NGramBackend(corpus, name=f"ngram-{role.value}")
    if spec.startswith("http://") or spec.startswith("https://"):
        return HttpBackend(spec, producer=role)
    raise ConfigError(f"unrecognized endpoint spec: {spec!r}")


def _build_verifier(config: CliConfig) -> Verifier:
    kind = config.run.verifier_kind
    if kind is VerifierKind.MLP:
        if not config.checkpoint_path or not os.path.exists(config.checkpoint_path):
            raise ConfigError("verifier_kind=mlp requires an existing checkpoint_path")
        return Verifier(kind, load_checkpoint(config.checkpoint_path))
    return Verifier(kind)


def _method_name(config: CliConfig) -> str:
    if config.run.baseline_kind is not None:
        return config.run.baseline_kind.value
    return f"mentorcollab-{config.run.verifier_kind.value}"


def _run_one(
    example: harness.EvalExample,
    config: CliConfig,
    generator: Backend,
    mentor: Backend,
    verifier: Optional[Verifier],
):
    prompt = harness.render_prompt(example, config.template_id)
    if config.run.baseline_kind is not None:
        trace = baselines.run_baseline(prompt, config.run, generator, mentor)
    else:
        trace = run_generation(prompt, config.run, generator, mentor, verifier)
    return example.id, harness.score_example(example, trace), trace


def cmd_run(config: CliConfig) -> int:
    if not config.dataset_path:
        raise ConfigError("run requires dataset_path")
    verifier = None
    if config.run.baseline_kind is None:
        verifier = _build_verifier(config)
    generator = resolve_backend(config.generator_endpoint, Source.GENERATOR)
    mentor = resolve_backend(config.mentor_endpoint, Source.MENTOR)
    examples = harness.load_examples_jsonl(config.dataset_path)

    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "config_snapshot.json", "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, indent=2)

    results = []
    if config.concurrency > 1:
        with ThreadPoolExecutor(max_workers=config.concurrency) as pool:
            futures = [
                pool.submit(_run_one, ex, config, generator, mentor, verifier)
                for ex in examples
            ]
            results = [f.result() for f in futures]
    else:
        results = [_run_one(ex, config, generator, mentor, verifier) for ex in examples]
    # Single writer, deterministic order by example id.
    results.sort(key=lambda r: r[0])
    write_traces_jsonl(out_dir / "traces.jsonl", [t for _, _, t in results])
    metrics = harness.aggregate_metrics([(s, t) for _, s, t in results])
    method = _method_name(config)
    with open(out_dir / "metrics.json", "w", encoding="utf-8") as fh:
        json.dump(
            {"method": method, **harness.metrics_to_dict(metrics)}, fh, indent=2
        )
    harness.write_summary_csv(
        out_dir / "summary.csv",
        [
            {
                "method": method,
                "rho": config.run.rho,
                "segment_len": config.run.segment_len,
                "accuracy": metrics.accuracy,
                "mentor_ratio": metrics.mentor_token_ratio_mean,
            }
        ],
    )
    log.info("run complete: accuracy=%.4f", metrics.accuracy)
    return EXIT_OK


def cmd_train_verifier(config: CliConfig) -> int:
    if config.training_set_path and os.path.exists(config.training_set_path):
        examples = training.read_training_set_jsonl(config.training_set_path)
    elif config.collect_from_dataset:
        if not config.dataset_path:
            raise ConfigError("collection requires dataset_path with ground truth")
        generator = resolve_backend(config.generator_endpoint, Source.GENERATOR)
        mentor = resolve_backend(config.mentor_endpoint, Source.MENTOR)
        eval_examples = harness.load_examples_jsonl(config.dataset_path)
        by_id = {e.id: e for e in eval_examples}
        problems = [
            (e.id, harness.render_prompt(e, config.template_id)) for e in eval_examples
        ]

        def grade(problem_id, trace):
            return harness.score_example(by_id[problem_id], trace).correct

        examples = training.collect_training_set(
            problems, generator, mentor, config.run, grade
        )
    else:
        raise ConfigError("training_set_path missing and collection not enabled")
    rng = random.Random(config.run.seed)
    balanced = training.balance_dataset(examples, rng)
    train_set, val_set = training.split_by_problem(balanced, 0.1, rng)
    if not val_set:
        # Too few distinct problems for a held-out split; fall back to a
        # seeded example-level split.
        rng.shuffle(balanced)
        n_val = max(1, len(balanced) // 10)
        val_set, train_set = balanced[:n_val], balanced[n_val:]
    hyper = training.TrainHyper(seed=config.run.seed, max_epochs=config.max_epochs)
    params, history = training.train_verifier(train_set, val_set, hyper)
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = config.checkpoint_path or str(out_dir / "verifier.mclb")
    save_checkpoint(ckpt, params)
    with open(out_dir / "training_log.json", "w", encoding="utf-8") as fh:
        json.dump(
            [
                {"epoch": h.epoch, "train_loss": h.train_loss, "val_loss": h.val_loss}
                for h in history
            ],
            fh,
            indent=2,
        )
    log.info("checkpoint written to %s (%d epochs)", ckpt, len(history))
    return EXIT_OK


def cmd_sweep(config: CliConfig, axis: str, values: List[float]) -> int:
    if not values:
        raise ConfigError("sweep requires a non-empty value list")
    if axis not in ("rho", "segment_len"):
        raise ConfigError(f"unknown sweep axis {axis!r}")
    base_dir = Path(config.output_dir)
    base_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for value in values:
        sub = CliConfig(**{**config.__dict__})
        kwargs = {axis: value if axis == "rho" else int(value)}
        sub.run = RunConfig(
            rho=kwargs.get("rho", config.run.rho),
            segment_len=kwargs.get("segment_len", config.run.segment_len),
            max_new_tokens=config.run.max_new_tokens,
            seed=config.run.seed,
            verifier_kind=config.run.verifier_kind,
            baseline_kind=config.run.baseline_kind,
            gamma=config.run.gamma,
            alpha=config.run.alpha,
            beta=config.run.beta,
            tau=config.run.tau,
            top_k=config.run.top_k,
            stop_sequences=config.run.stop_sequences,
        )
        sub.output_dir = str(base_dir / f"{axis}_{value}")
        try:
            cmd_run(sub)
            with open(Path(sub.output_dir) / "metrics.json", encoding="utf-8") as fh:
                metrics = json.load(fh)
            rows.append(
                {
                    "method": metrics["method"],
                    "rho": sub.run.rho,
                    "segment_len": sub.run.segment_len,
                    "accuracy": metrics["accuracy"],
                    "mentor_ratio": metrics["mentor_token_ratio_mean"],
                }
            )
        except MentorCollabError as err:
            log.error("sweep value %s failed: %s", value, err)
    harness.write_summary_csv(base_dir / "sweep.csv", rows)
    return EXIT_OK


def cmd_report(traces_path: str, dataset_path: str, out_path: str) -> int:
    from .stream import read_traces_jsonl

    examples = harness.load_examples_jsonl(dataset_path)
    traces = read_traces_jsonl(traces_path)
    if len(examples) != len(traces):
        raise ConfigError("dataset and trace counts differ")
    scored = [
        (harness.score_example(ex, tr), tr)
        for ex, tr in zip(sorted(examples, key=lambda e: e.id), traces)
    ]
    metrics = harness.aggregate_metrics(scored)
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(harness.metrics_to_dict(metrics), fh, indent=2)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mentorcollab")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="declarative JSON config file")
        p.add_argument("--rho", type=float)
        p.add_argument("--segment-len", type=int, dest="segment_len")
        p.add_argument("--max-new-tokens", type=int, dest="max_new_tokens")
        p.add_argument("--seed", type=int)
        p.add_argument("--verifier-kind", dest="verifier_kind")
        p.add_argument("--baseline-kind", dest="baseline_kind")
        p.add_argument("--gamma", type=float)
        p.add_argument("--alpha", type=float)
        p.add_argument("--beta", type=float)
        p.add_argument("--tau", type=float)
        p.add_argument("--generator-endpoint", dest="generator_endpoint")
        p.add_argument("--mentor-endpoint", dest="mentor_endpoint")
        p.add_argument("--dataset", dest="dataset_path")
        p.add_argument("--template", dest="template_id")
        p.add_argument("--output-dir", dest="output_dir")
        p.add_argument("--checkpoint", dest="checkpoint_path")
        p.add_argument("--concurrency", type=int)
        p.add_argument("--training-set", dest="training_set_path")
        p.add_argument("--collect-from-dataset", action="store_const", const=True,
                       dest="collect_from_dataset", default=None)
        p.add_argument("--max-epochs", type=int, dest="max_epochs")

    add_common(sub.add_parser("run", help="run a protocol or baseline over a dataset"))
    add_common(sub.add_parser("train-verifier", help="train the MLP verifier"))
    sweep = sub.add_parser("sweep", help="sweep rho or segment_len")
    add_common(sweep)
    sweep.add_argument("--axis", choices=["rho", "segment_len"], required=True)
    sweep.add_argument("--values", required=True, help="comma-separated values")
    report = sub.add_parser("report", help="re-aggregate persisted traces")
    report.add_argument("--traces", required=True)
    report.add_argument("--dataset", required=True)
    report.add_argument("--out", required=True)
    return parser


_OVERRIDE_KEYS = [
    "rho", "segment_len", "max_new_tokens", "seed", "verifier_kind",
    "baseline_kind", "gamma", "alpha", "beta", "tau",
    "generator_endpoint", "mentor_endpoint", "dataset_path", "template_id",
    "output_dir", "checkpoint_path", "concurrency", "training_set_path",
    "collect_from_dataset", "max_epochs",
]


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            return cmd_report(args.traces, args.dataset, args.out)
        overrides = {k: getattr(args, k, None) for k in _OVERRIDE_KEYS}
        config = load_cli_config(args.config, overrides)
        if args.command == "run":
            return cmd_run(config)
        if args.command == "train-verifier":
            return cmd_train_verifier(config)
        if args.command == "sweep":
            values = [float(v) for v in args.values.split(",") if v.strip()]
            return cmd_sweep(config, args.axis, values)
        raise ConfigError(f"unknown command {args.command}")
    except (ConfigError, SingleClassError, EmptyBatch, FileNotFoundError) as err:
        log.error("%s", err)
        return EXIT_CONFIG
    except BackendUnavailable as err:
        log.error("backend failure: %s", err)
        return EXIT_BACKEND
    except MentorCollabError as err:
        log.error("internal invariant violation: %s", err)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
