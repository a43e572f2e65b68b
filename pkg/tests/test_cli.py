import json
from pathlib import Path

import pytest

from mentorcollab.cli import main
from mentorcollab.harness import AnswerKind, Domain, EvalExample, render_prompt


def _write_dataset(path: Path, rows):
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")


def _scripted_setup(tmp_path: Path, n=3):
    """Dataset plus matching scripted-backend spec files.

    Each problem's generator document ends in a wrong boxed answer; the
    mentor document in the right one.
    """
    rows, gen_texts, mentor_texts = [], [], []
    for i in range(n):
        q = f"Compute item {i}."
        rows.append({"id": f"m{i}", "domain": "math", "question": q,
                     "gold": str(200 + i), "answer_kind": "boxed"})
        ex = EvalExample(f"m{i}", Domain.MATH, q, str(200 + i), AnswerKind.BOXED)
        prompt = render_prompt(ex)
        wrong = f"{prompt} The result is \\boxed{{{100 + i}}}"
        right = f"{prompt} The result is \\boxed{{{200 + i}}}"
        # The generator script also carries the corrected document so it can
        # resume after a mentor segment is spliced in.
        gen_texts.extend([wrong, right])
        mentor_texts.append(right)
    dataset = tmp_path / "dataset.jsonl"
    _write_dataset(dataset, rows)
    gen_spec = tmp_path / "gen.json"
    gen_spec.write_text(json.dumps({"texts": gen_texts, "name": "gen",
                                    "hidden_dim": 8}))
    mentor_spec = tmp_path / "mentor.json"
    mentor_spec.write_text(json.dumps({"texts": mentor_texts, "name": "mentor"}))
    return dataset, gen_spec, mentor_spec


def _ngram_setup(tmp_path: Path):
    rows = [{"id": "n0", "domain": "math", "question": "cycle", "gold": "2",
             "answer_kind": "boxed"}]
    dataset = tmp_path / "ng_dataset.jsonl"
    _write_dataset(dataset, rows)
    corpus = tmp_path / "corpus.txt"
    corpus.write_text("Solution: a b a b")
    return dataset, corpus


class TestRunCommand:
    def test_solo_smoke_run_writes_artifacts(self, tmp_path):
        dataset, gen_spec, mentor_spec = _scripted_setup(tmp_path)
        out = tmp_path / "out"
        rc = main([
            "run", "--dataset", str(dataset),
            "--generator-endpoint", f"mock:scripted:{gen_spec}",
            "--mentor-endpoint", f"mock:scripted:{mentor_spec}",
            "--rho", "0.0", "--verifier-kind", "none",
            "--output-dir", str(out),
        ])
        assert rc == 0
        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["probes_per_example"] == 0.0
        assert metrics["accuracy"] == 0.0  # generator alone is always wrong
        assert (out / "traces.jsonl").exists()
        assert (out / "summary.csv").exists()
        snapshot = json.loads((out / "config_snapshot.json").read_text())
        assert snapshot["rho"] == 0.0

    def test_always_mentor_rescues_through_cli(self, tmp_path):
        dataset, gen_spec, mentor_spec = _scripted_setup(tmp_path)
        out = tmp_path / "out_m"
        rc = main([
            "run", "--dataset", str(dataset),
            "--generator-endpoint", f"mock:scripted:{gen_spec}",
            "--mentor-endpoint", f"mock:scripted:{mentor_spec}",
            "--rho", "1.0", "--verifier-kind", "always_mentor",
            "--output-dir", str(out),
        ])
        assert rc == 0
        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["accuracy"] == 1.0
        assert metrics["method"] == "mentorcollab-always_mentor"

    def test_baseline_method_labeling(self, tmp_path):
        dataset, gen_spec, mentor_spec = _scripted_setup(tmp_path)
        out = tmp_path / "out_b"
        rc = main([
            "run", "--dataset", str(dataset),
            "--generator-endpoint", f"mock:scripted:{gen_spec}",
            "--mentor-endpoint", f"mock:scripted:{mentor_spec}",
            "--baseline-kind", "nudging", "--gamma", "0.0",
            "--output-dir", str(out),
        ])
        assert rc == 0
        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["method"] == "nudging"
        row = (out / "summary.csv").read_text().strip().splitlines()[1]
        assert row.startswith("nudging,")

    def test_missing_mlp_checkpoint_is_config_error(self, tmp_path):
        # The checkpoint is validated before any backend is touched, so a
        # deliberately broken endpoint spec never gets the chance to fail.
        dataset, gen_spec, mentor_spec = _scripted_setup(tmp_path)
        rc = main([
            "run", "--dataset", str(dataset),
            "--generator-endpoint", "mock:scripted:/does/not/exist.json",
            "--mentor-endpoint", f"mock:scripted:{mentor_spec}",
            "--verifier-kind", "mlp",
            "--checkpoint", str(tmp_path / "missing.mclb"),
            "--output-dir", str(tmp_path / "never"),
        ])
        assert rc == 1
        assert not (tmp_path / "never").exists()

    def test_unrecognized_endpoint_is_config_error(self, tmp_path):
        dataset, _, mentor_spec = _scripted_setup(tmp_path)
        rc = main([
            "run", "--dataset", str(dataset),
            "--generator-endpoint", "ftp://nope",
            "--mentor-endpoint", f"mock:scripted:{mentor_spec}",
            "--verifier-kind", "none", "--rho", "0.0",
            "--output-dir", str(tmp_path / "x"),
        ])
        assert rc == 1

    def test_run_reproducibility_bytes(self, tmp_path):
        dataset, gen_spec, mentor_spec = _scripted_setup(tmp_path)
        outs = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            rc = main([
                "run", "--dataset", str(dataset),
                "--generator-endpoint", f"mock:scripted:{gen_spec}",
                "--mentor-endpoint", f"mock:scripted:{mentor_spec}",
                "--rho", "1.0", "--verifier-kind", "always_mentor",
                "--seed", "5", "--output-dir", str(out),
            ])
            assert rc == 0
            outs.append(out)
        assert (outs[0] / "traces.jsonl").read_bytes() == (
            outs[1] / "traces.jsonl"
        ).read_bytes()

    def test_mc_seed_env_override(self, tmp_path, monkeypatch):
        dataset, gen_spec, mentor_spec = _scripted_setup(tmp_path)
        monkeypatch.setenv("MC_SEED", "123")
        out = tmp_path / "seeded"
        rc = main([
            "run", "--dataset", str(dataset),
            "--generator-endpoint", f"mock:scripted:{gen_spec}",
            "--mentor-endpoint", f"mock:scripted:{mentor_spec}",
            "--rho", "0.0", "--verifier-kind", "none",
            "--seed", "7", "--output-dir", str(out),
        ])
        assert rc == 0
        snapshot = json.loads((out / "config_snapshot.json").read_text())
        assert snapshot["seed"] == 123


class TestSweepCommand:
    def test_rho_sweep_rows_and_monotone_probes(self, tmp_path):
        dataset, corpus = _ngram_setup(tmp_path)
        out = tmp_path / "sweep"
        rc = main([
            "sweep", "--axis", "rho", "--values", "0.0,0.5,1.0",
            "--dataset", str(dataset),
            "--generator-endpoint", f"mock:ngram:{corpus}",
            "--mentor-endpoint", f"mock:ngram:{corpus}",
            "--verifier-kind", "free", "--max-new-tokens", "40",
            "--output-dir", str(out),
        ])
        assert rc == 0
        lines = (out / "sweep.csv").read_text().strip().splitlines()
        assert len(lines) == 4  # header + one row per value
        probes = []
        for v in ("0.0", "0.5", "1.0"):
            metrics = json.loads((out / f"rho_{v}" / "metrics.json").read_text())
            probes.append(metrics["probes_per_example"])
        assert probes == sorted(probes)
        assert probes[0] == 0.0 and probes[-1] > 0.0

    def test_empty_values_is_usage_error(self, tmp_path):
        dataset, corpus = _ngram_setup(tmp_path)
        rc = main([
            "sweep", "--axis", "rho", "--values", ",",
            "--dataset", str(dataset),
            "--generator-endpoint", f"mock:ngram:{corpus}",
            "--mentor-endpoint", f"mock:ngram:{corpus}",
            "--output-dir", str(tmp_path / "s2"),
        ])
        assert rc == 1


class TestTrainVerifierCommand:
    def test_train_from_jsonl_writes_checkpoint(self, tmp_path):
        import numpy as np

        from mentorcollab.training import TrainingExample, write_training_set_jsonl
        from mentorcollab.verifier import load_checkpoint

        rng = np.random.default_rng(0)
        w = rng.normal(size=6)
        examples = []
        for i in range(200):
            x = rng.normal(size=6)
            examples.append(
                TrainingExample(tuple(x), int(x @ w > 0), f"p{i % 20}")
            )
        train_file = tmp_path / "train.jsonl"
        write_training_set_jsonl(train_file, examples)
        out = tmp_path / "train_out"
        ckpt = tmp_path / "v.mclb"
        rc = main([
            "train-verifier", "--training-set", str(train_file),
            "--generator-endpoint", "mock:ngram:/unused",
            "--mentor-endpoint", "mock:ngram:/unused",
            "--checkpoint", str(ckpt), "--max-epochs", "20",
            "--output-dir", str(out),
        ])
        assert rc == 0
        params = load_checkpoint(ckpt)
        assert params.input_dim == 6
        log = json.loads((out / "training_log.json").read_text())
        assert log and log[0]["epoch"] == 1

    def test_empty_training_file_is_config_error(self, tmp_path):
        empty = tmp_path / "empty.jsonl"
        empty.write_text("")
        rc = main([
            "train-verifier", "--training-set", str(empty),
            "--generator-endpoint", "mock:ngram:/unused",
            "--mentor-endpoint", "mock:ngram:/unused",
            "--output-dir", str(tmp_path / "e"),
        ])
        assert rc == 1


class TestReportCommand:
    def test_report_matches_run_metrics(self, tmp_path):
        dataset, gen_spec, mentor_spec = _scripted_setup(tmp_path)
        out = tmp_path / "run_out"
        rc = main([
            "run", "--dataset", str(dataset),
            "--generator-endpoint", f"mock:scripted:{gen_spec}",
            "--mentor-endpoint", f"mock:scripted:{mentor_spec}",
            "--rho", "1.0", "--verifier-kind", "always_mentor",
            "--output-dir", str(out),
        ])
        assert rc == 0
        report_path = tmp_path / "report.json"
        rc = main([
            "report", "--traces", str(out / "traces.jsonl"),
            "--dataset", str(dataset), "--out", str(report_path),
        ])
        assert rc == 0
        run_metrics = json.loads((out / "metrics.json").read_text())
        run_metrics.pop("method")
        assert json.loads(report_path.read_text()) == run_metrics

    def test_count_mismatch_is_config_error(self, tmp_path):
        dataset, gen_spec, mentor_spec = _scripted_setup(tmp_path)
        out = tmp_path / "run_out2"
        main([
            "run", "--dataset", str(dataset),
            "--generator-endpoint", f"mock:scripted:{gen_spec}",
            "--mentor-endpoint", f"mock:scripted:{mentor_spec}",
            "--rho", "0.0", "--verifier-kind", "none",
            "--output-dir", str(out),
        ])
        short = tmp_path / "short.jsonl"
        _write_dataset(short, [{"id": "m0", "domain": "math", "question": "q",
                                "gold": "1", "answer_kind": "boxed"}])
        rc = main([
            "report", "--traces", str(out / "traces.jsonl"),
            "--dataset", str(short), "--out", str(tmp_path / "r.json"),
        ])
        assert rc == 1
