#!/usr/bin/env python3
"""Offline end-to-end demo on mock backends.

Builds a small scripted corpus where the generator alone is always wrong and
the mentor knows the right answer, then runs generator-only, the
mentor-probing protocol, and one rule-based baseline through the CLI,
printing each run's summary row.  Everything happens in a temp directory
unless --workdir is given.
"""

import argparse
import json
import tempfile
from pathlib import Path

from mentorcollab.cli import main as cli_main
from mentorcollab.harness import AnswerKind, Domain, EvalExample, render_prompt


def build_corpus(workdir: Path, n: int):
    rows, gen_texts, mentor_texts = [], [], []
    for i in range(n):
        q = f"Compute quantity {i}."
        gold, wrong = str(500 + i), str(400 + i)
        rows.append({"id": f"d{i}", "domain": "math", "question": q,
                     "gold": gold, "answer_kind": "boxed"})
        ex = EvalExample(f"d{i}", Domain.MATH, q, gold, AnswerKind.BOXED)
        prompt = render_prompt(ex)
        wrong_doc = f"{prompt} The quantity is \\boxed{{{wrong}}}"
        right_doc = f"{prompt} The quantity is \\boxed{{{gold}}}"
        gen_texts.extend([wrong_doc, right_doc])
        mentor_texts.append(right_doc)
    dataset = workdir / "dataset.jsonl"
    dataset.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
    gen_spec = workdir / "generator.json"
    gen_spec.write_text(json.dumps({"texts": gen_texts, "name": "demo-generator",
                                    "hidden_dim": 16}))
    mentor_spec = workdir / "mentor.json"
    mentor_spec.write_text(json.dumps({"texts": mentor_texts,
                                       "name": "demo-mentor"}))
    return dataset, gen_spec, mentor_spec


def run(workdir: Path, n: int) -> int:
    dataset, gen_spec, mentor_spec = build_corpus(workdir, n)
    common = [
        "--dataset", str(dataset),
        "--generator-endpoint", f"mock:scripted:{gen_spec}",
        "--mentor-endpoint", f"mock:scripted:{mentor_spec}",
    ]
    runs = [
        ("generator only", ["--rho", "0.0", "--verifier-kind", "none"]),
        ("probe every boundary, adopt mentor",
         ["--rho", "1.0", "--verifier-kind", "always_mentor"]),
        ("nudging baseline", ["--baseline-kind", "nudging"]),
    ]
    for label, extra in runs:
        out = workdir / label.replace(" ", "_").replace(",", "")
        rc = cli_main(["run", *common, *extra, "--output-dir", str(out)])
        if rc != 0:
            print(f"{label}: FAILED with exit code {rc}")
            return rc
        metrics = json.loads((out / "metrics.json").read_text())
        print(f"{label:40s} accuracy={metrics['accuracy']:.2f} "
              f"mentor_ratio={metrics['mentor_token_ratio_mean']:.2f} "
              f"probes/ex={metrics['probes_per_example']:.1f}")
    return 0


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", help="where to place artifacts "
                        "(default: a fresh temp dir)")
    parser.add_argument("--examples", type=int, default=10)
    args = parser.parse_args()
    if args.workdir:
        workdir = Path(args.workdir)
        workdir.mkdir(parents=True, exist_ok=True)
        return run(workdir, args.examples)
    with tempfile.TemporaryDirectory() as tmp:
        return run(Path(tmp), args.examples)


if __name__ == "__main__":
    raise SystemExit(main())
