#!/usr/bin/env python3
"""Train the hidden-state verifier on a synthetic separable dataset.

Writes a training-set JSONL, trains through the CLI, and reports the final
checkpoint's accuracy.  Useful as a smoke test of the training path without
any model servers.
"""

import argparse
import tempfile
from pathlib import Path

import numpy as np

from mentorcollab.cli import main as cli_main
from mentorcollab.training import (
    TrainingExample,
    accuracy,
    examples_to_arrays,
    write_training_set_jsonl,
)
from mentorcollab.verifier import load_checkpoint


def run(workdir: Path, n: int, dim: int, seed: int) -> int:
    rng = np.random.default_rng(seed)
    w = rng.normal(size=dim)
    x = rng.normal(size=(n, dim))
    y = (x @ w > 0).astype(int)
    examples = [
        TrainingExample(tuple(x[i]), int(y[i]), f"p{i % 50}") for i in range(n)
    ]
    train_file = workdir / "training_set.jsonl"
    write_training_set_jsonl(train_file, examples)
    ckpt = workdir / "verifier.mclb"
    rc = cli_main([
        "train-verifier",
        "--training-set", str(train_file),
        "--generator-endpoint", "mock:ngram:/unused",
        "--mentor-endpoint", "mock:ngram:/unused",
        "--checkpoint", str(ckpt),
        "--seed", str(seed),
        "--output-dir", str(workdir),
    ])
    if rc != 0:
        print(f"training FAILED with exit code {rc}")
        return rc
    params = load_checkpoint(ckpt)
    xs, ys = examples_to_arrays(examples)
    print(f"checkpoint {ckpt} (d={params.input_dim}), "
          f"full-set accuracy {accuracy(params, xs, ys):.4f}")
    return 0


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", help="artifact directory (default temp)")
    parser.add_argument("--examples", type=int, default=2000)
    parser.add_argument("--dim", type=int, default=16)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    if args.workdir:
        workdir = Path(args.workdir)
        workdir.mkdir(parents=True, exist_ok=True)
        return run(workdir, args.examples, args.dim, args.seed)
    with tempfile.TemporaryDirectory() as tmp:
        return run(Path(tmp), args.examples, args.dim, args.seed)


if __name__ == "__main__":
    raise SystemExit(main())
