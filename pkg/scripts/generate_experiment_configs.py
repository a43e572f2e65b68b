#!/usr/bin/env python3
"""Generate the full-scale experiment configuration grid under configs/.

These files are declarative CLI configs (see mentorcollab.cli) for the real
generator/mentor checkpoints served over the wire protocol.  They are not
runnable in CI; point the endpoint fields at live adapter servers first
(see adapter/README.md).
"""

import argparse
import json
from pathlib import Path

GENERATORS = [
    "Llama3.1-8B",
    "Gemma3-4B-PT",
    "Qwen3-8B-Base",
    "Llama3.2-3B-Instruct",
    "Qwen3-1.7B",
]
MENTORS = [
    "Qwen3-14B",
    "Qwen3-32B",
    "DeepSeek-R1-Distill-Llama-70B",
]
DOMAINS = {
    "math": {"template_id": "math_4shot", "dataset": "data/math_test.jsonl"},
    "supergpqa": {"template_id": "supergpqa_5shot",
                  "dataset": "data/supergpqa_500.jsonl"},
    "com2_hard_intervention": {"template_id": "com2_zeroshot",
                               "dataset": "data/com2_hard_intervention.jsonl"},
}
METHODS = {
    "generator_only": {"rho": 0.0, "verifier_kind": "none"},
    "collab_free": {"rho": 0.25, "verifier_kind": "free"},
    "collab_mlp": {"rho": 0.25, "verifier_kind": "mlp"},
    "average_decoding": {"baseline_kind": "average_decoding"},
    "nudging": {"baseline_kind": "nudging", "gamma": 0.40},
    "cosd": {"baseline_kind": "cosd", "alpha": 0.50, "beta": 0.50},
    "rstitch": {"baseline_kind": "rstitch", "tau": 0.03},
}

BASE = {
    "segment_len": 16,
    "max_new_tokens": 512,
    "seed": 0,
    "top_k": 5,
    "generator_endpoint": "http://localhost:8000",
    "mentor_endpoint": "http://localhost:8001",
    "concurrency": 8,
}

SEGMENT_SWEEP = [1, 2, 4, 8, 16, 32]
RHO_SWEEP = [0.1, 0.25, 0.5, 0.75, 1.0]


def _slug(s: str) -> str:
    return s.lower().replace(".", "").replace("-", "_")


def write(path: Path, obj: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="configs", help="output directory")
    args = parser.parse_args()
    root = Path(args.out)
    count = 0

    for domain, dspec in DOMAINS.items():
        for gen in GENERATORS:
            for mentor in MENTORS:
                pair = f"{_slug(gen)}__{_slug(mentor)}"
                for method, mspec in METHODS.items():
                    cfg = {
                        **BASE,
                        **mspec,
                        "dataset_path": dspec["dataset"],
                        "template_id": dspec["template_id"],
                        "output_dir": f"runs/{domain}/{pair}/{method}",
                        "generator_model": gen,
                        "mentor_model": mentor,
                    }
                    if mspec.get("verifier_kind") == "mlp":
                        cfg["checkpoint_path"] = (
                            f"checkpoints/{pair}_{'math' if domain == 'math' else 'supergpqa'}.mclb"
                        )
                    write(root / "main" / domain / pair / f"{method}.json", cfg)
                    count += 1

    # Segment-size analysis: MLP protocol, math domain, Qwen3-8B-Base generator.
    for mentor in MENTORS:
        pair = f"qwen3_8b_base__{_slug(mentor)}"
        for L in SEGMENT_SWEEP:
            cfg = {
                **BASE,
                "rho": 0.25,
                "segment_len": L,
                "verifier_kind": "mlp",
                "checkpoint_path": f"checkpoints/{pair}_math.mclb",
                "dataset_path": DOMAINS["math"]["dataset"],
                "template_id": "math_4shot",
                "output_dir": f"runs/segment_sweep/{pair}/L{L}",
                "generator_model": "Qwen3-8B-Base",
                "mentor_model": mentor,
            }
            write(root / "segment_sweep" / pair / f"L{L}.json", cfg)
            count += 1

    # Decision-proportion analysis on math and general knowledge (MLP) and
    # commonsense (prompt-based verification).
    for domain, kind in (("math", "mlp"), ("supergpqa", "mlp"),
                         ("com2_hard_intervention", "free")):
        dspec = DOMAINS[domain]
        for gen in GENERATORS:
            for mentor in MENTORS:
                pair = f"{_slug(gen)}__{_slug(mentor)}"
                for rho in RHO_SWEEP:
                    cfg = {
                        **BASE,
                        "rho": rho,
                        "verifier_kind": kind,
                        "dataset_path": dspec["dataset"],
                        "template_id": dspec["template_id"],
                        "output_dir": f"runs/rho_sweep/{domain}/{pair}/rho{rho}",
                        "generator_model": gen,
                        "mentor_model": mentor,
                    }
                    if kind == "mlp":
                        cfg["checkpoint_path"] = (
                            f"checkpoints/{pair}_{'math' if domain == 'math' else 'supergpqa'}.mclb"
                        )
                    write(root / "rho_sweep" / domain / pair / f"rho{rho}.json", cfg)
                    count += 1

    # Verifier ablation: direct injection (always adopt) vs verified adoption.
    for gen in GENERATORS:
        pair = f"{_slug(gen)}__qwen3_32b"
        for rho in RHO_SWEEP:
            for label, kind in (("direct_injection", "always_mentor"),
                                ("verified", "mlp")):
                cfg = {
                    **BASE,
                    "rho": rho,
                    "verifier_kind": kind,
                    "dataset_path": DOMAINS["math"]["dataset"],
                    "template_id": "math_4shot",
                    "output_dir": f"runs/verifier_ablation/{pair}/{label}_rho{rho}",
                    "generator_model": gen,
                    "mentor_model": "Qwen3-32B",
                }
                if kind == "mlp":
                    cfg["checkpoint_path"] = f"checkpoints/{pair}_math.mclb"
                write(root / "verifier_ablation" / pair / f"{label}_rho{rho}.json",
                      cfg)
                count += 1

    print(f"wrote {count} config files under {root}/")


if __name__ == "__main__":
    main()
