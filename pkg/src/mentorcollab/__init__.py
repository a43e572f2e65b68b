"""Generator-mentor collaborative decoding with sparse probing and segment
verification, plus rule-based collaboration baselines and an evaluation
harness that runs entirely against deterministic mock model backends."""

from .stream import (
    BaselineKind,
    DecisionRecord,
    GenerationTrace,
    RunConfig,
    Source,
    TerminatedReason,
    TopKDistribution,
    VerifierKind,
    Word,
    entropy_nats,
    mentor_token_ratio,
    split_next_word,
    words_disagree,
)
from .backend import (
    Backend,
    BackendCapabilities,
    HiddenState,
    HttpBackend,
    NGramBackend,
    ScriptedBackend,
    Segment,
)
from .engine import Verifier, run_generation
from .verifier import (
    MlpParams,
    Verdict,
    build_verification_prompt,
    decide_free,
    decide_mlp,
    load_checkpoint,
    mlp_forward,
    save_checkpoint,
)

__version__ = "0.1.0"
