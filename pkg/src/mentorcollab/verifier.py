"""Verification policies: blind A/B prompting and the hidden-state MLP.

Both verifiers answer the same question during a consultation: should the
stream follow the generator's lookahead segment or the mentor's?
"""

from __future__ import annotations

import random
import re
import struct
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .backend import Backend, HiddenState, Segment
from .errors import CheckpointFormatError, DimensionError
from .stream import Source

VERIFICATION_QUERY = (
    "Now I will choose the next sequence that could lead to the correct answer. "
    "(Option A or B?)"
)

BN_EPS = 1e-5


class OptionAssignment(str, Enum):
    GENERATOR_IS_A = "generator_is_a"
    GENERATOR_IS_B = "generator_is_b"


@dataclass(frozen=True)
class Verdict:
    choice: Source
    option_assignment: OptionAssignment
    score: Optional[float] = None
    raw_reply: Optional[str] = None
    parse_fallback: bool = False


@dataclass
class MlpParams:
    """Verifier parameters: three hidden layers of widths 2d, d, d//2, then
    a scalar head.  Hidden layers carry batch-norm statistics; dropout only
    exists at train time."""

    input_dim: int
    weights: List[np.ndarray]  # weights[i]: (out_dim, in_dim)
    biases: List[np.ndarray]
    bn_gamma: List[np.ndarray]  # one per hidden layer
    bn_beta: List[np.ndarray]
    bn_mean: List[np.ndarray]
    bn_var: List[np.ndarray]
    dropout_rate: float = 0.1

    @property
    def layer_dims(self) -> List[int]:
        return [w.shape[0] for w in self.weights]

    def validate(self) -> None:
        d = self.input_dim
        expected = [2 * d, d, d // 2, 1]
        if self.layer_dims != expected:
            raise DimensionError(f"layer widths {self.layer_dims} != {expected}")
        in_dim = d
        for w, b in zip(self.weights, self.biases):
            if w.shape != (w.shape[0], in_dim) or b.shape != (w.shape[0],):
                raise DimensionError("weight/bias shape chain broken")
            in_dim = w.shape[0]
        for g, be, m, v, w in zip(
            self.bn_gamma, self.bn_beta, self.bn_mean, self.bn_var, self.weights
        ):
            if not (g.shape == be.shape == m.shape == v.shape == (w.shape[0],)):
                raise DimensionError("batch-norm vector shape mismatch")
            if np.any(v <= 0):
                raise ValueError("running variance must be positive")
        for arr in self.weights + self.biases:
            if not np.all(np.isfinite(arr)):
                raise ValueError("non-finite parameter")


def hidden_widths(d: int) -> List[int]:
    return [2 * d, d, d // 2]


def init_mlp_params(input_dim: int, rng: np.random.Generator) -> MlpParams:
    """He-style initialization; batch-norm starts at identity."""
    dims = [input_dim] + hidden_widths(input_dim) + [1]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        scale = np.sqrt(2.0 / fan_in)
        weights.append(rng.normal(0.0, scale, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    hidden = hidden_widths(input_dim)
    return MlpParams(
        input_dim=input_dim,
        weights=weights,
        biases=biases,
        bn_gamma=[np.ones(h) for h in hidden],
        bn_beta=[np.zeros(h) for h in hidden],
        bn_mean=[np.zeros(h) for h in hidden],
        bn_var=[np.ones(h) for h in hidden],
    )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def mlp_forward_batch(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Inference-mode forward pass over a (n, d) batch; returns (n,) scores."""
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise DimensionError(f"expected (n, {params.input_dim}) input, got {x.shape}")
    a = x
    n_hidden = len(params.bn_gamma)
    for i in range(n_hidden):
        z = a @ params.weights[i].T + params.biases[i]
        z = (z - params.bn_mean[i]) / np.sqrt(params.bn_var[i] + BN_EPS)
        z = z * params.bn_gamma[i] + params.bn_beta[i]
        a = np.maximum(z, 0.0)
    logit = a @ params.weights[-1].T + params.biases[-1]
    # Clip so the score is strictly inside (0, 1) in float64.
    p = _sigmoid(np.clip(logit[:, 0], -36.0, 36.0))
    return np.clip(p, 1e-15, 1.0 - 1e-15)


def mlp_forward(params: MlpParams, h: HiddenState) -> float:
    vec = np.asarray(h.vector, dtype=float)
    if vec.shape[0] != params.input_dim:
        raise DimensionError(
            f"hidden state dim {vec.shape[0]} != input_dim {params.input_dim}"
        )
    return float(mlp_forward_batch(params, vec[None, :])[0])


def build_verification_prompt(context: str, seg_a: str, seg_b: str) -> str:
    """Assemble the blind A/B question.  No producer identity appears."""
    parts = []
    if context:
        parts.append(context.rstrip("\n"))
        parts.append("")
    parts.append(f"Option A:{seg_a}")
    parts.append(f"Option B:{seg_b}")
    parts.append("")
    parts.append(VERIFICATION_QUERY)
    return "\n".join(parts)


_REPLY_TOKEN = re.compile(r"^[\"'(\[]*([AB])[\"')\].:,;!?]*$")

FREE_REPLY_BUDGET = 8


def parse_free_reply(reply: str) -> Optional[str]:
    """First whitespace token that is exactly A or B after stripping punctuation."""
    for token in reply.split():
        m = _REPLY_TOKEN.match(token)
        if m:
            return m.group(1)
    return None


def decide_free(
    context: str,
    seg_g: Segment,
    seg_m: Segment,
    generator_backend: Backend,
    rng: random.Random,
) -> Verdict:
    """Blind A/B verification using the generator itself as the judge."""
    generator_is_a = rng.random() < 0.5
    assignment = (
        OptionAssignment.GENERATOR_IS_A
        if generator_is_a
        else OptionAssignment.GENERATOR_IS_B
    )
    seg_a, seg_b = (
        (seg_g.text, seg_m.text) if generator_is_a else (seg_m.text, seg_g.text)
    )
    prompt = build_verification_prompt(context, seg_a, seg_b)
    reply = generator_backend.propose_segment(prompt, FREE_REPLY_BUDGET).text
    letter = parse_free_reply(reply)
    if letter is None:
        return Verdict(
            choice=Source.GENERATOR,
            option_assignment=assignment,
            raw_reply=reply,
            parse_fallback=True,
        )
    picked_a = letter == "A"
    choice = Source.GENERATOR if picked_a == generator_is_a else Source.MENTOR
    return Verdict(choice=choice, option_assignment=assignment, raw_reply=reply)


def decide_mlp(params: MlpParams, generator_backend: Backend, context: str) -> Verdict:
    """Threshold the hidden-state classifier: score above 0.5 picks the mentor."""
    h = generator_backend.hidden_state(context)
    score = mlp_forward(params, h)
    choice = Source.MENTOR if score > 0.5 else Source.GENERATOR
    return Verdict(
        choice=choice, option_assignment=OptionAssignment.GENERATOR_IS_A, score=score
    )


# ---------------------------------------------------------------------------
# Checkpoint format: magic "MCLB", u32 version, u32 d, u32 layer count, then
# per layer: u32 out_dim, u32 in_dim, f32le weights row-major, f32le biases,
# u8 has_bn, and if set: f32le gamma, beta, running_mean, running_var.
# All integers little-endian.  Round-trips are bit-exact.
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"MCLB"
CHECKPOINT_VERSION = 1


def _write_f32(fh, arr: np.ndarray) -> None:
    fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_f32(fh, count: int) -> np.ndarray:
    data = fh.read(4 * count)
    if len(data) != 4 * count:
        raise CheckpointFormatError("truncated checkpoint")
    return np.frombuffer(data, dtype="<f4").astype(np.float64)


def save_checkpoint(path, params: MlpParams) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<III", CHECKPOINT_VERSION, params.input_dim, len(params.weights)))
        n_hidden = len(params.bn_gamma)
        for i, (w, b) in enumerate(zip(params.weights, params.biases)):
            fh.write(struct.pack("<II", w.shape[0], w.shape[1]))
            _write_f32(fh, w)
            _write_f32(fh, b)
            has_bn = i < n_hidden
            fh.write(struct.pack("<B", 1 if has_bn else 0))
            if has_bn:
                _write_f32(fh, params.bn_gamma[i])
                _write_f32(fh, params.bn_beta[i])
                _write_f32(fh, params.bn_mean[i])
                _write_f32(fh, params.bn_var[i])


def load_checkpoint(path) -> MlpParams:
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise CheckpointFormatError("bad magic bytes")
        version, input_dim, n_layers = struct.unpack("<III", fh.read(12))
        if version != CHECKPOINT_VERSION:
            raise CheckpointFormatError(f"unsupported version {version}")
        weights, biases = [], []
        bn_gamma, bn_beta, bn_mean, bn_var = [], [], [], []
        for _ in range(n_layers):
            out_dim, in_dim = struct.unpack("<II", fh.read(8))
            weights.append(_read_f32(fh, out_dim * in_dim).reshape(out_dim, in_dim))
            biases.append(_read_f32(fh, out_dim))
            (has_bn,) = struct.unpack("<B", fh.read(1))
            if has_bn:
                bn_gamma.append(_read_f32(fh, out_dim))
                bn_beta.append(_read_f32(fh, out_dim))
                bn_mean.append(_read_f32(fh, out_dim))
                bn_var.append(_read_f32(fh, out_dim))
        if fh.read(1):
            raise CheckpointFormatError("trailing bytes in checkpoint")
    params = MlpParams(
        input_dim=input_dim,
        weights=weights,
        biases=biases,
        bn_gamma=bn_gamma,
        bn_beta=bn_beta,
        bn_mean=bn_mean,
        bn_var=bn_var,
    )
    params.validate()
    return params
