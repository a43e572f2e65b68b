"""Verifier training: data collection, balancing, BCE + Adam, early stopping.

The MLP and its gradients are implemented directly on numpy so the whole
pipeline stays deterministic and checkable against finite differences;
batch-norm runs in train mode here and on running statistics at inference.
"""

from __future__ import annotations

import copy
import logging
import random
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .backend import Backend, HiddenState
from .engine import context_at_decision, run_generation
from .errors import (
    BackendUnavailable,
    EmptyBatch,
    NonFiniteGradient,
    SingleClassError,
)
from .stream import GenerationTrace, RunConfig, Source, VerifierKind
from .verifier import BN_EPS, MlpParams, init_mlp_params, mlp_forward_batch

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainingExample:
    hidden: Tuple[float, ...]
    label: int  # 0 = generator-correct, 1 = mentor-correct
    source_problem_id: str

    def __post_init__(self) -> None:
        if self.label not in (0, 1):
            raise ValueError("label must be 0 or 1")


@dataclass
class TrainHyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64
    patience: int = 5
    max_epochs: int = 500
    dropout_rate: float = 0.1
    bn_momentum: float = 0.1
    seed: int = 0


@dataclass
class TrainState:
    params: MlpParams
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    step: int = 0
    best_val_loss: float = float("inf")
    epochs_since_improvement: int = 0


def param_items(params: MlpParams) -> List[Tuple[str, np.ndarray]]:
    items: List[Tuple[str, np.ndarray]] = []
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        items.append((f"W{i}", w))
        items.append((f"b{i}", b))
    for i, (g, be) in enumerate(zip(params.bn_gamma, params.bn_beta)):
        items.append((f"gamma{i}", g))
        items.append((f"beta{i}", be))
    return items


def init_train_state(params: MlpParams) -> TrainState:
    zeros = {name: np.zeros_like(arr) for name, arr in param_items(params)}
    return TrainState(params=params, m=zeros, v=copy.deepcopy(zeros))


# ---------------------------------------------------------------------------
# Data collection and balancing
# ---------------------------------------------------------------------------


def collect_training_set(
    problems: Sequence[Tuple[str, str]],
    generator: Backend,
    mentor: Backend,
    config: RunConfig,
    grade: Callable[[str, GenerationTrace], bool],
) -> List[TrainingExample]:
    """Harvest (hidden state, branch label) pairs from prompt-verified runs.

    ``problems`` are (id, rendered prompt) pairs; ``grade`` decides whether a
    finished trace answers the problem correctly.  A problem contributes
    examples only when the generator alone fails but the prompt-verified
    collaborative run succeeds; each verification event in that run yields
    one example labeled with the branch the run actually took.
    """
    free_config = RunConfig(
        rho=config.rho,
        segment_len=config.segment_len,
        max_new_tokens=config.max_new_tokens,
        seed=config.seed,
        verifier_kind=VerifierKind.FREE,
        gamma=config.gamma,
        alpha=config.alpha,
        beta=config.beta,
        tau=config.tau,
        top_k=config.top_k,
        stop_sequences=config.stop_sequences,
    )
    solo_config = RunConfig(
        rho=0.0,
        segment_len=config.segment_len,
        max_new_tokens=config.max_new_tokens,
        seed=config.seed,
        verifier_kind=VerifierKind.NONE,
        stop_sequences=config.stop_sequences,
    )
    out: List[TrainingExample] = []
    for problem_id, prompt in problems:
        try:
            solo = run_generation(prompt, solo_config, generator, mentor)
            if grade(problem_id, solo):
                continue
            free = run_generation(prompt, free_config, generator, mentor)
            if not grade(problem_id, free):
                continue
            for record in free.decisions:
                if not record.disagreed:
                    continue
                ctx = context_at_decision(free, record)
                h = generator.hidden_state(ctx)
                out.append(
                    TrainingExample(
                        hidden=h.vector,
                        label=1 if record.verifier_choice is Source.MENTOR else 0,
                        source_problem_id=problem_id,
                    )
                )
        except BackendUnavailable as err:
            log.warning("skipping problem %s: %s", problem_id, err)
    return out


def balance_dataset(
    examples: Sequence[TrainingExample], rng: random.Random
) -> List[TrainingExample]:
    """Downsample the majority class to an exact 1:1 ratio (seeded)."""
    pos = [e for e in examples if e.label == 1]
    neg = [e for e in examples if e.label == 0]
    if not pos or not neg:
        raise SingleClassError("both labels must be present to balance")
    target = min(len(pos), len(neg))
    if len(pos) > target:
        pos = rng.sample(pos, target)
    if len(neg) > target:
        neg = rng.sample(neg, target)
    return pos + neg


def split_by_problem(
    examples: Sequence[TrainingExample], val_fraction: float, rng: random.Random
) -> Tuple[List[TrainingExample], List[TrainingExample]]:
    """90/10-style split on problem ids so near-duplicate hidden states never
    straddle train and validation."""
    ids = sorted({e.source_problem_id for e in examples})
    rng.shuffle(ids)
    n_val = max(1, int(round(len(ids) * val_fraction))) if len(ids) > 1 else 0
    val_ids = set(ids[:n_val])
    train = [e for e in examples if e.source_problem_id not in val_ids]
    val = [e for e in examples if e.source_problem_id in val_ids]
    return train, val


def examples_to_arrays(
    examples: Sequence[TrainingExample],
) -> Tuple[np.ndarray, np.ndarray]:
    if not examples:
        raise EmptyBatch("no training examples")
    x = np.array([e.hidden for e in examples], dtype=float)
    y = np.array([e.label for e in examples], dtype=float)
    return x, y


# ---------------------------------------------------------------------------
# Loss, forward/backward, Adam
# ---------------------------------------------------------------------------


def bce_loss(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mean binary cross-entropy over scores in (0, 1)."""
    if len(scores) == 0:
        raise EmptyBatch("empty batch")
    if len(scores) != len(labels):
        raise ValueError("scores and labels differ in length")
    p = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=float)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def _softplus(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, z)


def forward_train(
    params: MlpParams,
    x: np.ndarray,
    y: np.ndarray,
    dropout_masks: Optional[List[np.ndarray]] = None,
) -> Tuple[float, dict]:
    """Train-mode forward pass (batch statistics, optional dropout masks).

    The loss is BCE computed from logits for numerical stability; the cache
    carries everything backward() needs, including per-layer batch stats.
    """
    n_hidden = len(params.bn_gamma)
    a = x
    cache: dict = {"x": x, "y": y, "layers": []}
    for i in range(n_hidden):
        z1 = a @ params.weights[i].T + params.biases[i]
        mu = z1.mean(axis=0)
        var = z1.var(axis=0)
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (z1 - mu) * inv_std
        z2 = params.bn_gamma[i] * xhat + params.bn_beta[i]
        relu = np.maximum(z2, 0.0)
        if dropout_masks is not None:
            mask = dropout_masks[i]
            out = relu * mask
        else:
            mask = None
            out = relu
        cache["layers"].append(
            {"a_in": a, "z1": z1, "mu": mu, "var": var, "inv_std": inv_std,
             "xhat": xhat, "z2": z2, "relu": relu, "mask": mask}
        )
        a = out
    logit = (a @ params.weights[-1].T + params.biases[-1])[:, 0]
    cache["a_last"] = a
    cache["logit"] = logit
    loss = float(np.mean(_softplus(logit) - y * logit))
    return loss, cache


def backward(params: MlpParams, cache: dict) -> Dict[str, np.ndarray]:
    """Exact gradients of the train-mode BCE loss w.r.t. every parameter."""
    y = cache["y"]
    logit = cache["logit"]
    n = y.shape[0]
    n_hidden = len(params.bn_gamma)
    grads: Dict[str, np.ndarray] = {}

    dlogit = (1.0 / (1.0 + np.exp(-np.clip(logit, -500, 500))) - y) / n
    a_last = cache["a_last"]
    grads[f"W{n_hidden}"] = dlogit[:, None].T @ a_last
    grads[f"b{n_hidden}"] = np.array([dlogit.sum()])
    da = dlogit[:, None] @ params.weights[-1]

    for i in reversed(range(n_hidden)):
        layer = cache["layers"][i]
        if layer["mask"] is not None:
            da = da * layer["mask"]
        dz2 = da * (layer["z2"] > 0)
        grads[f"gamma{i}"] = (dz2 * layer["xhat"]).sum(axis=0)
        grads[f"beta{i}"] = dz2.sum(axis=0)
        dxhat = dz2 * params.bn_gamma[i]
        inv_std = layer["inv_std"]
        z1c = layer["z1"] - layer["mu"]
        m = z1c.shape[0]
        dvar = (dxhat * z1c * -0.5 * inv_std**3).sum(axis=0)
        dmu = (-dxhat * inv_std).sum(axis=0) + dvar * (-2.0 * z1c).mean(axis=0)
        dz1 = dxhat * inv_std + dvar * 2.0 * z1c / m + dmu / m
        grads[f"W{i}"] = dz1.T @ layer["a_in"]
        grads[f"b{i}"] = dz1.sum(axis=0)
        da = dz1 @ params.weights[i]
    return grads


def update_running_stats(params: MlpParams, cache: dict, momentum: float) -> None:
    """Exponential update of inference-time batch-norm statistics."""
    for i, layer in enumerate(cache["layers"]):
        m = layer["z1"].shape[0]
        # Unbiased variance for the running estimate, per convention.
        unbiased = layer["var"] * (m / max(m - 1, 1))
        params.bn_mean[i] = (1 - momentum) * params.bn_mean[i] + momentum * layer["mu"]
        params.bn_var[i] = (1 - momentum) * params.bn_var[i] + momentum * unbiased


def adam_step(
    state: TrainState,
    gradients: Dict[str, np.ndarray],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> TrainState:
    """Standard bias-corrected Adam update, in place on state.params."""
    for name, grad in gradients.items():
        if not np.all(np.isfinite(grad)):
            raise NonFiniteGradient(f"non-finite gradient in {name}")
    state.step += 1
    t = state.step
    for name, arr in param_items(state.params):
        g = gradients[name]
        state.m[name] = beta1 * state.m[name] + (1 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1 - beta2) * g * g
        m_hat = state.m[name] / (1 - beta1**t)
        v_hat = state.v[name] / (1 - beta2**t)
        arr -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return state


def _make_dropout_masks(
    params: MlpParams, batch_size: int, rate: float, rng: np.random.Generator
) -> Optional[List[np.ndarray]]:
    if rate <= 0.0:
        return None
    keep = 1.0 - rate
    return [
        (rng.random((batch_size, g.shape[0])) < keep) / keep for g in params.bn_gamma
    ]


def validation_loss(params: MlpParams, x: np.ndarray, y: np.ndarray) -> float:
    scores = mlp_forward_batch(params, x)
    return bce_loss(scores, y)


def accuracy(params: MlpParams, x: np.ndarray, y: np.ndarray) -> float:
    scores = mlp_forward_batch(params, x)
    return float(np.mean((scores > 0.5).astype(float) == y))


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float


def train_verifier(
    train_set: Sequence[TrainingExample],
    val_set: Sequence[TrainingExample],
    hyper: Optional[TrainHyper] = None,
) -> Tuple[MlpParams, List[EpochLog]]:
    """Mini-batch Adam on BCE with validation-based early stopping.

    Returns the parameters from the epoch with the best validation loss and
    the per-epoch loss log.  Fully deterministic under hyper.seed.
    """
    hyper = hyper or TrainHyper()
    if not train_set or not val_set:
        raise EmptyBatch("train and validation sets must be non-empty")
    x_train, y_train = examples_to_arrays(train_set)
    x_val, y_val = examples_to_arrays(val_set)
    rng = np.random.default_rng(hyper.seed)
    params = init_mlp_params(x_train.shape[1], rng)
    state = init_train_state(params)
    best_params = copy.deepcopy(params)
    history: List[EpochLog] = []
    n = x_train.shape[0]
    for epoch in range(1, hyper.max_epochs + 1):
        order = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, hyper.batch_size):
            idx = order[start : start + hyper.batch_size]
            xb, yb = x_train[idx], y_train[idx]
            masks = _make_dropout_masks(params, len(idx), hyper.dropout_rate, rng)
            loss, cache = forward_train(params, xb, yb, masks)
            grads = backward(params, cache)
            update_running_stats(params, cache, hyper.bn_momentum)
            adam_step(state, grads, hyper.lr, hyper.beta1, hyper.beta2, hyper.eps)
            epoch_losses.append(loss)
        val_loss = validation_loss(params, x_val, y_val)
        history.append(EpochLog(epoch, float(np.mean(epoch_losses)), val_loss))
        if val_loss < state.best_val_loss:
            state.best_val_loss = val_loss
            state.epochs_since_improvement = 0
            best_params = copy.deepcopy(params)
        else:
            state.epochs_since_improvement += 1
            if state.epochs_since_improvement >= hyper.patience:
                break
    return best_params, history


# JSONL persistence for collected training sets.


def write_training_set_jsonl(path, examples: Sequence[TrainingExample]) -> None:
    import json

    with open(path, "w", encoding="utf-8") as fh:
        for e in examples:
            fh.write(
                json.dumps(
                    {
                        "problem_id": e.source_problem_id,
                        "label": e.label,
                        "hidden": list(e.hidden),
                    }
                )
                + "\n"
            )


def read_training_set_jsonl(path) -> List[TrainingExample]:
    import json

    out: List[TrainingExample] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            out.append(
                TrainingExample(
                    hidden=tuple(obj["hidden"]),
                    label=obj["label"],
                    source_problem_id=obj["problem_id"],
                )
            )
    return out
