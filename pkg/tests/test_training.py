import copy
import math
import random

import numpy as np
import pytest

from conftest import make_rescue_backends
from mentorcollab.errors import EmptyBatch, NonFiniteGradient, SingleClassError
from mentorcollab.harness import extract_boxed
from mentorcollab.stream import RunConfig, VerifierKind
from mentorcollab.training import (
    TrainHyper,
    TrainingExample,
    accuracy,
    adam_step,
    backward,
    balance_dataset,
    bce_loss,
    collect_training_set,
    examples_to_arrays,
    forward_train,
    init_train_state,
    param_items,
    split_by_problem,
    train_verifier,
)
from mentorcollab.verifier import init_mlp_params, mlp_forward_batch


class TestBceLoss:
    def test_perfect_prediction_near_zero(self):
        assert bce_loss([1 - 1e-12], [1]) == pytest.approx(0.0, abs=1e-9)

    def test_max_entropy_prediction(self):
        assert bce_loss([0.5], [1]) == pytest.approx(math.log(2))

    def test_mean_over_batch(self):
        assert bce_loss([0.5, 0.5], [1, 0]) == pytest.approx(math.log(2))

    def test_nonnegative(self):
        rng = np.random.default_rng(0)
        p = rng.uniform(0.01, 0.99, size=50)
        y = rng.integers(0, 2, size=50)
        assert bce_loss(p, y) >= 0.0

    def test_empty_raises(self):
        with pytest.raises(EmptyBatch):
            bce_loss([], [])


def _rel_err(a, b, floor=1e-5):
    return abs(a - b) / max(abs(a), abs(b), floor)


class TestGradients:
    def test_full_network_matches_finite_differences(self):
        d = 6
        rng = np.random.default_rng(12)
        params = init_mlp_params(d, rng)
        x = rng.normal(size=(8, d))
        y = rng.integers(0, 2, size=8).astype(float)
        _, cache = forward_train(params, x, y)
        grads = backward(params, cache)

        eps = 1e-5
        worst = 0.0
        for name, arr in param_items(params):
            flat = arr.reshape(-1)
            gflat = grads[name].reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + eps
                lp, _ = forward_train(params, x, y)
                flat[j] = orig - eps
                lm, _ = forward_train(params, x, y)
                flat[j] = orig
                fd = (lp - lm) / (2 * eps)
                worst = max(worst, _rel_err(gflat[j], fd))
        assert worst <= 1e-4

    def test_gradients_with_fixed_dropout_masks(self):
        d = 4
        rng = np.random.default_rng(5)
        params = init_mlp_params(d, rng)
        x = rng.normal(size=(6, d))
        y = rng.integers(0, 2, size=6).astype(float)
        keep = 0.9
        masks = [
            (rng.random((6, g.shape[0])) < keep) / keep for g in params.bn_gamma
        ]
        _, cache = forward_train(params, x, y, masks)
        grads = backward(params, cache)
        eps = 1e-5
        w = params.weights[0]
        g = grads["W0"]
        for idx in [(0, 0), (1, 2), (3, 1)]:
            orig = w[idx]
            w[idx] = orig + eps
            lp, _ = forward_train(params, x, y, masks)
            w[idx] = orig - eps
            lm, _ = forward_train(params, x, y, masks)
            w[idx] = orig
            assert _rel_err(g[idx], (lp - lm) / (2 * eps)) <= 1e-4


class TestAdam:
    def _state(self, d=4):
        return init_train_state(init_mlp_params(d, np.random.default_rng(3)))

    def test_zero_gradient_fixed_point(self):
        state = self._state()
        before = copy.deepcopy(state.params)
        zero = {name: np.zeros_like(a) for name, a in param_items(state.params)}
        adam_step(state, zero, lr=1e-3)
        for (_, a), (_, b) in zip(param_items(before), param_items(state.params)):
            assert np.allclose(a, b)

    def test_first_step_magnitude_is_lr(self):
        # Bias-corrected first step from zero moments moves by ~lr.
        state = self._state()
        grads = {name: np.zeros_like(a) for name, a in param_items(state.params)}
        grads["b0"] = np.zeros_like(state.params.biases[0])
        grads["b0"][0] = 0.37
        before = state.params.biases[0][0]
        adam_step(state, grads, lr=1e-3)
        delta = before - state.params.biases[0][0]
        assert delta == pytest.approx(1e-3, rel=1e-6)

    def test_non_finite_gradient_rejected(self):
        state = self._state()
        grads = {name: np.zeros_like(a) for name, a in param_items(state.params)}
        grads["W0"][0, 0] = float("nan")
        with pytest.raises(NonFiniteGradient):
            adam_step(state, grads, lr=1e-3)

    def test_determinism(self):
        runs = []
        for _ in range(2):
            state = self._state()
            rng = np.random.default_rng(77)
            for _ in range(5):
                grads = {
                    name: rng.normal(size=a.shape)
                    for name, a in param_items(state.params)
                }
                adam_step(state, grads, lr=1e-2)
            runs.append(copy.deepcopy(state.params))
        for (_, a), (_, b) in zip(param_items(runs[0]), param_items(runs[1])):
            assert np.array_equal(a, b)


def _labeled_set(n, d, seed, shuffle_labels=False):
    rng = np.random.default_rng(seed)
    w = rng.normal(size=d)
    x = rng.normal(size=(n, d))
    y = (x @ w > 0).astype(int)
    if shuffle_labels:
        y = rng.permutation(y)
    return [
        TrainingExample(tuple(x[i]), int(y[i]), f"prob{i % 50}") for i in range(n)
    ]


class TestBalanceDataset:
    def test_downsample_majority(self):
        ex = _labeled_set(100, 4, 0)
        pos = [e for e in ex if e.label == 1][:30]
        neg = [e for e in ex if e.label == 0][:10]
        out = balance_dataset(pos + neg, random.Random(0))
        assert sum(e.label for e in out) == 10
        assert len(out) == 20

    def test_already_balanced_unchanged(self):
        ex = _labeled_set(60, 4, 1)
        pos = [e for e in ex if e.label == 1][:5]
        neg = [e for e in ex if e.label == 0][:5]
        out = balance_dataset(pos + neg, random.Random(0))
        assert sorted(out, key=id) is not None and len(out) == 10
        assert set(map(id, out)) == set(map(id, pos + neg))

    def test_exact_equalization(self):
        ex = _labeled_set(100, 4, 2)
        pos = [e for e in ex if e.label == 1][:7]
        neg = [e for e in ex if e.label == 0][:3]
        out = balance_dataset(pos + neg, random.Random(0))
        assert sum(e.label for e in out) == 3 and len(out) == 6

    def test_single_class_rejected(self):
        ex = [e for e in _labeled_set(40, 4, 3) if e.label == 1]
        with pytest.raises(SingleClassError):
            balance_dataset(ex, random.Random(0))

    def test_never_fabricates(self):
        for seed in range(50):
            rng = random.Random(seed)
            n_pos, n_neg = rng.randint(1, 40), rng.randint(1, 40)
            ex = _labeled_set(200, 3, seed)
            pool = [e for e in ex if e.label == 1][:n_pos] + [
                e for e in ex if e.label == 0
            ][:n_neg]
            out = balance_dataset(pool, rng)
            ids = set(map(id, pool))
            assert all(id(e) in ids for e in out)
            pos = sum(e.label for e in out)
            assert abs(pos - (len(out) - pos)) <= 1


class TestSplitByProblem:
    def test_no_problem_straddles_split(self):
        ex = _labeled_set(200, 4, 4)
        train, val = split_by_problem(ex, 0.1, random.Random(0))
        train_ids = {e.source_problem_id for e in train}
        val_ids = {e.source_problem_id for e in val}
        assert not train_ids & val_ids
        assert len(train) + len(val) == len(ex)


class TestTrainVerifier:
    def test_linearly_separable_reaches_high_accuracy(self):
        d = 16
        examples = _labeled_set(2000, d, seed=10)
        train, val = split_by_problem(examples, 0.1, random.Random(0))
        hyper = TrainHyper(seed=0, max_epochs=200)
        params, history = train_verifier(train, val, hyper)
        x, y = examples_to_arrays(train)
        assert accuracy(params, x, y) >= 0.99
        assert len(history) <= 200

    def test_early_stopping_returns_best_epoch(self):
        # One example per side makes val loss noisy fast; check the returned
        # params match the best recorded val loss.
        examples = _labeled_set(300, 6, seed=11)
        train, val = split_by_problem(examples, 0.2, random.Random(1))
        hyper = TrainHyper(seed=1, max_epochs=40, patience=3)
        params, history = train_verifier(train, val, hyper)
        xv, yv = examples_to_arrays(val)
        best = min(h.val_loss for h in history)
        got = bce_loss(mlp_forward_batch(params, xv), yv)
        assert got == pytest.approx(best, rel=1e-9)

    def test_shuffled_labels_are_chance_level(self):
        examples = _labeled_set(2000, 8, seed=12, shuffle_labels=True)
        train, val = split_by_problem(examples, 0.25, random.Random(2))
        hyper = TrainHyper(seed=2, max_epochs=30)
        params, _ = train_verifier(train, val, hyper)
        xv, yv = examples_to_arrays(val)
        assert abs(accuracy(params, xv, yv) - 0.5) <= 0.05

    def test_training_determinism(self):
        examples = _labeled_set(400, 6, seed=13)
        train, val = split_by_problem(examples, 0.1, random.Random(3))
        hyper = TrainHyper(seed=3, max_epochs=10)
        p1, h1 = train_verifier(train, val, hyper)
        p2, h2 = train_verifier(train, val, hyper)
        assert [h.val_loss for h in h1] == [h.val_loss for h in h2]
        for (_, a), (_, b) in zip(param_items(p1), param_items(p2)):
            assert np.array_equal(a, b)

    def test_empty_sets_rejected(self):
        with pytest.raises(EmptyBatch):
            train_verifier([], [], TrainHyper())


class TestCollectTrainingSet:
    def test_curation_rule(self, rescue_corpus):
        # Generator-only is wrong on every rescue problem; with a scripted
        # mentor-following reply the prompt-verified run is right, so every
        # problem contributes, one example per verification event.
        problems = rescue_corpus[:4]
        gen, mentor = make_rescue_backends(problems, reply_with_mentor_letter=True)
        gold = {f"p{i}": p.gold for i, p in enumerate(problems)}
        cfg = RunConfig(rho=1.0, seed=0, verifier_kind=VerifierKind.FREE)

        def grade(pid, trace):
            return extract_boxed(trace.text) == gold[pid]

        ex = collect_training_set(
            [(f"p{i}", p.prompt) for i, p in enumerate(problems)],
            gen, mentor, cfg, grade,
        )
        assert ex
        assert all(e.label == 1 for e in ex)  # mentor branch rescued the run
        assert {e.source_problem_id for e in ex} == set(gold)

    def test_already_correct_problem_contributes_nothing(self):
        from mentorcollab.backend import ScriptedBackend

        text = "q: the answer is \\boxed{5}"
        gen = ScriptedBackend([text], hidden_dim=4)
        mentor = ScriptedBackend([text], name="mentor")
        cfg = RunConfig(rho=1.0, seed=0, verifier_kind=VerifierKind.FREE)
        ex = collect_training_set(
            [("q", "q:")], gen, mentor, cfg,
            lambda pid, trace: extract_boxed(trace.text) == "5",
        )
        assert ex == []
