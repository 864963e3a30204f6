"""Scorer, loss, gradient, training, and evaluation tests.

Expected values come from independent oracles: naive summation for the dot
product, central finite differences for the gradient, mpmath-free
high-precision scalars for the loss tails, and Monte-Carlo for the
random-model accuracy.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from vistruct.corpus import ImageRef, Part
from vistruct.errors import VistructError
from vistruct.genkit import MockEmbeddingClient
from vistruct.reward import (
    FeatureVector,
    Featurizer,
    ScorerModel,
    TrainConfig,
    baseline_similarity_score,
    eval_pairwise_accuracy,
    load_checkpoint,
    loss_gradient,
    lr_at_step,
    pairwise_loss,
    save_checkpoint,
    score,
    train,
)


def model_of(weights, bias=0.0, part=Part.QUESTION):
    return ScorerModel(
        weights=np.asarray(weights, dtype=np.float64), bias=bias,
        part=part, featurizer_id="test",
    )


def fv(values):
    return FeatureVector.wrap(np.asarray(values, dtype=np.float64), "test")


def planted_split(n_train, n_test, dim=16, seed=0):
    """Train/test pairs labeled by one shared hidden utility."""
    rng = np.random.default_rng(seed)
    w_star = rng.standard_normal(dim)

    def draw(n):
        a = rng.uniform(-1, 1, (n, dim))
        b = rng.uniform(-1, 1, (n, dim))
        a_wins = (a @ w_star) > (b @ w_star)
        return np.where(a_wins[:, None], a, b), np.where(a_wins[:, None], b, a)

    return draw(n_train), draw(n_test), w_star


class TestScore:
    def test_zero_model(self):
        assert score(model_of([0, 0, 0]), fv([1, 2, 3])) == 0.0

    def test_dot_plus_bias(self):
        assert score(model_of([1, 0], bias=1.0), fv([2, 5])) == 3.0

    def test_matches_naive_summation_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            dim = int(rng.integers(1, 32))
            w = rng.normal(size=dim)
            x = rng.normal(size=dim)
            b = float(rng.normal())
            naive = sum(float(wi) * float(xi) for wi, xi in zip(w, x)) + b
            assert score(model_of(w, bias=b), fv(x)) == pytest.approx(naive, rel=1e-12)

    def test_dim_mismatch(self):
        with pytest.raises(VistructError):
            score(model_of([1, 2]), fv([1, 2, 3]))


class TestPairwiseLoss:
    def test_zero_margin_is_ln2(self):
        m = model_of([0.0, 0.0])
        batch = (np.ones((5, 2)), np.zeros((5, 2)))
        assert pairwise_loss(m, batch) == pytest.approx(math.log(2), abs=1e-12)

    def test_margin_twenty(self):
        """High-precision scalar oracle: -log(sigmoid(20)) = log1p(exp(-20))."""
        m = model_of([1.0])
        loss = pairwise_loss(m, (np.array([[20.0]]), np.array([[0.0]])))
        assert loss == pytest.approx(math.log1p(math.exp(-20)), rel=1e-12)
        assert loss == pytest.approx(2.061e-9, rel=1e-3)

    def test_swapping_pair_increases_loss(self):
        m = model_of([1.0, -0.5])
        w, l = np.array([[2.0, 0.0]]), np.array([[0.0, 1.0]])
        assert pairwise_loss(m, (w, l)) < pairwise_loss(m, (l, w))

    def test_strictly_decreasing_in_margin(self):
        m = model_of([1.0])
        margins = np.arange(-5.0, 5.5, 0.5)
        losses = [pairwise_loss(m, (np.array([[d]]), np.array([[0.0]]))) for d in margins]
        assert all(a > b for a, b in zip(losses, losses[1:]))
        assert all(v > 0 for v in losses)

    def test_extreme_margins_stay_finite(self):
        m = model_of([1.0])
        assert math.isfinite(pairwise_loss(m, (np.array([[1000.0]]), np.array([[0.0]]))))
        assert math.isfinite(pairwise_loss(m, (np.array([[-1000.0]]), np.array([[0.0]]))))

    def test_empty_batch_rejected(self):
        with pytest.raises(VistructError):
            pairwise_loss(model_of([1.0]), (np.zeros((0, 1)), np.zeros((0, 1))))


def finite_difference_gradient(model, batch, h=1e-5):
    """Central differences, coordinate by coordinate."""
    grad = np.zeros_like(model.weights)
    for i in range(model.weights.size):
        up = model.weights.copy()
        down = model.weights.copy()
        up[i] += h
        down[i] -= h
        grad[i] = (
            pairwise_loss(model_of(up, model.bias), batch)
            - pairwise_loss(model_of(down, model.bias), batch)
        ) / (2 * h)
    return grad


class TestLossGradient:
    def test_symmetric_pair_zero_gradient(self):
        m = model_of([1.0, 2.0])
        phi = np.array([[0.3, -0.2]])
        grad_w, grad_b = loss_gradient(m, (phi, phi))
        assert np.allclose(grad_w, 0.0)
        assert grad_b == 0.0

    def test_bias_gradient_always_zero(self):
        rng = np.random.default_rng(0)
        m = model_of(rng.normal(size=8), bias=3.7)
        batch = (rng.normal(size=(16, 8)), rng.normal(size=(16, 8)))
        assert loss_gradient(m, batch)[1] == 0.0

    def test_matches_central_differences(self):
        """Max relative error < 1e-5 over random batches, dims 8..64."""
        rng = np.random.default_rng(42)
        worst = 0.0
        for _ in range(100):
            dim = int(rng.integers(8, 65))
            n = int(rng.integers(1, 33))
            m = model_of(rng.normal(size=dim))
            batch = (rng.normal(size=(n, dim)), rng.normal(size=(n, dim)))
            analytic, _ = loss_gradient(m, batch)
            numeric = finite_difference_gradient(m, batch)
            scale = np.maximum(np.abs(numeric), 1e-8)
            worst = max(worst, float(np.max(np.abs(analytic - numeric) / scale)))
        assert worst < 1e-5


class TestSchedule:
    def test_warmup_then_cosine(self):
        config = TrainConfig(learning_rate=1.0, warmup_ratio=0.1)
        total = 100
        rates = [lr_at_step(s, total, config) for s in range(total)]
        assert rates[0] == pytest.approx(0.1)  # first warmup step
        assert max(rates) == pytest.approx(1.0)
        assert rates[-1] < 0.01  # cosine tail approaches zero
        peak = int(0.1 * total) - 1
        assert all(a <= b + 1e-12 for a, b in zip(rates[: peak + 1], rates[1 : peak + 2]))
        assert all(a >= b for a, b in zip(rates[peak + 1 :], rates[peak + 2 :]))


class TestTrain:
    def test_planted_recovery(self):
        """Linear utility is recoverable to >= 95% held-out accuracy."""
        (w_train, l_train), (w_test, l_test), _ = planted_split(2000, 500, seed=7)
        model, report = train(
            (w_train, l_train), TrainConfig(), Part.QUESTION, "test",
            holdout=(w_test, l_test),
        )
        assert report.epochs[-1].holdout_accuracy >= 0.95
        assert len(report.epochs) == 5

    def test_loss_non_increasing_with_tolerance(self):
        """At most one epoch regression, and that below 5%."""
        (w_train, l_train), _, _ = planted_split(2000, 10, seed=8)
        _, report = train((w_train, l_train), TrainConfig(), Part.QUESTION, "test")
        losses = [e.train_loss for e in report.epochs]
        regressions = [b for a, b in zip(losses, losses[1:]) if b > a]
        assert len(regressions) <= 1
        for a, b in zip(losses, losses[1:]):
            if b > a:
                assert (b - a) / a < 0.05

    def test_bit_identical_reruns(self):
        (w_train, l_train), _, _ = planted_split(500, 10, seed=9)
        m1, _ = train((w_train, l_train), TrainConfig(seed=3), Part.ANSWER, "test")
        m2, _ = train((w_train, l_train), TrainConfig(seed=3), Part.ANSWER, "test")
        assert m1.weights.tobytes() == m2.weights.tobytes()
        assert m1.bias == m2.bias

    def test_adam_variant_trains(self):
        (w_train, l_train), (w_test, l_test), _ = planted_split(1000, 200, seed=10)
        config = TrainConfig(optimizer="adam", learning_rate=5e-3)
        _, report = train((w_train, l_train), config, Part.QUESTION, "test", holdout=(w_test, l_test))
        assert report.epochs[-1].holdout_accuracy >= 0.9

    def test_empty_dataset_rejected(self):
        with pytest.raises(VistructError):
            train((np.zeros((0, 4)), np.zeros((0, 4))), TrainConfig(), Part.QUESTION, "t")


class TestEvalAccuracy:
    def test_planted_model_on_own_pairs(self):
        (w_train, l_train), _, w_star = planted_split(500, 10, seed=11)
        assert eval_pairwise_accuracy(model_of(w_star), (w_train, l_train)) == 1.0

    def test_random_model_near_half(self):
        """Monte-Carlo oracle: a random scorer on balanced random pairs."""
        rng = np.random.default_rng(12)
        m = model_of(rng.normal(size=16))
        pairs = (rng.normal(size=(3000, 16)), rng.normal(size=(3000, 16)))
        assert abs(eval_pairwise_accuracy(m, pairs) - 0.5) < 0.05

    def test_exact_ties_count_half(self):
        m = model_of([1.0])
        pairs = (np.array([[1.0], [0.0]]), np.array([[0.0], [0.0]]))
        assert eval_pairwise_accuracy(m, pairs) == pytest.approx(0.75)

    def test_bias_shift_never_changes_orderings(self):
        rng = np.random.default_rng(13)
        w = rng.normal(size=8)
        pairs = (rng.normal(size=(64, 8)), rng.normal(size=(64, 8)))
        base = eval_pairwise_accuracy(model_of(w, bias=0.0), pairs)
        shifted = eval_pairwise_accuracy(model_of(w, bias=123.456), pairs)
        assert base == shifted


class TestFeaturizer:
    def test_question_features_concatenate(self):
        featurizer = Featurizer(MockEmbeddingClient(dim=64, seed=0))
        img = ImageRef(id="i", uri="u.jpg", caption_context=["cap"])
        features = featurizer.featurize_question(img, "why?")
        assert features.dim == 128

    def test_answer_features_include_interaction(self):
        featurizer = Featurizer(MockEmbeddingClient(dim=32, seed=0))
        img = ImageRef(id="i", uri="u.jpg")
        features = featurizer.featurize_answer(img, "why?", "because")
        assert features.dim == 4 * 32
        q = featurizer.embedder.embed("why?").values
        a = featurizer.embedder.embed("because").values
        assert np.allclose(features.values[-32:], q * a)

    def test_deterministic(self):
        featurizer = Featurizer(MockEmbeddingClient(dim=16, seed=5))
        img = ImageRef(id="i", uri="u.jpg")
        f1 = featurizer.featurize_question(img, "q")
        f2 = featurizer.featurize_question(img, "q")
        assert (f1.values == f2.values).all()


class TestBaselineSimilarity:
    def test_identical_embeddings(self):
        class Fixed:
            def embed(self, text, image_ref=None):
                from vistruct.genkit.clients import EmbeddingVector
                return EmbeddingVector.from_values([1.0, 2.0, 3.0])

        img = ImageRef(id="i", uri="u.jpg")
        assert baseline_similarity_score(Fixed(), img, "t") == pytest.approx(1.0)

    def test_orthogonal_embeddings(self):
        class Orth:
            def __init__(self):
                self.calls = 0

            def embed(self, text, image_ref=None):
                from vistruct.genkit.clients import EmbeddingVector
                self.calls += 1
                return EmbeddingVector.from_values([1.0, 0.0] if self.calls == 1 else [0.0, 1.0])

        img = ImageRef(id="i", uri="u.jpg")
        assert baseline_similarity_score(Orth(), img, "t") == pytest.approx(0.0)

    def test_zero_norm_rejected(self):
        class Zero:
            def embed(self, text, image_ref=None):
                from vistruct.genkit.clients import EmbeddingVector
                return EmbeddingVector.from_values([0.0, 0.0])

        with pytest.raises(VistructError):
            baseline_similarity_score(Zero(), ImageRef(id="i", uri="u.jpg"), "t")

    def test_cosine_in_unit_interval(self):
        embedder = MockEmbeddingClient(dim=64, seed=1)
        img = ImageRef(id="i", uri="u.jpg", caption_context=["caption"])
        value = baseline_similarity_score(embedder, img, "some text")
        assert -1.0 <= value <= 1.0


class TestCheckpoint:
    def test_roundtrip_identical_scores(self, tmp_path):
        rng = np.random.default_rng(3)
        model = model_of(rng.normal(size=24), bias=float(rng.normal()), part=Part.ANSWER)
        path = tmp_path / "scorer.json"
        save_checkpoint(model, path, train_config_digest="abc")
        loaded = load_checkpoint(path)
        assert loaded.part is Part.ANSWER
        probes = rng.normal(size=(50, 24))
        for probe in probes:
            assert score(model, fv(probe)) == score(loaded, fv(probe))

    def test_argmax_selection_invariant_to_bias(self):
        rng = np.random.default_rng(6)
        w = rng.normal(size=8)
        candidates = rng.normal(size=(5, 8))
        pick = lambda bias: int(np.argmax([score(model_of(w, bias=bias), fv(c)) for c in candidates]))
        assert pick(0.0) == pick(42.0) == pick(-7.5)
