"""Scalar quality scorers trained with a pairwise ranking loss.

Two independent models score questions and answers: a linear head over
pluggable embeddings, trained to minimize -E[log sigmoid(s_winner -
s_loser)] over human preference pairs. The loss, its analytic gradient, the
warmup+cosine schedule, and the pairwise-accuracy evaluation are exact; the
embedding provider behind the features is swappable.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import ImageRef, Part, PreferencePair
from .errors import SchemaError, VistructError
from .genkit.clients import EmbeddingClient

CHECKPOINT_VERSION = 1


@dataclass
class FeatureVector:
    values: np.ndarray
    dim: int
    featurizer_id: str

    @classmethod
    def wrap(cls, values: np.ndarray, featurizer_id: str) -> "FeatureVector":
        arr = np.asarray(values, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise VistructError("feature vector contains non-finite values")
        return cls(values=arr, dim=int(arr.size), featurizer_id=featurizer_id)


class Featurizer:
    """Builds model inputs from an embedding provider.

    Question features concatenate the image-context embedding with the
    question-group embedding. Answer features additionally concatenate the
    answer embedding and an elementwise question*answer interaction block,
    so a linear head can express question-conditioned answer quality.
    """

    QUESTION_ID = "imgq-concat-v1"
    ANSWER_ID = "imgqa-interact-v1"

    def __init__(self, embedder: EmbeddingClient):
        self.embedder = embedder
        self._image_cache: dict[str, np.ndarray] = {}

    def _embed_image(self, image: ImageRef) -> np.ndarray:
        cached = self._image_cache.get(image.id)
        if cached is None:
            cached = self.embedder.embed("", image_ref=image).values
            self._image_cache[image.id] = cached
        return cached

    def featurize_question(self, image: ImageRef, question_group: str) -> FeatureVector:
        img = self._embed_image(image)
        q = self.embedder.embed(question_group).values
        return FeatureVector.wrap(np.concatenate([img, q]), self.QUESTION_ID)

    def featurize_answer(self, image: ImageRef, question: str, answer: str) -> FeatureVector:
        img = self._embed_image(image)
        q = self.embedder.embed(question).values
        a = self.embedder.embed(answer).values
        return FeatureVector.wrap(np.concatenate([img, q, a, q * a]), self.ANSWER_ID)


@dataclass
class ScorerModel:
    """Linear scalar scorer: score = <weights, features> + bias."""

    weights: np.ndarray
    bias: float
    part: Part
    featurizer_id: str
    version: str = "1"

    def validate(self) -> None:
        if not np.all(np.isfinite(self.weights)) or not math.isfinite(self.bias):
            raise VistructError("scorer parameters must be finite")

    @property
    def dim(self) -> int:
        return int(self.weights.size)


@dataclass
class TrainConfig:
    """Training hyperparameters for the linear scorer.

    The 0.03 warmup ratio, cosine decay, 5 epochs, batch 64, and the
    optional adaptive-moment settings mirror the reward-model recipe this
    replaces; the learning rate is re-chosen for a linear head.
    """

    learning_rate: float = 1e-2
    batch_size: int = 64
    epochs: int = 5
    warmup_ratio: float = 0.03
    schedule: str = "cosine"
    weight_decay: float = 0.0
    seed: int = 0
    optimizer: str = "sgd"
    momentum: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise VistructError("learning_rate must be > 0")
        if not 0 <= self.warmup_ratio < 1:
            raise VistructError("warmup_ratio must be in [0, 1)")
        if self.batch_size < 1:
            raise VistructError("batch_size must be >= 1")
        if self.epochs < 1:
            raise VistructError("epochs must be >= 1")
        if self.schedule != "cosine":
            raise VistructError(f"unknown schedule {self.schedule!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise VistructError(f"unknown optimizer {self.optimizer!r}")

    def to_obj(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "warmup_ratio": self.warmup_ratio,
            "schedule": self.schedule,
            "weight_decay": self.weight_decay,
            "seed": self.seed,
            "optimizer": self.optimizer,
            "momentum": self.momentum,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
        }

    def digest(self) -> str:
        canonical = json.dumps(self.to_obj(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def score(model: ScorerModel, features: FeatureVector) -> float:
    """<weights, values> + bias; rejects dimension mismatches."""
    if features.dim != model.dim:
        raise VistructError(f"feature dim {features.dim} != model dim {model.dim}")
    value = float(np.dot(model.weights, features.values) + model.bias)
    if not math.isfinite(value):
        raise VistructError("score is non-finite")
    return value


PairBatch = tuple[np.ndarray, np.ndarray]


def as_pair_matrices(pairs: Sequence[tuple[FeatureVector, FeatureVector]] | PairBatch) -> PairBatch:
    """Normalize a pair batch to (winners, losers) float64 matrices."""
    if isinstance(pairs, tuple) and len(pairs) == 2 and isinstance(pairs[0], np.ndarray):
        winners = np.asarray(pairs[0], dtype=np.float64)
        losers = np.asarray(pairs[1], dtype=np.float64)
    else:
        winners = np.asarray([p[0].values for p in pairs], dtype=np.float64)
        losers = np.asarray([p[1].values for p in pairs], dtype=np.float64)
    if winners.ndim != 2 or winners.shape != losers.shape:
        raise VistructError("pair batch must be two equal-shape [n, dim] matrices")
    if winners.shape[0] == 0:
        raise VistructError("pair batch is empty")
    return winners, losers


def _margins(model: ScorerModel, winners: np.ndarray, losers: np.ndarray) -> np.ndarray:
    if winners.shape[1] != model.dim:
        raise VistructError(f"feature dim {winners.shape[1]} != model dim {model.dim}")
    # The bias cancels in s_w - s_l.
    return (winners - losers) @ model.weights


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def pairwise_loss(model: ScorerModel, pairs) -> float:
    """Mean of -log sigmoid(s_winner - s_loser) over the batch.

    Computed as softplus(-margin) via logaddexp, so margins of either sign
    stay finite. Always positive; ln 2 at zero margin; -> 0 as the margin
    grows.
    """
    winners, losers = as_pair_matrices(pairs)
    margins = _margins(model, winners, losers)
    return float(np.mean(np.logaddexp(0.0, -margins)))


def loss_gradient(model: ScorerModel, pairs) -> tuple[np.ndarray, float]:
    """Analytic gradient of pairwise_loss over (weights, bias).

    d/dw = mean over pairs of -(1 - sigmoid(margin)) * (phi_w - phi_l); the
    bias gradient is identically zero because it cancels in every margin.
    """
    winners, losers = as_pair_matrices(pairs)
    diff = winners - losers
    margins = diff @ model.weights
    coeff = -(1.0 - _sigmoid(margins))
    grad_w = (coeff[:, None] * diff).mean(axis=0)
    return grad_w, 0.0


def lr_at_step(step: int, total_steps: int, config: TrainConfig) -> float:
    """Linear warmup to the base rate, then cosine decay to zero."""
    warmup = int(math.floor(config.warmup_ratio * total_steps))
    if step < warmup:
        return config.learning_rate * (step + 1) / warmup
    if total_steps == warmup:
        return config.learning_rate
    progress = (step - warmup) / (total_steps - warmup)
    return config.learning_rate * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    holdout_accuracy: float | None = None


@dataclass
class TrainReport:
    epochs: list[EpochStats] = field(default_factory=list)
    total_steps: int = 0
    config_digest: str = ""

    def to_obj(self) -> dict:
        return {
            "total_steps": self.total_steps,
            "config_digest": self.config_digest,
            "epochs": [
                {
                    "epoch": e.epoch,
                    "train_loss": e.train_loss,
                    "holdout_accuracy": e.holdout_accuracy,
                }
                for e in self.epochs
            ],
        }


def train(
    pairs,
    config: TrainConfig,
    part: Part,
    featurizer_id: str,
    holdout=None,
) -> tuple[ScorerModel, TrainReport]:
    """Minibatch first-order training of a linear scorer on preference pairs.

    Deterministic for a fixed seed: shuffle order, batch composition, and
    summation order are all fixed, so reruns produce bit-identical weights.
    The report carries full-dataset loss per epoch and, when a holdout set
    is supplied, held-out pairwise accuracy.
    """
    config.validate()
    winners, losers = as_pair_matrices(pairs)
    n, dim = winners.shape
    model = ScorerModel(
        weights=np.zeros(dim, dtype=np.float64),
        bias=0.0,
        part=part,
        featurizer_id=featurizer_id,
    )
    holdout_mats = as_pair_matrices(holdout) if holdout is not None else None

    steps_per_epoch = math.ceil(n / config.batch_size)
    total_steps = steps_per_epoch * config.epochs
    report = TrainReport(total_steps=total_steps, config_digest=config.digest())

    rng = np.random.default_rng(config.seed)
    velocity = np.zeros(dim, dtype=np.float64)
    adam_m = np.zeros(dim, dtype=np.float64)
    adam_v = np.zeros(dim, dtype=np.float64)
    step = 0
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch_idx = perm[start : start + config.batch_size]
            grad_w, _ = loss_gradient(model, (winners[batch_idx], losers[batch_idx]))
            if config.weight_decay:
                grad_w = grad_w + config.weight_decay * model.weights
            lr = lr_at_step(step, total_steps, config)
            if config.optimizer == "adam":
                adam_m = config.beta1 * adam_m + (1 - config.beta1) * grad_w
                adam_v = config.beta2 * adam_v + (1 - config.beta2) * grad_w**2
                m_hat = adam_m / (1 - config.beta1 ** (step + 1))
                v_hat = adam_v / (1 - config.beta2 ** (step + 1))
                model.weights = model.weights - lr * m_hat / (np.sqrt(v_hat) + config.eps)
            else:
                velocity = config.momentum * velocity + grad_w
                model.weights = model.weights - lr * velocity
            step += 1
        epoch_loss = pairwise_loss(model, (winners, losers))
        if not math.isfinite(epoch_loss):
            raise VistructError(
                f"training aborted: non-finite loss at epoch {epoch} "
                f"(lr={config.learning_rate}, |w|={float(np.linalg.norm(model.weights)):.3g})"
            )
        stats = EpochStats(epoch=epoch, train_loss=epoch_loss)
        if holdout_mats is not None:
            stats.holdout_accuracy = eval_pairwise_accuracy(model, holdout_mats)
        report.epochs.append(stats)
    model.validate()
    return model, report


def eval_pairwise_accuracy(model: ScorerModel, pairs) -> float:
    """Fraction of pairs ranked winner-over-loser; exact ties count 0.5."""
    winners, losers = as_pair_matrices(pairs)
    margins = _margins(model, winners, losers)
    return float(np.mean((margins > 0) + 0.5 * (margins == 0)))


def baseline_similarity_score(embedder: EmbeddingClient, image: ImageRef, text: str) -> float:
    """Cosine similarity between the image-context and text embeddings.

    The non-human-feedback baseline the trained scorers are compared
    against.
    """
    img = embedder.embed("", image_ref=image).values
    txt = embedder.embed(text).values
    norm = float(np.linalg.norm(img) * np.linalg.norm(txt))
    if norm == 0.0:
        raise VistructError("zero-norm embedding in similarity baseline")
    return float(np.dot(img, txt) / norm)


def featurize_pairs(
    pref_pairs: Iterable[PreferencePair],
    featurizer: Featurizer,
    images: dict[str, ImageRef],
) -> list[tuple[FeatureVector, FeatureVector]]:
    """Feature-space view of preference pairs; images resolved by id."""
    out = []
    for pair in pref_pairs:
        image = images.get(pair.image_id)
        if image is None:
            raise SchemaError(f"pair references unknown image {pair.image_id!r}", field="image_id")
        if pair.part is Part.QUESTION:
            w = featurizer.featurize_question(image, pair.winner)
            l = featurizer.featurize_question(image, pair.loser)
        else:
            w = featurizer.featurize_answer(image, pair.context_question or "", pair.winner)
            l = featurizer.featurize_answer(image, pair.context_question or "", pair.loser)
        out.append((w, l))
    return out


def save_checkpoint(model: ScorerModel, path: str | Path, train_config_digest: str = "") -> None:
    """Versioned text checkpoint; round-trips to identical scores."""
    model.validate()
    obj = {
        "kind": "scorer_checkpoint",
        "version": CHECKPOINT_VERSION,
        "part": model.part.value,
        "featurizer_id": model.featurizer_id,
        "dim": model.dim,
        "weights": [float(w) for w in model.weights],
        "bias": float(model.bias),
        "train_config_digest": train_config_digest,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, separators=(",", ":")) + "\n", encoding="utf-8")


def load_checkpoint(path: str | Path) -> ScorerModel:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if obj.get("kind") != "scorer_checkpoint":
        raise SchemaError(f"not a scorer checkpoint: {path}", field="kind")
    weights = np.asarray(obj["weights"], dtype=np.float64)
    if weights.size != int(obj["dim"]):
        raise SchemaError("checkpoint dim does not match weights length", field="dim")
    model = ScorerModel(
        weights=weights,
        bias=float(obj["bias"]),
        part=Part(obj["part"]),
        featurizer_id=obj["featurizer_id"],
        version=str(obj["version"]),
    )
    model.validate()
    return model


def checkpoint_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()

