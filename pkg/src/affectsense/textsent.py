"""Transcript sentiment: n-gram features, MI selection, logistic scoring.

The trainable path is a bag of unigrams/bigrams with binary presence,
feature selection by mutual information with the label, and an
L2-regularized logistic regression fit by gradient descent with a
backtracking line search. A fixed lexicon baseline scores text against
eight affect categories without any training.
"""

from __future__ import annotations

import json
import math
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

TOKEN_RE = re.compile(r"[a-z0-9]+")

LANGUAGE_CLASSES = ("joviality", "fear", "sadness", "surprise",
                    "hostility", "serenity", "fatigue", "guilt")

MAX_MODEL_FEATURES = 1200

LABELS = ("neg", "pos")


class DegenerateCorpus(ValueError):
    """Corpus with fewer than two distinct labels cannot be learned from."""


def fold_ascii(text: str) -> str:
    decomposed = unicodedata.normalize("NFKD", text)
    return decomposed.encode("ascii", "ignore").decode("ascii")


def tokenize(text: str) -> list[str]:
    """Lowercased alphanumeric runs, accents folded to ASCII."""
    return TOKEN_RE.findall(fold_ascii(text).lower())


def tokenize_ngrams(text: str) -> Counter:
    """Multiset of unigrams plus adjacent bigrams (joined with '_')."""
    tokens = tokenize(text)
    grams = Counter(tokens)
    for a, b in zip(tokens, tokens[1:]):
        grams[f"{a}_{b}"] += 1
    return grams


def _presence(text: str) -> set[str]:
    return set(tokenize_ngrams(text))


def _validate_corpus(corpus) -> list[tuple[str, str]]:
    docs = list(corpus)
    if not docs:
        raise DegenerateCorpus("empty corpus")
    for _, label in docs:
        if label not in LABELS:
            raise ValueError(f"unknown label {label!r}; use one of {LABELS}")
    if len({label for _, label in docs}) < 2:
        raise DegenerateCorpus("corpus has a single label")
    return docs


def _mi_bits(present_pos: int, present_neg: int,
             n_pos: int, n_neg: int) -> float:
    n = n_pos + n_neg
    counts = (
        (n_pos - present_pos, n_neg - present_neg),  # feature absent
        (present_pos, present_neg),                  # feature present
    )
    mi = 0.0
    for f_val in (0, 1):
        for l_idx, l_total in ((0, n_pos), (1, n_neg)):
            joint = counts[f_val][l_idx] / n
            if joint == 0.0:
                continue
            p_f = (counts[f_val][0] + counts[f_val][1]) / n
            p_l = l_total / n
            mi += joint * math.log2(joint / (p_f * p_l))
    return mi


def feature_mi(corpus, feature: str) -> float:
    """Mutual information, in bits, between one feature's presence and
    the label."""
    docs = _validate_corpus(corpus)
    n_pos = sum(1 for _, label in docs if label == "pos")
    present_pos = present_neg = 0
    for text, label in docs:
        if feature in _presence(text):
            if label == "pos":
                present_pos += 1
            else:
                present_neg += 1
    return _mi_bits(present_pos, present_neg, n_pos, len(docs) - n_pos)


def select_features_mi(corpus, k: int) -> list[str]:
    """Top-k features by mutual information between presence and label.

    Presence is binary per document. Ties in MI break lexicographically so
    selection is reproducible.
    """
    docs = _validate_corpus(corpus)
    n_pos = sum(1 for _, label in docs if label == "pos")
    n_neg = len(docs) - n_pos
    pos_with: Counter = Counter()
    neg_with: Counter = Counter()
    for text, label in docs:
        for feature in _presence(text):
            if label == "pos":
                pos_with[feature] += 1
            else:
                neg_with[feature] += 1
    scored = sorted(
        (-_mi_bits(pos_with[f], neg_with[f], n_pos, n_neg), f)
        for f in set(pos_with) | set(neg_with))
    return [feature for _, feature in scored[:k]]


def prune_features(features: list[str], stoplist: set[str] | None = None,
                   cap: int = MAX_MODEL_FEATURES) -> list[str]:
    """Drop features containing stoplisted tokens, then cap the list size."""
    stoplist = stoplist or set()
    kept = [f for f in features
            if not any(tok in stoplist for tok in f.split("_"))]
    return kept[:cap]


def logistic_loss_grad(weights: np.ndarray, bias: float, x: np.ndarray,
                       y: np.ndarray, l2: float):
    """Mean logistic NLL plus (l2/2)||w||^2; bias is unpenalized.

    Returns (loss, grad_weights, grad_bias).
    """
    z = x @ weights + bias
    # log(1 + exp(-s)) for the signed margin, stable at both tails
    s = np.where(y == 1, z, -z)
    loss = float(np.mean(np.logaddexp(0.0, -s)) + 0.5 * l2 * weights @ weights)
    p = 1.0 / (1.0 + np.exp(-z))
    residual = p - y
    grad_w = x.T @ residual / x.shape[0] + l2 * weights
    grad_b = float(residual.mean())
    return loss, grad_w, grad_b


def fit_logistic(x: np.ndarray, y: np.ndarray, l2: float,
                 tol: float = 1e-6, max_iter: int = 5000):
    """Gradient descent with a backtracking line search.

    The Armijo backtracking guarantees the loss never increases between
    iterations. Stops when the full gradient's L2 norm drops to tol.
    Returns (weights, bias, losses).
    """
    weights = np.zeros(x.shape[1])
    bias = 0.0
    loss, grad_w, grad_b = logistic_loss_grad(weights, bias, x, y, l2)
    losses = [loss]
    step = 1.0
    for _ in range(max_iter):
        grad_norm_sq = float(grad_w @ grad_w + grad_b * grad_b)
        if math.sqrt(grad_norm_sq) <= tol:
            break
        step = min(step * 2.0, 64.0)
        while True:
            new_w = weights - step * grad_w
            new_b = bias - step * grad_b
            new_loss, new_gw, new_gb = logistic_loss_grad(new_w, new_b, x, y, l2)
            if new_loss <= loss - 1e-4 * step * grad_norm_sq:
                break
            step *= 0.5
            if step < 1e-12:
                return weights, bias, losses
        weights, bias = new_w, new_b
        loss, grad_w, grad_b = new_loss, new_gw, new_gb
        losses.append(loss)
    return weights, bias, losses


@dataclass
class TrainParams:
    l2_grid: tuple[float, ...] = (0.001, 0.01, 0.1, 1.0)
    folds: int = 5
    seed: int = 0
    tol: float = 1e-6
    max_iter: int = 5000


@dataclass
class SentimentModel:
    """Binary-presence logistic model over a fixed feature list."""

    features: list[str]
    weights: np.ndarray
    bias: float
    cv_accuracy: float | None = None
    l2: float | None = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        if self.weights.size != len(self.features):
            raise ValueError("one weight per feature required")

    def save(self, path) -> None:
        payload = {"features": list(self.features),
                   "weights": [float(w) for w in self.weights],
                   "bias": float(self.bias)}
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh)

    @classmethod
    def load(cls, path) -> "SentimentModel":
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        return cls(features=list(payload["features"]),
                   weights=np.asarray(payload["weights"], dtype=float),
                   bias=float(payload["bias"]))


def _design_matrix(docs, features: list[str]) -> tuple[np.ndarray, np.ndarray]:
    index = {f: i for i, f in enumerate(features)}
    x = np.zeros((len(docs), len(features)))
    y = np.zeros(len(docs))
    for row, (text, label) in enumerate(docs):
        for feature in _presence(text):
            col = index.get(feature)
            if col is not None:
                x[row, col] = 1.0
        y[row] = 1.0 if label == "pos" else 0.0
    return x, y


def train_logistic(corpus, features: list[str],
                   params: TrainParams | None = None) -> SentimentModel:
    """Fit the sentiment model, choosing l2 by cross-validated accuracy.

    Folds are seeded and stratified-ish (round-robin within each label),
    so the same corpus, features, and params always yield the same model.
    Grids of one skip the cross-validation entirely. Accuracy ties prefer
    the stronger regularizer.
    """
    params = params or TrainParams()
    docs = _validate_corpus(corpus)
    x, y = _design_matrix(docs, features)
    best_l2 = params.l2_grid[0]
    best_acc = None
    if len(params.l2_grid) > 1:
        folds = _make_folds(y, min(params.folds, len(docs)), params.seed)
        for l2 in sorted(params.l2_grid):
            accs = []
            for fold in range(max(folds) + 1):
                val = folds == fold
                if not val.any() or val.all():
                    continue
                if len(np.unique(y[~val])) < 2:
                    continue
                w, b, _ = fit_logistic(x[~val], y[~val], l2,
                                       params.tol, params.max_iter)
                pred = (x[val] @ w + b) >= 0.0
                accs.append(float(np.mean(pred == (y[val] == 1.0))))
            acc = float(np.mean(accs)) if accs else 0.0
            if best_acc is None or acc >= best_acc:
                best_acc, best_l2 = acc, l2
    weights, bias, _ = fit_logistic(x, y, best_l2, params.tol, params.max_iter)
    return SentimentModel(features=list(features), weights=weights, bias=bias,
                          cv_accuracy=best_acc, l2=best_l2)


def _make_folds(y: np.ndarray, folds: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    assignment = np.zeros(y.size, dtype=int)
    for label in (0.0, 1.0):
        idx = np.nonzero(y == label)[0]
        idx = idx[rng.permutation(idx.size)]
        for pos, doc in enumerate(idx):
            assignment[doc] = pos % folds
    return assignment


def score_sentiment(model: SentimentModel, text: str) -> float:
    """P(positive) in [0, 1]; unseen vocabulary scores sigmoid(bias)."""
    present = _presence(text)
    z = model.bias + sum(w for f, w in zip(model.features, model.weights)
                         if f in present)
    return float(1.0 / (1.0 + math.exp(-z)))


def read_corpus(path) -> list[tuple[str, str]]:
    """NDJSON corpus: one {"text": ..., "label": "pos"|"neg"} per line."""
    docs = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                docs.append((str(obj["text"]), str(obj["label"])))
            except (json.JSONDecodeError, KeyError) as err:
                raise ValueError(f"corpus line {line_no}: {err}") from err
    return docs


# ── lexicon baseline ──────────────────────────────────────────────────────


DEFAULT_LEXICONS: dict[str, frozenset] = {
    "joviality": frozenset("""happy joy joyful glad delighted cheerful laugh
        laughing smile smiling great wonderful love lovely fun
        excited""".split()),
    "fear": frozenset("""afraid scared fear fearful terrified panic worried
        worry anxious dread frightened nervous""".split()),
    "sadness": frozenset("""sad unhappy miserable gloomy cry crying grief
        sorrow down heartbroken depressed blue""".split()),
    "surprise": frozenset("""surprised surprising astonished amazed
        unexpected sudden wow startled stunned shocking""".split()),
    "hostility": frozenset("""angry mad furious hate hateful rage hostile
        annoyed irritated disgusted resent bitter""".split()),
    "serenity": frozenset("""calm peaceful relaxed serene quiet gentle
        tranquil content soothing settled easy""".split()),
    "fatigue": frozenset("""tired exhausted weary sleepy drained fatigued
        drowsy worn sluggish burnout""".split()),
    "guilt": frozenset("""guilty ashamed regret regretful sorry remorse
        blame fault apologetic embarrassed""".split()),
}


@dataclass
class LanguageSentiment:
    """Distribution over the eight LANGUAGE_CLASSES categories."""

    probabilities: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float).ravel()
        if p.size != len(LANGUAGE_CLASSES):
            raise ValueError(f"need {len(LANGUAGE_CLASSES)} probabilities")
        if abs(p.sum() - 1.0) > 1e-3:
            raise ValueError(f"probabilities sum to {p.sum():.5f}")
        self.probabilities = p / p.sum()

    def top(self) -> str:
        return LANGUAGE_CLASSES[int(np.argmax(self.probabilities))]


class LexiconSentiment:
    """Additively smoothed keyword counts over the eight categories.

    Text with no lexicon hits (including empty text) yields the uniform
    distribution by construction of the smoothing.
    """

    def __init__(self, lexicons: dict[str, frozenset] | None = None,
                 smoothing: float = 1.0):
        self.lexicons = lexicons or DEFAULT_LEXICONS
        missing = [c for c in LANGUAGE_CLASSES if c not in self.lexicons]
        if missing:
            raise ValueError(f"lexicons missing categories: {missing}")
        if smoothing <= 0:
            raise ValueError("smoothing must be positive")
        self.smoothing = smoothing

    def classify(self, text: str) -> LanguageSentiment:
        tokens = tokenize(text)
        hits = np.array([sum(1 for t in tokens if t in self.lexicons[c])
                         for c in LANGUAGE_CLASSES], dtype=float)
        smoothed = hits + self.smoothing
        return LanguageSentiment(smoothed / smoothed.sum())


def load_lexicon(path) -> frozenset:
    """Plain-text lexicon, one term per line; blank lines ignored."""
    with open(path, "r", encoding="utf-8") as fh:
        return frozenset(line.strip().lower() for line in fh if line.strip())


def load_stoplist(path) -> set[str]:
    return set(load_lexicon(path))
