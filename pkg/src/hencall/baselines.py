"""Comparison models: per-class Gaussian mixtures and a one-vs-rest
binary cascade.

Both consume a fixed-length clip summary: the per-channel mean and
standard deviation over time, concatenated. The GMM scores a clip with
per-class mixture log-likelihoods plus a log prior and predicts the
argmax. The cascade trains eight binary models and combines them by
majority voting (each model votes for its class when its probability
clears 0.5) or by interpolation weighted with per-model validation F1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .features import MultiChannelFeatures
from .labels import NUM_SUBCLASSES, LabelVector

COV_FLOOR = 1e-6


class BaselineError(Exception):
    pass


class TooFewSamples(BaselineError):
    pass


class NotFitted(BaselineError):
    pass


class MissingClassSamples(BaselineError):
    pass


def summarize_arrays(arrays: list[np.ndarray]) -> np.ndarray:
    """Mean and standard deviation over time of each sequence, concatenated."""
    parts = []
    for arr in arrays:
        m = np.asarray(arr, dtype=np.float64)
        parts.append(m.mean(axis=0))
        parts.append(m.std(axis=0))
    return np.concatenate(parts)


def summarize_features(rec: MultiChannelFeatures, channels: tuple[int, ...] = (0, 1, 2)) -> np.ndarray:
    mats = [rec.channel_time.values, rec.channel_spectral.values, rec.channel_cepstral.values]
    return summarize_arrays([mats[c] for c in channels])


@dataclass
class Mixture:
    weights: np.ndarray    # (K,)
    means: np.ndarray      # (K, D)
    variances: np.ndarray  # (K, D), diagonal
    log_likelihoods: list[float] = field(default_factory=list)


def _log_gaussian(x: np.ndarray, means: np.ndarray, variances: np.ndarray) -> np.ndarray:
    """Componentwise diagonal-Gaussian log density, (N, K)."""
    d = x.shape[1]
    diff = x[:, None, :] - means[None, :, :]
    quad = np.sum(diff**2 / variances[None, :, :], axis=2)
    logdet = np.sum(np.log(variances), axis=1)
    return -0.5 * (quad + logdet + d * np.log(2.0 * np.pi))


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    mx = np.max(a, axis=axis, keepdims=True)
    return np.squeeze(mx, axis) + np.log(np.sum(np.exp(a - mx), axis=axis))


def _kmeanspp_centers(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [x[rng.integers(len(x))]]
    for _ in range(1, k):
        d2 = np.min(((x[:, None, :] - np.array(centers)[None]) ** 2).sum(axis=2), axis=1)
        total = d2.sum()
        if total <= 0:
            centers.append(x[rng.integers(len(x))])
            continue
        centers.append(x[rng.choice(len(x), p=d2 / total)])
    return np.array(centers)


def gmm_fit(
    vectors: np.ndarray,
    k: int,
    seed: int = 0,
    max_iter: int = 200,
    tol: float = 1e-6,
) -> Mixture:
    """Fit one diagonal-covariance mixture by expectation-maximization.

    Initialization is k-means++-style seeded center picking; iteration
    stops when the log-likelihood gain drops below tol. The recorded
    per-iteration log-likelihood sequence is non-decreasing.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < k:
        raise TooFewSamples(f"need at least {k} vectors, got {x.shape[0]}")
    rng = np.random.default_rng(seed)
    means = _kmeanspp_centers(x, k, rng)
    base_var = np.maximum(x.var(axis=0), COV_FLOOR)
    variances = np.tile(base_var, (k, 1))
    weights = np.full(k, 1.0 / k)

    mix = Mixture(weights=weights, means=means, variances=variances)
    prev_ll = -np.inf
    for _ in range(max_iter):
        log_comp = _log_gaussian(x, mix.means, mix.variances) + np.log(mix.weights)[None, :]
        log_norm = _logsumexp(log_comp, axis=1)
        ll = float(np.mean(log_norm))
        mix.log_likelihoods.append(ll)
        if ll - prev_ll < tol and np.isfinite(prev_ll):
            break
        prev_ll = ll
        resp = np.exp(log_comp - log_norm[:, None])
        nk = resp.sum(axis=0) + 1e-12
        mix.weights = nk / nk.sum()
        mix.means = (resp.T @ x) / nk[:, None]
        diff2 = (x[:, None, :] - mix.means[None]) ** 2
        mix.variances = np.maximum(
            np.einsum("nk,nkd->kd", resp, diff2) / nk[:, None], COV_FLOOR
        )
    return mix


def mixture_log_likelihood(mix: Mixture, vector: np.ndarray) -> float:
    x = np.asarray(vector, dtype=np.float64)[None, :]
    log_comp = _log_gaussian(x, mix.means, mix.variances) + np.log(mix.weights)[None, :]
    return float(_logsumexp(log_comp, axis=1)[0])


@dataclass
class GmmClassifier:
    n_components: int = 4
    seed: int = 0
    mixtures: dict[int, Mixture] = field(default_factory=dict)
    log_priors: dict[int, float] = field(default_factory=dict)

    def fit(self, vectors: list[np.ndarray], labels: list[LabelVector]) -> "GmmClassifier":
        """One mixture per subclass; multi-label samples contribute their
        vector to every class they carry."""
        by_class: dict[int, list[np.ndarray]] = {c: [] for c in range(NUM_SUBCLASSES)}
        for vec, lab in zip(vectors, labels):
            for c in lab.subclass_set():
                by_class[c].append(vec)
        total = sum(len(v) for v in by_class.values())
        for c, vecs in by_class.items():
            if len(vecs) < self.n_components:
                raise TooFewSamples(f"class {c} has {len(vecs)} < {self.n_components} samples")
            self.mixtures[c] = gmm_fit(np.array(vecs), self.n_components, seed=self.seed + c)
            self.log_priors[c] = float(np.log(len(vecs) / total))
        return self

    def predict(self, vector: np.ndarray) -> tuple[np.ndarray, int]:
        """Per-class scores (mixture log-likelihood + log prior) and the
        argmax label; ties break to the lowest class index."""
        if not self.mixtures:
            raise NotFitted("fit the classifier first")
        scores = np.array(
            [mixture_log_likelihood(self.mixtures[c], vector) + self.log_priors[c] for c in range(NUM_SUBCLASSES)]
        )
        return scores, int(np.argmax(scores))


def gmm_predict(model: GmmClassifier, vector: np.ndarray) -> tuple[np.ndarray, int]:
    return model.predict(vector)


@dataclass
class LogisticBinary:
    """Ridge-regularized logistic regression trained by Newton steps, on
    standardized features. Deterministic; probability output."""

    l2: float = 1e-3
    max_iter: int = 50
    weights: np.ndarray | None = None
    mean: np.ndarray | None = None
    scale: np.ndarray | None = None

    def fit(self, x: np.ndarray, y: np.ndarray, seed: int = 0) -> "LogisticBinary":
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        self.mean = x.mean(axis=0)
        self.scale = np.maximum(x.std(axis=0), 1e-8)
        xs = (x - self.mean) / self.scale
        xs = np.hstack([xs, np.ones((len(xs), 1))])
        w = np.zeros(xs.shape[1])
        for _ in range(self.max_iter):
            z = xs @ w
            p = 1.0 / (1.0 + np.exp(-np.clip(z, -30, 30)))
            grad = xs.T @ (p - y) + self.l2 * w
            r = np.maximum(p * (1.0 - p), 1e-6)
            hess = (xs * r[:, None]).T @ xs + self.l2 * np.eye(xs.shape[1])
            step = np.linalg.solve(hess, grad)
            w = w - step
            if np.max(np.abs(step)) < 1e-9:
                break
        self.weights = w
        return self

    def predict_proba(self, vector: np.ndarray) -> float:
        if self.weights is None:
            raise NotFitted("fit the classifier first")
        xs = (np.asarray(vector, dtype=np.float64) - self.mean) / self.scale
        z = float(np.append(xs, 1.0) @ self.weights)
        return 1.0 / (1.0 + np.exp(-np.clip(z, -30, 30)))


@dataclass
class CascadeEnsemble:
    models: dict[int, LogisticBinary] = field(default_factory=dict)
    decision_rule: str = "majority_vote"
    f1_weights: np.ndarray | None = None  # normalized, for weighted interpolation

    def probabilities(self, vector: np.ndarray) -> np.ndarray:
        if len(self.models) != NUM_SUBCLASSES:
            raise NotFitted("cascade has no fitted models")
        return np.array([self.models[c].predict_proba(vector) for c in range(NUM_SUBCLASSES)])


def cascade_train(
    vectors: list[np.ndarray],
    labels: list[LabelVector],
    seed: int = 0,
    decision_rule: str = "majority_vote",
    val_vectors: list[np.ndarray] | None = None,
    val_labels: list[LabelVector] | None = None,
) -> CascadeEnsemble:
    """Eight one-vs-rest binary models on relabeled copies of the data.

    Validation data, when given, sets the interpolation weights from each
    model's binary F1; otherwise weights are uniform.
    """
    x = np.array(vectors, dtype=np.float64)
    ensemble = CascadeEnsemble(decision_rule=decision_rule)
    for c in range(NUM_SUBCLASSES):
        y = np.array([1.0 if c in lab.subclass_set() else 0.0 for lab in labels])
        if y.sum() == 0 or y.sum() == len(y):
            raise MissingClassSamples(f"class {c} needs both positive and negative samples")
        ensemble.models[c] = LogisticBinary().fit(x, y, seed=seed)
    weights = np.full(NUM_SUBCLASSES, 1.0 / NUM_SUBCLASSES)
    if val_vectors is not None and val_labels is not None:
        scores = np.zeros(NUM_SUBCLASSES)
        for c in range(NUM_SUBCLASSES):
            preds = np.array([ensemble.models[c].predict_proba(v) > 0.5 for v in val_vectors])
            truth = np.array([c in lab.subclass_set() for lab in val_labels])
            tp = int(np.sum(preds & truth))
            denom = 2 * tp + int(np.sum(preds & ~truth)) + int(np.sum(~preds & truth))
            scores[c] = 2.0 * tp / denom if denom else 0.0
        if scores.sum() > 0:
            weights = scores / scores.sum()
    ensemble.f1_weights = weights
    return ensemble


def cascade_predict(ensemble: CascadeEnsemble, vector: np.ndarray) -> tuple[int, np.ndarray]:
    """Final label plus the eight per-model probabilities.

    majority_vote: each model votes for its own class when p > 0.5; the
    most-voted class wins, ties break to the highest probability.
    weighted_interpolation: argmax of weight * probability.
    """
    probs = ensemble.probabilities(vector)
    if ensemble.decision_rule == "weighted_interpolation":
        w = ensemble.f1_weights if ensemble.f1_weights is not None else np.ones(NUM_SUBCLASSES)
        return int(np.argmax(w * probs)), probs
    votes = (probs > 0.5).astype(int)
    best_votes = votes.max()
    tied = np.flatnonzero(votes == best_votes)
    label = int(tied[np.argmax(probs[tied])])
    return label, probs


def cascade_predict_set(ensemble: CascadeEnsemble, vector: np.ndarray) -> frozenset[int]:
    """Thresholded multi-label prediction; falls back to the single
    decision-rule label when no model clears 0.5."""
    probs = ensemble.probabilities(vector)
    chosen = frozenset(np.flatnonzero(probs > 0.5).tolist())
    if chosen:
        return chosen
    label, _ = cascade_predict(ensemble, vector)
    return frozenset([label])
