"""Linear multiclass SVM with calibrated confidence.

Three one-vs-rest heads trained by SMO on the dual with a linear kernel,
followed by per-head Platt scaling of the decision values. Probabilities
are the normalized Platt sigmoids; confidence is their maximum. Training
is deterministic given the seed.
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateLabels, NonFiniteInput, TooFewSamples
from .features import DIMENSIONS, FeatureVector
from .labels import CLASSES

MODEL_SCHEMA = "serhybrid-svm-v1"


@dataclass(frozen=True)
class Scaler:
    """Per-dimension standardizer; stds clamped to >= 1e-8."""

    mean: np.ndarray
    std: np.ndarray
    zero_variance: tuple

    def transform(self, X):
        return (X - self.mean) / self.std

    def inverse_transform(self, X):
        return X * self.std + self.mean


def fit_scaler(vectors):
    """Column means/stds over feature vectors; zero-variance columns get
    std 1e-8 and are flagged."""
    if len(vectors) < 2:
        raise TooFewSamples(f"scaler needs >= 2 samples, got {len(vectors)}")
    X = _as_matrix(vectors)
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    flagged = tuple(DIMENSIONS[i] for i in np.flatnonzero(std == 0.0))
    std = np.maximum(std, 1e-8)
    return Scaler(mean=mean, std=std, zero_variance=flagged)


def _as_matrix(vectors):
    X = np.stack([v.values if isinstance(v, FeatureVector) else np.asarray(v, dtype=np.float64)
                  for v in vectors])
    if not np.all(np.isfinite(X)):
        raise NonFiniteInput("feature matrix contains non-finite values")
    return X


def _smo_binary(K, y, C, tol, max_passes, rng):
    """Simplified SMO on a precomputed kernel matrix.

    y in {-1, +1}. Returns (alphas, b). The partner index is drawn from the
    seeded generator, so training is reproducible.
    """
    n = len(y)
    alphas = np.zeros(n)
    b = 0.0
    passes = 0
    while passes < max_passes:
        changed = 0
        for i in range(n):
            e_i = float(K[i] @ (alphas * y) + b - y[i])
            r_i = y[i] * e_i
            if (r_i < -tol and alphas[i] < C) or (r_i > tol and alphas[i] > 0):
                j = (i + 1 + int(rng.integers(n - 1))) % n
                e_j = float(K[j] @ (alphas * y) + b - y[j])
                a_i_old, a_j_old = alphas[i], alphas[j]
                if y[i] != y[j]:
                    lo = max(0.0, a_j_old - a_i_old)
                    hi = min(C, C + a_j_old - a_i_old)
                else:
                    lo = max(0.0, a_i_old + a_j_old - C)
                    hi = min(C, a_i_old + a_j_old)
                if lo == hi:
                    continue
                eta = 2.0 * K[i, j] - K[i, i] - K[j, j]
                if eta >= 0:
                    continue
                a_j = a_j_old - y[j] * (e_i - e_j) / eta
                a_j = min(hi, max(lo, a_j))
                if abs(a_j - a_j_old) < 1e-12:
                    continue
                a_i = a_i_old + y[i] * y[j] * (a_j_old - a_j)
                alphas[i], alphas[j] = a_i, a_j
                b1 = b - e_i - y[i] * (a_i - a_i_old) * K[i, i] \
                    - y[j] * (a_j - a_j_old) * K[i, j]
                b2 = b - e_j - y[i] * (a_i - a_i_old) * K[i, j] \
                    - y[j] * (a_j - a_j_old) * K[j, j]
                if 0 < a_i < C:
                    b = b1
                elif 0 < a_j < C:
                    b = b2
                else:
                    b = 0.5 * (b1 + b2)
                changed += 1
        passes = passes + 1 if changed == 0 else 0
    return alphas, b


def _fit_platt(decision, target, max_iter=100, min_step=1e-10, sigma=1e-12):
    """Platt's sigmoid fit (Lin/Weng/Keerthi variant): returns (A, B) such
    that P(positive | f) = 1 / (1 + exp(A*f + B))."""
    f = np.asarray(decision, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    prior1 = float(t.sum())
    prior0 = float(len(t) - prior1)
    hi = (prior1 + 1.0) / (prior1 + 2.0)
    lo = 1.0 / (prior0 + 2.0)
    ty = np.where(t > 0, hi, lo)
    a, b = 0.0, np.log((prior0 + 1.0) / (prior1 + 1.0))

    def objective(a_, b_):
        z = a_ * f + b_
        # stable log(1 + exp(z)) formulation
        return float(np.sum(np.where(z >= 0,
                                     ty * z + np.log1p(np.exp(-z)),
                                     (ty - 1.0) * z + np.log1p(np.exp(z)))))

    fval = objective(a, b)
    for _ in range(max_iter):
        z = a * f + b
        p = np.where(z >= 0, np.exp(-z) / (1.0 + np.exp(-z)), 1.0 / (1.0 + np.exp(z)))
        q = 1.0 - p
        d1 = ty - p
        d2 = p * q
        g1 = float(np.sum(f * d1))
        g2 = float(np.sum(d1))
        if abs(g1) < 1e-5 and abs(g2) < 1e-5:
            break
        h11 = float(np.sum(f * f * d2)) + sigma
        h22 = float(np.sum(d2)) + sigma
        h21 = float(np.sum(f * d2))
        det = h11 * h22 - h21 * h21
        da = -(h22 * g1 - h21 * g2) / det
        db = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * da + g2 * db
        step = 1.0
        while step >= min_step:
            new_a, new_b = a + step * da, b + step * db
            new_f = objective(new_a, new_b)
            if new_f < fval + 1e-4 * step * gd:
                a, b, fval = new_a, new_b, new_f
                break
            step /= 2.0
        else:
            break
    # (a, b) already satisfy P = 1 / (1 + exp(a*f + b)); a < 0 when larger
    # margins mean the positive class
    return a, b


@dataclass(frozen=True)
class MlEvidence:
    """Classifier output for one sample."""

    label: str
    confidence: float
    per_class_probs: np.ndarray  # ordered per CLASSES
    margins: np.ndarray

    def to_dict(self):
        return {
            "label": self.label,
            "confidence": repr(self.confidence),
            "per_class_probs": [repr(float(p)) for p in self.per_class_probs],
            "margins": [repr(float(m)) for m in self.margins],
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(label=doc["label"],
                   confidence=float(doc["confidence"]),
                   per_class_probs=np.array([float(p) for p in doc["per_class_probs"]]),
                   margins=np.array([float(m) for m in doc["margins"]]))


@dataclass(frozen=True)
class SvmModel:
    """One-vs-rest linear SVM with Platt parameters per head."""

    weights: np.ndarray        # (3, n_dims)
    biases: np.ndarray         # (3,)
    platt_a: np.ndarray        # (3,)
    platt_b: np.ndarray        # (3,)
    scaler: Scaler
    meta: dict                 # C, tol, seed, max_passes, iteration counts

    def to_json(self):
        return json.dumps({
            "schema": MODEL_SCHEMA,
            "classes": list(CLASSES),
            "weights": [[repr(float(w)) for w in row] for row in self.weights],
            "biases": [repr(float(b)) for b in self.biases],
            "platt_a": [repr(float(a)) for a in self.platt_a],
            "platt_b": [repr(float(b)) for b in self.platt_b],
            "scaler": {
                "mean": [repr(float(m)) for m in self.scaler.mean],
                "std": [repr(float(s)) for s in self.scaler.std],
                "zero_variance": list(self.scaler.zero_variance),
            },
            "meta": self.meta,
        }, indent=2)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        if doc.get("schema") != MODEL_SCHEMA:
            raise ValueError(f"unexpected model schema: {doc.get('schema')!r}")
        scaler = Scaler(
            mean=np.array([float(v) for v in doc["scaler"]["mean"]]),
            std=np.array([float(v) for v in doc["scaler"]["std"]]),
            zero_variance=tuple(doc["scaler"]["zero_variance"]),
        )
        return cls(
            weights=np.array([[float(v) for v in row] for row in doc["weights"]]),
            biases=np.array([float(v) for v in doc["biases"]]),
            platt_a=np.array([float(v) for v in doc["platt_a"]]),
            platt_b=np.array([float(v) for v in doc["platt_b"]]),
            scaler=scaler,
            meta=doc["meta"],
        )

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(fh.read())


def train(vectors, labels, C=1.0, tol=1e-3, max_passes=100, seed=0):
    """Train the 3-class one-vs-rest model.

    Requires all three classes in ``labels``. Platt parameters are fit on
    the training decision values (no inner CV).
    """
    X_raw = _as_matrix(vectors)
    labels = list(labels)
    present = set(labels)
    if present != set(CLASSES):
        raise DegenerateLabels(f"need all classes {CLASSES}, got {sorted(present)}")
    scaler = fit_scaler(vectors)
    X = scaler.transform(X_raw)
    K = X @ X.T
    weights = np.zeros((len(CLASSES), X.shape[1]))
    biases = np.zeros(len(CLASSES))
    platt_a = np.zeros(len(CLASSES))
    platt_b = np.zeros(len(CLASSES))
    iters = []
    for k, cls_label in enumerate(CLASSES):
        y = np.where(np.array(labels) == cls_label, 1.0, -1.0)
        rng = np.random.default_rng([seed, k])
        alphas, b = _smo_binary(K, y, C, tol, max_passes, rng)
        w = (alphas * y) @ X
        decision = X @ w + b
        a_k, b_k = _fit_platt(decision, (y > 0).astype(float))
        weights[k] = w
        biases[k] = b
        platt_a[k] = a_k
        platt_b[k] = b_k
        iters.append(int(np.count_nonzero(alphas > 0)))
    meta = {"C": C, "tol": tol, "max_passes": max_passes, "seed": seed,
            "support_counts": iters}
    return SvmModel(weights=weights, biases=biases, platt_a=platt_a,
                    platt_b=platt_b, scaler=scaler, meta=meta)


def predict(model, vector):
    """Margins, calibrated probabilities, and the argmax label.

    Ties break by the fixed class order (angry < calm < panic).
    """
    x = vector.values if isinstance(vector, FeatureVector) else np.asarray(vector, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("feature vector contains non-finite values")
    xs = model.scaler.transform(x)
    margins = model.weights @ xs + model.biases
    z = model.platt_a * margins + model.platt_b
    sig = np.where(z >= 0, np.exp(-z) / (1.0 + np.exp(-z)), 1.0 / (1.0 + np.exp(z)))
    total = sig.sum()
    probs = sig / total if total > 0 else np.full(len(CLASSES), 1.0 / len(CLASSES))
    best = int(np.argmax(probs))  # argmax takes the first maximum: fixed-order tie-break
    return MlEvidence(label=CLASSES[best], confidence=float(probs[best]),
                      per_class_probs=probs, margins=margins)
