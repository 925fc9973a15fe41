"""Multinomial logistic regression (MaxEnt) with a Gaussian prior.

Inputs are sparse feature dicts.  Training minimizes

    sum_n -log P(y_n | x_n) + ||W||^2 / (2 sigma^2)

with a deterministic L-BFGS and Armijo backtracking; the per-class biases
are not regularized.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import sparse
from scipy.special import logsumexp
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ModelFormatError, TrainingError

FORMAT_VERSION = 1
BIAS = "__bias__"
PROB_FLOOR = 1e-6
STALL_TOL = 1e-14

TWO_CLASS = "two_class"
THREE_CLASS = "three_class"
SAME = "Same"
DIFFERENT = "Different"
SAME_GOOD = "Same-Good"
SAME_BAD = "Same-Bad"


@dataclass(frozen=True)
class TrainConfig:
    l2_sigma: float = 1.0
    max_iterations: int = 1000
    convergence_tol: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if not self.l2_sigma > 0:
            raise TrainingError("l2_sigma must be > 0")
        if not self.convergence_tol > 0:
            raise TrainingError("convergence_tol must be > 0")
        if self.max_iterations < 0:
            raise TrainingError("max_iterations must be >= 0")


def vectorize(X: Sequence[Mapping[str, float]], vocabulary: Mapping[str, int]) -> sparse.csr_matrix:
    """CSR matrix over ``vocabulary``; names outside it are dropped."""
    indptr = [0]
    indices: list[int] = []
    data: list[float] = []
    for row in X:
        for name, value in row.items():
            col = vocabulary.get(name)
            if col is not None and value != 0.0:
                indices.append(col)
                data.append(float(value))
        indptr.append(len(indices))
    return sparse.csr_matrix(
        (np.asarray(data, dtype=np.float64), np.asarray(indices, dtype=np.int64), indptr),
        shape=(len(X), len(vocabulary)),
    )


def _logsumexp_rows(Z):
    top = Z.max(axis=1, keepdims=True)
    return (top + np.log(np.exp(Z - top).sum(axis=1, keepdims=True))).ravel()


def _objective(params, X, Y, inv_var, XT=None):
    """Regularized NLL and its gradient for flattened (W, b)."""
    n_classes = Y.shape[1]
    n_features = X.shape[1]
    W = params[: n_classes * n_features].reshape(n_classes, n_features)
    b = params[n_classes * n_features :]
    reg = 0.5 * inv_var * float(np.sum(W * W))
    if X.shape[0] == 0:
        return reg, np.concatenate([(inv_var * W).ravel(), np.zeros(n_classes)])
    Z = np.asarray(X @ W.T) + b
    lse = _logsumexp_rows(Z)
    loss = float(np.sum(lse) - np.sum(Z * Y)) + reg
    R = np.exp(Z - lse[:, None]) - Y
    XT = X.T if XT is None else XT
    gW = np.asarray(XT @ R).T + inv_var * W
    return loss, np.concatenate([gW.ravel(), R.sum(axis=0)])


def _lbfgs(fun, x0, max_iter, tol, history=10, stall_tol=STALL_TOL):
    """Minimize with L-BFGS; every accepted step satisfies Armijo decrease.

    Stops when the gradient norm drops below ``tol``, after ``max_iter``
    accepted steps, or when an accepted step improves the loss by less than
    ``stall_tol`` relative to its magnitude (the float resolution of the
    loss on badly scaled features).  Returns ``(x, losses, iterations, converged)``.
    """
    x = x0.copy()
    f, g = fun(x)
    losses = [f]
    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    converged = float(np.linalg.norm(g)) < tol
    it = 0
    while not converged and it < max_iter:
        q = g.copy()
        alphas = []
        for s, y in zip(reversed(s_hist), reversed(y_hist)):
            a = s @ q / (y @ s)
            alphas.append(a)
            q -= a * y
        if s_hist:
            q *= (s_hist[-1] @ y_hist[-1]) / (y_hist[-1] @ y_hist[-1])
        else:
            q /= max(1.0, float(np.linalg.norm(g)))
        for (s, y), a in zip(zip(s_hist, y_hist), reversed(alphas)):
            q += s * (a - (y @ q) / (y @ s))
        d = -q
        slope = float(g @ d)
        if slope >= 0:
            s_hist.clear()
            y_hist.clear()
            d = -g / max(1.0, float(np.linalg.norm(g)))
            slope = float(g @ d)
        step = 1.0
        while True:
            x_new = x + step * d
            f_new, g_new = fun(x_new)
            if f_new <= f + 1e-4 * step * slope and f_new <= f:
                break
            step *= 0.5
            if step < 1e-20:
                return x, losses, it, False
        s, y = x_new - x, g_new - g
        if s @ y > 1e-12:
            s_hist.append(s)
            y_hist.append(y)
            if len(s_hist) > history:
                s_hist.pop(0)
                y_hist.pop(0)
        stalled = f - f_new <= stall_tol * max(1.0, abs(f))
        x, f, g = x_new, f_new, g_new
        losses.append(f)
        it += 1
        converged = float(np.linalg.norm(g)) < tol
        if stalled and not converged:
            return x, losses, it, False
    return x, losses, it, converged


class MaxEntClassifier(ClassifierMixin, BaseEstimator):
    """MaxEnt classifier over sparse ``dict`` feature vectors.

    Parameters
    ----------
    sigma : float
        Standard deviation of the Gaussian prior on the feature weights.
        ``float('inf')`` disables regularization.
    max_iter : int
        Maximum number of accepted L-BFGS iterations.
    tol : float
        Training stops once the gradient 2-norm falls below this value.
    seed : int
        Recorded for reproducibility; the optimizer is deterministic.
    """

    def __init__(self, sigma=1.0, max_iter=1000, tol=1e-5, seed=0):
        self.sigma = sigma
        self.max_iter = max_iter
        self.tol = tol
        self.seed = seed

    @property
    def config(self) -> TrainConfig:
        return TrainConfig(self.sigma, self.max_iter, self.tol, self.seed)

    def _inv_var(self):
        return 0.0 if math.isinf(self.sigma) else 1.0 / (self.sigma * self.sigma)

    def fit(self, X, y):
        self.config  # validates hyper-parameters
        X = list(X)
        y = [str(label) for label in y]
        if not X:
            raise TrainingError("cannot train on an empty instance list")
        if len(X) != len(y):
            raise TrainingError(f"{len(X)} instances but {len(y)} labels")
        classes = sorted(set(y))
        if len(classes) < 2:
            raise TrainingError(f"need at least 2 classes, got {classes}")
        names = sorted({name for row in X for name in row})
        self.classes_ = np.array(classes, dtype=object)
        self.feature_names_ = names
        self.vocabulary_ = {name: k for k, name in enumerate(names)}
        Xm = vectorize(X, self.vocabulary_)
        Y = self._one_hot(y)
        x0 = np.zeros(len(classes) * (len(names) + 1))
        inv_var = self._inv_var()
        XT = Xm.T.tocsr()
        params, losses, n_iter, converged = _lbfgs(
            lambda p: _objective(p, Xm, Y, inv_var, XT), x0, self.max_iter, self.tol
        )
        self._set_params_vector(params)
        self.loss_history_ = losses
        self.n_iter_ = n_iter
        self.converged_ = converged
        return self

    def _one_hot(self, y):
        index = {c: k for k, c in enumerate(self.classes_)}
        Y = np.zeros((len(y), len(self.classes_)))
        for row, label in enumerate(y):
            if label not in index:
                raise TrainingError(f"label {label!r} is not a model class")
            Y[row, index[label]] = 1.0
        return Y

    def _set_params_vector(self, params):
        k, m = len(self.classes_), len(self.feature_names_)
        self.coef_ = params[: k * m].reshape(k, m).copy()
        self.intercept_ = params[k * m :].copy()

    def _params_vector(self):
        return np.concatenate([self.coef_.ravel(), self.intercept_])

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        Xm = vectorize(list(X), self.vocabulary_)
        return np.asarray(Xm @ self.coef_.T) + self.intercept_

    def predict_proba(self, X):
        Z = self.decision_function(X)
        return np.exp(Z - logsumexp(Z, axis=1, keepdims=True))

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def loss_and_gradient(self, X, y):
        """Regularized NLL of ``(X, y)`` under the current weights, with its gradient.

        The gradient is returned as an array shaped like ``coef_`` and one
        shaped like ``intercept_``.
        """
        check_is_fitted(self, "coef_")
        Xm = vectorize(list(X), self.vocabulary_)
        Y = self._one_hot([str(label) for label in y])
        loss, grad = _objective(self._params_vector(), Xm, Y, self._inv_var())
        k, m = self.coef_.shape
        return loss, grad[: k * m].reshape(k, m), grad[k * m :]

    def to_dict(self) -> dict:
        check_is_fitted(self, "coef_")
        weights = {}
        for k, cls in enumerate(self.classes_):
            row = self.coef_[k]
            weights[cls] = {
                name: float(row[col]) for col, name in enumerate(self.feature_names_) if row[col] != 0.0
            }
        config = asdict(self.config)
        if math.isinf(config["l2_sigma"]):
            config["l2_sigma"] = "inf"
        return {
            "format_version": FORMAT_VERSION,
            "classes": [str(c) for c in self.classes_],
            "feature_name_list": list(self.feature_names_),
            "weights": weights,
            "bias": {str(c): float(b) for c, b in zip(self.classes_, self.intercept_)},
            "config": config,
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "MaxEntClassifier":
        version = doc.get("format_version")
        if version != FORMAT_VERSION:
            raise ModelFormatError(f"unsupported model format_version {version!r}")
        try:
            cfg = dict(doc["config"])
            sigma = float(cfg["l2_sigma"])
            model = cls(sigma, cfg["max_iterations"], cfg["convergence_tol"], cfg["seed"])
            model.classes_ = np.array(doc["classes"], dtype=object)
            model.feature_names_ = list(doc["feature_name_list"])
            model.vocabulary_ = {n: k for k, n in enumerate(model.feature_names_)}
            model.coef_ = np.zeros((len(model.classes_), len(model.feature_names_)))
            for k, c in enumerate(model.classes_):
                for name, w in doc["weights"].get(c, {}).items():
                    if name not in model.vocabulary_:
                        raise ModelFormatError(f"weight for unknown feature {name!r}")
                    model.coef_[k, model.vocabulary_[name]] = w
            model.intercept_ = np.array([doc["bias"][c] for c in model.classes_], dtype=np.float64)
        except KeyError as exc:
            raise ModelFormatError(f"model document missing {exc}") from None
        return model

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "MaxEntClassifier":
        with open(path, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ModelFormatError(f"{path}: not valid JSON ({exc.msg})") from None
        return cls.from_dict(doc)


def train(instances: Sequence[tuple[Mapping[str, float], str]], cfg: TrainConfig | None = None):
    """Functional entry point: fit a :class:`MaxEntClassifier` on ``(x, label)`` pairs."""
    cfg = cfg or TrainConfig()
    if not instances:
        raise TrainingError("cannot train on an empty instance list")
    X, y = zip(*instances)
    return MaxEntClassifier(cfg.l2_sigma, cfg.max_iterations, cfg.convergence_tol, cfg.seed).fit(X, y)


def predict_proba(model: MaxEntClassifier, x: Mapping[str, float]) -> dict[str, float]:
    probs = model.predict_proba([x])[0]
    return {str(c): float(p) for c, p in zip(model.classes_, probs)}


def loss_and_gradient(model: MaxEntClassifier, instances) -> tuple[float, dict]:
    """Loss and gradient as a sparse map keyed by ``(class, feature)``.

    Bias entries use the feature name :data:`BIAS`.
    """
    if instances:
        X, y = zip(*instances)
    else:
        X, y = (), ()
    loss, gW, gb = model.loss_and_gradient(X, y)
    grad = {}
    for k, c in enumerate(model.classes_):
        for col, name in enumerate(model.feature_names_):
            grad[(str(c), name)] = float(gW[k, col])
        grad[(str(c), BIAS)] = float(gb[k])
    return loss, grad


def collapse_to_same_prob(dist: Mapping[str, float], mode: str) -> float:
    """P(Same) from a pairwise distribution; 3-class mode sums the two Same classes."""
    classes = set(dist)
    if mode == TWO_CLASS:
        if classes != {SAME, DIFFERENT}:
            raise TrainingError(f"two_class mode expects {{Same, Different}}, got {sorted(classes)}")
        return float(dist[SAME])
    if mode == THREE_CLASS:
        if classes != {SAME_GOOD, SAME_BAD, DIFFERENT}:
            raise TrainingError(
                f"three_class mode expects {{Same-Good, Same-Bad, Different}}, got {sorted(classes)}"
            )
        return float(dist[SAME_GOOD] + dist[SAME_BAD])
    raise TrainingError(f"unknown pairwise mode {mode!r}")


def floor_probability(p, eps: float = PROB_FLOOR):
    return np.clip(p, eps, 1.0 - eps)
