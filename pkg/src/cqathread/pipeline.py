"""End-to-end thread labeler: local MaxEnt, pairwise MaxEnt, global decoding."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.model_selection import KFold
from sklearn.utils.validation import check_is_fitted

from .corpus import BAD, GOOD, Dataset, Thread
from .exceptions import ModelFormatError, TrainingError
from .features import FeatureConfig, thread_local_features, thread_pairwise_features
from .inference import DECODERS, InferenceConfig, ThreadScores, decode
from .maxent import (
    DIFFERENT,
    SAME,
    SAME_BAD,
    SAME_GOOD,
    THREE_CLASS,
    TWO_CLASS,
    MaxEntClassifier,
    collapse_to_same_prob,
)
from .textsim import TokenSequence

PIPELINE_FORMAT_VERSION = 1


def _threads(X) -> list[Thread]:
    if isinstance(X, Dataset):
        return list(X.threads)
    threads = list(X)
    for t in threads:
        if not isinstance(t, Thread):
            raise TypeError(f"expected Thread instances, got {type(t).__name__}")
        if not t.comments:
            raise ValueError(f"thread {t.question_id!r} has no comments")
    return threads


def _gold(threads, y) -> list[list[str]]:
    if y is None:
        y = [t.gold_labels for t in threads]
    y = [list(labels) for labels in y]
    if len(y) != len(threads):
        raise ValueError(f"{len(threads)} threads but {len(y)} label lists")
    for t, labels in zip(threads, y):
        if len(labels) != len(t.comments):
            raise ValueError(f"thread {t.question_id!r}: {len(labels)} labels for {len(t.comments)} comments")
        bad = [lab for lab in labels if lab not in (GOOD, BAD)]
        if bad:
            raise TrainingError(f"thread {t.question_id!r} has non-binary gold label {bad[0]!r}")
    return y


def pair_label(a: str, b: str, mode: str) -> str:
    if a != b:
        return DIFFERENT
    if mode == TWO_CLASS:
        return SAME
    if mode == THREE_CLASS:
        return SAME_GOOD if a == GOOD else SAME_BAD
    raise ValueError(f"unknown pairwise mode {mode!r}")


class ThreadLabeler(ClassifierMixin, BaseEstimator):
    """Good/Bad labeling of CQA threads with global inference.

    ``fit`` takes a list of :class:`~cqathread.corpus.Thread` objects (or a
    ``Dataset``) and, optionally, per-thread gold label lists; by default the
    threads' own gold labels are used.  ``predict`` returns one label list
    per thread.

    Parameters
    ----------
    decoder : {'local', 'cut', 'ilp'}
    lam : float
        Weight of the local term; ``1 - lam`` goes to the pairwise term.
    pairwise_mode : {'two_class', 'three_class'}
    local_sigma, pairwise_sigma : float
        Gaussian prior widths of the two MaxEnt models.
    n_folds : int
        Folds used to produce out-of-fold local predictions for the
        pairwise training set.
    feature_config : FeatureConfig or None
    epsilon : float
        Probability floor applied before decoding.
    """

    def __init__(
        self,
        decoder="cut",
        lam=0.95,
        pairwise_mode=TWO_CLASS,
        local_sigma=1.0,
        pairwise_sigma=1.0,
        max_iter=1000,
        tol=1e-5,
        n_folds=5,
        feature_config=None,
        epsilon=1e-6,
        seed=0,
        n_jobs=1,
    ):
        self.decoder = decoder
        self.lam = lam
        self.pairwise_mode = pairwise_mode
        self.local_sigma = local_sigma
        self.pairwise_sigma = pairwise_sigma
        self.max_iter = max_iter
        self.tol = tol
        self.n_folds = n_folds
        self.feature_config = feature_config
        self.epsilon = epsilon
        self.seed = seed
        self.n_jobs = n_jobs

    def _validate_params(self):
        if self.decoder not in DECODERS:
            raise ValueError(f"decoder must be one of {DECODERS}, got {self.decoder!r}")
        if self.pairwise_mode not in (TWO_CLASS, THREE_CLASS):
            raise ValueError(f"unknown pairwise_mode {self.pairwise_mode!r}")
        InferenceConfig(lam=self.lam, epsilon=self.epsilon)
        if self.n_folds < 2:
            raise ValueError("n_folds must be >= 2")

    @property
    def feature_config_(self) -> FeatureConfig:
        return self.feature_config or FeatureConfig()

    def _maxent(self, sigma):
        return MaxEntClassifier(sigma=sigma, max_iter=self.max_iter, tol=self.tol, seed=self.seed)

    def _local_vectors(self, threads, annotations):
        cfg = self.feature_config_
        return Parallel(n_jobs=self.n_jobs)(
            delayed(thread_local_features)(t, cfg, annotations) for t in threads
        )

    def _out_of_fold(self, local_vecs, gold) -> list[np.ndarray]:
        """Good probabilities for every training comment from models that did not see its thread."""
        n = len(local_vecs)
        folds = min(self.n_folds, n)
        preds: list[np.ndarray | None] = [None] * n
        if folds < 2:
            model = self.local_model_
            return [self._good_proba(model, vecs) for vecs in local_vecs]
        splitter = KFold(n_splits=folds, shuffle=True, random_state=self.seed)
        for train_idx, held_idx in splitter.split(np.arange(n)):
            X = [v for k in train_idx for v in local_vecs[k]]
            y = [lab for k in train_idx for lab in gold[k]]
            if len(set(y)) < 2:
                model = self.local_model_
            else:
                model = self._maxent(self.local_sigma).fit(X, y)
            for k in held_idx:
                preds[k] = self._good_proba(model, local_vecs[k])
        return preds

    @staticmethod
    def _good_proba(model: MaxEntClassifier, vecs) -> np.ndarray:
        col = list(model.classes_).index(GOOD)
        return model.predict_proba(vecs)[:, col]

    def fit(self, X, y=None, annotations: Mapping[str, TokenSequence] | None = None):
        self._validate_params()
        threads = _threads(X)
        if not threads:
            raise TrainingError("cannot train on an empty dataset")
        gold = _gold(threads, y)
        local_vecs = self._local_vectors(threads, annotations)
        flat_X = [v for vecs in local_vecs for v in vecs]
        flat_y = [lab for labels in gold for lab in labels]
        self.local_model_ = self._maxent(self.local_sigma).fit(flat_X, flat_y)

        oof = self._out_of_fold(local_vecs, gold)
        cfg = self.feature_config_
        pair_feats = Parallel(n_jobs=self.n_jobs)(
            delayed(thread_pairwise_features)(t, vecs, preds, cfg, annotations)
            for t, vecs, preds in zip(threads, local_vecs, oof)
        )
        pX, py = [], []
        for feats, labels in zip(pair_feats, gold):
            for (i, j), vec in feats.items():
                pX.append(vec)
                py.append(pair_label(labels[i], labels[j], self.pairwise_mode))
        if len(set(py)) < 2:
            raise TrainingError(
                f"pairwise training data has a single class {sorted(set(py))}; need threads with"
                " at least two comments and both same- and different-label pairs"
            )
        self.pairwise_model_ = self._maxent(self.pairwise_sigma).fit(pX, py)
        self.classes_ = np.array([BAD, GOOD], dtype=object)
        self.training_log_ = {
            "threads": len(threads),
            "comments": len(flat_X),
            "pairs": len(pX),
            "local": _fit_summary(self.local_model_),
            "pairwise": _fit_summary(self.pairwise_model_),
        }
        return self

    def _thread_scores(self, thread: Thread, annotations) -> ThreadScores:
        cfg = self.feature_config_
        vecs = thread_local_features(thread, cfg, annotations)
        s_good = self._good_proba(self.local_model_, vecs)
        feats = thread_pairwise_features(thread, vecs, s_good, cfg, annotations)
        pairwise = {}
        if feats:
            keys = list(feats)
            probs = self.pairwise_model_.predict_proba([feats[k] for k in keys])
            names = [str(c) for c in self.pairwise_model_.classes_]
            for key, row in zip(keys, probs):
                pairwise[key] = collapse_to_same_prob(dict(zip(names, row)), self.pairwise_mode)
        return ThreadScores.from_probabilities(s_good, pairwise, self.epsilon, thread.question_id)

    def thread_scores(self, X, annotations=None) -> list[ThreadScores]:
        """Local and pairwise probabilities for every thread."""
        check_is_fitted(self, "pairwise_model_")
        threads = _threads(X)
        return Parallel(n_jobs=self.n_jobs)(
            delayed(self._thread_scores)(t, annotations) for t in threads
        )

    def decode_scores(self, scores: Sequence[ThreadScores]) -> list[list[str]]:
        self._validate_params()
        cfg = InferenceConfig(lam=self.lam, epsilon=self.epsilon)
        return Parallel(n_jobs=self.n_jobs)(
            delayed(_decode_labels)(sc, self.decoder, cfg) for sc in scores
        )

    def predict(self, X, annotations=None) -> list[list[str]]:
        return self.decode_scores(self.thread_scores(X, annotations))

    def score(self, X, y=None, sample_weight=None):
        """Comment-level accuracy."""
        threads = _threads(X)
        gold = _gold(threads, y)
        pred = self.predict(threads)
        flat_p = [p for labels in pred for p in labels]
        flat_g = [g for labels in gold for g in labels]
        return float(np.mean([p == g for p, g in zip(flat_p, flat_g)]))

    def save(self, directory) -> None:
        """Write ``pipeline.json``, ``local.json`` and ``pairwise.json`` to ``directory``."""
        check_is_fitted(self, "pairwise_model_")
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.local_model_.save(directory / "local.json")
        self.pairwise_model_.save(directory / "pairwise.json")
        params = self.get_params()
        params["feature_config"] = self.feature_config_.to_dict()
        doc = {"format_version": PIPELINE_FORMAT_VERSION, "params": params}
        with open(directory / "pipeline.json", "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, directory) -> "ThreadLabeler":
        directory = Path(directory)
        try:
            with open(directory / "pipeline.json", encoding="utf-8") as fh:
                doc = json.load(fh)
        except FileNotFoundError:
            raise ModelFormatError(f"no pipeline.json in {directory}") from None
        if doc.get("format_version") != PIPELINE_FORMAT_VERSION:
            raise ModelFormatError(f"unsupported pipeline format_version {doc.get('format_version')!r}")
        params = dict(doc["params"])
        params["feature_config"] = FeatureConfig.from_dict(params["feature_config"])
        model = cls(**params)
        model.local_model_ = MaxEntClassifier.load(directory / "local.json")
        model.pairwise_model_ = MaxEntClassifier.load(directory / "pairwise.json")
        expected = {
            TWO_CLASS: {SAME, DIFFERENT},
            THREE_CLASS: {SAME_GOOD, SAME_BAD, DIFFERENT},
        }[model.pairwise_mode]
        if set(map(str, model.pairwise_model_.classes_)) != expected:
            raise ModelFormatError("pairwise model classes do not match pairwise_mode")
        model.classes_ = np.array([BAD, GOOD], dtype=object)
        return model


def _decode_labels(scores: ThreadScores, decoder: str, cfg: InferenceConfig) -> list[str]:
    return list(decode(scores, decoder, cfg).labels)


def _fit_summary(model: MaxEntClassifier) -> dict:
    return {
        "classes": [str(c) for c in model.classes_],
        "features": len(model.feature_names_),
        "iterations": model.n_iter_,
        "converged": bool(model.converged_),
        "final_loss": model.loss_history_[-1],
    }
