"""Binary metrics, paired approximate randomization testing and lambda tuning."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .corpus import GOOD, UNKNOWN
from .inference import InferenceConfig, ThreadScores, decode


@dataclass(frozen=True)
class MetricsReport:
    precision: float
    recall: float
    f1: float
    accuracy: float
    positive_class: str
    tp: int
    fp: int
    fn: int
    tn: int

    def as_dict(self) -> dict:
        return asdict(self)

    def to_tsv(self) -> str:
        rows = [
            ("precision", self.precision),
            ("recall", self.recall),
            ("f1", self.f1),
            ("accuracy", self.accuracy),
        ]
        lines = [f"{name}\t{value:.4f}" for name, value in rows]
        lines += [f"{name}\t{getattr(self, name)}" for name in ("tp", "fp", "fn", "tn")]
        return "\n".join(lines) + "\n"

    def table_row(self, name: str) -> str:
        """Percentages in P / R / F1 / Acc order."""
        return (
            f"{name}\t{100 * self.precision:.2f}\t{100 * self.recall:.2f}"
            f"\t{100 * self.f1:.2f}\t{100 * self.accuracy:.2f}"
        )


def _check_lengths(*seqs):
    lengths = {len(s) for s in seqs}
    if len(lengths) > 1:
        raise ValueError(f"length mismatch: {[len(s) for s in seqs]}")


def score(pred: Sequence[str], gold: Sequence[str], positive_class: str = GOOD) -> MetricsReport:
    _check_lengths(pred, gold)
    if any(g == UNKNOWN for g in gold):
        raise ValueError("gold labels must not contain Unknown")
    pred_pos = np.array([p == positive_class for p in pred], dtype=bool)
    gold_pos = np.array([g == positive_class for g in gold], dtype=bool)
    correct = np.array([p == g for p, g in zip(pred, gold)], dtype=bool)
    tp = int(np.sum(pred_pos & gold_pos))
    fp = int(np.sum(pred_pos & ~gold_pos))
    fn = int(np.sum(~pred_pos & gold_pos))
    tn = len(pred) - tp - fp - fn
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    accuracy = float(correct.mean()) if len(pred) else 0.0
    return MetricsReport(precision, recall, f1, accuracy, positive_class, tp, fp, fn, tn)


def randomization_test(
    pred_a: Sequence[str],
    pred_b: Sequence[str],
    gold: Sequence[str],
    iterations: int = 10_000,
    seed: int = 0,
) -> float:
    """Two-sided paired approximate randomization test on accuracy.

    Each iteration swaps the two systems' predictions on every instance with
    probability 1/2.  Returns ``(1 + #{|d_perm| >= |d_obs|}) / (1 + iterations)``.
    """
    _check_lengths(pred_a, pred_b, gold)
    if iterations < 1000:
        raise ValueError("iterations must be >= 1000")
    n = len(gold)
    if n == 0:
        return 1.0
    a = np.array([p == g for p, g in zip(pred_a, gold)], dtype=np.float64)
    b = np.array([p == g for p, g in zip(pred_b, gold)], dtype=np.float64)
    diff = a - b
    observed = abs(diff.sum())
    rng = np.random.default_rng(seed)
    hits = 0
    chunk = max(1, min(iterations, 2_000_000 // n))
    done = 0
    while done < iterations:
        size = min(chunk, iterations - done)
        signs = np.where(rng.random((size, n)) < 0.5, -1.0, 1.0)
        permuted = np.abs(signs @ diff)
        # integer-valued sums; the slack only guards against float noise
        hits += int(np.sum(permuted >= observed - 1e-9))
        done += size
    return (1 + hits) / (1 + iterations)


def default_lambda_grid() -> list[float]:
    """Step 0.05 over [0, 1], refined to step 0.01 on [0.85, 1]."""
    coarse = {round(0.05 * k, 2) for k in range(21)}
    fine = {round(0.85 + 0.01 * k, 2) for k in range(16)}
    return sorted(coarse | fine)


def lambda_curve(
    dev_scores: Sequence[ThreadScores],
    dev_gold: Sequence[Sequence[str]],
    decoder: str,
    grid: Sequence[float] | None = None,
    epsilon: float = 1e-6,
) -> list[tuple[float, float]]:
    """Dev accuracy for each grid value, as ``(lambda, accuracy)`` pairs."""
    grid = list(grid) if grid is not None else default_lambda_grid()
    if not grid:
        raise ValueError("lambda grid must not be empty")
    if len(dev_scores) != len(dev_gold):
        raise ValueError("one gold label list per thread is required")
    gold_flat = [g for labels in dev_gold for g in labels]
    curve = []
    for lam in grid:
        cfg = InferenceConfig(lam=float(lam), epsilon=epsilon)
        pred = []
        for sc, gold in zip(dev_scores, dev_gold):
            if sc.n != len(gold):
                raise ValueError(f"thread {sc.question_id!r}: {sc.n} scores for {len(gold)} labels")
            pred.extend(decode(sc, decoder, cfg).labels)
        curve.append((float(lam), score(pred, gold_flat).accuracy))
    return curve


def tune_lambda(
    dev_scores: Sequence[ThreadScores],
    dev_gold: Sequence[Sequence[str]],
    decoder: str,
    grid: Sequence[float] | None = None,
    epsilon: float = 1e-6,
) -> float:
    """Grid value with the best dev accuracy; ties go to the larger lambda."""
    curve = lambda_curve(dev_scores, dev_gold, decoder, grid, epsilon)
    return max(curve, key=lambda point: (point[1], point[0]))[0]


def significance_report(pred_a, pred_b, gold, iterations=10_000, seed=0) -> dict:
    acc_a = score(pred_a, gold).accuracy
    acc_b = score(pred_b, gold).accuracy
    return {
        "accuracy_a": acc_a,
        "accuracy_b": acc_b,
        "delta_accuracy": acc_a - acc_b,
        "p_value": randomization_test(pred_a, pred_b, gold, iterations, seed),
        "iterations": iterations,
        "seed": seed,
        "pairing": "comment",
    }


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"
