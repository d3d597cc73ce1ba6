"""Top-2 probability-gap scoring and rate-based isolation.

The score of a sample is the gap between its largest and second-largest
predicted class probabilities, optionally averaged over several filter
models. Early in training, backdoored samples separate from clean ones on
this score, so the highest-scoring fraction is isolated as suspected poison
and the lowest-scoring fraction as trusted clean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .classifier import Classifier, predict_probs
from .dataset import Dataset
from .errors import ConfigError


@dataclass(frozen=True)
class ScoreTable:
    """Per-sample scores aligned to dataset indices."""

    scores: np.ndarray
    num_filters_averaged: int

    def __post_init__(self):
        if self.scores.ndim != 1:
            raise ValueError("scores must be a 1-D array")
        if self.num_filters_averaged < 1:
            raise ValueError("num_filters_averaged must be >= 1")
        if len(self.scores) and (self.scores.min() < 0.0 or self.scores.max() > 1.0):
            raise ValueError("scores must lie in [0, 1]")
        self.scores.setflags(write=False)

    def __len__(self) -> int:
        return len(self.scores)


@dataclass(frozen=True)
class IsolationResult:
    """Sorted index lists for the suspected-poison and trusted-clean slices."""

    poison_isolated: np.ndarray
    clean_isolated: np.ndarray

    def __post_init__(self):
        self.poison_isolated.setflags(write=False)
        self.clean_isolated.setflags(write=False)


def top2_diff(prob_row) -> float:
    """Gap between the two largest entries of a probability vector."""
    row = np.asarray(prob_row, dtype=np.float64)
    if row.ndim != 1 or len(row) < 2:
        raise ValueError("top2_diff needs a 1-D probability vector of length >= 2")
    top2 = np.partition(row, -2)[-2:]
    return float(abs(top2[1] - top2[0]))


def _batch_top2_diff(probs: np.ndarray) -> np.ndarray:
    top2 = np.partition(probs, -2, axis=1)[:, -2:]
    return np.abs(top2[:, 1] - top2[:, 0])


def score_dataset(models: list[Classifier], dataset: Dataset) -> ScoreTable:
    """Mean top-2 gap per sample over `models`."""
    if not models:
        raise ConfigError("score_dataset needs at least one model")
    classes = {m.num_classes for m in models}
    if len(classes) != 1:
        raise ConfigError(f"filter models disagree on class count: {sorted(classes)}")
    total = np.zeros(len(dataset), dtype=np.float64)
    for model in models:
        total += _batch_top2_diff(predict_probs(model, dataset.pixels))
    return ScoreTable(scores=total / len(models), num_filters_averaged=len(models))


def isolation_count(rate: float, n: int) -> int:
    """ceil(rate*n) with a tolerance for float rate representation."""
    if rate < 0:
        raise ValueError(f"isolation rate must be >= 0, got {rate}")
    if rate == 0 or n == 0:
        return 0
    return int(math.ceil(rate * n - 1e-12))


def isolate(table: ScoreTable, a_p: float, a_c: float) -> IsolationResult:
    """Split off the ceil(a_p*n) highest-scoring and ceil(a_c*n) lowest-scoring indices.

    Ties resolve to the lower index; when a tie region spans both slices the
    poison side claims its indices first and the clean side skips them.
    """
    n = len(table)
    k_p = isolation_count(a_p, n)
    k_c = isolation_count(a_c, n)
    if k_p + k_c > n:
        raise ValueError(f"isolation rates take {k_p}+{k_c} samples but only {n} exist")
    order_desc = np.lexsort((np.arange(n), -table.scores))
    poison = order_desc[:k_p]
    order_asc = np.lexsort((np.arange(n), table.scores))
    remaining = order_asc[~np.isin(order_asc, poison)]
    clean = remaining[:k_c]
    return IsolationResult(
        poison_isolated=np.sort(poison).astype(np.int64),
        clean_isolated=np.sort(clean).astype(np.int64),
    )


def save_scores_csv(table: ScoreTable, path) -> None:
    with open(path, "w") as fh:
        fh.write("index,score\n")
        for i, s in enumerate(table.scores):
            fh.write(f"{i},{s:.9g}\n")


def load_scores_csv(path, num_filters_averaged: int = 1) -> ScoreTable:
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "index,score":
            raise ValueError(f"unexpected score CSV header {header!r}")
        scores = [float(line.split(",")[1]) for line in fh if line.strip()]
    return ScoreTable(np.asarray(scores, dtype=np.float64), num_filters_averaged)
