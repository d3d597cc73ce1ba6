"""Defense evaluation: filtering quality (TPR/FPR) and model quality (ASR/CAR)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attacks import PoisonManifest, TriggerSpec, apply_trigger_batch
from .classifier import Classifier, evaluate, predict_labels
from .dataset import Dataset
from .errors import UndefinedMetricError
from .pipeline import PoolAssignment


@dataclass(frozen=True)
class DefenseScores:
    """The four headline numbers of a defense run; None marks an undefined value."""

    tpr: float | None
    fpr: float | None
    asr: float | None
    car: float | None

    def as_dict(self) -> dict:
        return {"tpr": self.tpr, "fpr": self.fpr, "asr": self.asr, "car": self.car}

    def summary_line(self) -> str:
        def fmt(v):
            return "NA" if v is None else f"{v:.4f}"

        return (
            f"TPR={fmt(self.tpr)} FPR={fmt(self.fpr)} ASR={fmt(self.asr)} CAR={fmt(self.car)}"
        )


def tpr_fpr(pools: PoolAssignment, manifest: PoisonManifest) -> tuple[float | None, float]:
    """Fraction of true poisons caught, and of clean samples wrongly discarded.

    With zero poisoned samples the TPR denominator is empty and TPR is
    returned as None rather than 0.
    """
    n = len(pools)
    poisoned = np.asarray(manifest.poisoned_indices, dtype=np.int64)
    if poisoned.size and (poisoned.min() < 0 or poisoned.max() >= n):
        raise ValueError("manifest indices out of range for this pool assignment")
    pool = np.asarray(pools.poison_pool, dtype=np.int64)
    caught = np.intersect1d(pool, poisoned).size
    false_pos = pool.size - caught
    n_clean = n - poisoned.size
    tpr = None if poisoned.size == 0 else caught / poisoned.size
    fpr = 0.0 if n_clean == 0 else false_pos / n_clean
    return tpr, fpr


def asr(model: Classifier, clean_testset: Dataset, attack: TriggerSpec, target_label: int) -> float:
    """Fraction of triggered test samples predicted as the target class.

    Samples whose true label already equals the target are excluded before
    triggering, so a perfect clean model scores 0 rather than the target
    class prior.
    """
    keep = np.flatnonzero(clean_testset.labels != target_label)
    if keep.size == 0:
        raise UndefinedMetricError("no test samples left after excluding the target class")
    triggered = apply_trigger_batch(clean_testset.pixels[keep], attack)
    preds = predict_labels(model, triggered)
    return float(np.mean(preds == target_label))


def car(model: Classifier, clean_testset: Dataset) -> float:
    """Accuracy on untriggered test data."""
    return evaluate(model, clean_testset)


def save_metrics_csv(scores: DefenseScores, path) -> None:
    with open(path, "w") as fh:
        fh.write("metric,value\n")
        for name, value in scores.as_dict().items():
            fh.write(f"{name},{'NA' if value is None else format(value, '.6f')}\n")
