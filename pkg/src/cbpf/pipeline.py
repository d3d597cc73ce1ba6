"""Three-stage composite-backdoor poison filtering.

Stage 1 trains one or more filter models for a few epochs on the suspect set
and isolates the highest/lowest scoring fractions. Stage 2 copies the suspect
set, stamps the defender's benign trigger onto both isolated slices, relabels
them to two freshly appended classes (new-target for the poison slice,
benign-target for the clean slice), and trains a composite model on the
result. Stage 3 stamps the benign trigger onto every original sample and
routes each one by the composite model's prediction: new-target means poison
pool, anything else means clean pool. A clean model is then retrained from
scratch on the clean pool with the original labels and class space.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .attacks import TriggerSpec, apply_trigger_batch, default_benign_trigger
from .classifier import Classifier, ClassifierConfig, TrainReport, predict_labels, train
from .dataset import Dataset, extend_label_space, subset
from .errors import ConfigError, LabelSpaceError, PipelineError
from .scoring import IsolationResult, ScoreTable, isolate, isolation_count, score_dataset
from .seeding import derive_seed


@dataclass(frozen=True)
class PipelineConfig:
    t_early: int = 5
    a_p: float = 0.03
    a_c: float = 0.01
    benign_trigger: TriggerSpec = field(default_factory=default_benign_trigger)
    n_filters: int = 1
    filter_train_config: ClassifierConfig = field(default_factory=ClassifierConfig)
    composite_train_config: ClassifierConfig = field(default_factory=ClassifierConfig)
    clean_train_config: ClassifierConfig = field(default_factory=ClassifierConfig)
    seed: int = 0

    def __post_init__(self):
        if self.t_early < 1:
            raise ConfigError("t_early must be >= 1")
        if self.a_p < 0 or self.a_c < 0:
            raise ValueError("isolation rates must be >= 0")
        if self.a_p + self.a_c > 1.0:
            raise ValueError(f"a_p + a_c must be <= 1, got {self.a_p} + {self.a_c}")
        if self.n_filters < 1:
            raise ConfigError("n_filters must be >= 1")
        if self.benign_trigger.kind != "benign_patch":
            raise ConfigError("benign_trigger must have kind 'benign_patch'")


@dataclass(frozen=True)
class PoolAssignment:
    """Stage-3 partition of the suspect set, by original index."""

    poison_pool: np.ndarray
    clean_pool: np.ndarray
    decision_labels: np.ndarray

    def __post_init__(self):
        self.poison_pool.setflags(write=False)
        self.clean_pool.setflags(write=False)
        self.decision_labels.setflags(write=False)

    def __len__(self) -> int:
        return len(self.decision_labels)


@dataclass
class PipelineResult:
    pool_assignment: PoolAssignment
    clean_model: Classifier
    report: dict
    score_table: ScoreTable
    isolation: IsolationResult
    filter_models: list[Classifier]
    composite_model: Classifier
    modified_dataset: Dataset


def stage1_filter(
    suspect: Dataset, config: PipelineConfig
) -> tuple[IsolationResult, ScoreTable, list[Classifier]]:
    """Early-train filter models, score every sample, isolate by (a_p, a_c)."""
    if suspect.is_extended:
        raise LabelSpaceError("stage 1 expects a dataset whose label space is not yet extended")
    models = []
    for i in range(config.n_filters):
        cfg = replace(
            config.filter_train_config,
            epochs=config.t_early,
            num_classes=suspect.num_classes_base,
            seed=derive_seed(config.seed, "filter", i),
        )
        model, _ = train(suspect, cfg)
        models.append(model)
    table = score_dataset(models, suspect)
    return isolate(table, config.a_p, config.a_c), table, models


def stage2_modify(
    suspect: Dataset, isolation: IsolationResult, config: PipelineConfig
) -> tuple[Dataset, Classifier, TrainReport]:
    """Build the composite training set and train the composite model on it."""
    if suspect.is_extended:
        raise LabelSpaceError("stage 2 extends the label space itself; got an extended dataset")
    p_idx = np.asarray(isolation.poison_isolated, dtype=np.int64)
    c_idx = np.asarray(isolation.clean_isolated, dtype=np.int64)
    for name, idx in (("poison_isolated", p_idx), ("clean_isolated", c_idx)):
        if idx.size and (idx.min() < 0 or idx.max() >= len(suspect)):
            raise ValueError(f"{name} indices out of range")
    if np.intersect1d(p_idx, c_idx).size:
        raise ValueError("isolation slices must be disjoint")

    extended = extend_label_space(suspect)
    pixels = extended.pixels.copy()
    labels = extended.labels.copy()
    if p_idx.size:
        pixels[p_idx] = apply_trigger_batch(pixels[p_idx], config.benign_trigger)
        labels[p_idx] = extended.new_target
    if c_idx.size:
        pixels[c_idx] = apply_trigger_batch(pixels[c_idx], config.benign_trigger)
        labels[c_idx] = extended.benign_target
    modified = extended.with_arrays(pixels, labels)

    cfg = replace(
        config.composite_train_config,
        num_classes=modified.num_classes_extended,
        seed=derive_seed(config.seed, "composite"),
    )
    model, report = train(modified, cfg)
    return modified, model, report


def stage3_separate(
    suspect: Dataset, composite_model: Classifier, config: PipelineConfig
) -> PoolAssignment:
    """Stamp the benign trigger on every original sample and route by prediction.

    Only a new-target prediction sends a sample to the poison pool;
    benign-target and all base classes keep it in the clean pool.
    """
    expected = suspect.num_classes_base + 2
    if composite_model.num_classes != expected:
        raise ConfigError(
            f"composite model has {composite_model.num_classes} classes, expected {expected}"
        )
    triggered = apply_trigger_batch(suspect.pixels, config.benign_trigger)
    decisions = predict_labels(composite_model, triggered).astype(np.int64)
    new_target = suspect.num_classes_base
    poison = np.flatnonzero(decisions == new_target).astype(np.int64)
    clean = np.flatnonzero(decisions != new_target).astype(np.int64)
    return PoolAssignment(poison_pool=poison, clean_pool=clean, decision_labels=decisions)


def train_clean_model(
    suspect: Dataset, pools: PoolAssignment, config: PipelineConfig
) -> tuple[Classifier, TrainReport]:
    """Retrain from scratch on the clean pool with original labels and base classes."""
    if len(pools.clean_pool) == 0:
        raise PipelineError("clean pool is empty; cannot retrain a clean model")
    clean_set = subset(suspect, pools.clean_pool)
    cfg = replace(
        config.clean_train_config,
        num_classes=suspect.num_classes_base,
        seed=derive_seed(config.seed, "clean"),
    )
    return train(clean_set, cfg)


def run_pipeline(suspect: Dataset, config: PipelineConfig) -> PipelineResult:
    """Stages 1-3 plus the clean retrain; returns pools, the clean model, and a report."""
    t0 = time.perf_counter()
    isolation, table, filter_models = stage1_filter(suspect, config)
    t1 = time.perf_counter()
    modified, composite_model, composite_report = stage2_modify(suspect, isolation, config)
    t2 = time.perf_counter()
    pools = stage3_separate(suspect, composite_model, config)
    t3 = time.perf_counter()
    clean_model, clean_report = train_clean_model(suspect, pools, config)
    t4 = time.perf_counter()

    report = {
        "config": pipeline_config_to_json(config),
        "dataset": {
            "n": len(suspect),
            "image_shape": list(suspect.image_shape),
            "num_classes_base": suspect.num_classes_base,
        },
        "isolation": {
            "poison_indices": [int(i) for i in isolation.poison_isolated],
            "clean_indices": [int(i) for i in isolation.clean_isolated],
        },
        "pools": {
            "poison": [int(i) for i in pools.poison_pool],
            "clean": [int(i) for i in pools.clean_pool],
        },
        "decision_labels": [int(d) for d in pools.decision_labels],
        "models": {
            "composite": {
                "final_loss": composite_report.epoch_losses[-1],
                "train_accuracy": composite_report.final_train_accuracy,
            },
            "clean": {
                "final_loss": clean_report.epoch_losses[-1],
                "train_accuracy": clean_report.final_train_accuracy,
            },
        },
        "timings": {
            "stage1_seconds": t1 - t0,
            "stage2_seconds": t2 - t1,
            "stage3_seconds": t3 - t2,
            "clean_train_seconds": t4 - t3,
            "total_seconds": t4 - t0,
        },
    }
    return PipelineResult(
        pool_assignment=pools,
        clean_model=clean_model,
        report=report,
        score_table=table,
        isolation=isolation,
        filter_models=filter_models,
        composite_model=composite_model,
        modified_dataset=modified,
    )


def classifier_config_to_json(config: ClassifierConfig) -> dict:
    return {
        "architecture": config.architecture,
        "conv_channels": list(config.conv_channels),
        "dense_size": config.dense_size,
        "hidden_sizes": list(config.hidden_sizes),
        "num_classes": config.num_classes,
        "epochs": config.epochs,
        "batch_size": config.batch_size,
        "learning_rate": config.learning_rate,
        "lr_decay_epochs": list(config.lr_decay_epochs),
        "lr_decay_factor": config.lr_decay_factor,
        "momentum": config.momentum,
        "seed": config.seed,
    }


def classifier_config_from_json(doc: dict) -> ClassifierConfig:
    doc = dict(doc)
    for key in ("conv_channels", "hidden_sizes", "lr_decay_epochs"):
        if key in doc:
            doc[key] = tuple(doc[key])
    return ClassifierConfig(**doc)


def pipeline_config_to_json(config: PipelineConfig) -> dict:
    return {
        "t_early": config.t_early,
        "a_p": config.a_p,
        "a_c": config.a_c,
        "benign_trigger": config.benign_trigger.to_json(),
        "n_filters": config.n_filters,
        "filter_train_config": classifier_config_to_json(config.filter_train_config),
        "composite_train_config": classifier_config_to_json(config.composite_train_config),
        "clean_train_config": classifier_config_to_json(config.clean_train_config),
        "seed": config.seed,
    }


def pipeline_config_from_json(doc: dict) -> PipelineConfig:
    doc = dict(doc)
    if "benign_trigger" in doc:
        doc["benign_trigger"] = TriggerSpec.from_json(doc["benign_trigger"])
    for key in ("filter_train_config", "composite_train_config", "clean_train_config"):
        if key in doc:
            doc[key] = classifier_config_from_json(doc[key])
    return PipelineConfig(**doc)
