"""Composite-backdoor poison filtering for image classifiers.

Poison a training set with a configurable backdoor, score samples by the gap
between their top two predicted probabilities under early-trained filter
models, isolate suspect fractions, turn them into a composite-trigger
training set with two extra classes, separate poison/clean pools with the
composite model, retrain on the clean pool, and report TPR/FPR/ASR/CAR.
"""

from .attacks import (
    PoisonManifest,
    TriggerSpec,
    apply_trigger,
    apply_trigger_batch,
    check_benign_disjoint,
    default_benign_trigger,
    poison_dataset,
)
from .classifier import (
    Classifier,
    ClassifierConfig,
    TrainReport,
    evaluate,
    load_model,
    predict_probs,
    save_model,
    train,
)
from .dataset import (
    Dataset,
    LabeledImage,
    SynthSpec,
    extend_label_space,
    generate_synthetic,
    load_binary,
    save_binary,
    split_train_test,
    subset,
)
from .metrics import DefenseScores, asr, car, tpr_fpr
from .pipeline import (
    PipelineConfig,
    PipelineResult,
    PoolAssignment,
    run_pipeline,
    stage1_filter,
    stage2_modify,
    stage3_separate,
    train_clean_model,
)
from .scoring import IsolationResult, ScoreTable, isolate, score_dataset, top2_diff

__version__ = "0.1.0"

__all__ = [
    "Classifier",
    "ClassifierConfig",
    "Dataset",
    "DefenseScores",
    "IsolationResult",
    "LabeledImage",
    "PipelineConfig",
    "PipelineResult",
    "PoisonManifest",
    "PoolAssignment",
    "ScoreTable",
    "SynthSpec",
    "TrainReport",
    "TriggerSpec",
    "apply_trigger",
    "apply_trigger_batch",
    "asr",
    "car",
    "check_benign_disjoint",
    "default_benign_trigger",
    "evaluate",
    "extend_label_space",
    "generate_synthetic",
    "isolate",
    "load_binary",
    "load_model",
    "poison_dataset",
    "predict_probs",
    "run_pipeline",
    "save_binary",
    "save_model",
    "score_dataset",
    "split_train_test",
    "stage1_filter",
    "stage2_modify",
    "stage3_separate",
    "subset",
    "top2_diff",
    "tpr_fpr",
    "train",
    "train_clean_model",
]
