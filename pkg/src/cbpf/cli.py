"""Command-line experiment harness.

Subcommands:
  poison  materialize a poisoned training set plus ground-truth manifest
  defend  run the three-stage defense on a poisoned set, emit a report
  sweep   repeat the defense along one axis (a_p, a_c, or rate)
  eval    score a saved model checkpoint on a dataset
  report  render pipeline-report JSON files as a markdown table

Config files are JSON with a `schema_version` field; command-line flags
override file values, which override built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import presets
from .attacks import (
    PoisonManifest,
    TriggerSpec,
    check_benign_disjoint,
    poison_dataset,
)
from .classifier import load_model, save_model
from .dataset import Dataset, SynthSpec, generate_synthetic, load_binary, save_binary, split_train_test
from .errors import CbpfError, ConfigError
from .metrics import DefenseScores, asr, car, save_metrics_csv, tpr_fpr
from .pipeline import (
    PipelineConfig,
    pipeline_config_from_json,
    pipeline_config_to_json,
    run_pipeline,
)
from .scoring import save_scores_csv
from .seeding import derive_seed

SCHEMA_VERSION = 1
SWEEP_AXES = ("a_p", "a_c", "rate")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one experiment needs: data source, attack, pipeline, eval split."""

    dataset: dict = field(default_factory=lambda: {"synthetic": {"preset": "desk10"}})
    attack: dict = field(default_factory=lambda: {"kind": "badnet_patch", "target_label": 0,
                                                  "rate": 0.10, "clean_label": False})
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    eval: dict = field(default_factory=lambda: {"test_per_class": presets.DESK10_TEST_PER_CLASS})
    out_dir: str = "runs/out"
    seed: int = 0

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "dataset": self.dataset,
            "attack": self.attack,
            "pipeline": pipeline_config_to_json(self.pipeline),
            "eval": self.eval,
            "out_dir": self.out_dir,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ExperimentConfig":
        version = doc.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported config schema_version {version}")
        known = {"schema_version", "dataset", "attack", "pipeline", "eval", "out_dir", "seed"}
        bad = set(doc) - known
        if bad:
            raise ConfigError(f"unknown config fields {sorted(bad)}")
        kwargs = {}
        for name in ("dataset", "attack", "eval", "out_dir", "seed"):
            if name in doc:
                kwargs[name] = doc[name]
        if "pipeline" in doc:
            kwargs["pipeline"] = pipeline_config_from_json(doc["pipeline"])
        return cls(**kwargs)


def load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    with open(path) as fh:
        return ExperimentConfig.from_json(json.load(fh))


def attack_spec(config: ExperimentConfig) -> TriggerSpec:
    doc = dict(config.attack)
    for key in ("target_label", "rate", "clean_label"):
        doc.pop(key, None)
    return TriggerSpec.from_json(doc)


def _attack_fields(config: ExperimentConfig) -> tuple[int, float, bool]:
    a = config.attack
    return int(a.get("target_label", 0)), float(a.get("rate", 0.10)), bool(a.get("clean_label", False))


def build_base_data(config: ExperimentConfig) -> tuple[Dataset, Dataset | None]:
    """(train, test) from the config's dataset/eval blocks; test may be None."""
    src = config.dataset
    if ("synthetic" in src) == ("path" in src):
        raise ConfigError("dataset block needs exactly one of 'synthetic' or 'path'")
    if "synthetic" in src:
        synth = dict(src["synthetic"])
        test_per_class = int(config.eval.get("test_per_class", 0)) if config.eval else 0
        if synth.get("preset") == "desk10":
            noise = int(synth.get("noise_amplitude", presets.DESK10_NOISE))
            pool = generate_synthetic(
                SynthSpec(
                    num_classes=10,
                    samples_per_class=presets.DESK10_TRAIN_PER_CLASS + test_per_class,
                    class_pattern_seed=derive_seed(config.seed, "data"),
                    noise_amplitude=noise,
                )
            )
        elif "preset" in synth:
            raise ConfigError(f"unknown synthetic preset {synth['preset']!r}")
        else:
            synth.setdefault("class_pattern_seed", derive_seed(config.seed, "data"))
            pool = generate_synthetic(SynthSpec(**synth))
        if test_per_class:
            return split_train_test(pool, test_per_class)
        return pool, None
    train = load_binary(src["path"])
    if config.eval and "test_path" in config.eval:
        return train, load_binary(config.eval["test_path"])
    if config.eval and "test_split" in config.eval:
        frac = float(config.eval["test_split"])
        if not 0.0 < frac < 1.0:
            raise ConfigError("eval.test_split must be in (0, 1)")
        rng = np.random.default_rng(derive_seed(config.seed, "split"))
        perm = rng.permutation(len(train))
        n_test = int(frac * len(train))
        from .dataset import subset

        return subset(train, np.sort(perm[n_test:])), subset(train, np.sort(perm[:n_test]))
    return train, None


def _poison_paths(out: Path) -> dict[str, Path]:
    return {
        "train_poisoned": out / "train_poisoned.cbpf",
        "train_clean": out / "train_clean.cbpf",
        "test_clean": out / "test_clean.cbpf",
        "manifest": out / "manifest.json",
    }


def cmd_poison(config: ExperimentConfig) -> int:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train, test = build_base_data(config)
    spec = attack_spec(config)
    target, rate, clean_label = _attack_fields(config)
    poisoned, manifest = poison_dataset(
        train, spec, target, rate, clean_label=clean_label, seed=derive_seed(config.seed, "poison")
    )
    paths = _poison_paths(out)
    save_binary(poisoned, paths["train_poisoned"])
    save_binary(train, paths["train_clean"])
    if test is not None:
        save_binary(test, paths["test_clean"])
    manifest.save(paths["manifest"])
    with open(out / "config.json", "w") as fh:
        json.dump(config.to_json(), fh, indent=2)
        fh.write("\n")
    print(
        f"poisoned {len(manifest.poisoned_indices)}/{len(train)} samples "
        f"({spec.kind}, target {target}) -> {paths['train_poisoned']}"
    )
    return 0


def cmd_defend(config: ExperimentConfig) -> int:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = _poison_paths(out)
    if not paths["train_poisoned"].exists():
        raise ConfigError(f"missing poisoned dataset {paths['train_poisoned']}; run `poison` first")
    suspect = load_binary(paths["train_poisoned"])
    manifest = PoisonManifest.load(paths["manifest"]) if paths["manifest"].exists() else None
    test = load_binary(paths["test_clean"]) if paths["test_clean"].exists() else None

    # The manifest never feeds the defense; it only gates this sanity check
    # and the TPR/FPR evaluation afterwards.
    if manifest is not None:
        check_benign_disjoint(
            manifest.attack, config.pipeline.benign_trigger, suspect.height, suspect.width
        )

    result = run_pipeline(suspect, config.pipeline)

    tpr = fpr = asr_value = car_value = None
    if manifest is not None:
        tpr, fpr = tpr_fpr(result.pool_assignment, manifest)
    if test is not None:
        spec = attack_spec(config)
        target, _, _ = _attack_fields(config)
        asr_value = asr(result.clean_model, test, spec, target)
        car_value = car(result.clean_model, test)
    scores = DefenseScores(tpr=tpr, fpr=fpr, asr=asr_value, car=car_value)

    save_scores_csv(result.score_table, out / "scores.csv")
    save_model(result.clean_model, out / "clean_model.ckpt")
    save_metrics_csv(scores, out / "metrics.csv")
    report = dict(result.report)
    report["config"] = config.to_json()
    report["score_csv_path"] = "scores.csv"
    report["clean_model_path"] = "clean_model.ckpt"
    report["metrics"] = scores.as_dict()
    with open(out / "report.json", "w") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    print(scores.summary_line())
    return 0


def cmd_sweep(config: ExperimentConfig, axis: str, values: list[float]) -> int:
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}, got {axis!r}")
    if not values:
        raise ConfigError("sweep needs at least one value")
    if sorted(values) != list(values):
        raise ConfigError("sweep values must be sorted ascending")
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    rows = []
    for i, value in enumerate(values):
        try:
            run_config = _apply_axis(config, axis, value)
            run_config = replace(
                run_config,
                out_dir=str(out / f"{axis}_{value:g}"),
                pipeline=replace(run_config.pipeline, seed=derive_seed(config.seed, "sweep", i)),
            )
            cmd_poison(run_config)
            cmd_defend(run_config)
            with open(Path(run_config.out_dir) / "report.json") as fh:
                metrics = json.load(fh)["metrics"]
            rows.append((value, metrics))
        except (CbpfError, ValueError, OSError) as err:
            rows.append((value, {"error": str(err)}))

    csv_path = out / f"sweep_{axis}.csv"
    md_path = out / f"sweep_{axis}.md"
    with open(csv_path, "w") as fh:
        fh.write("axis_value,tpr,fpr,asr,car\n")
        for value, metrics in rows:
            if "error" in metrics:
                fh.write(f"{value:g},ERROR,ERROR,ERROR,ERROR\n")
            else:
                cells = [_fmt(metrics.get(k)) for k in ("tpr", "fpr", "asr", "car")]
                fh.write(f"{value:g}," + ",".join(cells) + "\n")
    with open(md_path, "w") as fh:
        fh.write(f"| {axis} | TPR | FPR | ASR | CAR |\n|---|---|---|---|---|\n")
        for value, metrics in rows:
            if "error" in metrics:
                fh.write(f"| {value:g} | ERROR | ERROR | ERROR | ERROR |\n")
            else:
                cells = [_fmt(metrics.get(k)) for k in ("tpr", "fpr", "asr", "car")]
                fh.write(f"| {value:g} | " + " | ".join(cells) + " |\n")
    print(f"wrote {csv_path} and {md_path} ({len(rows)} rows)")
    return 0


def _fmt(value) -> str:
    return "NA" if value is None else f"{value:.4f}"


def _apply_axis(config: ExperimentConfig, axis: str, value: float) -> ExperimentConfig:
    if axis == "rate":
        attack = dict(config.attack)
        attack["rate"] = value
        return replace(config, attack=attack)
    return replace(config, pipeline=replace(config.pipeline, **{axis: value}))


def cmd_eval(config: ExperimentConfig, model_path: str, dataset_path: str, with_attack: bool) -> int:
    model = load_model(model_path)
    testset = load_binary(dataset_path)
    car_value = car(model, testset)
    asr_value = None
    if with_attack:
        target, _, _ = _attack_fields(config)
        asr_value = asr(model, testset, attack_spec(config), target)
    scores = DefenseScores(tpr=None, fpr=None, asr=asr_value, car=car_value)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_metrics_csv(scores, out / "metrics.csv")
    print(scores.summary_line())
    return 0


def cmd_report(report_paths: list[str], out_path: str | None) -> int:
    lines = ["| Attack | TPR | FPR |", "|---|---|---|"]
    for path in report_paths:
        with open(path) as fh:
            doc = json.load(fh)
        kind = doc.get("config", {}).get("attack", {}).get("kind", "unknown")
        metrics = doc.get("metrics", {})
        lines.append(f"| {kind} | {_fmt(metrics.get('tpr'))} | {_fmt(metrics.get('fpr'))} |")
    table = "\n".join(lines) + "\n"
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(table)
    print(table, end="")
    return 0


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON experiment config")
    parser.add_argument("--seed", type=int, help="override config seed")
    parser.add_argument("--out", help="override output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cbpf", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("poison", help="poison a training set and write it with its manifest")
    _add_common(p)
    p.add_argument("--kind", help="attack trigger kind override")
    p.add_argument("--rate", type=float, help="poisoning rate override")
    p.add_argument("--target", type=int, help="target label override")
    p.add_argument("--clean-label", action="store_true", default=None,
                   help="poison only target-class samples, keep labels")

    p = sub.add_parser("defend", help="run the defense on a previously poisoned run directory")
    _add_common(p)
    p.add_argument("--a_p", type=float, help="poison isolation rate override")
    p.add_argument("--a_c", type=float, help="clean isolation rate override")
    p.add_argument("--t_early", type=int, help="filter-model epochs override")
    p.add_argument("--n_filters", type=int, help="number of filter models override")

    p = sub.add_parser("sweep", help="run one defense per axis value")
    _add_common(p)
    p.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p.add_argument("--values", required=True,
                   help="comma-separated ascending values, e.g. 0.01,0.02,0.03")

    p = sub.add_parser("eval", help="evaluate a saved model checkpoint")
    _add_common(p)
    p.add_argument("--model", required=True, help="model checkpoint path")
    p.add_argument("--dataset", required=True, help="clean dataset file to evaluate on")
    p.add_argument("--with-attack", action="store_true",
                   help="also compute ASR using the config's attack block")

    p = sub.add_parser("report", help="render report JSON files as a markdown table")
    p.add_argument("reports", nargs="+", help="pipeline report JSON paths")
    p.add_argument("--out", help="write the markdown table here as well")
    return parser


def _configure(args) -> ExperimentConfig:
    config = load_config(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed,
                         pipeline=replace(config.pipeline, seed=args.seed))
    if args.out is not None:
        config = replace(config, out_dir=args.out)
    return config


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            return cmd_report(args.reports, args.out)
        config = _configure(args)
        if args.command == "poison":
            attack = dict(config.attack)
            if args.kind is not None:
                attack["kind"] = args.kind
            if args.rate is not None:
                attack["rate"] = args.rate
            if args.target is not None:
                attack["target_label"] = args.target
            if args.clean_label is not None:
                attack["clean_label"] = True
            config = replace(config, attack=attack)
            attack_spec(config)  # fail fast on an unknown kind
            return cmd_poison(config)
        if args.command == "defend":
            overrides = {
                name: getattr(args, name)
                for name in ("a_p", "a_c", "t_early", "n_filters")
                if getattr(args, name) is not None
            }
            if overrides:
                config = replace(config, pipeline=replace(config.pipeline, **overrides))
            return cmd_defend(config)
        if args.command == "sweep":
            values = [float(v) for v in args.values.split(",") if v.strip()]
            return cmd_sweep(config, args.axis, values)
        if args.command == "eval":
            return cmd_eval(config, args.model, args.dataset, args.with_attack)
        raise ConfigError(f"unknown command {args.command!r}")
    except CbpfError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
