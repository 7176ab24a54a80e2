"""Config-file-driven command line for the full pipeline.

Every command is a pure function of its configuration and input files and
writes a resolved-config copy next to its outputs. Exit codes: 0 success,
1 usage/config error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import csv
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import click
import numpy as np

from . import kernels
from .dissect import (
    Detectors,
    assign_labels,
    compute_iou_table,
    quantile_thresholds,
    save_labels_csv,
    validation_scores,
)
from .errors import ConfigError, DatasetError, NumericalError, TensorFormatError
from .losses import LossWeights, PartitionConfig
from .metrics import DetectorRow, InterpReport, emit_report, topk_activations
from .synth import SynthConfig, generate
from .tammes import solve_min_angle
from .tensorstore import load_concept_dataset, load_feature_dataset
from .trainer import BasisModel, TrainConfig, train_basis


def _section(doc: dict, allowed: dict, where: str) -> dict:
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    out = {}
    for key, value in doc.items():
        caster = allowed[key]
        try:
            out[key] = caster(value) if caster is not None else value
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{where}.{key}: {exc}") from exc
    return out


_TOP_KEYS = {
    "features": str,
    "concepts": str,
    "model": str,
    "out": str,
    "seed": int,
    "deterministic": bool,
    "synth": None,
    "train": None,
    "eval": None,
}

_SYNTH_KEYS = {
    "dim": int,
    "group_sizes": lambda v: tuple(int(x) for x in v),
    "n_images": int,
    "height": int,
    "width": int,
    "magnitude_low": float,
    "magnitude_high": float,
    "noise_sigma": float,
    "rotation_seed": int,
    "data_seed": int,
    "val_fraction": float,
}

_TRAIN_KEYS = {
    "epochs": int,
    "learning_rate": float,
    "beta1": float,
    "beta2": float,
    "adam_epsilon": float,
    "batch_size": int,
    "seed": int,
    "n_detectors": lambda v: None if v is None else int(v),
    "init_bias": float,
    "init_t": float,
    "weights": None,
    "partition": None,
}

_WEIGHT_KEYS = {
    "sparsity": float,
    "max_activation": float,
    "inactive": float,
    "margin": float,
}

_PARTITION_KEYS = {
    "count": int,
    "alpha": lambda v: tuple(float(x) for x in v),
    "omega": lambda v: tuple(float(x) for x in v),
    "tau": float,
    "gamma": float,
}

_EVAL_KEYS = {"quantile": float, "topk": int, "basis_name": str}


@dataclass
class RunConfig:
    features: Path | None = None
    concepts: Path | None = None
    model: Path | None = None
    out: Path = Path("out")
    seed: int | None = None
    deterministic: bool = False
    synth: SynthConfig | None = None
    train: TrainConfig | None = None
    quantile: float = 0.005
    topk: int = 4
    basis_name: str = "learned"
    raw: dict | None = None


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config root must be an object")
    top = _section(doc, _TOP_KEYS, str(path))
    root = path.parent

    cfg = RunConfig(raw=doc)
    if "features" in top:
        cfg.features = root / top["features"]
    if "concepts" in top:
        cfg.concepts = root / top["concepts"]
    if "model" in top:
        cfg.model = root / top["model"]
    if "out" in top:
        cfg.out = root / top["out"]
    cfg.seed = top.get("seed")
    cfg.deterministic = top.get("deterministic", False)
    if "synth" in top:
        cfg.synth = SynthConfig(**_section(top["synth"], _SYNTH_KEYS, "synth"))
    if "train" in top:
        tr = _section(top["train"], _TRAIN_KEYS, "train")
        weights = LossWeights(
            **_section(tr.pop("weights", {}), _WEIGHT_KEYS, "train.weights")
        )
        partition = PartitionConfig(
            **_section(tr.pop("partition", {}), _PARTITION_KEYS, "train.partition")
        )
        cfg.train = TrainConfig(weights=weights, partition=partition, **tr)
    if "eval" in top:
        ev = _section(top["eval"], _EVAL_KEYS, "eval")
        cfg.quantile = ev.get("quantile", cfg.quantile)
        cfg.topk = ev.get("topk", cfg.topk)
        cfg.basis_name = ev.get("basis_name", cfg.basis_name)
    return cfg


def _apply_overrides(cfg: RunConfig, out, seed, deterministic) -> RunConfig:
    if out is not None:
        cfg.out = Path(out)
    if seed is not None:
        cfg.seed = int(seed)
        if cfg.synth is not None:
            cfg.synth = SynthConfig(
                **{**cfg.synth.__dict__, "data_seed": int(seed)}
            )
        if cfg.train is not None:
            cfg.train = TrainConfig(**{**cfg.train.__dict__, "seed": int(seed)})
    if deterministic:
        cfg.deterministic = True
    if cfg.deterministic:
        # pin the fallback backend so outputs never depend on whether the
        # compiled extension happens to be importable
        kernels.set_backend("numpy")
    return cfg


def _write_resolved(cfg: RunConfig, command: str) -> None:
    cfg.out.mkdir(parents=True, exist_ok=True)
    doc = dict(cfg.raw or {})
    doc["_resolved"] = {
        "command": command,
        "out": str(cfg.out),
        "seed": cfg.seed,
        "deterministic": cfg.deterministic,
        "kernel_backend": kernels.backend_name(),
    }
    (cfg.out / "resolved_config.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True)
    )


def _require(cfg: RunConfig, *names: str):
    values = []
    for name in names:
        value = getattr(cfg, name)
        if value is None:
            raise ConfigError(f"config is missing required entry {name!r}")
        values.append(value)
    return values


def _load_datasets(cfg: RunConfig):
    features, concepts = _require(cfg, "features", "concepts")
    feature_ds = load_feature_dataset(features)
    concept_ds = load_concept_dataset(concepts, feature_ds)
    return feature_ds, concept_ds


def _model_detectors(model: BasisModel) -> Detectors:
    w, b_i, _ = model.raw_classifiers()
    return Detectors(w, b_i)


def _baseline_detectors(cfg: RunConfig, feature_ds) -> Detectors:
    eye = np.eye(feature_ds.layer_dim)
    bias = quantile_thresholds(feature_ds.subset("train"), eye, cfg.quantile)
    return Detectors.natural(feature_ds.layer_dim, bias)


def _score_report(cfg: RunConfig, detectors: Detectors, name: str) -> InterpReport:
    feature_ds, concept_ds = _load_datasets(cfg)
    table = compute_iou_table(detectors, feature_ds, concept_ds, "train")
    labeled = assign_labels(table)
    scores = validation_scores(detectors, labeled, feature_ds, concept_ds, "val")
    names = {c.concept_id: c.name for c in concept_ds.concepts}
    rows = [
        DetectorRow(
            i,
            int(labeled.labels[i]),
            names.get(int(labeled.labels[i]), ""),
            float(scores[i]),
            bool(labeled.degenerate[i]),
        )
        for i in range(detectors.count)
    ]
    table.save_csv(cfg.out / "iou_table.csv")
    save_labels_csv(labeled, concept_ds, cfg.out / "labels.csv")
    return InterpReport.build(name, rows)


@click.group()
def cli():
    """Interpretable-basis extraction pipeline."""


_shared = [
    click.option("--config", "config_path", required=True, type=click.Path()),
    click.option("--out", default=None, type=click.Path()),
    click.option("--seed", default=None, type=int),
    click.option("--deterministic", is_flag=True, default=False),
]


def _with_shared(fn):
    for opt in reversed(_shared):
        fn = opt(fn)
    return fn


def _prepare(config_path, out, seed, deterministic, command) -> RunConfig:
    cfg = _apply_overrides(load_run_config(config_path), out, seed, deterministic)
    _write_resolved(cfg, command)
    return cfg


@cli.command()
@_with_shared
def synth(config_path, out, seed, deterministic):
    """Generate a synthetic dataset with known ground truth."""
    cfg = _prepare(config_path, out, seed, deterministic, "synth")
    if cfg.synth is None:
        raise ConfigError("config has no 'synth' section")
    generate(cfg.synth, cfg.out)
    click.echo(f"dataset written to {cfg.out}")


@cli.command()
@_with_shared
def train(config_path, out, seed, deterministic):
    """Train a basis on the train split of the feature dataset."""
    cfg = _prepare(config_path, out, seed, deterministic, "train")
    if cfg.train is None:
        raise ConfigError("config has no 'train' section")
    (features,) = _require(cfg, "features")
    feature_ds = load_feature_dataset(features)
    model = train_basis(feature_ds, cfg.train)
    bundle = cfg.out / "model"
    model.save(bundle)
    from .orthobasis import orthonormality_defect

    click.echo(
        f"model written to {bundle} "
        f"(orthonormality defect {orthonormality_defect(model.basis()):.2e})"
    )


@cli.command()
@_with_shared
def label(config_path, out, seed, deterministic):
    """Compute the train-split IoU table and assign labels."""
    cfg = _prepare(config_path, out, seed, deterministic, "label")
    (model_dir,) = _require(cfg, "model")
    feature_ds, concept_ds = _load_datasets(cfg)
    detectors = _model_detectors(BasisModel.load(model_dir))
    table = compute_iou_table(detectors, feature_ds, concept_ds, "train")
    labeled = assign_labels(table)
    table.save_csv(cfg.out / "iou_table.csv")
    save_labels_csv(labeled, concept_ds, cfg.out / "labels.csv")
    click.echo(f"labels written to {cfg.out / 'labels.csv'}")


@cli.command()
@_with_shared
def score(config_path, out, seed, deterministic):
    """Label on the train split and score on the val split."""
    cfg = _prepare(config_path, out, seed, deterministic, "score")
    (model_dir,) = _require(cfg, "model")
    detectors = _model_detectors(BasisModel.load(model_dir))
    report = _score_report(cfg, detectors, cfg.basis_name)
    emit_report(report, cfg.out)
    click.echo(
        f"{report.basis_name}: score1={report.score1:.4f} score2={report.score2:.4f}"
    )


@cli.command()
@_with_shared
def baseline(config_path, out, seed, deterministic):
    """Score the natural basis with top-quantile thresholds."""
    cfg = _prepare(config_path, out, seed, deterministic, "baseline")
    (features,) = _require(cfg, "features")
    feature_ds = load_feature_dataset(features)
    detectors = _baseline_detectors(cfg, feature_ds)
    report = _score_report(cfg, detectors, "baseline")
    emit_report(report, cfg.out)
    click.echo(
        f"baseline: score1={report.score1:.4f} score2={report.score2:.4f}"
    )


@cli.command()
@click.option("--vectors", "-i", "i_values", required=True, type=str,
              help="comma-separated detector counts")
@click.option("--dims", "-d", "d_values", required=True, type=str,
              help="comma-separated dimensionalities, paired with --vectors")
@click.option("--seed", default=0, type=int)
@click.option("--iterations", default=1500, type=int)
@click.option("--restarts", default=5, type=int)
@click.option("--mode", default="softmin", type=click.Choice(["softmin", "hardmin"]))
@click.option("--out", required=True, type=click.Path())
def tammes(i_values, d_values, seed, iterations, restarts, mode, out):
    """Solve min-angle embeddings over a grid of (vectors, dims) pairs."""
    try:
        i_list = [int(x) for x in i_values.split(",")]
        d_list = [int(x) for x in d_values.split(",")]
    except ValueError as exc:
        raise ConfigError(f"bad grid values: {exc}") from exc
    if len(i_list) != len(d_list):
        raise ConfigError("--vectors and --dims must pair up")
    out_path = Path(out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["vectors", "dim", "min_deg", "max_deg", "mean_deg", "std_deg"]
        )
        for n_vec, dim in zip(i_list, d_list):
            result = solve_min_angle(
                n_vec, dim, seed=seed, iterations=iterations,
                restarts=restarts, mode=mode,
            )
            s = result.stats
            writer.writerow(
                [n_vec, dim, f"{s.min:.4f}", f"{s.max:.4f}",
                 f"{s.mean:.4f}", f"{s.std:.4f}"]
            )
            click.echo(f"I={n_vec} D={dim}: min angle {s.min:.2f} deg")
    click.echo(f"stats written to {out_path}")


@cli.command()
@click.option("--inputs", required=True, multiple=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
def report(inputs, out):
    """Merge report.json files into one comparison report."""
    reports = []
    for path in inputs:
        doc = json.loads(Path(path).read_text())
        reports.extend(InterpReport.from_summary(entry) for entry in doc)
    if not reports:
        raise DatasetError("no reports to merge")
    emit_report(reports, out)
    click.echo(f"comparison written to {out}")


@cli.command()
@_with_shared
def topk(config_path, out, seed, deterministic):
    """List the top-k activating pixels per detector on the val split."""
    cfg = _prepare(config_path, out, seed, deterministic, "topk")
    (model_dir, features) = _require(cfg, "model", "features")
    model = BasisModel.load(model_dir)
    feature_ds = load_feature_dataset(features)
    rankings = topk_activations(
        model.detector_rows(),
        feature_ds,
        cfg.topk,
        split="val",
        std_mean=model.std.mean,
        std_scale=model.std.scale(),
    )
    path = cfg.out / "topk.csv"
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["detector", "rank", "image_id", "row", "col", "activation"])
        for i, ranking in enumerate(rankings):
            for rank, (image_id, (r, c), value) in enumerate(ranking):
                writer.writerow([i, rank, image_id, r, c, repr(value)])
    click.echo(f"top-{cfg.topk} listing written to {path}")


def main(argv: list[str] | None = None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.ClickException as exc:
        exc.show()
        return 1
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        return 1
    except (DatasetError, TensorFormatError) as exc:
        click.echo(f"data error: {exc}", err=True)
        return 2
    except NumericalError as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        return 3


if __name__ == "__main__":
    sys.exit(main())
