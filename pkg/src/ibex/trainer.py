"""Adam training loop producing an orthonormal detector basis.

The learnable parameters are the rotation parameters theta, the shared
bias b and the margin parameter t. Initialization matches the reference
recipe: W = I (theta = 0), b = 0.5, t = 0.5; Adam runs with betas
(0.9, 0.999), no learning-rate schedule.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensorstore
from .errors import ConfigError, NumericalError
from .losses import (
    ClassifierParams,
    LossWeights,
    PartitionConfig,
    StandardizationState,
    partition_thresholds,
    recover_classifier_params,
    total_loss_and_grads,
)
from .orthobasis import basis_from_params, check_orthonormal, n_params
from .tensorstore import FeatureDataset, iterate_pixel_batches


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    batch_size: int = 1024
    seed: int = 0
    n_detectors: int | None = None  # defaults to the layer dimensionality
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    init_bias: float = 0.5
    init_t: float = 0.5

    def validate(self, dim: int | None = None) -> None:
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 (batch statistics)")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if dim is not None and self.n_detectors is not None:
            if not 1 <= self.n_detectors <= dim:
                raise ConfigError("n_detectors must lie in [1, D]")
        self.partition.validate()
        self.weights.validate()


class AdamState:
    """First/second moment accumulators for a list of parameter arrays."""

    def __init__(self, params: list[np.ndarray]):
        self.step_count = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]


def adam_step(
    state: AdamState,
    params: list[np.ndarray],
    grads: list[np.ndarray],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> list[np.ndarray]:
    """One bias-corrected Adam update; returns new parameter arrays."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("param/grad/state group counts differ")
    state.step_count += 1
    k = state.step_count
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise ValueError(f"grad shape {g.shape} != param shape {p.shape}")
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g
        m_hat = state.m[i] / (1.0 - beta1**k)
        v_hat = state.v[i] / (1.0 - beta2**k)
        out.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
    return out


@dataclass
class EpochStats:
    epoch: int
    total: float
    sparsity: float
    max_activation: float
    inactive: float
    margin: float


@dataclass
class BasisModel:
    """Trained rotation parameters plus everything needed to reuse them."""

    theta: np.ndarray
    bias: float
    t: float
    std: StandardizationState
    dim: int
    n_detectors: int
    history: list[EpochStats] = field(default_factory=list)
    config: TrainConfig = field(default_factory=TrainConfig)

    def basis(self) -> np.ndarray:
        return basis_from_params(self.theta, self.dim)

    def detector_rows(self) -> np.ndarray:
        return self.basis()[: self.n_detectors]

    def raw_classifiers(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(w_rows, b_i, M_i) with bias/margin mapped back to raw projections."""
        w = self.detector_rows()
        b_i, m_i = recover_classifier_params(self.std, self.bias, self.t, w)
        return w, b_i, m_i

    def save(self, bundle_dir: str | Path) -> None:
        """Write the model.json / theta.uibf / mu.uibf / var.uibf bundle."""
        bundle = Path(bundle_dir)
        bundle.mkdir(parents=True, exist_ok=True)
        tensorstore.write_tensor(bundle / "theta.uibf", self.theta)
        tensorstore.write_tensor(bundle / "mu.uibf", self.std.mean)
        tensorstore.write_tensor(bundle / "var.uibf", self.std.var)
        doc = {
            "dim": self.dim,
            "n_detectors": self.n_detectors,
            "bias": self.bias,
            "t": self.t,
            "std": {
                "momentum": self.std.momentum,
                "eps": self.std.eps,
                "initialized": self.std.initialized,
            },
            "config": _config_doc(self.config),
        }
        (bundle / "model.json").write_text(json.dumps(doc, indent=2, sort_keys=True))
        with open(bundle / "history.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(
                ["epoch", "total", "sparsity", "max_activation", "inactive", "margin"]
            )
            for h in self.history:
                writer.writerow(
                    [h.epoch, repr(h.total), repr(h.sparsity),
                     repr(h.max_activation), repr(h.inactive), repr(h.margin)]
                )

    @classmethod
    def load(cls, bundle_dir: str | Path) -> "BasisModel":
        bundle = Path(bundle_dir)
        doc = json.loads((bundle / "model.json").read_text())
        theta = tensorstore.read_tensor(bundle / "theta.uibf").astype(np.float64)
        mean = tensorstore.read_tensor(bundle / "mu.uibf").astype(np.float64)
        var = tensorstore.read_tensor(bundle / "var.uibf").astype(np.float64)
        std = StandardizationState(
            mean=mean,
            var=var,
            momentum=doc["std"]["momentum"],
            eps=doc["std"]["eps"],
            initialized=doc["std"]["initialized"],
        )
        history = []
        hist_path = bundle / "history.csv"
        if hist_path.exists():
            with open(hist_path, newline="") as f:
                for row in csv.DictReader(f):
                    history.append(
                        EpochStats(
                            int(row["epoch"]), float(row["total"]),
                            float(row["sparsity"]), float(row["max_activation"]),
                            float(row["inactive"]), float(row["margin"]),
                        )
                    )
        return cls(
            theta=theta,
            bias=doc["bias"],
            t=doc["t"],
            std=std,
            dim=doc["dim"],
            n_detectors=doc["n_detectors"],
            history=history,
            config=_config_from_doc(doc.get("config", {})),
        )


def _config_doc(cfg: TrainConfig) -> dict:
    doc = asdict(cfg)
    doc["partition"] = asdict(cfg.partition)
    doc["weights"] = asdict(cfg.weights)
    return doc


def _config_from_doc(doc: dict) -> TrainConfig:
    if not doc:
        return TrainConfig()
    doc = dict(doc)
    part = doc.pop("partition", {})
    weights = doc.pop("weights", {})
    if "alpha" in part:
        part["alpha"] = tuple(part["alpha"])
    if "omega" in part:
        part["omega"] = tuple(part["omega"])
    return TrainConfig(
        partition=PartitionConfig(**part),
        weights=LossWeights(**weights),
        **doc,
    )


def train_basis(feature_ds: FeatureDataset, cfg: TrainConfig) -> BasisModel:
    """Optimize (theta, b, t) over the train split of ``feature_ds``.

    The basis stays orthonormal by construction; the residual is verified
    after every epoch. Runs are deterministic given (seed, config, dataset).
    """
    dim = feature_ds.layer_dim
    cfg.validate(dim)
    train_ds = feature_ds.subset("train")
    if len(train_ds) == 0:
        raise ConfigError("feature dataset has no train-split images")
    n_det = cfg.n_detectors if cfg.n_detectors is not None else dim

    nu = partition_thresholds(n_det, cfg.partition)
    theta = np.zeros(n_params(dim))
    bias = np.array(cfg.init_bias)
    t = np.array(cfg.init_t)
    std = StandardizationState.create(n_det)
    adam = AdamState([theta, bias, t])
    epoch_seeds = np.random.SeedSequence(cfg.seed).generate_state(max(cfg.epochs, 1))

    history: list[EpochStats] = []
    for epoch in range(cfg.epochs):
        sums = np.zeros(5)
        n_batches = 0
        for batch in iterate_pixel_batches(
            train_ds, cfg.batch_size, int(epoch_seeds[epoch])
        ):
            params = ClassifierParams(float(bias), float(t), cfg.weights)
            result = total_loss_and_grads(
                batch.astype(np.float64),
                theta,
                params,
                std,
                nu,
                cfg.partition.gamma,
                n_detectors=n_det,
                batch_stats=True,
            )
            theta, bias, t = adam_step(
                adam,
                [theta, bias, t],
                [result.grad_theta, np.array(result.grad_bias), np.array(result.grad_t)],
                cfg.learning_rate,
                cfg.beta1,
                cfg.beta2,
                cfg.adam_epsilon,
            )
            sums += (
                result.total,
                result.sparsity,
                result.max_activation,
                result.inactive,
                result.margin,
            )
            n_batches += 1
        check_orthonormal(basis_from_params(theta, dim))
        mean = sums / n_batches
        history.append(EpochStats(epoch, *(float(v) for v in mean)))
        if not np.all(np.isfinite(sums)):
            raise NumericalError(f"non-finite loss at epoch {epoch}: {mean}")

    return BasisModel(
        theta=theta,
        bias=float(bias),
        t=float(t),
        std=std,
        dim=dim,
        n_detectors=n_det,
        history=history,
        config=cfg,
    )
