"""Classifier pipeline forward/backward and the four training losses.

Pixel feature vectors x are projected onto the detector rows of an
orthonormal basis, standardized per direction (batch statistics while
training, running averages otherwise), and squashed through a sigmoid with
a shared bias b and margin M = 1/t^2:

    y_i = sigmoid((z_i - b) * t^2),   z_i = (w_i . x - mu_i) / sqrt(var_i + eps)

The four losses are: row-entropy sparsity of the normalized confidences,
the max-activation term pushing the dominant confidence toward 1, the
inactive-classifier penalty keeping every detector above its activity
threshold nu_i, and the margin term t^2. All gradients are analytic and
certified against central finite differences in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import kernels
from .errors import NumericalError
from .orthobasis import basis_from_params, grad_pullback

TABLE_WEIGHTS = (2.0, 5.0, 5.0, 0.5)  # default loss mix: s, ma, ic, mm


@dataclass(frozen=True)
class LossWeights:
    sparsity: float = TABLE_WEIGHTS[0]
    max_activation: float = TABLE_WEIGHTS[1]
    inactive: float = TABLE_WEIGHTS[2]
    margin: float = TABLE_WEIGHTS[3]

    def validate(self) -> None:
        for name in ("sparsity", "max_activation", "inactive", "margin"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be nonnegative")


@dataclass(frozen=True)
class ClassifierParams:
    """Shared bias and margin parameter in the standardized space."""

    bias: float = 0.5
    t: float = 0.5
    weights: LossWeights = field(default_factory=LossWeights)

    @property
    def margin(self) -> float:
        if self.t == 0.0:
            raise NumericalError("margin M = 1/t^2 undefined at t = 0")
        return 1.0 / (self.t * self.t)


@dataclass(frozen=True)
class PartitionConfig:
    """Partition scheme distributing the activity budget tau over detectors."""

    count: int = 1
    alpha: tuple[float, ...] = (1.0,)
    omega: tuple[float, ...] = (1.0,)
    tau: float = 0.7
    gamma: float = 2.5

    def validate(self) -> None:
        n = self.count
        if n < 1:
            raise ValueError("partition count must be >= 1")
        if len(self.alpha) != n or len(self.omega) != n:
            raise ValueError("alpha and omega must both have one entry per partition")
        if abs(sum(self.alpha) - 1.0) > 1e-9:
            raise ValueError("alpha coefficients must sum to 1")
        if any(a2 > a1 + 1e-12 for a1, a2 in zip(self.alpha, self.alpha[1:])):
            raise ValueError("alpha coefficients must be non-increasing")
        if any(w <= 0 for w in self.omega):
            raise ValueError("omega weights must be positive")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        if self.gamma <= 1.0:
            raise ValueError("gamma must exceed 1")


def partition_sizes(n_detectors: int, cfg: PartitionConfig) -> np.ndarray:
    """Integer partition sizes n_mu with floor + remainder correction.

    The last R partitions (those with index mu >= N - R) absorb one extra
    detector each so that the sizes always sum to n_detectors.
    """
    cfg.validate()
    if n_detectors < cfg.count:
        raise ValueError("need at least one detector per partition")
    floors = np.array([math.floor(a * n_detectors) for a in cfg.alpha], dtype=np.int64)
    remainder = n_detectors - int(floors.sum())
    if remainder < 0 or remainder > cfg.count:
        raise ValueError("alpha coefficients are inconsistent with detector count")
    sizes = floors.copy()
    if remainder > 0:
        sizes[cfg.count - remainder :] += 1
    return sizes


def partition_thresholds(n_detectors: int, cfg: PartitionConfig) -> np.ndarray:
    """Per-detector activity thresholds nu_i; sums exactly to tau.

    Detectors are assigned to partitions in consecutive index blocks and
    every detector in partition mu gets nu = omega_mu * tau / sum(omega * n).
    """
    sizes = partition_sizes(n_detectors, cfg)
    omega = np.asarray(cfg.omega, dtype=np.float64)
    denom = float((omega * sizes).sum())
    nu = np.repeat(omega, sizes) * (cfg.tau / denom)
    return nu


@dataclass
class StandardizationState:
    """Per-direction running mean/variance (batch-norm style, no affine)."""

    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5
    initialized: bool = False

    @classmethod
    def create(cls, n_detectors: int, momentum: float = 0.1, eps: float = 1e-5):
        return cls(
            mean=np.zeros(n_detectors),
            var=np.ones(n_detectors),
            momentum=momentum,
            eps=eps,
        )

    def update(self, batch_mean: np.ndarray, batch_var_unbiased: np.ndarray) -> None:
        m = self.momentum
        self.mean = (1.0 - m) * self.mean + m * batch_mean
        self.var = (1.0 - m) * self.var + m * batch_var_unbiased
        self.initialized = True

    def scale(self) -> np.ndarray:
        return np.sqrt(self.var + self.eps)


class _ForwardCache:
    __slots__ = ("x", "z", "scale", "params", "batch_stats")

    def __init__(self, x, z, scale, params, batch_stats):
        self.x = x
        self.z = z
        self.scale = scale
        self.params = params
        self.batch_stats = batch_stats


@dataclass
class ActivationBatch:
    """Confidences y, their row-normalization q, and the backward cache."""

    y: np.ndarray
    q: np.ndarray
    cache: _ForwardCache


def forward(
    x: np.ndarray,
    w_rows: np.ndarray,
    params: ClassifierParams,
    std_state: StandardizationState,
    batch_stats: bool = True,
) -> ActivationBatch:
    """Project, standardize and classify one [B, D] pixel batch.

    In batch-stats mode the standardization uses the batch's own mean and
    biased variance and folds them into the running averages; otherwise the
    frozen running statistics apply.
    """
    x = np.asarray(x, dtype=np.float64)
    w_rows = np.asarray(w_rows, dtype=np.float64)
    if x.ndim != 2 or w_rows.ndim != 2 or x.shape[1] != w_rows.shape[1]:
        raise ValueError(f"shape mismatch: x {x.shape} vs w {w_rows.shape}")
    if not np.all(np.isfinite(x)):
        raise NumericalError("non-finite values in input batch")
    z0 = x @ w_rows.T
    if batch_stats:
        if x.shape[0] < 2:
            raise ValueError("batch-stats mode needs at least 2 rows")
        mu = z0.mean(axis=0)
        var = z0.var(axis=0)
        n = z0.shape[0]
        std_state.update(mu, var * n / (n - 1))
    else:
        if not std_state.initialized:
            raise NumericalError("standardization statistics not populated")
        mu = std_state.mean
        var = std_state.var
    scale = np.sqrt(var + std_state.eps)
    z = (z0 - mu) / scale
    t_sq = params.t * params.t
    y = expit((z - params.bias) * t_sq)
    np.clip(y, kernels.CLAMP_LO, kernels.CLAMP_HI, out=y)
    s = y.sum(axis=1, keepdims=True) + kernels.Q_EPS
    q = y / s
    return ActivationBatch(y, q, _ForwardCache(x, z, scale, params, batch_stats))


def sparsity_loss(act: ActivationBatch) -> tuple[float, np.ndarray]:
    return kernels.sparsity_loss_grad(act.y)


def max_activation_loss(act: ActivationBatch) -> tuple[float, np.ndarray]:
    return kernels.max_activation_loss_grad(act.y)


def inactive_classifier_loss(
    act: ActivationBatch, nu: np.ndarray, gamma: float
) -> tuple[float, np.ndarray]:
    return kernels.inactive_loss_grad(act.y, nu, gamma)


def max_margin_loss(t: float) -> tuple[float, float]:
    return t * t, 2.0 * t


def backward(
    act: ActivationBatch, dl_dy: np.ndarray
) -> tuple[np.ndarray, float, float]:
    """Push dL/dy back through sigmoid and standardization.

    Returns (dL/dW_rows, dL/db, dL/dt). In batch-stats mode the gradient
    flows through the batch mean and variance (full batch-norm backward);
    with frozen statistics they are constants.
    """
    c = act.cache
    y, z, t, b = act.y, c.z, c.params.t, c.params.bias
    n_rows = y.shape[0]
    t_sq = t * t
    d_pre = dl_dy * y * (1.0 - y)
    g_t = float((d_pre * (z - b)).sum() * 2.0 * t)
    g_b = float(-t_sq * d_pre.sum())
    dl_dz = d_pre * t_sq
    if c.batch_stats:
        col_sum = dl_dz.sum(axis=0)
        zdot = (dl_dz * z).sum(axis=0)
        dl_dz0 = (n_rows * dl_dz - col_sum - z * zdot) / (n_rows * c.scale)
    else:
        dl_dz0 = dl_dz / c.scale
    dl_dw = dl_dz0.T @ c.x
    return dl_dw, g_b, g_t


@dataclass
class TotalLoss:
    total: float
    sparsity: float
    max_activation: float
    inactive: float
    margin: float
    grad_theta: np.ndarray
    grad_bias: float
    grad_t: float

    def components(self) -> dict[str, float]:
        return {
            "total": self.total,
            "sparsity": self.sparsity,
            "max_activation": self.max_activation,
            "inactive": self.inactive,
            "margin": self.margin,
        }


def total_loss_and_grads(
    x: np.ndarray,
    theta: np.ndarray,
    params: ClassifierParams,
    std_state: StandardizationState,
    nu: np.ndarray,
    gamma: float,
    n_detectors: int | None = None,
    batch_stats: bool = True,
) -> TotalLoss:
    """Weighted total of the four losses with gradients over (theta, b, t)."""
    x = np.asarray(x, dtype=np.float64)
    dim = x.shape[1]
    n_det = dim if n_detectors is None else n_detectors
    if n_det > dim:
        raise ValueError("cannot have more detectors than dimensions")
    w = basis_from_params(theta, dim)
    act = forward(x, w[:n_det], params, std_state, batch_stats=batch_stats)

    lam = params.weights
    ls, gs = sparsity_loss(act)
    lma, gma = max_activation_loss(act)
    lic, gic = inactive_classifier_loss(act, nu, gamma)
    lmm, gmm = max_margin_loss(params.t)
    total = (
        lam.sparsity * ls
        + lam.max_activation * lma
        + lam.inactive * lic
        + lam.margin * lmm
    )
    dl_dy = lam.sparsity * gs + lam.max_activation * gma + lam.inactive * gic
    dl_dw_rows, g_b, g_t = backward(act, dl_dy)
    g_t += lam.margin * gmm
    dl_dw = np.zeros((dim, dim))
    dl_dw[:n_det] = dl_dw_rows
    g_theta = grad_pullback(dl_dw, theta, dim)
    if not np.isfinite(total):
        raise NumericalError("loss became non-finite")
    return TotalLoss(total, ls, lma, lic, lmm, g_theta, g_b, g_t)


def recover_classifier_params(
    std_state: StandardizationState,
    bias: float,
    t: float,
    w_rows: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Invert standardization: per-direction (b_i, M_i) in raw projection space.

    With s_i = sqrt(var_i + eps): b_i = mu_i + s_i * b and M_i = s_i / t^2,
    so sigmoid((w_i.x - b_i)/M_i) reproduces the standardized-space
    confidence for every x.
    """
    if not std_state.initialized:
        raise NumericalError("standardization statistics not populated")
    if t == 0.0:
        raise NumericalError("margin undefined at t = 0")
    n_det = w_rows.shape[0]
    if std_state.mean.shape[0] != n_det:
        raise ValueError("standardization state does not match detector count")
    s = std_state.scale()
    margin = 1.0 / (t * t)
    return std_state.mean + s * bias, s * margin


def raw_confidence(
    x: np.ndarray, w_rows: np.ndarray, b_i: np.ndarray, m_i: np.ndarray
) -> np.ndarray:
    """sigmoid((x . w_i - b_i) / M_i) for recovered raw-space classifiers."""
    proj = np.asarray(x, dtype=np.float64) @ np.asarray(w_rows, dtype=np.float64).T
    return expit((proj - b_i) / m_i)
