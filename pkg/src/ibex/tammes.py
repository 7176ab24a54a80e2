"""Minimum-pairwise-angle embeddings of unit vectors (sphere packing).

Maximizing the minimum angle equals minimizing the maximum pairwise
cosine. The default solver descends a temperature-annealed log-sum-exp
surrogate of that maximum with Adam-updated rows renormalized each step;
a hard-min subgradient mode is available behind a flag. The best iterate
by true minimum angle is kept per restart and the best restart wins.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .trainer import AdamState, adam_step


@dataclass(frozen=True)
class AngleStats:
    min: float
    max: float
    mean: float
    std: float


@dataclass
class TammesResult:
    vectors: np.ndarray  # [I, D] unit rows
    stats: AngleStats
    restart_min_angles: list[float]  # best true min angle per restart
    best_restart: int


def pairwise_angle_stats(vectors: np.ndarray, tol: float = 1e-6) -> AngleStats:
    """Min/max/mean/population-std of all pairwise angles, in degrees."""
    v = np.asarray(vectors, dtype=np.float64)
    if v.ndim != 2 or v.shape[0] < 2:
        raise ValueError("need at least two vectors")
    norms = np.linalg.norm(v, axis=1)
    if np.max(np.abs(norms - 1.0)) > tol:
        raise ValueError("rows must be unit vectors")
    cos = np.clip(v @ v.T, -1.0, 1.0)
    iu = np.triu_indices(v.shape[0], k=1)
    angles = np.degrees(np.arccos(cos[iu]))
    return AngleStats(
        min=float(angles.min()),
        max=float(angles.max()),
        mean=float(angles.mean()),
        std=float(angles.std()),
    )


def _min_angle_deg(v: np.ndarray) -> float:
    cos = np.clip(v @ v.T, -1.0, 1.0)
    iu = np.triu_indices(v.shape[0], k=1)
    return float(np.degrees(np.arccos(np.max(cos[iu]))))


def _normalize_rows(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _surrogate_grad(v: np.ndarray, beta: float, hard: bool) -> np.ndarray:
    """Gradient of the (soft or hard) maximum pairwise cosine."""
    n = v.shape[0]
    cos = v @ v.T
    iu = np.triu_indices(n, k=1)
    if hard:
        k = int(np.argmax(cos[iu]))
        i, j = iu[0][k], iu[1][k]
        grad = np.zeros_like(v)
        grad[i] = v[j]
        grad[j] = v[i]
        return grad
    scores = beta * cos[iu]
    weights = np.exp(scores - scores.max())
    weights /= weights.sum()
    s = np.zeros((n, n))
    s[iu] = weights
    s += s.T
    return s @ v


def _solve_one(
    n_vectors: int,
    dim: int,
    rng: np.random.Generator,
    iterations: int,
    learning_rate: float,
    hard: bool,
    beta_start: float,
    beta_end: float,
) -> tuple[np.ndarray, float]:
    v = _normalize_rows(rng.standard_normal((n_vectors, dim)))
    best = v.copy()
    best_angle = _min_angle_deg(v)
    adam = AdamState([v])
    ratio = beta_end / beta_start
    for k in range(iterations):
        beta = beta_start * ratio ** (k / max(iterations - 1, 1))
        grad = _surrogate_grad(v, beta, hard)
        # tangent component only; radial motion is removed by renormalization
        grad -= (grad * v).sum(axis=1, keepdims=True) * v
        (v,) = adam_step(adam, [v], [grad], learning_rate)
        v = _normalize_rows(v)
        angle = _min_angle_deg(v)
        if angle > best_angle:
            best_angle = angle
            best = v.copy()
    return best, best_angle


def solve_min_angle(
    n_vectors: int,
    dim: int,
    seed: int = 0,
    iterations: int = 1500,
    restarts: int = 5,
    learning_rate: float = 0.03,
    mode: str = "softmin",
    beta_start: float = 10.0,
    beta_end: float = 1000.0,
) -> TammesResult:
    """Spread ``n_vectors`` unit vectors in R^dim, maximizing the min angle."""
    if n_vectors < 2:
        raise ValueError("need at least two vectors")
    if dim < 1:
        raise ValueError("dimension must be >= 1")
    if mode not in ("softmin", "hardmin"):
        raise ValueError(f"unknown mode {mode!r}")
    seeds = np.random.SeedSequence(seed).spawn(restarts)
    best_vecs: np.ndarray | None = None
    best_angle = -1.0
    best_idx = 0
    per_restart = []
    for r in range(restarts):
        vecs, angle = _solve_one(
            n_vectors,
            dim,
            np.random.default_rng(seeds[r]),
            iterations,
            learning_rate,
            mode == "hardmin",
            beta_start,
            beta_end,
        )
        per_restart.append(angle)
        if angle > best_angle:
            best_vecs, best_angle, best_idx = vecs, angle, r
    assert best_vecs is not None
    return TammesResult(
        vectors=best_vecs,
        stats=pairwise_angle_stats(best_vecs),
        restart_min_angles=per_restart,
        best_restart=best_idx,
    )
