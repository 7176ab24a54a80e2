"""Smooth parametrization of rotations via the Cayley transform.

A basis matrix W is parametrized by the strict upper triangle ``theta`` of a
skew-symmetric matrix A through W = (I + A)(I - A)^-1, which is orthogonal
with determinant +1 for every finite theta. All math here runs in double
precision regardless of the feature dtype.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericalError

ORTHO_TOL = 1e-10


def n_params(dim: int) -> int:
    """Number of free parameters for a ``dim`` x ``dim`` rotation."""
    return dim * (dim - 1) // 2


def skew_from_params(theta: np.ndarray, dim: int) -> np.ndarray:
    """Assemble the skew-symmetric A whose strict upper triangle is ``theta``.

    theta is laid out row-major: (0,1), (0,2), ..., (0,D-1), (1,2), ...
    """
    theta = np.asarray(theta, dtype=np.float64).ravel()
    if theta.shape[0] != n_params(dim):
        raise ValueError(
            f"theta has length {theta.shape[0]}, expected {n_params(dim)} for D={dim}"
        )
    a = np.zeros((dim, dim))
    iu = np.triu_indices(dim, k=1)
    a[iu] = theta
    return a - a.T


def params_from_skew(a: np.ndarray) -> np.ndarray:
    """Inverse of :func:`skew_from_params`."""
    a = np.asarray(a, dtype=np.float64)
    return a[np.triu_indices(a.shape[0], k=1)].copy()


def cayley(a: np.ndarray) -> np.ndarray:
    """Map a skew-symmetric matrix to a rotation: W = (I + A)(I - A)^-1."""
    a = np.asarray(a, dtype=np.float64)
    dim = a.shape[0]
    eye = np.eye(dim)
    try:
        # W (I - A) = I + A  =>  (I - A)^T W^T = (I + A)^T, and for skew A
        # the transposes are I + A and I - A respectively.
        w_t = np.linalg.solve(eye + a, eye - a)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"Cayley solve failed (input not skew?): {exc}") from exc
    return np.ascontiguousarray(w_t.T)


def basis_from_params(theta: np.ndarray, dim: int) -> np.ndarray:
    """Rotation matrix for a parameter vector; rows are basis directions."""
    return cayley(skew_from_params(theta, dim))


def orthonormality_defect(w: np.ndarray) -> float:
    """max |W^T W - I|, the orthonormality residual."""
    dim = w.shape[0]
    return float(np.max(np.abs(w.T @ w - np.eye(dim))))


def check_orthonormal(w: np.ndarray, tol: float = ORTHO_TOL) -> None:
    defect = orthonormality_defect(w)
    if defect > tol:
        raise NumericalError(f"basis lost orthonormality: defect {defect:.3e}")


def grad_pullback(dl_dw: np.ndarray, theta: np.ndarray, dim: int) -> np.ndarray:
    """Pull a gradient over W back to a gradient over theta.

    For W(A) = (I + A)(I - A)^-1 a perturbation dA moves W by
    (I + W) dA (I - A)^-1, so with G = dL/dW,

        dL/dA = (I + W)^T G (I - A)^-T = (I + W)^T G (I + A)^-1

    and dL/dtheta_k = (dL/dA)_{ij} - (dL/dA)_{ji} for the upper-triangle
    slot k = (i, j). Verified against central finite differences in tests.
    """
    dl_dw = np.asarray(dl_dw, dtype=np.float64)
    if dl_dw.shape != (dim, dim):
        raise ValueError(f"dL/dW has shape {dl_dw.shape}, expected {(dim, dim)}")
    a = skew_from_params(theta, dim)
    w = cayley(a)
    eye = np.eye(dim)
    y = (eye + w).T @ dl_dw
    # P = Y (I + A)^-1  solved as (I + A)^T P^T = Y^T
    p = np.linalg.solve((eye + a).T, y.T).T
    iu = np.triu_indices(dim, k=1)
    return p[iu] - p.T[iu]


def random_rotation(dim: int, rng: np.random.Generator) -> np.ndarray:
    """A generic rotation from Cayley of a random skew matrix.

    Not Haar-distributed; adequate for hiding structure in synthetic data.
    """
    theta = rng.standard_normal(n_params(dim)) / np.sqrt(max(dim, 1))
    return basis_from_params(theta, dim)
