"""Data matrices, SVD, column-centering and the PVE formulas."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import DimensionError, NumericalFailureError, UndefinedPveError


@dataclass(frozen=True)
class NoiseModel:
    """Elementwise noise variance and where it came from."""

    sigma2: float
    source: Literal["known", "estimated"] = "known"

    def __post_init__(self):
        if not (np.isfinite(self.sigma2) and self.sigma2 > 0):
            raise ValueError(f"sigma2 must be positive and finite, got {self.sigma2}")
        if self.source not in ("known", "estimated"):
            raise ValueError(f"unknown noise source {self.source!r}")

    def scaled(self, factor: float) -> "NoiseModel":
        return NoiseModel(self.sigma2 * factor, self.source)


@dataclass(frozen=True)
class SvdFactorization:
    """Thin SVD ``X = U diag(s) V^T`` with descending ``s``.

    ``U`` is n x p, ``V`` is p x p (columns are right singular vectors).
    """

    U: np.ndarray
    V: np.ndarray
    s: np.ndarray

    @property
    def n(self) -> int:
        return self.U.shape[0]

    @property
    def p(self) -> int:
        return self.V.shape[0]

    def u(self, k: int) -> np.ndarray:
        """Left singular vector for 1-based index ``k``."""
        return self.U[:, k - 1]

    def v(self, k: int) -> np.ndarray:
        return self.V[:, k - 1]

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.s) @ self.V.T


def as_data_matrix(x) -> np.ndarray:
    """Validate and return ``x`` as a float n x p array with n >= p."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise DimensionError(f"data matrix must be 2-D, got shape {x.shape}")
    if x.size == 0:
        raise DimensionError("data matrix is empty")
    if not np.all(np.isfinite(x)):
        raise ValueError("data matrix contains non-finite entries")
    n, p = x.shape
    if n < p:
        raise DimensionError(
            f"data matrix has n={n} rows < p={p} columns; transpose it first "
            "(the model assumes n >= p)"
        )
    return x


def compute_svd(x) -> SvdFactorization:
    """Thin SVD with a deterministic sign convention.

    The largest-magnitude entry of every right singular vector is made
    positive; the matching left vector is flipped along with it.
    """
    x = as_data_matrix(x)
    try:
        U, s, Vt = np.linalg.svd(x, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailureError(f"SVD did not converge: {exc}") from exc
    V = Vt.T
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    s = np.clip(s, 0.0, None)
    return SvdFactorization(U=U * signs, V=V * signs, s=s)


def center_reduce(x) -> np.ndarray:
    """Return ``H^T X`` for the Householder-based orthonormal complement H of 1_n.

    ``H`` is the last n-1 columns of the reflector sending ``1_n / sqrt(n)``
    to ``e_1``, so ``H H^T = I - 11^T/n`` and ``H^T H = I``. The result has the
    same singular values (and right singular vectors) as the column-centered
    matrix, and is again an i.i.d. Gaussian-noise matrix with n-1 rows.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise DimensionError(f"data matrix must be 2-D, got shape {x.shape}")
    n = x.shape[0]
    if n < 2:
        raise DimensionError("centering needs at least two rows")
    v = np.full(n, 1.0 / np.sqrt(n))
    v[0] -= 1.0
    vtv = v @ v
    reflected = x - np.outer(v, (2.0 / vtv) * (v @ x))
    return reflected[1:]


def sample_pve(s, k: int) -> float:
    """Sample proportion of variance explained by component ``k`` (1-based)."""
    s = np.asarray(s, dtype=float)
    if not 1 <= k <= s.size:
        raise IndexError(f"k={k} outside 1..{s.size}")
    lam = s * s
    total = lam.sum()
    if total <= 0:
        raise UndefinedPveError("PVE is undefined when all singular values are zero")
    return float(lam[k - 1] / total)


def population_pve(u_k, v_k, theta) -> float:
    """``(u_k^T Theta v_k)^2 / ||Theta||_F^2``; zero under the global null."""
    theta = np.asarray(theta, dtype=float)
    denom = float(np.sum(theta * theta))
    if denom == 0.0:
        return 0.0
    num = float(np.asarray(u_k) @ theta @ np.asarray(v_k))
    return num * num / denom
