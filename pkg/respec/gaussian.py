"""
태스크별 단일 가우시안 관련성 밀도 (kde / vmf 대조군)

    ln N(x; m, C) = -(z ln 2pi + ln det C + (x - m)^T C^-1 (x - m)) / 2

C is the sample covariance of the reference rows plus ``ridge * I``, so the
fit stays positive definite when N <= z.
"""
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from respec import error
from respec.core import EmbeddingMatrix, quantile
from respec.model import DEFAULT_GAUSSIAN_RIDGE
from respec.vmf import LOG_2PI, DensityThreshold


@dataclass(frozen=True)
class GaussianParams:
    mean: np.ndarray
    # 하삼각 촐레스키 인자 (C = L L^T)
    chol: np.ndarray
    ridge: float

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def log_det(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))


def fit_gaussian(X: EmbeddingMatrix, ridge: float = DEFAULT_GAUSSIAN_RIDGE) -> GaussianParams:
    if not ridge > 0 or not math.isfinite(ridge):
        raise error.NumericError(f"gaussian ridge must be > 0, got {ridge}")
    rows = X.rows
    mean = rows.mean(axis=0)
    if rows.shape[0] < 2:
        cov = np.zeros((X.dim, X.dim))
    else:
        cov = np.atleast_2d(np.cov(rows, rowvar=False))
    cov = 0.5 * (cov + cov.T) + ridge * np.eye(X.dim)
    try:
        chol = scipy.linalg.cholesky(cov, lower=True)
    except np.linalg.LinAlgError as e:
        raise error.NumericError(f"gaussian covariance is not positive definite: {e}")
    mean.setflags(write=False)
    chol.setflags(write=False)
    return GaussianParams(mean, chol, ridge)


def gaussian_log_density_batch(Q, params: GaussianParams) -> np.ndarray:
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    if Q.shape[1] != params.dim:
        raise error.DimensionMismatch(params.dim, Q.shape[1], "gaussian_log_density")
    if Q.shape[0] == 0:
        return np.empty(0)
    white = scipy.linalg.solve_triangular(params.chol, (Q - params.mean).T, lower=True)
    mahalanobis = np.einsum("ij,ij->j", white, white)
    return -0.5 * (params.dim * LOG_2PI + params.log_det + mahalanobis)


def gaussian_log_density(x, params: GaussianParams) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != params.mean.shape:
        raise error.DimensionMismatch(params.dim, x.shape[-1] if x.ndim else x.shape, "gaussian_log_density")
    return float(gaussian_log_density_batch(x[None, :], params)[0])


def gaussian_threshold(X_d: EmbeddingMatrix, params: GaussianParams, alpha: float) -> DensityThreshold:
    """참조 행 자신의 로그 밀도의 alpha 분위수"""
    if not 0.0 < alpha < 1.0:
        raise error.POutOfRange(alpha)
    return DensityThreshold(quantile(gaussian_log_density_batch(X_d.rows, params), alpha), alpha, False)
