"""
von Mises-Fisher 계산 모음

    f(x; mu, kappa) = C_z(kappa) exp(kappa x^T mu)
    C_z(kappa) = kappa^(z/2-1) / ((2 pi)^(z/2) I_(z/2-1)(kappa))

Densities are kept in the natural-log domain. Threshold comparisons use the
unnormalized log density (ln C_z(kappa) omitted), since the same constant
appears on both sides of every comparison.
"""
import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import Polynomial
from scipy.special import gammaln, ive, logsumexp

from respec import error
from respec.core import EmbeddingMatrix, normalize, quantile

LOG_2PI = math.log(2.0 * math.pi)

# R 이 이 값보다 1 에 가까우면 kappa 가 발산한다
RESULTANT_LIMIT = 1.0 - 1e-9

# ln I_nu 구간 경계
ASYMPTOTIC_ORDER = 50.0
DEBYE_TERMS = 6

KDE_CHUNK_ROWS = 1024


def _debye_polynomials(n_terms: int) -> list[Polynomial]:
    # u_{k+1}(p) = p^2 (1 - p^2) u_k'(p) / 2 + (1/8) int_0^p (1 - 5 t^2) u_k(t) dt
    p = Polynomial([0.0, 1.0])
    polys = [Polynomial([1.0])]
    for _ in range(n_terms):
        u = polys[-1]
        nxt = 0.5 * p**2 * (1 - p**2) * u.deriv() + 0.125 * ((1 - 5 * p**2) * u).integ(lbnd=0)
        polys.append(nxt)
    return polys


DEBYE_U = _debye_polynomials(DEBYE_TERMS)


@dataclass(frozen=True)
class VmfParams:
    mu: np.ndarray
    kappa: float

    def __post_init__(self):
        object.__setattr__(self, "mu", normalize(self.mu, "vMF mean direction"))
        if not math.isfinite(self.kappa) or self.kappa < 0:
            raise error.NonPositiveKappa(self.kappa)

    @property
    def dim(self) -> int:
        return self.mu.shape[0]


@dataclass(frozen=True)
class DensityThreshold:
    log_threshold: float
    alpha: float
    leave_one_out: bool

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise error.POutOfRange(self.alpha)
        if not math.isfinite(self.log_threshold):
            raise error.NonFiniteValue("density threshold")

    def to_dict(self) -> dict:
        return {"log_threshold": self.log_threshold, "alpha": self.alpha, "leave_one_out": self.leave_one_out}


def _check_kappa(kappa: float):
    if not kappa > 0 or not math.isfinite(kappa):
        raise error.NonPositiveKappa(kappa)


def _unit_rows(X: EmbeddingMatrix) -> np.ndarray:
    rows = X.rows
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def mean_resultant_length(X: EmbeddingMatrix) -> float:
    return float(np.linalg.norm(_unit_rows(X).mean(axis=0)))


def estimate_kappa(X: EmbeddingMatrix) -> float:
    """kappa = R (z - R^2) / (1 - R^2), R = ||mean of rows||"""
    if X.n < 2:
        raise error.EmptyInput(f"estimate_kappa: {X.n} row(s), need at least 2")
    R = mean_resultant_length(X)
    if R > RESULTANT_LIMIT:
        raise error.DegenerateConcentration(R, "estimate_kappa")
    if R == 0.0:
        return 0.0
    z = X.dim
    return R * (z - R * R) / (1.0 - R * R)


# ---------------------------------------------------------------------------
# ln I_nu(x)
# ---------------------------------------------------------------------------


def _log_iv_series(nu: float, x: float) -> float:
    # I_nu(x) = (x/2)^nu / Gamma(nu+1) * sum_k (x^2/4)^k / (k! (nu+1)_k)
    q = 0.25 * x * x
    term = 1.0
    tail = 0.0
    k = 0
    while True:
        term *= q / ((k + 1) * (nu + k + 1))
        tail += term
        k += 1
        if term <= 1e-17 * (1.0 + tail):
            break
    return nu * math.log(0.5 * x) - float(gammaln(nu + 1.0)) + math.log1p(tail)


def _log_iv_debye(nu: float, x: float) -> float:
    # uniform asymptotic expansion of I_nu(nu z) for large order
    z = x / nu
    root = math.sqrt(1.0 + z * z)
    p = 1.0 / root
    eta = root + math.log(z / (1.0 + root))
    correction = 0.0
    nu_power = 1.0
    for u in DEBYE_U[1:]:
        nu_power *= nu
        correction += float(u(p)) / nu_power
    return nu * eta - 0.5 * math.log(2.0 * math.pi * nu) - 0.5 * math.log(root) + math.log1p(correction)


def log_bessel_iv(nu: float, x: float) -> float:
    """ln I_nu(x) for nu >= 0, x > 0"""
    if nu < 0:
        raise error.NumericError(f"Bessel order must be >= 0, got {nu}")
    _check_kappa(x)
    if nu >= ASYMPTOTIC_ORDER:
        return _log_iv_debye(nu, x)
    if x * x <= 4.0 * (nu + 1.0):
        return _log_iv_series(nu, x)
    # exponentially scaled: ive(nu, x) = I_nu(x) exp(-x)
    return math.log(float(ive(nu, x))) + x


def log_norm_const(z: int, kappa: float) -> float:
    """ln C_z(kappa)"""
    if z < 2:
        raise error.DimensionMismatch(">= 2", z, "log_norm_const")
    _check_kappa(kappa)
    half = 0.5 * z
    return (half - 1.0) * math.log(kappa) - half * LOG_2PI - log_bessel_iv(half - 1.0, kappa)


# ---------------------------------------------------------------------------
# vMF-KDE
# ---------------------------------------------------------------------------


def kde_log_density(x, X_d: EmbeddingMatrix, kappa: float, exclude_row: int | None = None) -> float:
    """ln(1/N sum_n exp(kappa x . x_n)), 정규화 상수 제외"""
    _check_kappa(kappa)
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (X_d.dim,):
        raise error.DimensionMismatch(X_d.dim, x.shape[-1] if x.ndim else x.shape, "kde_log_density")
    values = kappa * (X_d.rows @ x)
    if exclude_row is not None:
        if not 0 <= exclude_row < X_d.n:
            raise error.NumericError(f"exclude_row {exclude_row} out of range for {X_d.n} rows")
        if X_d.n < 2:
            raise error.EmptyAfterExclusion()
        values = np.delete(values, exclude_row)
    return float(logsumexp(values)) - math.log(values.shape[0])


def kde_log_density_batch(Q, X_d: EmbeddingMatrix, kappa: float, exclude_self: bool = False) -> np.ndarray:
    """
    Query block version of kde_log_density.
    exclude_self=True treats Q as X_d itself (row i excludes reference row i).
    """
    _check_kappa(kappa)
    Q = np.asarray(Q, dtype=np.float64)
    if Q.ndim != 2 or Q.shape[1] != X_d.dim:
        raise error.DimensionMismatch(X_d.dim, Q.shape, "kde_log_density_batch")
    n = X_d.n
    if exclude_self:
        if Q.shape[0] != n:
            raise error.DimensionMismatch(n, Q.shape[0], "leave-one-out query block")
        if n < 2:
            raise error.EmptyAfterExclusion()
    log_count = math.log(n - 1 if exclude_self else n)

    out = np.empty(Q.shape[0], dtype=np.float64)
    refs_t = X_d.rows.T
    for start in range(0, Q.shape[0], KDE_CHUNK_ROWS):
        stop = min(start + KDE_CHUNK_ROWS, Q.shape[0])
        scores = kappa * (Q[start:stop] @ refs_t)
        if exclude_self:
            idx = np.arange(stop - start)
            scores[idx, start + idx] = -np.inf
        out[start:stop] = logsumexp(scores, axis=1) - log_count
    return out


def self_density_threshold(X_d: EmbeddingMatrix, kappa: float, alpha: float, leave_one_out: bool = True) -> DensityThreshold:
    """참조 데이터 자기 밀도의 alpha 분위수"""
    if not 0.0 < alpha < 1.0:
        raise error.POutOfRange(alpha)
    densities = kde_log_density_batch(X_d.rows, X_d, kappa, exclude_self=leave_one_out)
    return DensityThreshold(quantile(densities, alpha), alpha, leave_one_out)


def fit_single_vmf(X: EmbeddingMatrix) -> VmfParams:
    return VmfParams(X.mean_direction(), estimate_kappa(X))


def single_vmf_log_density(x, params: VmfParams) -> float:
    _check_kappa(params.kappa)
    x = np.asarray(x, dtype=np.float64)
    if x.shape != params.mu.shape:
        raise error.DimensionMismatch(params.dim, x.shape[-1] if x.ndim else x.shape, "single_vmf_log_density")
    return params.kappa * float(x @ params.mu)


def single_vmf_threshold(X_d: EmbeddingMatrix, params: VmfParams, alpha: float) -> DensityThreshold:
    if not 0.0 < alpha < 1.0:
        raise error.POutOfRange(alpha)
    _check_kappa(params.kappa)
    densities = params.kappa * (X_d.rows @ params.mu)
    return DensityThreshold(quantile(densities, alpha), alpha, False)


# ---------------------------------------------------------------------------
# sampler (Wood 1994 rejection scheme)
# ---------------------------------------------------------------------------


def _sample_weights(kappa: float, dim: int, n: int, rng: np.random.Generator) -> np.ndarray:
    d1 = dim - 1
    b = d1 / (math.sqrt(4.0 * kappa**2 + d1**2) + 2.0 * kappa)
    x0 = (1.0 - b) / (1.0 + b)
    c = kappa * x0 + d1 * math.log(1.0 - x0**2)

    accepted = []
    needed = n
    while needed > 0:
        size = max(2 * needed, 64)
        z = rng.beta(0.5 * d1, 0.5 * d1, size=size)
        w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z)
        u = rng.uniform(0.0, 1.0, size=size)
        with np.errstate(divide="ignore", invalid="ignore"):
            ok = kappa * w + d1 * np.log(1.0 - x0 * w) - c >= np.log(u)
        w = w[ok][:needed]
        accepted.append(w)
        needed -= w.shape[0]
    return np.concatenate(accepted)


def sample_vmf(mu, kappa: float, n: int, seed: int) -> EmbeddingMatrix:
    """vMF(mu, kappa) 에서 n 개 샘플. kappa = 0 이면 구면 균등 분포"""
    mu = normalize(mu, "sample_vmf mu")
    if not math.isfinite(kappa) or kappa < 0:
        raise error.NonPositiveKappa(kappa)
    if n < 1:
        raise error.EmptyInput(f"sample_vmf: n={n}")
    rng = np.random.default_rng(seed)
    dim = mu.shape[0]

    w = _sample_weights(float(kappa), dim, n, rng)
    v = rng.standard_normal((n, dim))
    v -= np.outer(v @ mu, mu)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    samples = w[:, None] * mu[None, :] + np.sqrt(np.clip(1.0 - w**2, 0.0, None))[:, None] * v
    samples /= np.linalg.norm(samples, axis=1, keepdims=True)
    samples.setflags(write=False)
    return EmbeddingMatrix(samples)
