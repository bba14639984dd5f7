"""Linear structural causal model with a confounder, plus IV and OLS estimators.

The model is::

    Z ~ N(0, 1)  (or Bernoulli(0.5))     C ~ N(0, 1)
    X = alpha_zx * Z + w_cx * C + eps_x
    Y = omega * X  + w_cy * C + eps_y

Regressing Y on X picks up the back-door path X <- C -> Y, so the OLS slope
is biased by ``w_cy * Cov(X, C) / Var(X)``. The instrument Z moves X but has
no other route to Y, and ``Cov(Z, Y) / Cov(Z, X)`` recovers ``omega``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

WEAK_INSTRUMENT_TOL = 1e-10


class WeakInstrumentError(ValueError):
    """Cov(Z, X) is numerically zero, so the instrument carries no information about X."""


class DegenerateTreatmentError(ValueError):
    """Var(X) is numerically zero."""


@dataclass(frozen=True)
class ScmConfig:
    omega: float = 3.0
    w_cy: float = 5.0
    w_cx: float = 1.0
    alpha_zx: float = 1.0
    noise_sd_x: float = 1.0
    noise_sd_y: float = 1.0
    n: int = 50_000
    seed: int = 0
    bernoulli_z: bool = False

    def validate(self) -> None:
        if int(self.n) != self.n or self.n < 2:
            raise ValueError(f"n must be an integer >= 2, got {self.n}")
        if self.noise_sd_x < 0 or self.noise_sd_y < 0:
            raise ValueError("noise standard deviations must be non-negative")


@dataclass(frozen=True)
class ScmSample:
    z: np.ndarray
    c: np.ndarray
    x: np.ndarray
    y: np.ndarray
    eps_x: np.ndarray
    eps_y: np.ndarray


@dataclass(frozen=True)
class EstimateResult:
    omega_hat: float
    cov_zx: float
    cov_zy: float
    n_used: int


def simulate_scm(config: ScmConfig) -> ScmSample:
    """Draw ``config.n`` units from the structural model.

    Deterministic in ``config.seed``. The noise draws are returned so the
    structural equations can be checked exactly.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    n = int(config.n)
    if config.bernoulli_z:
        z = rng.integers(0, 2, size=n).astype(np.float64)
    else:
        z = rng.standard_normal(n)
    c = rng.standard_normal(n)
    eps_x = config.noise_sd_x * rng.standard_normal(n)
    eps_y = config.noise_sd_y * rng.standard_normal(n)
    x = config.alpha_zx * z + config.w_cx * c + eps_x
    y = config.omega * x + config.w_cy * c + eps_y
    return ScmSample(z=z, c=c, x=x, y=y, eps_x=eps_x, eps_y=eps_y)


def _as_pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise ValueError("need at least two observations")
    return a, b


def covariance(a, b) -> float:
    """Population covariance ``(1/n) * sum((a - mean(a)) * (b - mean(b)))``."""
    a, b = _as_pair(a, b)
    return float(np.mean((a - a.mean()) * (b - b.mean())))


def estimate_iv(z, x, y) -> EstimateResult:
    """Wald / IV estimate ``Cov(Z, Y) / Cov(Z, X)``.

    Raises
    ------
    WeakInstrumentError
        If ``|Cov(Z, X)| < 1e-10``.
    """
    z, x = _as_pair(z, x)
    _, y = _as_pair(z, y)
    cov_zx = covariance(z, x)
    cov_zy = covariance(z, y)
    if abs(cov_zx) < WEAK_INSTRUMENT_TOL:
        raise WeakInstrumentError(f"|Cov(Z, X)| = {abs(cov_zx):.3g} is below {WEAK_INSTRUMENT_TOL}")
    return EstimateResult(omega_hat=cov_zy / cov_zx, cov_zx=cov_zx, cov_zy=cov_zy, n_used=z.size)


def estimate_ols(x, y) -> EstimateResult:
    """Naive slope of y on x, ``Cov(X, Y) / Var(X)``.

    The returned ``cov_zx``/``cov_zy`` fields hold ``Var(X)`` and
    ``Cov(X, Y)``, i.e. the IV formula with the treatment as its own instrument.
    """
    x, y = _as_pair(x, y)
    var_x = covariance(x, x)
    if var_x < WEAK_INSTRUMENT_TOL:
        raise DegenerateTreatmentError(f"Var(X) = {var_x:.3g} is below {WEAK_INSTRUMENT_TOL}")
    cov_xy = covariance(x, y)
    return EstimateResult(omega_hat=cov_xy / var_x, cov_zx=var_x, cov_zy=cov_xy, n_used=x.size)


def ols_bias_plim(config: ScmConfig) -> float:
    """Probability limit of ``omega_ols - omega`` with unit-variance Z and C.

    For Bernoulli Z the variance of Z is 1/4 rather than 1.
    """
    var_z = 0.25 if config.bernoulli_z else 1.0
    var_x = config.alpha_zx ** 2 * var_z + config.w_cx ** 2 + config.noise_sd_x ** 2
    if var_x <= 0:
        raise DegenerateTreatmentError("Var(X) is zero under this configuration")
    return config.w_cy * config.w_cx / var_x
