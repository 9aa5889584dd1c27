"""Shared numerical estimation machinery.

Gaussian measurement updates (exact for linear sensors, unscented for
Doppler-bearing), their marginal likelihoods, and the particle reweighting /
systematic resampling used by the SMC paths.  All likelihood bookkeeping is
in the log domain; products of per-sensor likelihoods underflow otherwise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .models import DopplerSensorModel, LinearSensorModel, SensorModel
from .rfs import ParticleSet, ensure_cholesky

LOG_TWO_PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class UnscentedParams:
    """Scaled unscented-transform parameters; weights need dim + lam > 0."""

    alpha: float = 1.0
    beta: float = 2.0
    kappa: float = 0.0

    def lam(self, dim: int) -> float:
        return self.alpha**2 * (dim + self.kappa) - dim


DEFAULT_UT = UnscentedParams()


@dataclass(frozen=True)
class GaussianUpdate:
    """Posterior moments and log marginal likelihood of one measurement update."""

    mean: np.ndarray
    cov: np.ndarray
    log_marginal: float


def _symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def _logpdf_innovations(innov: np.ndarray, chol_s: np.ndarray) -> np.ndarray:
    white = np.linalg.solve(chol_s, innov.T)
    logdet = 2.0 * np.sum(np.log(np.diag(chol_s)))
    return -0.5 * (innov.shape[1] * LOG_TWO_PI + logdet + np.sum(white * white, axis=0))


def kalman_update_batch(mean: np.ndarray, cov: np.ndarray, H: np.ndarray, R: np.ndarray,
                        Z: np.ndarray):
    """Conjugate update of N(mean, cov) against every row of Z at once.

    The innovation covariance, gain, and posterior covariance are shared by
    all measurements; only means and marginals vary.  Returns
    (means (m, d), cov (d, d), log_marginals (m,)).
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    z_pred = H @ mean
    PHt = cov @ H.T
    S = _symmetrize(H @ PHt + R)
    try:
        chol_s = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"innovation covariance not invertible: {exc}") from exc
    K = np.linalg.solve(chol_s.T, np.linalg.solve(chol_s, PHt.T)).T
    innov = Z - z_pred
    means = mean + innov @ K.T
    # Joseph form keeps the covariance symmetric PSD under repeated updates.
    IKH = np.eye(cov.shape[0]) - K @ H
    post_cov = _symmetrize(IKH @ cov @ IKH.T + K @ R @ K.T)
    return means, post_cov, _logpdf_innovations(innov, chol_s)


def kalman_update(mean, cov, H, R, z) -> GaussianUpdate:
    """Single-measurement Kalman update with its Gaussian marginal N(z; Hm, S)."""
    means, post_cov, logm = kalman_update_batch(np.asarray(mean, float),
                                                np.asarray(cov, float),
                                                np.asarray(H, float),
                                                np.asarray(R, float), z)
    return GaussianUpdate(means[0], post_cov, float(logm[0]))


def sigma_points(mean: np.ndarray, cov: np.ndarray, params: UnscentedParams):
    """2d+1 sigma points and their mean/covariance weights."""
    d = mean.size
    lam = params.lam(d)
    if d + lam <= 0:
        raise ValueError(f"invalid UT scaling: dim + lambda = {d + lam!r}")
    scale = math.sqrt(d + lam)
    chol = ensure_cholesky(cov)
    offsets = scale * chol.T  # rows are scaled covariance columns
    pts = np.vstack([mean[None, :], mean + offsets, mean - offsets])
    wm = np.full(2 * d + 1, 1.0 / (2.0 * (d + lam)))
    wc = wm.copy()
    wm[0] = lam / (d + lam)
    wc[0] = wm[0] + 1.0 - params.alpha**2 + params.beta
    return pts, wm, wc


def unscented_update_batch(mean: np.ndarray, cov: np.ndarray, sensor: DopplerSensorModel,
                           Z: np.ndarray, params: UnscentedParams = DEFAULT_UT):
    """Unscented analogue of ``kalman_update_batch`` for a nonlinear sensor.

    Bearing residuals are wrapped to (-pi, pi]; the predicted measurement
    mean averages sigma-point bearings relative to the central point so a
    prior straddling +-pi stays well-defined.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    pts, wm, wc = sigma_points(mean, cov, params)
    zs = sensor.measure_batch(pts)
    rel = sensor.wrap_residual(zs - zs[0])
    z_pred = zs[0] + wm @ rel
    dz = sensor.wrap_residual(zs - z_pred)
    dx = pts - mean
    S = _symmetrize((wc * dz.T) @ dz + sensor.R)
    C = (wc * dx.T) @ dz
    try:
        chol_s = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"innovation covariance not invertible: {exc}") from exc
    K = np.linalg.solve(chol_s.T, np.linalg.solve(chol_s, C.T)).T
    innov = sensor.wrap_residual(Z - z_pred)
    means = mean + innov @ K.T
    post_cov = _symmetrize(cov - K @ S @ K.T)
    return means, post_cov, _logpdf_innovations(innov, chol_s)


def unscented_update(mean, cov, sensor, z, params: UnscentedParams = DEFAULT_UT) -> GaussianUpdate:
    means, post_cov, logm = unscented_update_batch(
        np.asarray(mean, float), np.asarray(cov, float), sensor, z, params)
    return GaussianUpdate(means[0], post_cov, float(logm[0]))


def sensor_update_batch(mean, cov, sensor: SensorModel, Z, params: UnscentedParams = DEFAULT_UT):
    """Dispatch to the exact linear update or the unscented approximation."""
    if isinstance(sensor, LinearSensorModel):
        return kalman_update_batch(mean, cov, sensor.H, sensor.R, Z)
    return unscented_update_batch(mean, cov, sensor, Z, params)


def sequential_subset_update(mean, cov, picks, sensors, measurements,
                             params: UnscentedParams = DEFAULT_UT):
    """Condition a Gaussian on a multi-sensor subset and score it.

    ``picks[i]`` is a measurement index into ``measurements[i]`` or None for
    a missed detection.  Detected sensors contribute
    log pD - log c(z) + log N(z; ...) to the returned log integral of
    N(x; mean, cov) * f(W | x); undetected sensors contribute log(1 - pD).
    Gaussian conjugacy makes the result order-invariant over sensors.
    """
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    log_int = 0.0
    for i, pick in enumerate(picks):
        sensor = sensors[i]
        if pick is None:
            if sensor.detection_prob >= 1.0:
                return mean, cov, -math.inf
            log_int += math.log1p(-sensor.detection_prob)
            continue
        z = measurements[i][pick]
        means, cov, logm = sensor_update_batch(mean, cov, sensor, z, params)
        mean = means[0]
        if sensor.detection_prob <= 0.0:
            return mean, cov, -math.inf
        log_int += math.log(sensor.detection_prob) - sensor.log_clutter_density + float(logm[0])
    return mean, cov, log_int


def log_sum_exp(values: np.ndarray) -> float:
    values = np.asarray(values, dtype=float)
    hi = np.max(values) if values.size else -math.inf
    if not np.isfinite(hi):
        return float(hi) if values.size else -math.inf
    return float(hi + math.log(np.sum(np.exp(values - hi))))


def particle_reweight(p: ParticleSet, f_values: np.ndarray):
    """Multiply particle weights by nonnegative ``f_values`` and renormalize.

    Returns the reweighted set and log mass log sum_n w_n f_n.  All-zero
    f_values signal an empty likelihood and raise; callers treat that subset
    as having score -inf.
    """
    f_values = np.asarray(f_values, dtype=float)
    if np.any(f_values < 0):
        raise ValueError("likelihood values must be nonnegative")
    raw = p.weights * f_values
    mass = float(raw.sum())
    if mass <= 0.0:
        raise ValueError("all particle likelihoods are zero")
    return ParticleSet(raw / mass, p.states), math.log(mass)


def systematic_resample_indices(weights: np.ndarray, n_out: int,
                                rng: np.random.Generator) -> np.ndarray:
    """Low-variance systematic resampling; copy counts stay within 1 of n*w."""
    positions = (np.arange(n_out) + rng.random()) / n_out
    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0
    return np.searchsorted(cumulative, positions)


def resample(p: ParticleSet, n_out: int, rng: np.random.Generator) -> ParticleSet:
    idx = systematic_resample_indices(p.weights, n_out, rng)
    return ParticleSet(np.full(n_out, 1.0 / n_out), p.states[idx])
