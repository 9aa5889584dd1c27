"""Scenario models: target kinematics, sensors, births, and measurement simulation.

The kinematic model is white-noise acceleration on a planar state
[x, y, xdot, ydot].  Two sensor families are provided: a linear-Gaussian
position sensor and a Doppler-bearing sensor.  Both carry constant detection
probability and a uniform Poisson clutter process over their observation
domain.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .rfs import Bernoulli, GaussianMixture, MultiBernoulli

TWO_PI = 2.0 * math.pi


def wrap_angle(theta):
    """Wrap angles to (-pi, pi]."""
    wrapped = np.mod(-np.asarray(theta) + math.pi, TWO_PI)
    return -(wrapped - math.pi)


@dataclass(frozen=True)
class MotionModel:
    """White-noise-acceleration kinematics with constant survival probability."""

    ts: float = 1.0
    sigma_v: float = 1.0
    survival_prob: float = 0.99
    F: np.ndarray = field(init=False)
    Q: np.ndarray = field(init=False)

    def __post_init__(self):
        if not 0.0 <= self.survival_prob <= 1.0:
            raise ValueError(f"survival_prob out of [0, 1]: {self.survival_prob!r}")
        t = self.ts
        eye2 = np.eye(2)
        F = np.block([[eye2, t * eye2], [np.zeros((2, 2)), eye2]])
        Q = self.sigma_v**2 * np.block(
            [[t**3 / 3 * eye2, t**2 / 2 * eye2], [t**2 / 2 * eye2, t * eye2]]
        )
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "_chol_q", np.linalg.cholesky(Q) if self.sigma_v > 0 else None)

    def propagate(self, x: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
        """One transition step F x + v; deterministic when ``rng`` is None."""
        x = self.F @ np.asarray(x, dtype=float)
        if rng is not None and self._chol_q is not None:
            x = x + self._chol_q @ rng.standard_normal(4)
        return x

    def propagate_particles(self, states: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        moved = states @ self.F.T
        if self._chol_q is not None:
            moved = moved + rng.standard_normal(states.shape) @ self._chol_q.T
        return moved


@dataclass(frozen=True)
class LinearSensorModel:
    """Linear-Gaussian position sensor z = H x + w, w ~ N(0, R).

    Clutter is uniform over the rectangular ``region`` ((2, 2) array of
    per-axis low/high bounds), with Poisson rate ``clutter_rate``.
    """

    H: np.ndarray
    R: np.ndarray
    detection_prob: float
    clutter_rate: float
    region: np.ndarray

    def __post_init__(self):
        H = np.asarray(self.H, dtype=float)
        R = np.asarray(self.R, dtype=float)
        region = np.asarray(self.region, dtype=float)
        if not 0.0 <= self.detection_prob <= 1.0:
            raise ValueError(f"detection_prob out of [0, 1]: {self.detection_prob!r}")
        if self.clutter_rate < 0:
            raise ValueError(f"clutter_rate must be nonnegative: {self.clutter_rate!r}")
        if region.shape != (H.shape[0], 2) or np.any(region[:, 1] <= region[:, 0]):
            raise ValueError("region must be (zdim, 2) with high > low")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "region", region)
        object.__setattr__(self, "_chol_r", np.linalg.cholesky(R))

    @property
    def zdim(self) -> int:
        return self.H.shape[0]

    @property
    def log_clutter_density(self) -> float:
        return -float(np.sum(np.log(self.region[:, 1] - self.region[:, 0])))

    def measure(self, x: np.ndarray) -> np.ndarray:
        return self.H @ np.asarray(x, dtype=float)

    def measure_batch(self, states: np.ndarray) -> np.ndarray:
        return states @ self.H.T

    def wrap_residual(self, res: np.ndarray) -> np.ndarray:
        return res

    def log_likelihood_matrix(self, Z: np.ndarray, states: np.ndarray) -> np.ndarray:
        """log N(z_l; H x_n, R) for all measurements and states, shape (m, N)."""
        return _gaussian_loglik_matrix(Z, self.measure_batch(states), self._chol_r, None)

    def sample_noise(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.standard_normal((n, self.zdim)) @ self._chol_r.T

    def sample_clutter(self, rng: np.random.Generator, n: int) -> np.ndarray:
        low, high = self.region[:, 0], self.region[:, 1]
        return low + rng.random((n, self.zdim)) * (high - low)

    def finalize_measurement(self, z: np.ndarray) -> np.ndarray:
        return z


@dataclass(frozen=True)
class DopplerSensorModel:
    """Doppler-bearing sensor at a fixed planar position.

    z = [atan2(y - y_s, x - x_s), (2 fc / c) * ((x - x_s) xdot + (y - y_s) ydot) / range] + w.
    Clutter is uniform over bearing (-pi, pi] times the Doppler band.
    """

    position: np.ndarray
    carrier_hz: float
    wave_speed: float
    R: np.ndarray
    detection_prob: float
    clutter_rate: float
    doppler_band: tuple = (-100.0, 100.0)

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float)
        R = np.asarray(self.R, dtype=float)
        if pos.shape != (2,):
            raise ValueError("sensor position must be a 2-vector")
        if not 0.0 <= self.detection_prob <= 1.0:
            raise ValueError(f"detection_prob out of [0, 1]: {self.detection_prob!r}")
        if self.clutter_rate < 0:
            raise ValueError(f"clutter_rate must be nonnegative: {self.clutter_rate!r}")
        if self.doppler_band[1] <= self.doppler_band[0]:
            raise ValueError("doppler_band must be increasing")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "_chol_r", np.linalg.cholesky(R))

    @property
    def zdim(self) -> int:
        return 2

    @property
    def log_clutter_density(self) -> float:
        return -math.log(TWO_PI * (self.doppler_band[1] - self.doppler_band[0]))

    def measure(self, x: np.ndarray) -> np.ndarray:
        return self.measure_batch(np.asarray(x, dtype=float)[None, :])[0]

    def measure_batch(self, states: np.ndarray) -> np.ndarray:
        dx = states[:, 0] - self.position[0]
        dy = states[:, 1] - self.position[1]
        rng_sq = dx * dx + dy * dy
        if np.any(rng_sq == 0.0):
            raise ValueError("target at zero range from Doppler-bearing sensor")
        bearing = np.arctan2(dy, dx)
        doppler = (2.0 * self.carrier_hz / self.wave_speed) * (
            (dx * states[:, 2] + dy * states[:, 3]) / np.sqrt(rng_sq)
        )
        return np.column_stack([bearing, doppler])

    def wrap_residual(self, res: np.ndarray) -> np.ndarray:
        res = np.array(res, dtype=float, copy=True)
        res[..., 0] = wrap_angle(res[..., 0])
        return res

    def log_likelihood_matrix(self, Z: np.ndarray, states: np.ndarray) -> np.ndarray:
        return _gaussian_loglik_matrix(Z, self.measure_batch(states), self._chol_r, self.wrap_residual)

    def sample_noise(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.standard_normal((n, 2)) @ self._chol_r.T

    def sample_clutter(self, rng: np.random.Generator, n: int) -> np.ndarray:
        bearing = -math.pi + rng.random(n) * TWO_PI
        lo, hi = self.doppler_band
        doppler = lo + rng.random(n) * (hi - lo)
        return np.column_stack([bearing, doppler])

    def finalize_measurement(self, z: np.ndarray) -> np.ndarray:
        z = np.array(z, dtype=float, copy=True)
        z[..., 0] = wrap_angle(z[..., 0])
        return z


SensorModel = LinearSensorModel | DopplerSensorModel


def _gaussian_loglik_matrix(Z, predicted, chol_r, wrap):
    """log N(z_l; h(x_n), R) over measurements Z (m, zdim) and predictions (N, zdim)."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    res = Z[:, None, :] - predicted[None, :, :]
    if wrap is not None:
        res = wrap(res)
    zdim = Z.shape[1]
    if zdim == 2:
        # Hand-rolled forward substitution; this sits on the SMC hot path.
        w0 = res[..., 0] / chol_r[0, 0]
        w1 = (res[..., 1] - chol_r[1, 0] * w0) / chol_r[1, 1]
        maha = w0 * w0 + w1 * w1
    else:
        white = np.linalg.solve(chol_r, res.reshape(-1, zdim).T)
        maha = np.sum(white * white, axis=0).reshape(res.shape[0], res.shape[1])
    logdet = 2.0 * np.sum(np.log(np.diag(chol_r)))
    return -0.5 * (zdim * math.log(TWO_PI) + logdet + maha)


def miss_log_prob(sensors) -> float:
    """log gamma = sum_i log(1 - pD_i); -inf when any sensor has pD = 1."""
    total = 0.0
    for s in sensors:
        if s.detection_prob >= 1.0:
            return -math.inf
        total += math.log1p(-s.detection_prob)
    return total


def gamma_miss(sensors) -> float:
    """Product of per-sensor miss probabilities (empty product is 1)."""
    return float(np.prod([1.0 - s.detection_prob for s in sensors])) if sensors else 1.0


@dataclass(frozen=True)
class BirthModel:
    """Multi-Bernoulli birth process appended at every prediction step."""

    existence: float
    means: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        if not 0.0 <= self.existence <= 1.0:
            raise ValueError(f"birth existence out of [0, 1]: {self.existence!r}")
        object.__setattr__(self, "means", np.atleast_2d(np.asarray(self.means, dtype=float)))
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=float))

    def components(self) -> MultiBernoulli:
        return MultiBernoulli(
            tuple(
                Bernoulli(self.existence, GaussianMixture.single(m, self.cov))
                for m in self.means
            )
        )


@dataclass(frozen=True)
class Track:
    """One ground-truth target, alive on scans [birth_scan, death_scan]."""

    birth_scan: int
    death_scan: int
    states: np.ndarray  # (death_scan - birth_scan + 1, 4)


@dataclass(frozen=True)
class GroundTruth:
    tracks: tuple
    num_scans: int

    def __post_init__(self):
        for t in self.tracks:
            if not 0 <= t.birth_scan <= t.death_scan < self.num_scans:
                raise ValueError(
                    f"track lifetime [{t.birth_scan}, {t.death_scan}] outside scans"
                )

    def states_at(self, scan: int) -> np.ndarray:
        """States of targets alive at ``scan``, shape (n_alive, 4)."""
        rows = [
            t.states[scan - t.birth_scan]
            for t in self.tracks
            if t.birth_scan <= scan <= t.death_scan
        ]
        return np.array(rows, dtype=float).reshape(len(rows), 4)

    def cardinality(self) -> np.ndarray:
        counts = np.zeros(self.num_scans, dtype=int)
        for t in self.tracks:
            counts[t.birth_scan : t.death_scan + 1] += 1
        return counts


def propagate_track(motion: MotionModel, initial_state, birth_scan: int, death_scan: int,
                    rng: np.random.Generator | None = None) -> Track:
    """Generate one track via the kinematic recursion (noiseless when rng is None)."""
    states = [np.asarray(initial_state, dtype=float)]
    for _ in range(death_scan - birth_scan):
        states.append(motion.propagate(states[-1], rng))
    return Track(birth_scan, death_scan, np.array(states))


def simulate_scan(truth_states: np.ndarray, sensor: SensorModel,
                  rng: np.random.Generator) -> np.ndarray:
    """One sensor's measurement set for one scan.

    Each target is detected independently with probability pD, yielding
    h(x) + w; a Poisson number of clutter points is drawn uniformly over the
    sensor's observation domain; the combined list is randomly permuted.
    Target detections are never gated or clipped (bearings are wrapped).
    """
    truth_states = np.asarray(truth_states, dtype=float).reshape(-1, 4)
    parts = []
    if truth_states.shape[0]:
        detected = rng.random(truth_states.shape[0]) < sensor.detection_prob
        if np.any(detected):
            clean = sensor.measure_batch(truth_states[detected])
            noisy = clean + sensor.sample_noise(rng, clean.shape[0])
            parts.append(sensor.finalize_measurement(noisy))
    n_clutter = rng.poisson(sensor.clutter_rate)
    if n_clutter:
        parts.append(sensor.sample_clutter(rng, n_clutter))
    if not parts:
        return np.zeros((0, sensor.zdim))
    merged = np.vstack(parts)
    return merged[rng.permutation(merged.shape[0])]


def simulate_all_scans(truth: GroundTruth, sensors, rngs) -> list:
    """Per-scan, per-sensor measurement sets; ``rngs`` holds one stream per sensor."""
    scans = []
    for k in range(truth.num_scans):
        states = truth.states_at(k)
        scans.append([simulate_scan(states, s, rngs[i]) for i, s in enumerate(sensors)])
    return scans
