"""Core random-finite-set data types and their basic algebra.

Single-target densities are either Gaussian mixtures (struct-of-arrays) or
weighted particle sets.  A Bernoulli component pairs an existence probability
with one such density; a multi-Bernoulli posterior is an ordered tuple of
Bernoulli components.  All types are immutable values; the operations below
are pure functions.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

# Summed existence probabilities of collapsed duplicates may exceed 1 only by
# floating-point noise; anything larger flags an upstream normalization bug.
COLLAPSE_TOL = 1e-9

WEIGHT_TOL = 1e-9


def ensure_cholesky(cov: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of ``cov``, with a single jitter retry.

    Repeated Kalman updates erode symmetry/positive-definiteness, so a
    failure triggers one retry with ``1e-9 * trace`` added to the diagonal.
    A second failure is an error.
    """
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        jitter = 1e-9 * max(float(np.trace(cov)), 1.0)
        try:
            return np.linalg.cholesky(cov + jitter * np.eye(cov.shape[0]))
        except np.linalg.LinAlgError as exc:
            raise ValueError(
                f"covariance is not positive semi-definite within jitter tolerance: {exc}"
            ) from exc


@dataclass(frozen=True)
class GaussianMixture:
    """Normalized Gaussian mixture density: weights (J,), means (J, d), covs (J, d, d)."""

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        m = np.asarray(self.means, dtype=float)
        c = np.asarray(self.covs, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("mixture needs a nonempty 1-D weight vector")
        if m.shape != (w.size, m.shape[-1]) or c.shape != (w.size, m.shape[-1], m.shape[-1]):
            raise ValueError(f"inconsistent mixture shapes {w.shape}/{m.shape}/{c.shape}")
        if np.any(w < 0) or abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError(f"mixture weights must be a probability vector, sum={w.sum()!r}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "covs", c)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @staticmethod
    def single(mean: np.ndarray, cov: np.ndarray) -> "GaussianMixture":
        mean = np.asarray(mean, dtype=float)
        return GaussianMixture(np.ones(1), mean[None, :], np.asarray(cov, dtype=float)[None, :, :])

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def pdf(self, points: np.ndarray) -> np.ndarray:
        """Density values at ``points`` (n, d); used by quadrature checks."""
        points = np.atleast_2d(points)
        out = np.zeros(points.shape[0])
        for w, mu, cov in zip(self.weights, self.means, self.covs):
            chol = ensure_cholesky(cov)
            diff = np.linalg.solve(chol, (points - mu).T)
            logdet = 2.0 * np.sum(np.log(np.diag(chol)))
            norm = -0.5 * (mu.size * np.log(2 * np.pi) + logdet)
            out += w * np.exp(norm - 0.5 * np.sum(diff * diff, axis=0))
        return out


@dataclass(frozen=True)
class ParticleSet:
    """Weighted particle density: weights (N,) summing to one, states (N, d)."""

    weights: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        x = np.asarray(self.states, dtype=float)
        if w.ndim != 1 or w.size == 0 or x.shape[0] != w.size or x.ndim != 2:
            raise ValueError(f"inconsistent particle shapes {w.shape}/{x.shape}")
        if np.any(w < 0) or abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError(f"particle weights must be a probability vector, sum={w.sum()!r}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "states", x)

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def mean(self) -> np.ndarray:
        return self.weights @ self.states


Density = Union[GaussianMixture, ParticleSet]


@dataclass(frozen=True)
class Bernoulli:
    """Bernoulli RFS: empty with probability 1-r, else one target with density pdf."""

    r: float
    pdf: Density

    def __post_init__(self):
        if not (-1e-12 <= self.r <= 1.0 + 1e-12):
            raise ValueError(f"existence probability out of [0, 1]: {self.r!r}")
        object.__setattr__(self, "r", float(min(max(self.r, 0.0), 1.0)))


@dataclass(frozen=True)
class MultiBernoulli:
    """Union of independent Bernoulli components; may be empty."""

    components: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))

    def __len__(self) -> int:
        return len(self.components)

    def __iter__(self):
        return iter(self.components)


@dataclass(frozen=True)
class PhdIntensity:
    """Unnormalized mixture sum_i r_i * p_i(x) plus its total mass sum_i r_i."""

    weights: np.ndarray
    pdfs: tuple
    mass: float


def phd_intensity(mb: MultiBernoulli) -> PhdIntensity:
    """First-moment intensity of a multi-Bernoulli RFS."""
    weights = np.array([c.r for c in mb], dtype=float)
    return PhdIntensity(weights=weights, pdfs=tuple(c.pdf for c in mb), mass=float(weights.sum()))


def mean_cardinality(mb: MultiBernoulli) -> float:
    return float(sum(c.r for c in mb))


def prune_and_cap(mb: MultiBernoulli, r_threshold: float, max_components: int) -> MultiBernoulli:
    """Drop components below ``r_threshold``, then keep the ``max_components``
    largest by existence probability (ties by original order), preserving
    relative order.  Idempotent for fixed parameters."""
    kept = [(i, c) for i, c in enumerate(mb) if c.r >= r_threshold]
    if len(kept) > max_components:
        ranked = sorted(kept, key=lambda ic: (-ic[1].r, ic[0]))[:max_components]
        keep_idx = {i for i, _ in ranked}
        kept = [(i, c) for i, c in kept if i in keep_idx]
    return MultiBernoulli(tuple(c for _, c in kept))


def collapse_duplicates(entries) -> MultiBernoulli:
    """Merge Bernoulli components that share a key by summing existence.

    ``entries`` is an iterable of ``(key, Bernoulli)`` where equal keys mark
    the same predicted component updated by the same multi-sensor subset
    (hence identical pdfs).  The pdf of the first occurrence is kept.  A
    summed existence above ``1 + 1e-9`` signals an upstream normalization
    bug and raises.
    """
    sums: dict = {}
    pdfs: dict = {}
    order: list = []
    for key, comp in entries:
        if key in sums:
            sums[key] += comp.r
        else:
            sums[key] = comp.r
            pdfs[key] = comp.pdf
            order.append(key)
    out = []
    for key in order:
        r = sums[key]
        if r > 1.0 + COLLAPSE_TOL:
            raise ValueError(f"collapsed existence {r!r} exceeds 1 for key {key!r}")
        out.append(Bernoulli(min(r, 1.0), pdfs[key]))
    return MultiBernoulli(tuple(out))
