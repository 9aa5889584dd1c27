"""Truncated multi-sensor CPHD baseline filter.

An iid-cluster posterior: a weighted mixture of single-target densities (the
PHD) alongside an explicit cardinality distribution.  The update reuses the
greedy subset/quasi-partition machinery of the MS-MeMBer filter, but each
mixture component is updated only with its single best-matching subset per
partition; the subset score against the whole PHD is approximated by the
score against that one component.

The partition/missed-detection coefficients and the cardinality update are
reconstructed from the iid-cluster generating functional: with predicted
cardinality pgf G(t) = sum_n p(n) t^n, normalized spatial density s(x), and
gbar = <s, gamma>, a retained partition P with n_P assigned subsets weighs

    alpha_P  propto  K_P * G^(n_P)(gbar) * prod_{W in P} d_W,

the missed-detection coefficient uses G^(n_P + 1) in place of G^(n_P) and
sums over partitions, and the updated cardinality satisfies

    p'(n)  propto  p(n) * sum_P K_P * n!/(n - n_P)! * gbar^(n - n_P) * prod d_W.

These choices make the updated PHD mass equal the updated cardinality mean
exactly (up to the cardinality truncation), which the tests assert.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .estimation import DEFAULT_UT, UnscentedParams, log_sum_exp, resample
from .member import (
    NEG_INF,
    ScanDiagnostics,
    ScoredSubset,
    clutter_log_term,
    greedy_partitions,
    greedy_subset_paths,
    make_trellis,
)
from .models import BirthModel, MotionModel, miss_log_prob
from .rfs import GaussianMixture, ParticleSet


@dataclass(frozen=True)
class TcphdParams:
    w_max: int = 4
    p_max: int = 4
    prune_threshold: float = 1e-3
    cap_per_target: int = 4
    n_max: int = 20
    birth_card_mean: float = 0.4
    particles_per_target: int = 700
    ut: UnscentedParams = DEFAULT_UT

    def __post_init__(self):
        if self.w_max < 1 or self.p_max < 1:
            raise ValueError("w_max and p_max must be at least 1")


@dataclass(frozen=True)
class IidClusterState:
    """PHD mixture plus cardinality distribution over 0..n_max.

    After a full predict/update scan the mixture mass equals the cardinality
    mean (within truncation error); the mixture is re-normalized internally
    wherever the update needs the spatial density.
    """

    weights: np.ndarray
    pdfs: tuple
    cardinality: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        card = np.asarray(self.cardinality, dtype=float)
        if np.any(w < 0):
            raise ValueError("mixture weights must be nonnegative")
        if abs(card.sum() - 1.0) > 1e-9 or np.any(card < -1e-15):
            raise ValueError(f"cardinality must be a probability vector, sum={card.sum()!r}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "cardinality", card)

    def mean_cardinality(self) -> float:
        return float(np.arange(self.cardinality.size) @ self.cardinality)

    def map_cardinality(self) -> int:
        return int(np.argmax(self.cardinality))


def empty_state(n_max: int) -> IidClusterState:
    card = np.zeros(n_max + 1)
    card[0] = 1.0
    return IidClusterState(np.zeros(0), (), card)


def poisson_pmf(mean: float, n_max: int) -> np.ndarray:
    n = np.arange(n_max + 1)
    if mean <= 0.0:
        out = np.zeros(n_max + 1)
        out[0] = 1.0
        return out
    logs = n * math.log(mean) - mean - np.array([math.lgamma(k + 1) for k in n])
    return np.exp(logs)


def binomial_thin(card: np.ndarray, keep_prob: float) -> np.ndarray:
    """Cardinality of an independently thinned point process."""
    n_max = card.size - 1
    out = np.zeros_like(card)
    for m in range(n_max + 1):
        if card[m] == 0.0:
            continue
        for j in range(m + 1):
            out[j] += card[m] * math.comb(m, j) * keep_prob**j * (1 - keep_prob) ** (m - j)
    return out


def convolve_truncated(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    full = np.convolve(a, b)[: a.size]
    s = full.sum()
    return full / s if s > 0 else full


def predict(state: IidClusterState, motion: MotionModel, birth: BirthModel,
            params: TcphdParams, rng: np.random.Generator | None = None,
            density: str = "gm") -> IidClusterState:
    """Survival thinning plus birth, for both the PHD and the cardinality."""
    ps = motion.survival_prob
    weights = [w * ps for w in state.weights]
    pdfs = []
    for pdf in state.pdfs:
        if isinstance(pdf, GaussianMixture):
            pdfs.append(GaussianMixture(pdf.weights, pdf.means @ motion.F.T,
                                        motion.F @ pdf.covs @ motion.F.T + motion.Q))
        else:
            if rng is None:
                raise ValueError("particle prediction needs an rng")
            pdfs.append(ParticleSet(pdf.weights, motion.propagate_particles(pdf.states, rng)))
    for b in birth.components():
        weights.append(b.r)
        if density == "particles":
            if rng is None:
                raise ValueError("particle birth sampling needs an rng")
            chol = np.linalg.cholesky(birth.cov)
            states = b.pdf.means[0] + rng.standard_normal(
                (params.particles_per_target, birth.cov.shape[0])) @ chol.T
            pdfs.append(ParticleSet(
                np.full(params.particles_per_target, 1.0 / params.particles_per_target), states))
        else:
            pdfs.append(b.pdf)
    card = binomial_thin(state.cardinality, ps)
    card = convolve_truncated(card, poisson_pmf(params.birth_card_mean, params.n_max))
    return IidClusterState(np.array(weights), tuple(pdfs), card)


def tcphd_subsets(weight_norm: float, pdf, sensors, measurements,
                  params: TcphdParams) -> list:
    """Scored subsets for one PHD mixture component.

    Non-empty subsets carry the truncated score log(omega) + log integral
    (the d-hat value used everywhere downstream); the all-empty subset
    contributes a unit factor to partition scores, so its log_beta is zero.
    """
    trellis = make_trellis(pdf, sensors, measurements, params.ut)
    paths = greedy_subset_paths(trellis, measurements, params.w_max)
    log_w = math.log(weight_norm) if weight_norm > 0.0 else NEG_INF
    out = []
    for idx, (picks, pstate) in enumerate(paths):
        if idx == 0:
            out.append(ScoredSubset(picks, 0.0, pstate.log_int, None))
            continue
        if log_w == NEG_INF:
            continue
        pairs = frozenset((i, n) for i, n in enumerate(picks) if n is not None)
        out.append(ScoredSubset(picks, log_w + pstate.log_int, pstate.log_int,
                                trellis.posterior(pstate), pairs))
    return out


def _log_falling(n: int, j: int) -> float:
    if j > n:
        return NEG_INF
    return math.lgamma(n + 1) - math.lgamma(n - j + 1)


def _log_gc_derivative(log_card: np.ndarray, order: int, log_gbar: float) -> float:
    """log G^(order)(gbar) for the cardinality pgf G(t) = sum_n p(n) t^n."""
    terms = []
    for n in range(order, log_card.size):
        if log_card[n] == NEG_INF:
            continue
        lf = _log_falling(n, order)
        if n == order:
            terms.append(log_card[n] + lf)
        elif log_gbar > NEG_INF:
            terms.append(log_card[n] + lf + (n - order) * log_gbar)
    return log_sum_exp(np.array(terms)) if terms else NEG_INF


def update(state: IidClusterState, sensors, measurements, params: TcphdParams,
           rng: np.random.Generator | None = None):
    """Truncated multi-sensor CPHD update.

    Returns the updated state; the mixture holds one legacy copy of every
    predicted component plus one posterior per distinct (component, subset)
    pair across retained partitions, pruned, capped at cap_per_target times
    the MAP cardinality, and rescaled to the updated cardinality mean.
    """
    total_mass = float(np.sum(state.weights))
    if total_mass <= 0.0:
        # Nothing to update spatially; the cardinality still conditions on
        # all measurements being clutter, which changes nothing under
        # Poisson clutter's shift invariance.
        return state
    omega = state.weights / total_mass
    subset_lists = [
        tcphd_subsets(omega[j], pdf, sensors, measurements, params)
        for j, pdf in enumerate(state.pdfs)
    ]
    partitions = greedy_partitions(subset_lists, params.p_max)

    log_gbar = miss_log_prob(sensors)  # <s, gamma> for constant detection probs
    with np.errstate(divide="ignore"):
        log_card = np.log(state.cardinality)
    n_assigned = []
    log_t = []
    for part in partitions:
        n_p = sum(
            1 for j, li in enumerate(part.assignments) if not subset_lists[j][li].is_empty
        )
        n_assigned.append(n_p)
        log_t.append(part.log_score + clutter_log_term(part, subset_lists, sensors, measurements))
    orders = sorted(set(n_assigned) | {n + 1 for n in n_assigned})
    log_gc = {j: _log_gc_derivative(log_card, j, log_gbar) for j in orders}

    log_den_terms = np.array([lt + log_gc[n] for lt, n in zip(log_t, n_assigned)])
    log_den = log_sum_exp(log_den_terms)
    if log_den == NEG_INF:
        raise ValueError("every retained partition has zero probability under the "
                         "predicted cardinality; check clutter rates and n_max")
    alphas = np.exp(log_den_terms - log_den)
    log_miss_terms = np.array([lt + log_gc[n + 1] for lt, n in zip(log_t, n_assigned)])
    alpha_0 = math.exp(log_sum_exp(log_miss_terms) - log_den)

    # Cardinality update shares the same partition terms.
    new_card = np.zeros_like(state.cardinality)
    for n in range(state.cardinality.size):
        if state.cardinality[n] == 0.0:
            continue
        terms = []
        for lt, n_p in zip(log_t, n_assigned):
            if n_p > n:
                continue
            lf = _log_falling(n, n_p)
            if n == n_p:
                terms.append(lt + lf)
            elif log_gbar > NEG_INF:
                terms.append(lt + lf + (n - n_p) * log_gbar)
        if terms:
            new_card[n] = state.cardinality[n] * math.exp(log_sum_exp(np.array(terms)) - log_den)
    card_sum = new_card.sum()
    if card_sum <= 0.0:
        raise ValueError("updated cardinality distribution vanished; n_max too small")
    new_card /= card_sum

    # Legacy copies: alpha_0 * omega_j * <N_j, gamma>, pdfs unchanged
    # (constant detection probabilities).
    gamma = math.exp(log_gbar) if log_gbar > NEG_INF else 0.0
    weights = [alpha_0 * om * gamma for om in omega]
    pdfs = list(state.pdfs)
    keys = {}
    for part, alpha in zip(partitions, alphas):
        for j, li in enumerate(part.assignments):
            sub = subset_lists[j][li]
            if sub.is_empty:
                continue
            key = (j, sub.picks)
            if key in keys:
                weights[keys[key]] += alpha
            else:
                keys[key] = len(weights)
                weights.append(alpha)
                pdf = sub.posterior
                if isinstance(pdf, ParticleSet):
                    if rng is None:
                        raise ValueError("particle posterior resampling needs an rng")
                    pdf = resample(pdf, params.particles_per_target, rng)
                pdfs.append(pdf)

    weights = np.array(weights)
    order = [i for i in range(weights.size) if weights[i] >= params.prune_threshold]
    n_hat = int(np.argmax(new_card))
    cap = params.cap_per_target * max(1, n_hat)
    if len(order) > cap:
        ranked = sorted(order, key=lambda i: (-weights[i], i))[:cap]
        keep = set(ranked)
        order = [i for i in order if i in keep]
    kept_w = weights[order]
    kept_mass = kept_w.sum()
    target_mass = float(np.arange(new_card.size) @ new_card)
    if kept_mass > 0.0:
        kept_w = kept_w * (target_mass / kept_mass)
    return IidClusterState(kept_w, tuple(pdfs[i] for i in order), new_card)


def estimate(state: IidClusterState) -> np.ndarray:
    """Means of the MAP-cardinality many highest-weight components."""
    n_hat = state.map_cardinality()
    dim = state.pdfs[0].dim if state.pdfs else 4
    if n_hat == 0 or not state.pdfs:
        return np.zeros((0, dim))
    order = sorted(range(state.weights.size), key=lambda i: (-state.weights[i], i))[:n_hat]
    return np.array([state.pdfs[i].mean() for i in order]).reshape(len(order), dim)


class MsTcphdFilter:
    """Scan-recursive truncated multi-sensor CPHD filter."""

    name = "ms-tcphd"

    def __init__(self, motion: MotionModel, sensors, birth: BirthModel,
                 params: TcphdParams | None = None, density: str = "gm"):
        if density not in ("gm", "particles"):
            raise ValueError(f"unknown density kind {density!r}")
        self.motion = motion
        self.sensors = list(sensors)
        self.birth = birth
        self.params = params or TcphdParams()
        self.density = density

    def initial_state(self) -> IidClusterState:
        return empty_state(self.params.n_max)

    def step(self, state: IidClusterState, measurements, rng: np.random.Generator):
        t0 = time.perf_counter()
        predicted = predict(state, self.motion, self.birth, self.params, rng, self.density)
        updated = update(predicted, self.sensors, measurements, self.params, rng)
        est = estimate(updated)
        diag = ScanDiagnostics(
            subset_counts=(),
            n_partitions=0,
            alpha_entropy=0.0,
            step_seconds=time.perf_counter() - t0,
        )
        return updated, est, diag

    def run(self, scans, rng: np.random.Generator):
        state = self.initial_state()
        for measurements in scans:
            state, est, diag = self.step(state, measurements, rng)
            yield state, est, diag
