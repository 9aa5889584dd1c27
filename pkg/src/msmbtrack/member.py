"""Multi-sensor multi-Bernoulli filter.

Update pipeline per scan: predict the multi-Bernoulli, select high-scoring
multi-sensor measurement subsets per Bernoulli component (greedy trellis
over sensors), assemble disjoint subsets into quasi-partitions (greedy
trellis over components), emit updated Bernoulli components per partition,
collapse duplicates, prune and cap, extract estimates.

A multi-sensor subset picks at most one measurement per sensor; its score is
the existence-weighted integral of the predicted density against the
single-target multi-sensor likelihood.  A quasi-partition assigns one subset
to every predicted component (empty allowed), with pairwise-disjoint
measurement usage; unassigned measurements are clutter.  All scores live in
the log domain.
"""
from __future__ import annotations

import math
import time
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .estimation import (
    DEFAULT_UT,
    UnscentedParams,
    log_sum_exp,
    resample,
    sensor_update_batch,
)
from .models import BirthModel, MotionModel
from .rfs import (
    Bernoulli,
    GaussianMixture,
    MultiBernoulli,
    ParticleSet,
    collapse_duplicates,
    prune_and_cap,
)

NEG_INF = -math.inf


def _logsumexp_rows(mat: np.ndarray) -> np.ndarray:
    """Row-wise log-sum-exp; rows of all -inf map to -inf without warnings."""
    hi = mat.max(axis=1)
    shift = np.where(np.isfinite(hi), hi, 0.0)
    with np.errstate(divide="ignore"):
        return shift + np.log(np.exp(mat - shift[:, None]).sum(axis=1))


@dataclass(frozen=True)
class FilterParams:
    """Truncation and bookkeeping knobs of the greedy update."""

    w_max: int = 4
    p_max: int = 4
    prune_threshold: float = 0.05
    cap_per_target: int = 4
    particles_per_target: int = 700
    ut: UnscentedParams = DEFAULT_UT

    def __post_init__(self):
        if self.w_max < 1 or self.p_max < 1:
            raise ValueError("w_max and p_max must be at least 1")


@dataclass(frozen=True)
class ScoredSubset:
    """A multi-sensor subset with its association score and cached posterior.

    ``picks[i]`` is a measurement index into sensor i's scan or None.
    ``log_beta`` is the score entering quasi-partition formation;
    ``log_integral`` is the bare log integral of the predicted density
    against the subset likelihood (particle form: log sum of weighted
    per-particle likelihoods).  ``posterior`` is the subset-conditioned pdf,
    None for the all-empty subset (the predicted pdf is reused).
    """

    picks: tuple
    log_beta: float
    log_integral: float
    posterior: object
    pairs: frozenset = field(default=frozenset())

    @property
    def is_empty(self) -> bool:
        return not self.pairs


@dataclass(frozen=True)
class QuasiPartition:
    """One subset index per predicted component, plus the implied clutter set."""

    assignments: tuple
    log_score: float
    log_alpha: float = NEG_INF
    alpha: float = 0.0


@dataclass(frozen=True)
class ScanDiagnostics:
    subset_counts: tuple
    n_partitions: int
    alpha_entropy: float
    step_seconds: float


# ---------------------------------------------------------------------------
# Trellis scorers: incremental subset scoring for one predicted component.


@dataclass(frozen=True)
class _GaussState:
    log_like: np.ndarray  # (J,) accumulated log marginal product per mixture comp
    means: np.ndarray     # (J, d)
    covs: np.ndarray      # (J, d, d)
    log_int: float


class GaussianTrellis:
    """Scores subset paths for a Gaussian-mixture predicted density.

    Requires constant detection probabilities; then the score integral per
    mixture component is the running product of sequential Gaussian
    marginals, exact for linear sensors and unscented otherwise.
    """

    def __init__(self, pdf: GaussianMixture, sensors, measurements, ut=DEFAULT_UT):
        self.log_w = np.log(pdf.weights)
        self.sensors = sensors
        self.measurements = measurements
        self.ut = ut
        self._root = _GaussState(np.zeros(len(pdf.weights)), pdf.means, pdf.covs, 0.0)

    def root(self) -> _GaussState:
        return self._root

    def branch_many(self, states, i: int):
        """Extend every retained path at sensor i.

        Returns per-path (empty extension, measurement extensions, candidate
        log integrals).  Paths carry distinct covariances, so the Gaussian
        factorizations are per path; measurements within a path share them.
        """
        sensor = self.sensors[i]
        Z = self.measurements[i]
        pd = sensor.detection_prob
        log_miss = math.log1p(-pd) if pd < 1.0 else NEG_INF
        m = len(Z)
        out = []
        for state in states:
            empty = _GaussState(state.log_like + log_miss, state.means, state.covs,
                                state.log_int + log_miss)
            if m == 0 or pd <= 0.0:
                out.append((empty, [], np.full(m, NEG_INF)))
                continue
            det_const = math.log(pd) - sensor.log_clutter_density
            J = state.means.shape[0]
            logm = np.empty((J, m))
            post_means = np.empty((J, m, state.means.shape[1]))
            post_covs = np.empty_like(state.covs)
            for n in range(J):
                post_means[n], post_covs[n], logm[n] = sensor_update_batch(
                    state.means[n], state.covs[n], sensor, Z, self.ut)
            acc = self.log_w[:, None] + state.log_like[:, None] + logm + det_const  # (J, m)
            cand_ints = _logsumexp_rows(acc.T)
            meas_states = [
                _GaussState(state.log_like + logm[:, l] + det_const,
                            post_means[:, l, :], post_covs, float(cand_ints[l]))
                for l in range(m)
            ]
            out.append((empty, meas_states, cand_ints))
        return out

    def posterior(self, state: _GaussState) -> GaussianMixture:
        logw = self.log_w + state.log_like
        logw -= logw.max()
        w = np.exp(logw)
        return GaussianMixture(w / w.sum(), state.means, state.covs)


@dataclass(frozen=True)
class _PartState:
    log_f: np.ndarray  # (N,) accumulated per-particle log likelihood
    offset: float      # scalar log factors shared by all particles
    log_int: float


class ParticleTrellis:
    """Scores subset paths for a particle predicted density.

    Per-measurement log likelihood matrices are precomputed per sensor so a
    branch reduces to vector adds plus one log-sum-exp per candidate.
    """

    def __init__(self, pdf: ParticleSet, sensors, measurements):
        self.log_w = np.log(pdf.weights)
        self.states_arr = pdf.states
        self.sensors = sensors
        self.loglik = [
            s.log_likelihood_matrix(Z, pdf.states) if len(Z) else np.zeros((0, len(pdf.weights)))
            for s, Z in zip(sensors, measurements)
        ]

    def root(self) -> _PartState:
        return _PartState(np.zeros(self.log_w.size), 0.0, 0.0)

    def branch_many(self, states, i: int):
        """Extend every retained path at sensor i in one stacked operation."""
        sensor = self.sensors[i]
        pd = sensor.detection_prob
        log_miss = math.log1p(-pd) if pd < 1.0 else NEG_INF
        L = self.loglik[i]
        m = L.shape[0]
        empties = [
            _PartState(s.log_f, s.offset + log_miss, s.log_int + log_miss) for s in states
        ]
        if m == 0 or pd <= 0.0:
            return [(e, [], np.full(m, NEG_INF)) for e in empties]
        det_const = math.log(pd) - sensor.log_clutter_density
        F = np.stack([s.log_f for s in states])            # (L, N)
        A = F[:, None, :] + L[None, :, :]                  # (L, m, N)
        lse = _logsumexp_rows((A + self.log_w).reshape(-1, A.shape[2])).reshape(A.shape[:2])
        out = []
        for li, state in enumerate(states):
            offset = state.offset + det_const
            cand_ints = lse[li] + offset
            meas_states = [_PartState(A[li, l], offset, float(cand_ints[l])) for l in range(m)]
            out.append((empties[li], meas_states, cand_ints))
        return out

    def posterior(self, state: _PartState) -> ParticleSet:
        logw = self.log_w + state.log_f
        logw -= logw.max()
        w = np.exp(logw)
        return ParticleSet(w / w.sum(), self.states_arr)


def make_trellis(pdf, sensors, measurements, ut=DEFAULT_UT):
    if isinstance(pdf, GaussianMixture):
        return GaussianTrellis(pdf, sensors, measurements, ut)
    return ParticleTrellis(pdf, sensors, measurements)


# ---------------------------------------------------------------------------
# Greedy selection.


def greedy_subset_paths(trellis, measurements, w_max: int):
    """Greedy per-component subset selection over the sensor trellis.

    Sensors are processed in order; each retained partial path branches into
    the empty extension plus one extension per measurement, candidates are
    ranked by their running score, and at most ``min(w_max, candidates)``
    non-empty paths survive each stage.  The all-empty path is always
    retained at index 0.  Candidates with zero likelihood are dropped.  Ties
    break on (lower partial-path index, lower measurement index).

    Returns ``[(picks, state), ...]`` with the all-empty subset first and the
    remainder in descending score order.
    """
    paths = [((), trellis.root())]
    for i in range(len(measurements)):
        m = len(measurements[i])
        branched = trellis.branch_many([state for _, state in paths], i)
        first = None
        cands = []
        for l, ((picks, _), (empty, states, cand_ints)) in enumerate(zip(paths, branched)):
            if l == 0:
                first = (picks + (None,), empty)
            elif empty.log_int > NEG_INF:
                cands.append((empty.log_int, l, 0, picks + (None,), empty))
            for n in range(m):
                if cand_ints[n] > NEG_INF:
                    cands.append((cand_ints[n], l, n + 1, picks + (n,), states[n]))
        keep = min(w_max, (m + 1) * len(paths) - 1)
        cands.sort(key=lambda c: (-c[0], c[1], c[2]))
        paths = [first] + [(picks, state) for _, _, _, picks, state in cands[:keep]]
    return paths


def member_subsets(component: Bernoulli, sensors, measurements, params: FilterParams):
    """Scored subsets for one predicted Bernoulli component.

    The all-empty subset scores 1 - r + r <p, gamma>; a non-empty subset
    scores r times the integral of the predicted density against the subset
    likelihood.  The returned list leads with the all-empty subset, then
    descending score.
    """
    trellis = make_trellis(component.pdf, sensors, measurements, params.ut)
    paths = greedy_subset_paths(trellis, measurements, params.w_max)
    r = component.r
    out = []
    for idx, (picks, state) in enumerate(paths):
        if idx == 0:
            beta_empty = 1.0 - r + r * math.exp(state.log_int)
            out.append(ScoredSubset(
                picks=picks,
                log_beta=math.log(beta_empty) if beta_empty > 0.0 else NEG_INF,
                log_integral=state.log_int,
                posterior=None,
            ))
            continue
        log_beta = (math.log(r) + state.log_int) if r > 0.0 else NEG_INF
        if log_beta == NEG_INF:
            continue
        pairs = frozenset((i, n) for i, n in enumerate(picks) if n is not None)
        out.append(ScoredSubset(picks, log_beta, state.log_int,
                                trellis.posterior(state), pairs))
    return out


def greedy_partitions(subset_lists, p_max: int):
    """Greedy quasi-partition selection over the component trellis.

    Components are processed in order; every retained partial partition
    branches over that component's subsets, skipping any subset sharing a
    (sensor, measurement) pair with the partition so far.  At most ``p_max``
    partitions survive each stage, ranked by the accumulated subset scores
    with ties broken on (lower partition index, lower subset index).  The
    all-empty subset guarantees at least one valid path.
    """
    paths = [((), frozenset(), 0.0)]
    for subs in subset_lists:
        cands = []
        for pi, (assign, used, logscore) in enumerate(paths):
            for li, sub in enumerate(subs):
                if sub.pairs and not used.isdisjoint(sub.pairs):
                    continue
                cands.append((logscore + sub.log_beta, pi, li))
        cands.sort(key=lambda c: (-c[0], c[1], c[2]))
        new_paths = []
        for score, pi, li in cands[: min(p_max, len(cands))]:
            assign, used, _ = paths[pi]
            new_paths.append((assign + (li,), used | subs[li].pairs, score))
        paths = new_paths
    return [QuasiPartition(assign, score) for assign, _, score in paths]


def clutter_log_term(partition: QuasiPartition, subset_lists, sensors, measurements) -> float:
    """Poisson clutter-count contribution: sum_i |W0_i| log(lambda_i).

    With Poisson clutter the n-th derivative of the count pgf at zero is
    lambda^n exp(-lambda); the exp(-lambda) factors are common to every
    partition and drop under normalization.
    """
    used = Counter()
    for j, li in enumerate(partition.assignments):
        for i, _ in subset_lists[j][li].pairs:
            used[i] += 1
    term = 0.0
    for i, sensor in enumerate(sensors):
        n_clutter = len(measurements[i]) - used[i]
        if sensor.clutter_rate > 0.0:
            term += n_clutter * math.log(sensor.clutter_rate)
        elif n_clutter > 0:
            return NEG_INF
    return term


def normalize_partitions(partitions, subset_lists, sensors, measurements):
    """Attach clutter terms and normalize weights over the retained set."""
    log_unnorm = np.array([
        p.log_score + clutter_log_term(p, subset_lists, sensors, measurements)
        for p in partitions
    ])
    total = log_sum_exp(log_unnorm)
    if total == NEG_INF:
        raise ValueError("every retained quasi-partition has zero probability; "
                         "check clutter rates against the measurement sets")
    log_alpha = log_unnorm - total
    return [
        QuasiPartition(p.assignments, p.log_score, float(la), float(math.exp(la)))
        for p, la in zip(partitions, log_alpha)
    ]


# ---------------------------------------------------------------------------
# Filter.


def predict(mb: MultiBernoulli, motion: MotionModel, birth: BirthModel,
            rng: np.random.Generator | None = None, density: str = "gm",
            particles_per_target: int = 700) -> MultiBernoulli:
    """Survival-thinned, kernel-propagated components plus fresh births.

    Survivors keep their density shape: Gaussian components map through
    (F, Q) with the constant survival probability factored into r; particle
    components move each particle through the noisy kinematic kernel
    (weights unchanged).  Birth components are appended every scan, sampled
    into particle sets in SMC mode.
    """
    ps = motion.survival_prob
    out = []
    for comp in mb:
        pdf = comp.pdf
        if isinstance(pdf, GaussianMixture):
            means = pdf.means @ motion.F.T
            covs = motion.F @ pdf.covs @ motion.F.T + motion.Q
            new_pdf = GaussianMixture(pdf.weights, means, covs)
        else:
            if rng is None:
                raise ValueError("particle prediction needs an rng")
            new_pdf = ParticleSet(pdf.weights, motion.propagate_particles(pdf.states, rng))
        out.append(Bernoulli(comp.r * ps, new_pdf))
    for b in birth.components():
        if density == "particles":
            if rng is None:
                raise ValueError("particle birth sampling needs an rng")
            chol = np.linalg.cholesky(birth.cov)
            states = b.pdf.means[0] + rng.standard_normal(
                (particles_per_target, birth.cov.shape[0])) @ chol.T
            pdf = ParticleSet(np.full(particles_per_target, 1.0 / particles_per_target), states)
            out.append(Bernoulli(b.r, pdf))
        else:
            out.append(b)
    return MultiBernoulli(tuple(out))


def update(predicted: MultiBernoulli, subset_lists, partitions, params: FilterParams,
           rng: np.random.Generator | None = None):
    """Emit updated Bernoulli components from the retained quasi-partitions.

    Per partition P and predicted component j: an empty assignment emits the
    legacy component with existence alpha_P * r<p,gamma> / (1 - r + r<p,gamma>)
    and the predicted pdf (constant detection probabilities leave it
    unchanged); a non-empty assignment emits existence alpha_P with the
    cached subset-conditioned posterior.  Components sharing (j, subset) are
    collapsed by summing existence; particle posteriors are then resampled.

    Returns (collapsed_before_prune, pruned_and_capped).
    """
    entries = []
    for part in partitions:
        for j, comp in enumerate(predicted):
            sub = subset_lists[j][part.assignments[j]]
            key = (j, sub.picks)
            if sub.is_empty:
                beta_empty = math.exp(sub.log_beta)
                surv = comp.r * math.exp(sub.log_integral)
                ratio = surv / beta_empty if beta_empty > 0.0 else 0.0
                entries.append((key, Bernoulli(part.alpha * ratio, comp.pdf)))
            else:
                entries.append((key, Bernoulli(part.alpha, sub.posterior)))
    collapsed = collapse_duplicates(entries)
    seen = set()
    keys = []
    for key, _ in entries:
        if key not in seen:
            seen.add(key)
            keys.append(key)
    comps = []
    for key, comp in zip(keys, collapsed):
        nonempty = any(p is not None for p in key[1])
        if nonempty and isinstance(comp.pdf, ParticleSet):
            if rng is None:
                raise ValueError("particle posterior resampling needs an rng")
            comp = Bernoulli(comp.r, resample(comp.pdf, params.particles_per_target, rng))
        comps.append(comp)
    collapsed = MultiBernoulli(tuple(comps))
    n_est = sum(1 for c in collapsed if c.r > 0.5 and c.r >= params.prune_threshold)
    cap = params.cap_per_target * max(1, n_est)
    return collapsed, prune_and_cap(collapsed, params.prune_threshold, cap)


def estimate(mb: MultiBernoulli) -> np.ndarray:
    """State means of components with existence above one half."""
    means = [c.pdf.mean() for c in mb if c.r > 0.5]
    dim = means[0].size if means else 4
    return np.array(means, dtype=float).reshape(len(means), dim)


def log_multisensor_likelihood(picks, x, sensors, measurements) -> float:
    """Reference evaluation of the single-target multi-sensor log likelihood.

    log f(W | x) sums log pD + log h(z | x) - log c(z) over picked sensors
    and log(1 - pD) over the rest.
    """
    x = np.asarray(x, dtype=float)
    total = 0.0
    for i, pick in enumerate(picks):
        sensor = sensors[i]
        if pick is None:
            if sensor.detection_prob >= 1.0:
                return NEG_INF
            total += math.log1p(-sensor.detection_prob)
            continue
        if sensor.detection_prob <= 0.0:
            return NEG_INF
        z = np.asarray(measurements[i][pick], dtype=float)
        loglik = float(sensor.log_likelihood_matrix(z[None, :], x[None, :])[0, 0])
        total += math.log(sensor.detection_prob) - sensor.log_clutter_density + loglik
    return total


class MsMemberFilter:
    """Scan-recursive MS-MeMBer filter over a fixed sensor suite."""

    name = "ms-member"

    def __init__(self, motion: MotionModel, sensors, birth: BirthModel,
                 params: FilterParams | None = None, density: str = "gm"):
        if density not in ("gm", "particles"):
            raise ValueError(f"unknown density kind {density!r}")
        self.motion = motion
        self.sensors = list(sensors)
        self.birth = birth
        self.params = params or FilterParams()
        self.density = density

    def initial_state(self) -> MultiBernoulli:
        return MultiBernoulli(())

    def step(self, mb: MultiBernoulli, measurements, rng: np.random.Generator):
        """One full scan: predict, associate, update, estimate."""
        t0 = time.perf_counter()
        params = self.params
        predicted = predict(mb, self.motion, self.birth, rng, self.density,
                            params.particles_per_target)
        subset_lists = [
            member_subsets(comp, self.sensors, measurements, params) for comp in predicted
        ]
        partitions = greedy_partitions(subset_lists, params.p_max)
        partitions = normalize_partitions(partitions, subset_lists, self.sensors, measurements)
        _, updated = update(predicted, subset_lists, partitions, params, rng)
        est = estimate(updated)
        alphas = np.array([p.alpha for p in partitions])
        entropy = float(-np.sum(alphas * np.log(np.maximum(alphas, 1e-300))))
        diag = ScanDiagnostics(
            subset_counts=tuple(len(s) for s in subset_lists),
            n_partitions=len(partitions),
            alpha_entropy=entropy,
            step_seconds=time.perf_counter() - t0,
        )
        return updated, est, diag

    def run(self, scans, rng: np.random.Generator):
        """Filter a whole measurement sequence; yields (state, estimates, diagnostics)."""
        mb = self.initial_state()
        for measurements in scans:
            mb, est, diag = self.step(mb, measurements, rng)
            yield mb, est, diag
