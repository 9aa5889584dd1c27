"""MS-MeMBer filter: scoring, greedy selection, update, estimation."""
import math

import numpy as np
import pytest

import msmbtrack as m
from msmbtrack.member import (
    FilterParams,
    MsMemberFilter,
    greedy_partitions,
    log_multisensor_likelihood,
    member_subsets,
    normalize_partitions,
    predict,
    QuasiPartition,
    update,
    estimate,
)
from msmbtrack.models import BirthModel, LinearSensorModel, MotionModel
from msmbtrack.rfs import Bernoulli, GaussianMixture, MultiBernoulli, mean_cardinality

from _oracles import (
    block_subset_log_integral,
    enumerate_subsets,
    exhaustive_member_update,
    gaussian_logpdf,
    grid_log_f,
    make_grid,
)

UNBOUNDED = FilterParams(w_max=10**9, p_max=10**9, prune_threshold=0.0,
                         cap_per_target=10**9)


def sensor2d(pd, lam, var, half=50.0):
    return LinearSensorModel(H=np.eye(2), R=var * np.eye(2), detection_prob=pd,
                             clutter_rate=lam,
                             region=np.array([[-half, half], [-half, half]]))


def bern(r, mean, var=25.0):
    return Bernoulli(r, GaussianMixture.single(np.asarray(mean, dtype=float),
                                               var * np.eye(2)))


class TestMultisensorLikelihood:
    def test_empty_subset_is_log_gamma(self):
        sensors = [sensor2d(0.5, 1.0, 4.0)] * 3
        out = log_multisensor_likelihood((None, None, None), np.zeros(2), sensors,
                                         [np.zeros((0, 2))] * 3)
        assert out == pytest.approx(math.log(0.125))

    def test_single_sensor_substitution(self):
        area = 100.0 * 100.0
        sensor = sensor2d(0.9, 1.0, 4.0)
        z = np.array([[1.0, -1.0]])
        x = np.array([0.5, 0.5])
        out = log_multisensor_likelihood((0,), x, [sensor], [z])
        loglik = gaussian_logpdf(z, x, 4.0 * np.eye(2))[0]
        assert out == pytest.approx(math.log(0.9) + loglik + math.log(area))

    def test_matches_grid_evaluation(self):
        sensors = [sensor2d(0.4, 2.0, 4.0), sensor2d(0.6, 1.0, 9.0)]
        measurements = [np.array([[3.0, -2.0]]), np.array([[1.0, 0.5]])]
        pts = np.array([[0.0, 0.0], [2.0, -1.0], [-4.0, 3.0]])
        for picks in [(0, 0), (None, 0), (0, None)]:
            expected = grid_log_f(picks, sensors, measurements, pts)
            got = [log_multisensor_likelihood(picks, x, sensors, measurements) for x in pts]
            assert np.allclose(got, expected, atol=1e-12)


class TestSubsetScores:
    def test_empty_subset_score(self):
        sensor = sensor2d(0.5, 1.0, 4.0)
        subs = member_subsets(bern(0.5, [0.0, 0.0]), [sensor], [np.zeros((0, 2))],
                              UNBOUNDED)
        assert len(subs) == 1
        assert math.exp(subs[0].log_beta) == pytest.approx(0.75)

    def test_zero_existence_drops_nonempty(self):
        sensor = sensor2d(0.5, 1.0, 4.0)
        subs = member_subsets(bern(0.0, [0.0, 0.0]), [sensor],
                              [np.array([[0.0, 0.0]])], UNBOUNDED)
        assert [s.picks for s in subs] == [(None,)]

    def test_score_matches_block_oracle(self):
        sensors = [sensor2d(0.7, 2.0, 4.0), sensor2d(0.5, 1.0, 9.0)]
        measurements = [np.array([[3.0, -2.0], [20.0, 15.0]]), np.array([[1.0, 0.5]])]
        comp = bern(0.6, [0.0, 0.0])
        subs = member_subsets(comp, sensors, measurements, UNBOUNDED)
        assert len(subs) == 6  # (2+1)*(1+1) subsets
        for sub in subs:
            if sub.is_empty:
                continue
            oracle = math.log(0.6) + block_subset_log_integral(
                comp.pdf.means[0], comp.pdf.covs[0], sub.picks, sensors, measurements)
            assert sub.log_beta == pytest.approx(oracle, rel=1e-9)

    def test_cached_posterior_matches_conjugate_update(self):
        sensor = sensor2d(0.7, 2.0, 4.0)
        z = np.array([[3.0, -2.0]])
        comp = bern(0.6, [0.0, 0.0])
        subs = member_subsets(comp, [sensor], [z], UNBOUNDED)
        sub = next(s for s in subs if not s.is_empty)
        exact = m.kalman_update(comp.pdf.means[0], comp.pdf.covs[0], np.eye(2),
                                sensor.R, z[0])
        assert np.allclose(sub.posterior.means[0], exact.mean, atol=1e-10)
        assert np.allclose(sub.posterior.covs[0], exact.cov, atol=1e-10)


class TestGreedySubsets:
    def test_single_sensor_equals_exhaustive_ranking(self):
        sensor = sensor2d(0.7, 2.0, 9.0)
        Z = [np.array([[1.0, 1.0], [30.0, -20.0], [-3.0, 2.0]])]
        comp = bern(0.6, [0.0, 0.0])
        subs = member_subsets(comp, [sensor], Z, FilterParams(w_max=4, p_max=4))
        assert subs[0].picks == (None,)
        scores = {}
        for picks in enumerate_subsets(1, [3]):
            if picks == (None,):
                continue
            scores[picks] = math.log(0.6) + block_subset_log_integral(
                comp.pdf.means[0], comp.pdf.covs[0], picks, [sensor], Z)
        expected_order = sorted(scores, key=lambda k: -scores[k])
        assert [s.picks for s in subs[1:]] == expected_order
        for s in subs[1:]:
            assert s.log_beta == pytest.approx(scores[s.picks], rel=1e-9)

    def test_w_max_truncates(self):
        sensor = sensor2d(0.7, 2.0, 9.0)
        Z = [np.array([[1.0, 1.0], [2.0, 0.0], [-3.0, 2.0], [0.5, -0.5]])]
        subs = member_subsets(bern(0.6, [0.0, 0.0]), [sensor], Z,
                              FilterParams(w_max=2, p_max=4))
        assert len(subs) == 3  # empty + w_max

    def test_zero_detection_keeps_only_empty(self):
        sensor = sensor2d(0.0, 2.0, 9.0)
        Z = [np.array([[1.0, 1.0], [2.0, 0.0]])]
        subs = member_subsets(bern(0.6, [0.0, 0.0]), [sensor], Z, UNBOUNDED)
        assert [s.picks for s in subs] == [(None,)]


class TestGreedyPartitions:
    def test_single_component_reduction(self):
        sensors = [sensor2d(0.7, 3.0, 9.0)]
        Z = [np.array([[1.0, 1.0], [40.0, -40.0]])]
        subs = [member_subsets(bern(0.6, [0.0, 0.0]), sensors, Z, UNBOUNDED)]
        parts = normalize_partitions(greedy_partitions(subs, 10**9), subs, sensors, Z)
        # alpha proportional to beta times lambda^{|W0|}
        raw = {}
        for p in parts:
            sub = subs[0][p.assignments[0]]
            n_unused = 2 - len(sub.pairs)
            raw[p.assignments] = math.exp(sub.log_beta) * 3.0**n_unused
        total = sum(raw.values())
        for p in parts:
            assert p.alpha == pytest.approx(raw[p.assignments] / total, rel=1e-9)
        assert sum(p.alpha for p in parts) == pytest.approx(1.0, abs=1e-9)

    def test_overlap_exclusion_forces_disjoint(self):
        sensors = [sensor2d(0.9, 1.0, 4.0)]
        Z = [np.array([[0.0, 0.0]])]
        comps = [bern(0.7, [0.0, 0.0]), bern(0.7, [0.5, 0.5])]
        subs = [member_subsets(c, sensors, Z, UNBOUNDED) for c in comps]
        parts = greedy_partitions(subs, 10**9)
        # The shared measurement appears in at most one assignment per partition.
        for p in parts:
            picked = [subs[j][li].picks for j, li in enumerate(p.assignments)]
            taken = [pk for pk in picked if pk != (None,)]
            assert len(taken) == len(set(taken))

    def test_alpha_shift_invariance(self):
        sensors = [sensor2d(0.7, 2.0, 9.0), sensor2d(0.5, 1.0, 4.0)]
        Z = [np.array([[1.0, 1.0]]), np.array([[0.5, -0.5], [-2.0, 2.0]])]
        subs = [member_subsets(bern(0.6, [0.0, 0.0]), sensors, Z, UNBOUNDED)]
        parts = greedy_partitions(subs, 10**9)
        base = normalize_partitions(parts, subs, sensors, Z)
        shifted = [QuasiPartition(p.assignments, p.log_score + 13.7) for p in parts]
        moved = normalize_partitions(shifted, subs, sensors, Z)
        for a, b in zip(base, moved):
            assert a.alpha == pytest.approx(b.alpha, abs=1e-12)


class TestUpdate:
    def test_legacy_arithmetic(self):
        # Single all-empty partition with alpha 1: r' = r*gamma / (1 - r + r*gamma).
        sensors = [sensor2d(0.5, 1.0, 4.0)] * 3
        Z = [np.zeros((0, 2))] * 3
        mb = MultiBernoulli((bern(0.5, [0.0, 0.0]),))
        subs = [member_subsets(mb.components[0], sensors, Z, UNBOUNDED)]
        parts = normalize_partitions(greedy_partitions(subs, 4), subs, sensors, Z)
        assert len(parts) == 1 and parts[0].alpha == pytest.approx(1.0)
        collapsed, _ = update(mb, subs, parts, UNBOUNDED)
        assert collapsed.components[0].r == pytest.approx(0.0625 / 0.5625)

    def test_certain_detection_conjugacy(self):
        sensor = sensor2d(1.0, 0.0, 4.0)
        z = np.array([[3.0, -1.0]])
        mb = MultiBernoulli((bern(0.7, [0.0, 0.0]),))
        subs = [member_subsets(mb.components[0], [sensor], [z], UNBOUNDED)]
        parts = normalize_partitions(greedy_partitions(subs, 4), subs, [sensor], [z])
        collapsed, pruned = update(mb, subs, parts, FilterParams())
        assert mean_cardinality(collapsed) == pytest.approx(1.0, abs=1e-12)
        assert len(pruned) == 1
        comp = pruned.components[0]
        assert comp.r == pytest.approx(1.0)
        exact = m.kalman_update(np.zeros(2), 25.0 * np.eye(2), np.eye(2), sensor.R, z[0])
        assert np.allclose(comp.pdf.means[0], exact.mean, atol=1e-10)

    def test_emitted_existence_bounded_by_alpha(self):
        rng = np.random.default_rng(10)
        sensors = [sensor2d(0.6, 2.0, 9.0), sensor2d(0.4, 1.0, 4.0)]
        Z = [rng.uniform(-10, 10, (2, 2)), rng.uniform(-10, 10, (2, 2))]
        mb = MultiBernoulli((bern(0.5, [0.0, 0.0]), bern(0.8, [4.0, -3.0])))
        subs = [member_subsets(c, sensors, Z, UNBOUNDED) for c in mb]
        parts = normalize_partitions(greedy_partitions(subs, 10**9), subs, sensors, Z)
        for part in parts:
            for j in range(len(mb)):
                sub = subs[j][part.assignments[j]]
                if sub.is_empty:
                    comp = mb.components[j]
                    surv = comp.r * math.exp(sub.log_integral)
                    r_emit = part.alpha * surv / math.exp(sub.log_beta)
                else:
                    r_emit = part.alpha
                assert r_emit <= part.alpha + 1e-12

    def test_greedy_equals_exhaustive_on_small_instance(self):
        rng = np.random.default_rng(11)
        sensors = [sensor2d(0.7, 2.0, 4.0), sensor2d(0.5, 1.0, 9.0),
                   sensor2d(0.9, 3.0, 1.0)]
        Z = [rng.uniform(-15, 15, (3, 2)), rng.uniform(-15, 15, (2, 2)),
             rng.uniform(-15, 15, (3, 2))]
        priors = [(0.6, [0.0, 0.0]), (0.4, [5.0, -3.0]), (0.8, [-8.0, 6.0])]
        mb = MultiBernoulli(tuple(bern(r, mu) for r, mu in priors))
        subs = [member_subsets(c, sensors, Z, UNBOUNDED) for c in mb]
        parts = normalize_partitions(greedy_partitions(subs, 10**9), subs, sensors, Z)
        collapsed, _ = update(mb, subs, parts, UNBOUNDED)
        keys = []
        for part in parts:
            for j in range(len(mb)):
                key = (j, subs[j][part.assignments[j]].picks)
                if key not in keys:
                    keys.append(key)
        greedy_r = {k: c.r for k, c in zip(keys, collapsed)}
        oracle_r, _ = exhaustive_member_update(
            [(r, np.asarray(mu, dtype=float), 25.0 * np.eye(2)) for r, mu in priors],
            sensors, Z)
        assert set(greedy_r) == set(oracle_r)
        for key, val in oracle_r.items():
            assert greedy_r[key] == pytest.approx(val, abs=1e-9)

    @pytest.mark.parametrize("seed", range(8))
    def test_greedy_equals_exhaustive_randomized(self, seed):
        rng = np.random.default_rng(seed)
        n_sensors = int(rng.integers(1, 4))
        n_comp = int(rng.integers(1, 4))
        sensors = [sensor2d(float(rng.uniform(0.2, 0.95)), float(rng.uniform(0.5, 4.0)),
                            float(rng.uniform(1.0, 16.0))) for _ in range(n_sensors)]
        Z = [rng.uniform(-20, 20, (int(rng.integers(0, 4)), 2)) for _ in range(n_sensors)]
        priors = [(float(rng.uniform(0.05, 0.95)),
                   rng.uniform(-10, 10, 2)) for _ in range(n_comp)]
        mb = MultiBernoulli(tuple(bern(r, mu) for r, mu in priors))
        subs = [member_subsets(c, sensors, Z, UNBOUNDED) for c in mb]
        parts = normalize_partitions(greedy_partitions(subs, 10**9), subs, sensors, Z)
        collapsed, _ = update(mb, subs, parts, UNBOUNDED)
        keys = []
        for part in parts:
            for j in range(len(mb)):
                key = (j, subs[j][part.assignments[j]].picks)
                if key not in keys:
                    keys.append(key)
        greedy_r = {k: c.r for k, c in zip(keys, collapsed)}
        oracle_r, _ = exhaustive_member_update(
            [(r, np.asarray(mu, dtype=float), 25.0 * np.eye(2)) for r, mu in priors],
            sensors, Z)
        assert set(greedy_r) == set(oracle_r)
        for key, val in oracle_r.items():
            assert greedy_r[key] == pytest.approx(val, abs=1e-9)

    def test_duplicate_measurements_tie_break_deterministic(self):
        sensor = sensor2d(0.7, 2.0, 9.0)
        z = np.array([1.0, 1.0])
        Z = [np.vstack([z, z, z])]  # three identical measurements
        subs = member_subsets(bern(0.6, [0.0, 0.0]), [sensor], Z,
                              FilterParams(w_max=4, p_max=4))
        # Equal scores rank by measurement index.
        assert [s.picks for s in subs] == [(None,), (0,), (1,), (2,)]

    def test_updated_mass_matches_phd_quadrature(self):
        # Mean cardinality before prune/cap equals the grid-integrated
        # first-moment density over the retained partitions, with every
        # integral recomputed by quadrature.
        rng = np.random.default_rng(12)
        sensors = [sensor2d(0.6, 2.0, 4.0), sensor2d(0.4, 1.0, 9.0)]
        Z = [rng.uniform(-10, 10, (2, 2)), rng.uniform(-10, 10, (2, 2))]
        priors = [(0.5, [0.0, 0.0]), (0.8, [4.0, -3.0])]
        mb = MultiBernoulli(tuple(bern(r, mu) for r, mu in priors))
        subs = [member_subsets(c, sensors, Z, FilterParams(w_max=3, p_max=5)) for c in mb]
        parts = normalize_partitions(greedy_partitions(subs, 5), subs, sensors, Z)
        collapsed, _ = update(mb, subs, parts, UNBOUNDED)

        pts, cell = make_grid([-60, -60], [60, 60], 800)
        log_gamma = sum(math.log1p(-s.detection_prob) for s in sensors)
        phi_quad = {}
        mass_quad = {}
        for j, (r, mu) in enumerate(priors):
            pdf_eval = np.exp(gaussian_logpdf(pts, np.asarray(mu, dtype=float),
                                              25.0 * np.eye(2)))
            for li, sub in enumerate(subs[j]):
                if sub.is_empty:
                    p_gamma = math.exp(log_gamma) * float(np.sum(pdf_eval) * cell)
                    phi_quad[(j, li)] = 1.0 - r + r * p_gamma
                    mass_quad[(j, li)] = r * p_gamma / (1.0 - r + r * p_gamma)
                else:
                    integral = float(np.sum(
                        pdf_eval * np.exp(grid_log_f(sub.picks, sensors, Z, pts))) * cell)
                    phi_quad[(j, li)] = r * integral
                    mass_quad[(j, li)] = 1.0
        log_w = []
        for part in parts:
            total = sum(math.log(phi_quad[(j, li)])
                        for j, li in enumerate(part.assignments))
            used = set()
            for j, li in enumerate(part.assignments):
                used |= subs[j][li].pairs
            for i, s in enumerate(sensors):
                n_c = len(Z[i]) - sum(1 for (si, _) in used if si == i)
                total += n_c * math.log(s.clutter_rate)
            log_w.append(total)
        alphas = np.exp(np.array(log_w) - max(log_w))
        alphas /= alphas.sum()
        expected_mass = sum(
            a * sum(mass_quad[(j, li)] for j, li in enumerate(part.assignments))
            for a, part in zip(alphas, parts))
        assert mean_cardinality(collapsed) == pytest.approx(expected_mass, abs=1e-6)


class TestFilterBehavior:
    def make_filter(self, density="gm"):
        motion = MotionModel(ts=1.0, sigma_v=1.0, survival_prob=0.99)
        sensors = [sensor2d_4d(0.5, 2.0, 100.0) for _ in range(2)]
        birth = BirthModel(existence=0.1, means=np.array([[0.0, 0.0, 0.0, 0.0]]),
                           cov=np.diag([60.0, 60.0, 25.0, 25.0]))
        return MsMemberFilter(motion, sensors, birth,
                              FilterParams(prune_threshold=0.0, cap_per_target=100),
                              density)

    def test_no_measurements_decays_existence(self):
        filt = self.make_filter()
        rng = np.random.default_rng(13)
        mb = MultiBernoulli((Bernoulli(0.9, GaussianMixture.single(
            np.array([5.0, 5.0, 0.0, 0.0]), np.diag([60.0, 60.0, 25.0, 25.0]))),))
        empty = [np.zeros((0, 2))] * 2
        prev = 0.9
        for _ in range(3):
            mb, est, diag = filt.step(mb, empty, rng)
            assert diag.n_partitions == 1
            top = max(c.r for c in mb)
            assert top < prev
            prev = top

    def test_step_deterministic_given_seed(self):
        filt = self.make_filter(density="particles")
        scans = [[np.array([[1.0, 1.0]]), np.array([[0.5, -0.5]])],
                 [np.array([[2.0, 1.5]]), np.zeros((0, 2))]]
        outs = []
        for _ in range(2):
            rng = np.random.default_rng(99)
            mb = filt.initial_state()
            ests = []
            for meas in scans:
                mb, est, _ = filt.step(mb, meas, rng)
                ests.append(est)
            outs.append((tuple(c.r for c in mb), ests))
        assert outs[0][0] == outs[1][0]
        for a, b in zip(outs[0][1], outs[1][1]):
            assert np.array_equal(a, b)


def sensor2d_4d(pd, lam, var, half=1000.0):
    H = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])
    return LinearSensorModel(H=H, R=var * np.eye(2), detection_prob=pd,
                             clutter_rate=lam,
                             region=np.array([[-half, half], [-half, half]]))


class TestPredictAndEstimate:
    def test_survival_identity(self):
        motion = MotionModel(ts=1.0, sigma_v=1.0, survival_prob=1.0)
        birth = BirthModel(existence=0.0, means=np.zeros((0, 4)), cov=np.eye(4))
        pdf = GaussianMixture.single(np.array([1.0, 2.0, 3.0, 4.0]), np.diag([1.0, 2, 3, 4]))
        mb = MultiBernoulli((Bernoulli(0.6, pdf),))
        out = predict(mb, motion, birth)
        comp = out.components[0]
        assert comp.r == pytest.approx(0.6)
        assert np.allclose(comp.pdf.means[0], motion.F @ pdf.means[0])
        assert np.allclose(comp.pdf.covs[0],
                           motion.F @ pdf.covs[0] @ motion.F.T + motion.Q)

    def test_zero_existence_stays_zero(self):
        motion = MotionModel(survival_prob=0.99)
        birth = BirthModel(existence=0.0, means=np.zeros((0, 4)), cov=np.eye(4))
        mb = MultiBernoulli((Bernoulli(0.0, GaussianMixture.single(np.zeros(4), np.eye(4))),))
        assert predict(mb, motion, birth).components[0].r == 0.0

    def test_constant_survival_scales_r(self):
        motion = MotionModel(survival_prob=0.99)
        birth = BirthModel(existence=0.0, means=np.zeros((0, 4)), cov=np.eye(4))
        mb = MultiBernoulli(tuple(
            Bernoulli(r, GaussianMixture.single(np.zeros(4), np.eye(4)))
            for r in (0.2, 0.7)))
        out = predict(mb, motion, birth)
        assert [c.r for c in out] == pytest.approx([0.99 * 0.2, 0.99 * 0.7])

    def test_estimate_threshold(self):
        def mbr(*rs):
            return MultiBernoulli(tuple(
                Bernoulli(r, GaussianMixture.single(np.full(4, float(i)), np.eye(4)))
                for i, r in enumerate(rs)))
        assert estimate(mbr(0.9, 0.4)).shape == (1, 4)
        assert estimate(MultiBernoulli(())).shape == (0, 4)
        assert estimate(mbr(0.51, 0.52)).shape == (2, 4)
