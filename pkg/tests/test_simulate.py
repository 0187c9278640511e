import math

import numpy as np
import pytest

from spikesim import analytic as A
from spikesim import limits as L
from spikesim import simulate as S
from spikesim import stats
from spikesim.errors import DomainError, RejectionBudgetExceeded, StepBudgetExceeded
from spikesim.model import CycleBoundaries, DiffusionModel

BB = DiffusionModel.bb_linear
RABI = DiffusionModel.rabi_linearized
LIN = CycleBoundaries.linear()


def within_se(est, ref, se, k=3.0):
    return abs(est - ref) <= k * se


def binom_se(p, n):
    return math.sqrt(p * (1 - p) / n)


class TestSimConfig:
    def test_defaults(self):
        c = S.SimConfig()
        assert c.scheme is S.Scheme.EulerTransformed and c.dt_max == 1e-3
        assert c.c_drift == 0.1 and c.c_bar == 0.25 and c.max_steps == 10**9

    @pytest.mark.parametrize("kw", [dict(dt_max=0), dict(dt_min=1.0, dt_max=0.1), dict(c_bar=0),
                                    dict(rng_master_seed=-1), dict(workers=0), dict(noise_scale=-1)])
    def test_invalid(self, kw):
        with pytest.raises(DomainError):
            S.SimConfig(**kw)

    def test_scheme_from_string(self):
        assert S.SimConfig(scheme="EulerNative").scheme is S.Scheme.EulerNative

    def test_custom_needs_native_scheme(self):
        m = DiffusionModel.custom(lambda x: np.ones_like(x), lambda x: x, lambda x: x, eps=0.1)
        with pytest.raises(DomainError):
            S.simulate_until_hit(m, 0.5, 0.1, 1.0)


class TestUntilHit:
    def test_start_on_barrier(self):
        r = S.simulate_until_hit(BB(1.0, eps=0.01), 0.01, 0.01, 1.0)
        assert (r.which, r.time, r.max_level) == (S.Which.Low, 0.0, 0.01)
        r = S.simulate_until_hit(BB(1.0, eps=0.01), 1.0, 0.01, 1.0)
        assert r.which is S.Which.High and r.time == 0.0

    def test_invalid_start(self):
        with pytest.raises(DomainError):
            S.simulate_until_hit(BB(1.0), 2.0, 0.1, 1.0)

    @pytest.mark.parametrize("scheme", list(S.Scheme))
    def test_zero_noise_flows_down(self, scheme):
        # drift (eps - x)/2 < 0 on (0.2, 1): x(t) = eps + (x0 - eps) e^{-t/2}
        cfg = S.SimConfig(scheme=scheme, noise_scale=0.0)
        r = S.simulate_hits(BB(1.0, eps=0.01), 0.5, 0.2, 1.0, 20, cfg)
        assert not r["high"].any()
        assert np.all(r["max_level"] == pytest.approx(0.5))
        if scheme is S.Scheme.EulerNative:
            assert r["time"] == pytest.approx(2 * math.log(0.49 / 0.19), rel=1e-3)

    def test_max_level_bounds(self):
        r = S.simulate_hits(BB(1.0, eps=0.05), 0.3, 0.05, 1.0, 300)
        assert np.all(r["max_level"] >= 0.3)
        assert np.all(r["max_level"][r["high"]] == pytest.approx(1.0))
        assert np.all(r["max_level"][~r["high"]] < 1.0)
        assert np.all(r["time"] > 0)

    @pytest.mark.parametrize("model,x0,low,high", [
        (BB(1.0, eps=0.05), 0.1, 0.05, 0.5),
        (BB(2.0, eps=0.1), 0.3, 0.1, 1.0),
        (RABI(1.0, eps=0.2), 0.3, 0.15, 0.6),
    ])
    def test_hit_probability_matches_quadrature(self, model, x0, low, high):
        n = 20_000
        r = S.simulate_hits(model, x0, low, high, n)
        p = A.hitting_prob(model, x0, low, high)
        assert within_se(r["high"].mean(), p, binom_se(p, n))

    def test_native_scheme_matches_quadrature(self):
        m = BB(1.0, eps=0.05)
        n = 20_000
        r = S.simulate_hits(m, 0.1, 0.05, 0.5, n, S.SimConfig(scheme="EulerNative"))
        p = A.hitting_prob(m, 0.1, 0.05, 0.5)
        assert within_se(r["high"].mean(), p, binom_se(p, n))

    def test_custom_model_matches_quadrature(self):
        m = DiffusionModel.custom(lambda x: 1.0 + 0.0 * x, lambda x: x + 0.5 * x**2,
                                  lambda x: x * np.sqrt(1 + x), eps=0.1)
        n = 10_000
        r = S.simulate_hits(m, 0.3, 0.1, 1.0, n, S.SimConfig(scheme="EulerNative"))
        p = A.hitting_prob(m, 0.3, 0.1, 1.0)
        assert within_se(r["high"].mean(), p, binom_se(p, n))

    def test_mean_exit_time_matches_green_kernel(self):
        m = BB(1.0, eps=0.05)
        r = S.simulate_hits(m, 0.05, 0.0, 0.1, 20_000, S.SimConfig(rng_master_seed=3))
        t = r["time"]
        assert within_se(t.mean(), 5.0, t.std() / math.sqrt(t.size))


class TestReproducibility:
    def test_worker_count_irrelevant(self):
        m = BB(1.0, eps=0.05)
        a = S.simulate_hits(m, 0.1, 0.05, 0.5, 40, workers=1)
        b = S.simulate_hits(m, 0.1, 0.05, 0.5, 40, workers=3)
        for k in a:
            np.testing.assert_array_equal(a[k], b[k])

    def test_spike_trains_worker_invariant(self):
        m = BB(1.0, eps=0.1)
        a = S.run_spike_processes(m, LIN, 0.5, 30.0, 6, workers=1)
        b = S.run_spike_processes(m, LIN, 0.5, 30.0, 6, workers=2)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.times, y.times)
            assert x.n_cycles == y.n_cycles

    def test_single_path_equals_batch_entry(self):
        m = BB(1.0, eps=0.05)
        batch = S.simulate_hits(m, 0.1, 0.05, 0.5, 5)
        one = S.simulate_until_hit(m, 0.1, 0.05, 0.5, seed=3)
        assert one.time == batch["time"][3] and one.max_level == batch["max_level"][3]

    def test_streams(self):
        a = S.path_stream(7, 1, 12).random(5)
        np.testing.assert_array_equal(a, S.path_stream(7, 1, 12).random(5))
        assert not np.array_equal(a, S.path_stream(7, 1, 13).random(5))
        assert not np.array_equal(a, S.path_stream(7, 2, 12).random(5))
        assert not np.array_equal(a, S.path_stream(8, 1, 12).random(5))

    def test_master_seed_changes_results(self):
        m = BB(1.0, eps=0.05)
        a = S.simulate_hits(m, 0.1, 0.05, 0.5, 5, S.SimConfig(rng_master_seed=1))
        b = S.simulate_hits(m, 0.1, 0.05, 0.5, 5, S.SimConfig(rng_master_seed=2))
        assert not np.array_equal(a["time"], b["time"])


class TestCycles:
    m = BB(1.0, eps=0.05)

    def test_record_invariants(self):
        for cond in (False, True):
            for c in S.sample_cycles(self.m, LIN, 0.3, 200, conditioned=cond):
                assert 0 < c.tau <= c.sigma
                assert c.spike == (c.max_level >= 0.3)
                assert c.conditioned == cond
                if cond:
                    assert not c.spike and c.max_level < 0.3

    def test_spike_time_inside_cycle(self):
        for c in S.sample_cycles(self.m, LIN, 0.2, 300):
            if c.spike:
                assert c.tau <= c.spike_time <= c.sigma
            else:
                assert math.isnan(c.spike_time)

    def test_needs_z_above_beta(self):
        with pytest.raises(DomainError):
            S.sample_cycles(self.m, LIN, 0.1, 3)

    def test_single_cycle_api(self):
        c = S.sample_cycle(self.m, LIN, 1.0, seed=4, conditioned=True)
        d = S.sample_cycles(self.m, LIN, 1.0, 5, conditioned=True)[4]
        assert (c.tau, c.sigma, c.max_level) == (d.tau, d.sigma, d.max_level)

    @pytest.mark.slow
    def test_unconditioned_spike_frequency(self):
        n = 100_000
        cyc = S.sample_cycles(self.m, LIN, 1.0, n, S.SimConfig(rng_master_seed=21))
        p = A.spike_prob(self.m, LIN, 1.0)
        assert within_se(np.mean([c.spike for c in cyc]), p, binom_se(p, n))

    @pytest.mark.slow
    def test_conditioned_mean_cycle_length(self):
        n = 100_000
        cyc = S.sample_cycles(self.m, LIN, 1.0, n, S.SimConfig(rng_master_seed=22), conditioned=True)
        sig = np.array([c.sigma for c in cyc])
        ref = A.cycle_moments(self.m, LIN, 1.0).mean
        assert within_se(sig.mean(), ref, sig.std() / math.sqrt(n))


class TestConditionedDowncross:
    m = BB(1.0, eps=0.05)

    def test_h_sampler_stays_below_z(self):
        r = S.sample_downcross_htransform(self.m, LIN, 0.15, 500)
        assert np.all(r["max_level"] < 0.15) and np.all(r["time"] > 0)

    def test_far_level_equals_unconditioned(self):
        # with z far above, the avoided event has probability ~0
        rej = S.sample_downcross_rejection(self.m, LIN, 1e3, 3000, S.SimConfig(rng_master_seed=31))
        assert np.all(rej["trials"] == 1)
        free = S.simulate_hits(self.m, 0.1, 0.05, math.inf, 3000, S.SimConfig(rng_master_seed=32))
        assert not free["high"].any()
        assert stats.ks_two_sample(rej["time"], free["time"]).pvalue > 0.01

    def test_rejection_matches_h_transform(self):
        cfg = S.SimConfig(rng_master_seed=33)
        z = 0.15
        rej = S.sample_downcross_rejection(self.m, LIN, z, 3000, cfg)
        h = S.sample_downcross_htransform(self.m, LIN, z, 3000, cfg)
        assert rej["trials"].max() > 1
        assert stats.ks_two_sample(rej["time"], h["time"]).pvalue > 0.01
        ref = A.conditioned_downcross_moments(self.m, LIN, z, 1)[0]
        for t in (rej["time"], h["time"]):
            assert within_se(t.mean(), ref, t.std() / math.sqrt(t.size))

    def test_single_rejection_api(self):
        t = S.sample_conditioned_downcross_rejection(self.m, LIN, 0.15, seed=2)
        assert t == S.sample_downcross_rejection(self.m, LIN, 0.15, 3)["time"][2]


class TestSpikeProcess:
    def test_times_sorted_inside_horizon(self):
        for tr in S.run_spike_processes(BB(1.0, eps=0.1), LIN, 0.5, 50.0, 10):
            assert np.all(np.diff(tr.times) > 0)
            assert tr.times.size == 0 or (tr.times[0] >= 0 and tr.times[-1] <= 50.0)
            assert tr.count_completed <= tr.count <= tr.count_inclusive

    def test_low_z_every_cycle_spikes(self):
        # n_cycles counts completed cycles; the straddling one may add a spike
        for tr in S.run_spike_processes(BB(1.0, eps=0.1), LIN, 0.15, 30.0, 10):
            assert tr.count_completed == tr.n_cycles
            assert tr.n_cycles <= tr.count <= tr.count_inclusive == tr.n_cycles + 1

    def test_bracketing_conventions_agree(self):
        # on the scaling curve the straddling cycle spikes with probability p_eps
        m = BB(1.0, eps=0.05)
        p = A.spike_prob(m, LIN, 1.0)
        m = m.replace(lam=math.sqrt(1 / p))
        trains = S.run_spike_processes(m, LIN, 1.0, 10.0, 300, S.SimConfig(rng_master_seed=43))
        comp = np.array([t.count_completed for t in trains])
        incl = np.array([t.count_inclusive for t in trains])
        cross = np.array([t.count for t in trains])
        se = cross.std() / math.sqrt(cross.size)
        assert abs(incl.mean() - comp.mean()) < se
        assert np.all((comp <= cross) & (cross <= incl) & (incl <= comp + 1))

    def test_clock_rescaling(self):
        # lambda = 3 on horizon T/9 versus lambda = 1 on horizon T
        m = BB(1.0, eps=0.1)
        T, n = 40.0, 300
        a = np.array([t.count for t in S.run_spike_processes(m, LIN, 0.5, T, n, S.SimConfig(rng_master_seed=41))])
        b_tr = S.run_spike_processes(m.replace(lam=3.0), LIN, 0.5, T / 9, n, S.SimConfig(rng_master_seed=42))
        b = np.array([t.count for t in b_tr])
        se = math.sqrt(a.var() / n + b.var() / n)
        assert abs(a.mean() - b.mean()) < 3 * se
        assert all(t.times.size == 0 or t.times[-1] <= T / 9 for t in b_tr)

    def test_invalid_horizon(self):
        with pytest.raises(DomainError):
            S.run_spike_processes(BB(1.0, eps=0.1), LIN, 0.5, 0.0, 1)

    def test_single_run_api(self):
        m = BB(1.0, eps=0.1)
        one = S.run_spike_process(m, LIN, 0.5, 20.0, seed=2)
        np.testing.assert_array_equal(one.times, S.run_spike_processes(m, LIN, 0.5, 20.0, 3)[2].times)


class TestHittingTimes:
    def test_at_level(self):
        assert S.sample_hitting_time_from_x(BB(1.0, eps=0.05), 1.0, 1.0, LIN) == 0.0

    def test_floor_level_form(self):
        m = BB(1.0, eps=0.05)
        t = S.sample_hitting_time_from_x(m, 0.5, 0.6, 0.05, seed=1)
        assert t > 0 and t == S.sample_hitting_time_from_x(m, 0.5, 0.6, LIN, seed=1)

    def test_structure(self):
        r = S.sample_hitting_times(BB(1.0, eps=0.1), 0.5, 1.0, LIN, 200)
        assert np.all(r["time"] > 0)
        assert np.all(r["n_cycles"][~r["via_floor"]] == 0)
        assert np.all(r["n_cycles"][r["via_floor"]] >= 1)

    def test_direct_fraction_matches_quadrature(self):
        m = BB(1.0, eps=0.1)
        n = 4000
        r = S.sample_hitting_times(m, 0.5, 1.0, LIN, n)
        p = A.hitting_prob(m, 0.5, 0.1, 1.0)
        assert within_se(1 - r["via_floor"].mean(), p, binom_se(p, n))

    @pytest.mark.parametrize("x,z", [(0.0, 1.0), (1.0, 0.5), (0.5, 0.15)])
    def test_invalid(self, x, z):
        with pytest.raises(DomainError):
            S.sample_hitting_times(BB(1.0, eps=0.1), x, z, LIN, 2)


class TestBudgets:
    def test_step_budget_reports_partial_state(self):
        with pytest.raises(StepBudgetExceeded) as ei:
            S.simulate_until_hit(BB(1.0, eps=0.05), 0.1, 0.05, 0.5, S.SimConfig(max_steps=10))
        assert ei.value.steps >= 10 and ei.value.time > 0 and 0.05 < ei.value.position < 0.5

    def test_rejection_budget(self):
        with pytest.raises(RejectionBudgetExceeded):
            S.sample_downcross_rejection(BB(1.0, eps=0.05), LIN, 0.1001, 20, max_trials=1)


@pytest.mark.slow
def test_dt_halving_does_not_move_estimate():
    # the two runs use different increments, so their difference has sd sqrt(2) SE;
    # the discretization bias at each step size is checked against quadrature
    m = BB(1.0, eps=0.05)
    n = 100_000
    p = A.hitting_prob(m, 0.1, 0.05, 1.0)
    se = binom_se(p, n)
    est = []
    for dt in (1e-3, 5e-4):
        r = S.simulate_hits(m, 0.1, 0.05, 1.0, n, S.SimConfig(dt_max=dt, rng_master_seed=51))
        est.append(r["high"].mean())
        assert within_se(est[-1], p, se)
    assert abs(est[0] - est[1]) < 3 * math.sqrt(2) * se


def test_scaling_configuration_rate():
    # mean count on the scaling curve over a short horizon, against kappa_eps J T
    m = BB(1.0, eps=0.1)
    p = A.spike_prob(m, LIN, 0.5)
    k_eps = L.kappa_numeric(m, LIN, 0.5, [0.1]).kappa_eps[0]
    m = m.replace(lam=math.sqrt(1 / p))
    T = 20.0
    counts = np.array([t.count for t in S.run_spike_processes(m, LIN, 0.5, T, 300)])
    # finite eps: use the exact renewal rate of the conditioned cycle chain
    assert abs(counts.mean() / (k_eps * T) - 1) < 0.15
