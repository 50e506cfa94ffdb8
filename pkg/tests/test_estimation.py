import math

import numpy as np
import pytest

from eventhistory import (
    CovariateSeries,
    EventObservation,
    FeatureMapSpec,
    FitConfig,
    ModelSpec,
    ParamVector,
    ValidationError,
    bootstrap_ci,
    consistency_study,
    fit_mle,
    link_forward,
)
from eventhistory import rng as rngmod
from eventhistory.estimation import bfgs_minimize, golden_section_max
from eventhistory.features import bloom_spec
from eventhistory.synthetic import BloomGenerator, ToyHazardGenerator, bloom_params

FAST = FitConfig(t_base_grid=(-5.0, 15.0, 0.25))
INTERCEPT_ONLY = ModelSpec("logit", FeatureMapSpec())


def geometric_data(rng, n, p, horizon=60):
    data = []
    for i in range(n):
        t = int(rng.geometric(p)) - 1
        obs = EventObservation(i, min(t, horizon), int(t <= horizon))
        data.append((CovariateSeries(i, 0, np.zeros((horizon + 1, 1))), obs))
    return data


@pytest.fixture(scope="module")
def bloom_data():
    gen = BloomGenerator()
    data, truncated = gen.generate(bloom_params(), 60, rngmod.stream(5, "bloom"))
    return gen, data


class TestOptimizer:
    def test_quadratic(self):
        A = np.array([[3.0, 1.0], [1.0, 2.0]])
        b = np.array([1.0, -1.0])
        res = bfgs_minimize(lambda x: (0.5 * x @ A @ x - b @ x, A @ x - b), np.zeros(2))
        assert res.converged
        np.testing.assert_allclose(res.x, np.linalg.solve(A, b), atol=1e-9)

    def test_golden_section(self):
        evals = golden_section_max(lambda x: (-(x - 0.3) ** 2, None), 0.0, 1.0, 1e-6)
        best = max(evals, key=lambda x: evals[x][0])
        assert abs(best - 0.3) < 1e-6


class TestClosedForm:
    @pytest.mark.parametrize("link", ["logit", "probit", "cloglog"])
    def test_intercept_matches_bernoulli_rate(self, link):
        data = geometric_data(np.random.default_rng(1), 80, 0.08)
        events = sum(o.delta for _, o in data)
        at_risk = sum(o.observed_time + 1 for _, o in data)
        model = ModelSpec(link, FeatureMapSpec())
        fm = fit_mle(data, model, FitConfig())
        assert fm.converged and not fm.separation
        np.testing.assert_allclose(fm.params.beta[0, 0], link_forward(link, events / at_risk),
                                   atol=1e-8)

    def test_all_events_at_origin_is_separation(self):
        data = [(CovariateSeries(i, 0, [[0.0]]), EventObservation(i, 0, 1)) for i in range(5)]
        fm = fit_mle(data, INTERCEPT_ONLY, FitConfig())
        assert fm.separation
        assert fm.params.beta[0, 0] > 15

    def test_no_events_is_rejected(self):
        data = [(CovariateSeries(i, 0, np.zeros((5, 1))), EventObservation(i, 4, 0))
                for i in range(3)]
        with pytest.raises(ValidationError):
            fit_mle(data, INTERCEPT_ONLY)

    def test_multistart_agrees(self):
        gen = ToyHazardGenerator(ModelSpec("logit", FeatureMapSpec(raw_terms=((0, 0),))))
        data, _ = gen.generate(ParamVector([-5.0, 0.3]), 80, rngmod.stream(2, "toy"))
        one = fit_mle(data, gen.model, FitConfig(restarts=1))
        many = fit_mle(data, gen.model, FitConfig(restarts=4, seed=9))
        np.testing.assert_allclose(one.params.flat(), many.params.flat(), atol=1e-6)


class TestProfile:
    def test_recovers_bloom_parameters(self, bloom_data):
        gen, data = bloom_data
        fm = fit_mle(data, gen.model, FAST)
        assert fm.converged
        assert fm.params.t_base is not None
        truth = bloom_params().flat()
        # loose band for N = 60; the acceptance suite checks consistency
        assert abs(fm.params.t_base - truth[2]) < 2.0
        assert abs(fm.params.beta[0, 1] - truth[1]) < 0.03

    def test_loglik_is_profile_max(self, bloom_data):
        gen, data = bloom_data
        fm = fit_mle(data, gen.model, FAST)
        best = max(v for _, v in fm.profile_curve)
        assert abs(fm.loglik_at_max - best) <= 1e-9
        assert any(t == fm.params.t_base for t, _ in fm.profile_curve)

    def test_permutation_invariance(self, bloom_data):
        gen, data = bloom_data
        perm = [data[i] for i in np.random.default_rng(3).permutation(len(data))]
        a = fit_mle(data, gen.model, FAST)
        b = fit_mle(perm, gen.model, FAST)
        assert a.params == b.params
        assert a.loglik_at_max == b.loglik_at_max

    def test_fixed_base_without_profile(self, bloom_data):
        gen, data = bloom_data
        model = ModelSpec("logit", bloom_spec(2.97))
        fm = fit_mle(data, model)
        assert fm.params.t_base is None and fm.profile_curve == []
        assert fm.converged


class TestBootstrap:
    def test_deterministic(self):
        data = geometric_data(np.random.default_rng(4), 30, 0.1)
        a = bootstrap_ci(data, INTERCEPT_ONLY, FitConfig(), 60, seed=11)
        b = bootstrap_ci(data, INTERCEPT_ONLY, FitConfig(), 60, seed=11)
        assert a.intervals == b.intervals
        assert all(x == y for x, y in zip(a.replicate_params, b.replicate_params))

    def test_thread_count_does_not_matter(self):
        data = geometric_data(np.random.default_rng(4), 30, 0.1)
        a = bootstrap_ci(data, INTERCEPT_ONLY, FitConfig(), 50, seed=3, threads=1)
        b = bootstrap_ci(data, INTERCEPT_ONLY, FitConfig(), 50, seed=3, threads=3)
        assert a.intervals == b.intervals

    def test_identical_individuals_give_degenerate_interval(self):
        s = CovariateSeries(0, 0, np.zeros((6, 1)))
        data = [(s, EventObservation(0, 5, 1))] * 20
        res = bootstrap_ci(data, INTERCEPT_ONLY, FitConfig(), 50, seed=0)
        lo, hi = res.intervals["intercept"]
        assert hi - lo < 1e-9
        np.testing.assert_allclose(lo, math.log(1 / 5), atol=1e-8)

    def test_interval_contains_estimate(self):
        data = geometric_data(np.random.default_rng(6), 40, 0.1)
        point = fit_mle(data, INTERCEPT_ONLY)
        res = bootstrap_ci(data, INTERCEPT_ONLY, FitConfig(), 100, seed=1, point=point)
        lo, hi = res.intervals["intercept"]
        assert lo < point.params.beta[0, 0] < hi

    def test_minimum_replicates(self):
        data = geometric_data(np.random.default_rng(6), 10, 0.1)
        with pytest.raises(ValidationError):
            bootstrap_ci(data, INTERCEPT_ONLY, FitConfig(), 10)


class TestConsistencyStudy:
    def test_forced_event_day(self):
        # an enormous intercept makes the event certain on the first day
        gen = ToyHazardGenerator(INTERCEPT_ONLY, horizon=10)
        data, truncated = gen.generate(ParamVector([60.0]), 25, rngmod.stream(0, "x"))
        assert truncated == 0
        assert {o.observed_time for _, o in data} == {0}

    def test_report_layout(self):
        gen = ToyHazardGenerator(ModelSpec("logit", FeatureMapSpec(raw_terms=((0, 0),))))
        report = consistency_study(ParamVector([-5.0, 0.3]), [20, 80], 8, gen, seed=1)
        assert report["param_names"] == ["intercept", "x0_lag0"]
        small, large = report["sizes"]
        assert small["n_fitted"] == 8 and large["n"] == 80
        assert len(small["variance"]) == 2
