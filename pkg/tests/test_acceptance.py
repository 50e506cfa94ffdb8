"""Acceptance suite: one test per criterion, each printing a single verdict line."""

import math
import time

import numpy as np
import pytest
import yaml
from scipy import signal

from eventhistory import (
    ArmaModel,
    CovariateSeries,
    EvaluationPlan,
    FeatureMapSpec,
    FitConfig,
    ModelSpec,
    ParamVector,
    PredictionRequest,
    SeasonalModel,
    TemperatureGenerator,
    bootstrap_coverage_experiment,
    consistency_study,
    fit_arma,
    grad_loglik,
    loglik_censored,
    loglik_multi,
    loglik_single,
    predict_event_time,
    predict_next_event_multi,
    run_evaluation,
    simulate_paths,
)
from eventhistory import rng as rngmod
from eventhistory.cli import main
from eventhistory.estimation import FittedModel
from eventhistory.prediction import FixedPathGenerator
from eventhistory.synthetic import DEMO_CLIMATE, BloomGenerator, ToyHazardGenerator, bloom_params
from instances import fd_gradient, random_dataset, random_params, random_values, ref_loglik

FUNCTIONS = {"single": loglik_single, "censored": loglik_censored, "multi": loglik_multi}


def test_criterion_01_likelihood_oracle(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = 0.0
    for kind, fn in FUNCTIONS.items():
        for _ in range(100):
            n_events = int(rng.integers(1, 4)) if kind == "multi" else 1
            data, model = random_dataset(rng, kind, n_events)
            params = random_params(rng, data, model, kind)
            ref = float(ref_loglik(params, data, model))
            worst = max(worst, abs(fn(params, data, model) - ref) / abs(ref))
    elapsed = time.perf_counter() - start
    verdict(1, worst <= 1e-10 and elapsed < 10,
            f"likelihood oracle: worst rel err {worst:.2e} (tol 1e-10) in {elapsed:.1f}s (< 10s)")


def test_criterion_02_gradient(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(202)
    worst = 0.0
    for kind, fn in FUNCTIONS.items():
        for _ in range(50):
            n_events = int(rng.integers(1, 4)) if kind == "multi" else 1
            data, model = random_dataset(rng, kind, n_events)
            params = random_params(rng, data, model, kind)
            g = grad_loglik(params, data, model, kind)
            fd = fd_gradient(fn, params, data, model, kind)
            worst = max(worst, float((np.abs(g - fd) / np.maximum(np.abs(fd), 1.0)).max()))
    elapsed = time.perf_counter() - start
    verdict(2, worst <= 1e-6 and elapsed < 30,
            f"gradient vs central differences: worst rel err {worst:.2e} (tol 1e-6) "
            f"in {elapsed:.1f}s (< 30s)")


def test_criterion_03_reductions(verdict):
    rng = np.random.default_rng(303)
    single_eq = multi_eq = True
    for _ in range(100):
        data, model = random_dataset(rng, "single")
        params = random_params(rng, data, model, "single")
        single_eq &= loglik_censored(params, data, model) == loglik_single(params, data, model)
        data, model = random_dataset(rng, "censored")
        params = random_params(rng, data, model, "censored")
        multi_eq &= loglik_multi(params, data, model) == loglik_censored(params, data, model)
    gen = TemperatureGenerator(SeasonalModel(6.0, [-9.0], [-2.0]), ArmaModel([0.6], noise_sd=2.0),
                               mean_columns=(0, 1))
    model = ModelSpec("logit", FeatureMapSpec(raw_terms=((0, 0),)))
    fm = FittedModel(model, ParamVector([-4.0, 0.1]), 0.0, True, 1)
    sup = 0.0
    for k in range(20):
        s = CovariateSeries(0, 0, random_values(np.random.default_rng(k), 50))
        req = PredictionRequest(49, s, 300, 100, seed=k)
        a = predict_event_time(fm, req, gen)
        b = predict_next_event_multi(fm, req, gen)
        sup = max(sup, float(np.max(np.abs(a.pmf - b.pmf))))
    verdict(3, single_eq and multi_eq and sup < 1e-12,
            f"reductions: censored==single {single_eq}, multi(S=1)==censored {multi_eq} "
            f"(bit-equal); predictive sup diff {sup:.1e} (< 1e-12)")


def test_criterion_04_normalization(verdict):
    rng = np.random.default_rng(404)
    worst = 0.0
    for k in range(100):
        n_events = int(rng.integers(1, 3))
        model = ModelSpec(["logit", "probit", "cloglog"][k % 3],
                          FeatureMapSpec(raw_terms=((0, 0), (2, 0))), n_events)
        beta = rng.normal(0, 0.3, (model.n_beta_states, model.feature_dim))
        beta[:, 0] += rng.uniform(-6, -2)
        fm = FittedModel(model, ParamVector(beta), 0.0, True, 1)
        t_c = int(rng.integers(10, 80))
        prefix = (int(rng.integers(0, t_c)),) if n_events == 2 and rng.random() < 0.5 else ()
        s = CovariateSeries(0, 0, random_values(rng, t_c + 1))
        gen = TemperatureGenerator(SeasonalModel(rng.uniform(0, 10), [-8.0], [-2.0]),
                                   ArmaModel([rng.uniform(0, 0.8)], noise_sd=rng.uniform(0.5, 3)),
                                   mean_columns=(0, 1))
        req = PredictionRequest(t_c, s, t_c + int(rng.integers(1, 400)), 30, seed=k,
                                event_prefix=prefix)
        dist = predict_next_event_multi(fm, req, gen)
        worst = max(worst, abs(dist.pmf.sum() + dist.tail_mass - 1.0))
    p, t_c, H = 0.04, 20, 386
    fm = FittedModel(ModelSpec("logit", FeatureMapSpec()), ParamVector([math.log(p / (1 - p))]),
                     0.0, True, 1)
    s = CovariateSeries(0, 0, np.zeros((t_c + 1, 2)))
    dist = predict_event_time(fm, PredictionRequest(t_c, s, H, 1),
                              FixedPathGenerator(np.zeros((H + 1, 2))))
    K = np.arange(1, H - t_c + 1)
    geo = max(float(np.max(np.abs(dist.pmf - p * (1 - p) ** (K - 1)))),
              abs(dist.tail_mass - (1 - p) ** (H - t_c)))
    verdict(4, worst <= 1e-10 and geo <= 1e-12,
            f"normalization: worst |sum pmf + tail - 1| {worst:.1e} over 100 requests (tol 1e-10); "
            f"geometric max abs err {geo:.1e} (tol 1e-12)")


def test_criterion_05_consistency(verdict):
    start = time.perf_counter()
    report = consistency_study(bloom_params(), [30, 150], 100, BloomGenerator(), seed=505,
                               config=FitConfig(t_base_grid=(-5.0, 15.0, 0.25)))
    elapsed = time.perf_counter() - start
    small, large = report["sizes"]
    names = report["param_names"]
    bias_ok = [b < a for a, b in zip(small["abs_bias"], large["abs_bias"])]
    var_ok = [b < a for a, b in zip(small["variance"], large["variance"])]
    fitted = small["n_fitted"] == large["n_fitted"] == 100
    detail = ", ".join(f"{n}: |bias| {a:.3g}->{b:.3g}, var {v:.3g}->{w:.3g}"
                       for n, a, b, v, w in zip(names, small["abs_bias"], large["abs_bias"],
                                                small["variance"], large["variance"]))
    verdict(5, all(bias_ok) and all(var_ok) and fitted and elapsed < 600,
            f"consistency N=30->150: {detail}; {elapsed:.0f}s (< 600s)")


def test_criterion_06_bootstrap_calibration(verdict):
    start = time.perf_counter()
    gen = ToyHazardGenerator(ModelSpec("logit", FeatureMapSpec(raw_terms=((0, 0),))))
    res = bootstrap_coverage_experiment(ParamVector([-5.0, 0.3]), gen, n_outer=200, n_boot=200,
                                        level=0.95, seed=606, n_individuals=50)
    elapsed = time.perf_counter() - start
    cov = res["coverage"]
    ok = res["n_used"] == 200 and all(0.88 <= c <= 0.99 for c in cov.values()) and elapsed < 900
    verdict(6, ok, "bootstrap coverage at 0.95: "
            + ", ".join(f"{k} {v:.3f}" for k, v in cov.items())
            + f" (band [0.88, 0.99]); {elapsed:.0f}s (< 900s)")


@pytest.fixture(scope="module")
def lag_experiment():
    gen = BloomGenerator()
    data, _ = gen.generate(bloom_params(), 30, rngmod.stream(707, "lag-experiment"))
    cfg = FitConfig(t_base_grid=(-5.0, 15.0, 0.25))
    start = time.perf_counter()
    simulated = run_evaluation(data, gen.model, cfg, DEMO_CLIMATE,
                               EvaluationPlan((-90, -1), n_paths=200, seed=7, horizon_day=364))
    known = run_evaluation(data, gen.model, cfg, None,
                           EvaluationPlan((-90, -1), known_future_covariates=True,
                                          horizon_day=364), fits=simulated.fits)
    return simulated, known, time.perf_counter() - start


def test_criterion_07_lag_curves(verdict, lag_experiment):
    simulated, _, elapsed = lag_experiment
    rows = {r["lag"]: r for r in simulated.lag_rows}
    far, near = rows[-90], rows[-1]
    ok = (near["mae"] <= far["mae"] and near["mean_pi_length"] <= far["mean_pi_length"]
          and elapsed < 900)
    verdict(7, ok, f"lag curves: MAE lag-1 {near['mae']:.2f} <= lag-90 {far['mae']:.2f}; "
            f"PI length lag-1 {near['mean_pi_length']:.1f} <= lag-90 "
            f"{far['mean_pi_length']:.1f}; {elapsed:.0f}s (< 900s)")


def test_criterion_08_known_covariates(verdict, lag_experiment):
    simulated, known, _ = lag_experiment
    a, b = simulated.aggregates, known.aggregates
    ok = (b["mae"] < a["mae"]
          and b["mean_pi_length"]["0.95"] < a["mean_pi_length"]["0.95"])
    verdict(8, ok, f"known vs simulated covariates: MAE {b['mae']:.2f} < {a['mae']:.2f}; "
            f"PI length {b['mean_pi_length']['0.95']:.1f} < {a['mean_pi_length']['0.95']:.1f}")


def test_criterion_09_covariate_round_trips(verdict):
    ar, ma = np.array([0.7, -0.2, 0.1]), np.array([0.3])
    e = np.random.default_rng(909).standard_normal(1_000_000 + 2000)
    x = signal.lfilter(np.r_[1.0, ma], np.r_[1.0, -ar], e)[2000:]
    m = fit_arma(x, 3, 1)
    coef_err = float(np.max(np.abs(np.r_[m.ar - ar, m.ma - ma])))
    phi = 0.6
    gen = TemperatureGenerator(SeasonalModel(0.0), ArmaModel([phi], noise_sd=1.0))
    var = simulate_paths(gen, None, 0, 9_999, 100, seed=909).var()
    var_err = abs(var * (1 - phi ** 2) - 1.0)
    seasonal = SeasonalModel(9.5, [-11.0, 0.8], [-3.2, -0.4])
    quiet = TemperatureGenerator(seasonal, ArmaModel(ar, ma, 2.0), 0.0)
    paths = simulate_paths(quiet, None, 0, 729, 5, seed=1)
    exact = bool(np.array_equal(paths, np.tile(seasonal(np.arange(730)), (5, 1))))
    verdict(9, coef_err <= 0.05 and var_err <= 0.03 and exact,
            f"ARMA(3,1) max coef err {coef_err:.4f} (tol 0.05); AR(1) variance rel err "
            f"{var_err:.4f} (tol 0.03); zero-noise paths equal seasonal: {exact}")


def _cli_run(work):
    """Every command once; returns exit codes."""
    codes = {"demo": main(["demo", "--out", str(work)])}
    cfg = yaml.safe_load((work / "config.yaml").read_text())
    cfg["fit"] = {"t_base_grid": [-5.0, 15.0, 0.5]}
    cfg["predict"]["n_paths"] = 100
    cfg["simulate"]["paths"] = {"start": 0, "stop": 364, "n_paths": 5}
    cfg["evaluate"] = {"lag_range": [-4, -1], "n_paths": 30, "horizon_day": 364}
    cfg["study"] = {"generator": "bloom", "sizes": [15, 30], "n_replicates": 4}
    cfg["bootstrap"] = {"n_replicates": 50, "level": 0.9}
    path = work / "config.yaml"
    path.write_text(yaml.safe_dump(cfg))
    for cmd in ("fit", "simulate", "predict", "evaluate", "study", "bootstrap", "plot"):
        codes[cmd] = main([cmd, "--config", str(path), "--out", str(work)])
    toy = {"model": {"link": "logit", "features": {"include_intercept": True}},
           "bootstrap": {"mode": "coverage", "generator": "toy", "true_params": {"beta": [[-2.5]]},
                         "n_outer": 50, "n_replicates": 50, "n_individuals": 30}}
    toy_path = work / "toy.yaml"
    toy_path.write_text(yaml.safe_dump(toy))
    codes["bootstrap-coverage"] = main(["bootstrap", "--config", str(toy_path), "--seed", "6",
                                        "--out", str(work / "coverage")])
    return codes


CLI_OUTPUTS = ["history.csv", "covariates.csv", "events.csv", "config.yaml", "model.json",
               "generator.json", "paths.csv", "prediction.csv", "summary.json", "records.csv",
               "lags.csv", "aggregates.json", "estimates.csv", "study.json", "replicates.csv",
               "bootstrap.json", "lag_curves.svg", "pmf.svg", "coverage/coverage.json"]


def test_criterion_10_cli_determinism(verdict, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    codes_a, codes_b = _cli_run(a), _cli_run(b)
    missing = [n for n in CLI_OUTPUTS if not (a / n).exists()]
    differ = [n for n in CLI_OUTPUTS if n not in missing
              and (a / n).read_bytes() != (b / n).read_bytes()]
    failed = sorted({k for k, v in {**codes_a, **codes_b}.items() if v != 0})
    ok = not missing and not differ and not failed
    verdict(10, ok, f"CLI determinism: {len(codes_a)} commands, {len(CLI_OUTPUTS)} outputs; "
            f"failed {failed or 'none'}, missing {missing or 'none'}, differ {differ or 'none'}")
