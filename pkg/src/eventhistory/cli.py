"""Command-line front end.

Every command reads one structured config file (YAML or JSON), applies the
``--seed``/``--threads`` overrides, writes its outputs into ``--out`` and
records the resolved configuration in ``manifest.json``. The manifest is the
only output that carries a timestamp.

Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import datetime as dt
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from eventhistory import __version__
from eventhistory.core import DomainError, ValidationError
from eventhistory.covariates import PERIOD, NonStationaryError, TemperatureGenerator, fit_generator
from eventhistory.estimation import FitConfig, bootstrap_ci, consistency_study, fit_mle
from eventhistory.evaluation import bootstrap_coverage_experiment, run_evaluation
from eventhistory.likelihood import ModelSpec, ParamVector
from eventhistory.prediction import (
    DEFAULT_PATHS,
    FixedPathGenerator,
    PredictionRequest,
    predict_event_time,
)
from eventhistory import serialization as ser
from eventhistory.synthetic import (
    DEMO_CLIMATE,
    BloomGenerator,
    ToyHazardGenerator,
    bloom_model,
    bloom_params,
    make_demo,
)

log = logging.getLogger("eventhistory")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3


class NumericalFailure(RuntimeError):
    """A computation finished but its result cannot be trusted (e.g. no convergence)."""


class Run:
    """Resolved configuration and output directory of one command invocation."""

    def __init__(self, command: str, config: dict, base: Path, out: Path, seed: int, threads: int):
        self.command = command
        self.config = config
        self.base = base
        self.out = out
        self.seed = seed
        self.threads = threads
        self.outputs: list[str] = []
        self.resolved: dict = {}

    def section(self, name: str) -> dict:
        sec = self.config.get(name) or {}
        if not isinstance(sec, dict):
            raise ValidationError(f"config section {name!r} must be a mapping")
        return sec

    def path(self, value, what: str) -> Path:
        if value is None:
            raise ValidationError(f"config needs {what}")
        p = Path(value)
        return p if p.is_absolute() else self.base / p

    def data_path(self, key: str) -> Path:
        return self.path(self.section("data").get(key), f"data.{key}")

    def output(self, name: str) -> Path:
        self.outputs.append(name)
        return self.out / name

    def manifest(self) -> dict:
        return {"command": self.command, "seed": self.seed, "threads": self.threads,
                "version": __version__, "config": self.config, "resolved": self.resolved,
                "outputs": self.outputs,
                "created_utc": dt.datetime.now(dt.timezone.utc).isoformat()}


# -- shared loaders --------------------------------------------------------------

def _model(run: Run) -> ModelSpec:
    model = ser.model_spec_from_dict(run.section("model"))
    run.resolved["model"] = ser.model_spec_to_dict(model)
    return model


def _fit_config(run: Run) -> FitConfig:
    cfg = ser.fit_config_from_dict(run.section("fit"), seed=run.seed)
    run.resolved["fit"] = ser.fit_config_to_dict(cfg)
    return cfg


def _dataset(run: Run):
    series = ser.read_covariates(run.data_path("covariates"))
    events = ser.read_events(run.data_path("events"))
    return ser.pair_dataset(series, events)


def _generator(run: Run, value=None):
    value = value if value is not None else run.config.get("generator_file")
    gen = TemperatureGenerator.from_dict(ser.read_json(run.path(value, "generator_file")))
    scale = run.config.get("noise_scale_factor")
    if scale is not None:
        gen = gen.with_noise_scale(float(scale))
    return gen


def _true_params(sec: dict, default: ParamVector) -> ParamVector:
    d = sec.get("true_params")
    return default if d is None else ParamVector(np.array(d["beta"], dtype=float), d.get("t_base"))


def _study_generator(run: Run, sec: dict):
    kind = sec.get("generator", "bloom")
    if kind == "bloom":
        climate = _generator(run) if run.config.get("generator_file") else DEMO_CLIMATE
        model = bloom_model(run.section("model").get("link", "logit"))
        gen = BloomGenerator(climate, model, horizon=int(sec.get("horizon", 364)))
        return gen, _true_params(sec, bloom_params())
    if kind == "toy":
        gen = ToyHazardGenerator(_model(run), horizon=int(sec.get("horizon", 99)))
        if "true_params" not in sec:
            raise ValidationError("toy generator needs true_params")
        return gen, _true_params(sec, None)
    raise ValidationError(f"unknown generator {kind!r}; use 'bloom' or 'toy'")


# -- commands ------------------------------------------------------------------

def cmd_fit(run: Run) -> None:
    model = _model(run)
    config = _fit_config(run)
    fm = fit_mle(_dataset(run), model, config)
    ser.write_json(run.output("model.json"), ser.fitted_model_to_dict(fm))
    if not fm.converged:
        raise NumericalFailure(f"optimizer did not converge: {fm.message}")


def cmd_predict(run: Run) -> None:
    sec = run.section("predict")
    fm = ser.fitted_model_from_dict(ser.read_json(run.path(run.config.get("model_file"),
                                                           "model_file")))
    series = {str(s.individual_id): s for s in ser.read_covariates(run.data_path("covariates"))}
    ind = str(sec.get("individual_id"))
    if ind not in series:
        raise ValidationError(f"no covariates for individual {ind!r}")
    s = series[ind]
    if sec.get("generator") == "known":
        cov = FixedPathGenerator.from_series(s)
    else:
        cov = _generator(run)
    if "current_time" not in sec:
        raise ValidationError("config needs predict.current_time")
    levels = tuple(float(v) for v in sec.get("levels", (0.95,)))
    req = PredictionRequest(int(sec["current_time"]), s, sec.get("horizon"),
                            int(sec.get("n_paths", DEFAULT_PATHS)), run.seed,
                            tuple(sec.get("event_prefix", ())))
    dist = predict_event_time(fm, req, cov, levels)
    cdf = dist.cdf()
    ser.write_csv(run.output("prediction.csv"), ["day", "pmf", "cdf"],
                  zip(dist.support.tolist(), dist.pmf.tolist(), cdf.tolist()))
    summary = {"individual_id": ind, "current_time": req.current_time, "horizon": req.horizon,
               "n_paths": req.n_paths, "median": dist.median, "median_beyond": dist.median_beyond,
               "intervals": {f"{k:g}": v for k, v in dist.intervals.items()},
               "tail_mass": dist.tail_mass, "tail_warning": dist.tail_warning,
               "total_mass": float(dist.pmf.sum() + dist.tail_mass)}
    ser.write_json(run.output("summary.json"), summary)


def cmd_simulate(run: Run) -> None:
    sec = run.section("simulate")
    if sec.get("generator_file"):
        gen = _generator(run, sec["generator_file"])
    else:
        dates, mean = ser.read_history(run.data_path("history"))
        days = np.array([d.timetuple().tm_yday - 1 for d in dates], dtype=float)
        cands = tuple(tuple(int(v) for v in c) for c in sec.get("candidates", ((3, 1),)))
        gen = fit_generator(days, mean, int(sec.get("n_harmonics", 2)), cands)
        if run.config.get("noise_scale_factor") is not None:
            gen = gen.with_noise_scale(float(run.config["noise_scale_factor"]))
    run.resolved["period"] = PERIOD
    ser.write_json(run.output("generator.json"), gen.to_dict())
    paths = sec.get("paths")
    if paths:
        start, stop = int(paths.get("start", 0)), int(paths.get("stop", 364))
        sims = gen.simulate(None, start, stop, int(paths.get("n_paths", 10)), run.seed)[:, :, 0]
        rows = [(l, start + k, v) for l, p in enumerate(sims) for k, v in enumerate(p.tolist())]
        ser.write_csv(run.output("paths.csv"), ["path", "day", "value"], rows)


def cmd_evaluate(run: Run) -> None:
    model = _model(run)
    config = _fit_config(run)
    sec = run.section("evaluate")
    plan = ser.plan_from_dict(sec, run.seed, run.threads)
    run.resolved["plan"] = {"lag_range": list(plan.lag_range), "pi_levels": list(plan.pi_levels),
                            "known_future_covariates": plan.known_future_covariates,
                            "n_paths": plan.n_paths, "horizon_day": plan.horizon_day}
    gen = None if plan.known_future_covariates else _generator(run)
    report = run_evaluation(_dataset(run), model, config, gen, plan)
    key = f"{plan.pi_levels[0]:g}"
    ser.write_csv(run.output("records.csv"),
                  ["individual_id", "lag", "current_time", "point", "true_day", "lo", "hi",
                   "median_beyond", "tail_mass"],
                  [[r["individual"], r["lag"], r["current_time"], r["point"], r["true_day"],
                    r["intervals"][key]["lo"], r["intervals"][key]["hi"], r["median_beyond"],
                    r["tail_mass"]] for r in report.records])
    ser.write_csv(run.output("lags.csv"), ["lag", "n", "mae", "mean_pi_length"],
                  [[r["lag"], r["n"], r["mae"], r["mean_pi_length"]] for r in report.lag_rows])
    agg = dict(report.aggregates)
    agg["n_failed_folds"] = report.n_failed_folds
    agg["failed_folds"] = [str(f) for f in report.failed_folds]
    ser.write_json(run.output("aggregates.json"), agg)


def cmd_study(run: Run) -> None:
    sec = run.section("study")
    gen, truth = _study_generator(run, sec)
    config = _fit_config(run)
    sizes = [int(n) for n in sec.get("sizes", (30, 150))]
    report = consistency_study(truth, sizes, int(sec.get("n_replicates", 100)), gen,
                               seed=run.seed, config=config, threads=run.threads)
    rows = []
    for size in report["sizes"]:
        for r, est in enumerate(size.pop("estimates")):
            rows.append([size["n"], r, *est])
    ser.write_csv(run.output("estimates.csv"), ["n", "replicate", *report["param_names"]], rows)
    by_n = {s["n"]: s for s in report["sizes"]}
    if len(sizes) >= 2 and all(by_n[n]["variance"] for n in sizes):
        small, large = by_n[min(sizes)], by_n[max(sizes)]
        report["variance_shrinks"] = [b < a for a, b in zip(small["variance"], large["variance"])]
        report["bias_shrinks"] = [b < a for a, b in zip(small["abs_bias"], large["abs_bias"])]
    ser.write_json(run.output("study.json"), report)


def cmd_bootstrap(run: Run) -> None:
    sec = run.section("bootstrap")
    config = _fit_config(run)
    level = float(sec.get("level", 0.95))
    if sec.get("mode", "data") == "coverage":
        gen, truth = _study_generator(run, sec)
        res = bootstrap_coverage_experiment(truth, gen, int(sec.get("n_outer", 200)),
                                            int(sec.get("n_replicates", 200)), level, run.seed,
                                            int(sec.get("n_individuals", 50)), config, run.threads)
        ser.write_json(run.output("coverage.json"), res)
        return
    model = _model(run)
    data = _dataset(run)
    point = fit_mle(data, model, config)
    res = bootstrap_ci(data, model, config, int(sec.get("n_replicates", 200)), level,
                       seed=run.seed, threads=run.threads, point=point)
    ser.write_csv(run.output("replicates.csv"), ["replicate", *res.param_names],
                  [[b, *p.flat().tolist()] for b, p in enumerate(res.replicate_params)])
    ser.write_json(run.output("bootstrap.json"),
                   {"level": res.ci_level, "n_replicates": res.n_replicates,
                    "n_dropped": res.n_dropped, "param_names": res.param_names,
                    "point_estimate": res.point_estimate.flat().tolist(),
                    "intervals": {k: list(v) for k, v in res.intervals.items()}})


def _save_figure(fig, path: Path, fmt: str) -> None:
    metadata = {"Date": None} if fmt == "svg" else {"Software": None}
    fig.savefig(path, format=fmt, metadata=metadata)


def cmd_plot(run: Run) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    matplotlib.rcParams["svg.hashsalt"] = "eventhistory"

    sec = run.section("plot")
    fmt = sec.get("format", "svg")
    if fmt not in ("svg", "png", "pdf"):
        raise ValidationError(f"unsupported plot format {fmt!r}")
    made = False
    if sec.get("lags"):
        cols = ser.read_columns(run.path(sec["lags"], "plot.lags"))
        fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
        axes[0].plot(cols["lag"], cols["mae"])
        axes[0].set(xlabel="lag (days)", ylabel="MAE (days)")
        axes[1].plot(cols["lag"], cols["mean_pi_length"])
        axes[1].set(xlabel="lag (days)", ylabel="mean PI length (days)")
        fig.tight_layout()
        _save_figure(fig, run.output(f"lag_curves.{fmt}"), fmt)
        plt.close(fig)
        made = True
    if sec.get("prediction"):
        cols = ser.read_columns(run.path(sec["prediction"], "plot.prediction"))
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.bar(cols["day"], cols["pmf"], width=1.0)
        ax.set(xlabel="day", ylabel="probability")
        fig.tight_layout()
        _save_figure(fig, run.output(f"pmf.{fmt}"), fmt)
        plt.close(fig)
        made = True
    if not made:
        raise ValidationError("plot needs plot.lags and/or plot.prediction")


DEMO_CONFIG = {
    "seed": 1937,
    "data": {"covariates": "covariates.csv", "events": "events.csv", "history": "history.csv"},
    "model": {"link": "logit", "estimate_t_base": True,
              "features": {"include_intercept": True,
                           "threshold_terms": [{"tmin_index": 0, "tmax_index": 1}]}},
    "fit": {"t_base_grid": [-5.0, 15.0, 0.05]},
    "model_file": "model.json",
    "generator_file": "generator.json",
    "predict": {"individual_id": "1964", "current_time": 90, "n_paths": 1000},
    "simulate": {"n_harmonics": 2, "candidates": [[1, 0], [2, 0], [3, 0], [3, 1]]},
    "evaluate": {"lag_range": [-90, -1], "n_paths": 200, "horizon_day": 364},
    "study": {"generator": "bloom", "sizes": [30, 150], "n_replicates": 100},
    "bootstrap": {"n_replicates": 200, "level": 0.95},
    "plot": {"lags": "lags.csv", "prediction": "prediction.csv"},
}


def cmd_demo(run: Run) -> None:
    history, data = make_demo(seed=run.seed)
    ser.write_history(run.output("history.csv"), history)
    ser.write_covariates(run.output("covariates.csv"), [s for s, _ in data], ["tmin", "tmax"])
    ser.write_events(run.output("events.csv"), [o for _, o in data])
    run.output("config.yaml").write_text(yaml.safe_dump(DEMO_CONFIG, sort_keys=True))


COMMANDS = {"fit": cmd_fit, "predict": cmd_predict, "simulate": cmd_simulate,
            "evaluate": cmd_evaluate, "study": cmd_study, "bootstrap": cmd_bootstrap,
            "plot": cmd_plot, "demo": cmd_demo}


def load_config(path) -> dict:
    if path is None:
        return {}
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"config file not found: {path}")
    try:
        cfg = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ser.ParseError(f"{path}: {exc}") from None
    if cfg is None:
        return {}
    if not isinstance(cfg, dict):
        raise ValidationError(f"{path}: config must be a mapping")
    return cfg


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eventhistory",
                                description="Discrete-time event-history models: fit, predict, "
                                            "simulate covariates and evaluate.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="YAML or JSON config file")
    p.add_argument("--seed", type=int, help="global seed (overrides the config)")
    p.add_argument("--threads", type=int, help="worker cap (overrides the config)")
    p.add_argument("--out", default="out", help="output directory (default: out)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config)
        seed = args.seed if args.seed is not None else int(config.get("seed", 0))
        threads = args.threads if args.threads is not None else int(config.get("threads", 1))
        if threads < 1:
            raise ValidationError("--threads must be at least 1")
        if not 0 <= seed < 2 ** 64:
            raise ValidationError("seed must be a 64-bit unsigned integer")
        base = Path(args.config).resolve().parent if args.config else Path.cwd()
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        run = Run(args.command, config, base, out, seed, threads)
        status = EXIT_OK
        try:
            COMMANDS[args.command](run)
        except (NumericalFailure, DomainError, FloatingPointError, np.linalg.LinAlgError,
                NonStationaryError) as exc:
            print(f"error: numerical failure: {exc}", file=sys.stderr)
            status = EXIT_NUMERICAL
        ser.write_json(out / "manifest.json", run.manifest())
        return status
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
