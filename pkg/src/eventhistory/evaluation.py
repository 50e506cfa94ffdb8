"""Leave-one-out rolling prediction evaluation and calibration experiments.

For every held-out individual with an observed event day ``T`` the model is
refitted on the remaining individuals, and a predictive distribution is
issued at the end of each day ``T + lag`` for lags in the plan's range.
The median is the point prediction; equal-tail quantile intervals give the
prediction intervals.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from eventhistory import rng as rngmod
from eventhistory.core import ValidationError
from eventhistory.estimation import FitConfig, FittedModel, _map_ordered, bootstrap_ci, fit_mle
from eventhistory.likelihood import ModelSpec, ParamVector
from eventhistory.prediction import FixedPathGenerator, PredictionRequest, predict_event_time

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EvaluationPlan:
    lag_range: tuple = (-90, -1)
    pi_levels: tuple = (0.95,)
    known_future_covariates: bool = False
    n_paths: int = 1000
    seed: int = 0
    horizon_day: int | None = None
    threads: int = 1

    def __post_init__(self):
        lo, hi = (int(v) for v in self.lag_range)
        object.__setattr__(self, "lag_range", (lo, hi))
        object.__setattr__(self, "pi_levels", tuple(float(v) for v in self.pi_levels))
        if not lo < hi <= -1:
            raise ValidationError("lag range must satisfy min < max <= -1")


@dataclass(eq=False)
class EvaluationReport:
    records: list
    aggregates: dict
    lag_rows: list
    n_failed_folds: int = 0
    failed_folds: list = field(default_factory=list)
    fits: dict = field(default_factory=dict)


def _level_key(level: float) -> str:
    return f"{level:g}"


def compute_metrics(records: Sequence[dict], levels: Sequence[float] | None = None) -> dict:
    """RMSE, MAE, interval coverage and mean interval length (in days, inclusive)."""
    if not records:
        raise ValidationError("no prediction records")
    err = np.array([r["point"] - r["true_day"] for r in records], dtype=float)
    out = {"n": len(records),
           "rmse": float(np.sqrt(np.mean(err ** 2))),
           "mae": float(np.mean(np.abs(err))),
           "coverage": {}, "mean_pi_length": {}}
    if levels is None:
        levels = sorted({float(k) for r in records for k in r["intervals"]})
    for level in levels:
        key = _level_key(level)
        lo = np.array([r["intervals"][key]["lo"] for r in records])
        hi = np.array([r["intervals"][key]["hi"] for r in records])
        truth = np.array([r["true_day"] for r in records])
        out["coverage"][key] = float(np.mean((lo <= truth) & (truth <= hi)))
        out["mean_pi_length"][key] = float(np.mean(hi - lo + 1))
    return out


def lag_curves(records: Sequence[dict], level: float = 0.95) -> list:
    """One ``{lag, n, mae, mean_pi_length}`` row per lag, sorted by lag."""
    key = _level_key(level)
    groups: dict = {}
    for r in records:
        groups.setdefault(r["lag"], []).append(r)
    rows = []
    for lag in sorted(groups):
        g = groups[lag]
        err = np.array([abs(r["point"] - r["true_day"]) for r in g], dtype=float)
        lengths = np.array([r["intervals"][key]["hi"] - r["intervals"][key]["lo"] + 1 for r in g])
        rows.append({"lag": lag, "n": len(g), "mae": float(err.mean()),
                     "mean_pi_length": float(lengths.mean())})
    return rows


def _sort_key(item):
    return str(item[0].individual_id)


def _fold_predictions(model: FittedModel, series, obs, cov_generator, plan: EvaluationPlan):
    T = obs.observed_time
    records = []
    levels = plan.pi_levels
    if plan.known_future_covariates:
        cov = FixedPathGenerator.from_series(series)
        n_paths = 1
    else:
        cov = cov_generator
        n_paths = plan.n_paths
    for lag in range(plan.lag_range[0], plan.lag_range[1] + 1):
        t_c = T + lag
        if t_c < series.start_day:
            continue
        if plan.horizon_day is not None:
            horizon = plan.horizon_day
        elif plan.known_future_covariates:
            horizon = series.last_day
        else:
            horizon = None
        if horizon is not None and horizon <= t_c:
            continue
        seed = rngmod.child_seed(plan.seed, f"eval:{series.individual_id}", lag - plan.lag_range[0])
        req = PredictionRequest(t_c, series.truncated(t_c) if not plan.known_future_covariates
                                else series, horizon, n_paths, seed)
        dist = predict_event_time(model, req, cov, levels)
        intervals = {}
        for level in levels:
            iv = dist.intervals[float(level)]
            intervals[_level_key(level)] = dict(iv)
        records.append({"individual": series.individual_id, "lag": lag, "current_time": t_c,
                        "point": dist.median, "true_day": T, "intervals": intervals,
                        "median_beyond": dist.median_beyond, "tail_mass": dist.tail_mass,
                        "tail_warning": dist.tail_warning})
    return records


def run_evaluation(dataset: Sequence, model_spec: ModelSpec, fit_config: FitConfig | None,
                   cov_generator, plan: EvaluationPlan, fits: dict | None = None) -> EvaluationReport:
    """Leave-one-out rolling predictions over every individual with an observed event.

    ``fits`` may carry fitted fold models from an earlier run (keyed by the
    held-out individual's id); the fold fits are returned on the report.
    """
    if len(dataset) < 3:
        raise ValidationError("leave-one-out evaluation needs at least 3 individuals")
    fit_config = fit_config or FitConfig()
    data = sorted(dataset, key=_sort_key)
    fits = dict(fits or {})
    failed = []

    def fold(i):
        series, obs = data[i]
        if obs.delta != 1:
            return []
        key = series.individual_id
        model = fits.get(key)
        if model is None:
            train = data[:i] + data[i + 1:]
            try:
                model = fit_mle(train, model_spec, fit_config)
            except ValidationError as exc:
                log.warning("fold %r failed: %s", key, exc)
                failed.append(key)
                return []
            fits[key] = model
        return _fold_predictions(model, series, obs, cov_generator, plan)

    per_fold = _map_ordered(fold, range(len(data)), plan.threads)
    records = [r for recs in per_fold for r in recs]
    if not records:
        raise ValidationError("evaluation produced no predictions")
    aggregates = compute_metrics(records, plan.pi_levels)
    aggregates["n_tail_warnings"] = int(sum(r["tail_warning"] for r in records))
    rows = lag_curves(records, plan.pi_levels[0])
    failed = sorted(failed, key=str)
    return EvaluationReport(records, aggregates, rows, len(failed), failed, fits)


def bootstrap_coverage_experiment(true_params: ParamVector, generator, n_outer: int = 200,
                                  n_boot: int = 200, level: float = 0.95, seed: int = 0,
                                  n_individuals: int = 50,
                                  config: FitConfig | None = None, threads: int = 1) -> dict:
    """Fraction of bootstrap intervals that contain the true value, per parameter."""
    if n_outer < 50:
        raise ValidationError("coverage experiment needs n_outer >= 50")
    config = config or FitConfig()
    model = generator.model
    names = model.param_names()
    truth = true_params.flat()
    hits = np.zeros(truth.size)
    used = 0
    dropped = 0
    widths = []
    for r in range(n_outer):
        data, _ = generator.generate(true_params, n_individuals, rngmod.stream(seed, "outer", r))
        try:
            res = bootstrap_ci(data, model, config, n_boot, level,
                               seed=rngmod.child_seed(seed, "boot", r), threads=threads)
        except ValidationError as exc:
            log.warning("outer replicate %d failed: %s", r, exc)
            continue
        if not res.intervals:
            continue
        used += 1
        dropped += res.n_dropped
        lo = np.array([res.intervals[n][0] for n in names])
        hi = np.array([res.intervals[n][1] for n in names])
        hits += (lo <= truth) & (truth <= hi)
        widths.append(hi - lo)
    coverage = hits / max(used, 1)
    return {"param_names": names, "level": level, "n_outer": n_outer, "n_used": used,
            "n_boot": n_boot, "n_dropped_replicates": dropped,
            "coverage": dict(zip(names, coverage.tolist())),
            "mean_width": dict(zip(names, np.mean(widths, axis=0).tolist())) if widths else {}}
