"""File formats: CSV for tabular series, JSON for models and reports.

Floats are written with ``repr`` so that reading a file back yields the same
doubles and re-serializing reproduces the same bytes.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import math
from pathlib import Path

import numpy as np

from eventhistory.core import (
    CovariateSeries,
    EventObservation,
    MultiEventObservation,
    ValidationError,
)
from eventhistory.estimation import FitConfig, FittedModel
from eventhistory.evaluation import EvaluationPlan
from eventhistory.features import FeatureMapSpec, ThresholdFeatureSpec
from eventhistory.likelihood import ModelSpec, ParamVector


class ParseError(ValidationError):
    """Malformed input file; the message carries the file name and line number."""


def _num(text: str, path, line: int, what: str, kind=float):
    try:
        value = kind(text)
    except (TypeError, ValueError):
        raise ParseError(f"{path}:{line}: {what} {text!r} is not a valid number") from None
    if kind is float and not math.isfinite(value):
        raise ParseError(f"{path}:{line}: {what} is not finite")
    return value


def _rows(path):
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError(f"{path}:1: file is empty")
        header = [h.strip() for h in header]
        rows = [(reader.line_num, [c.strip() for c in r]) for r in reader if any(c.strip() for c in r)]
    return path, header, rows


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def read_columns(path) -> dict:
    """Numeric CSV as ``{column: array}``."""
    path, header, rows = _rows(path)
    out = {h: [] for h in header}
    for line, r in rows:
        if len(r) != len(header):
            raise ParseError(f"{path}:{line}: expected {len(header)} fields, got {len(r)}")
        for h, v in zip(header, r):
            out[h].append(_num(v, path, line, h))
    return {h: np.array(v) for h, v in out.items()}


# -- covariates and events -----------------------------------------------------

def read_covariates(path) -> list[CovariateSeries]:
    """Covariate CSV ``individual_id,day,<col>...``, one row per individual and day."""
    path, header, rows = _rows(path)
    if len(header) < 3 or header[:2] != ["individual_id", "day"]:
        raise ParseError(f"{path}:1: expected header individual_id,day,<covariates...>")
    d = len(header) - 2
    per: dict = {}
    for line, r in rows:
        if len(r) != d + 2:
            raise ParseError(f"{path}:{line}: expected {d + 2} fields, got {len(r)}")
        day = _num(r[1], path, line, "day", int)
        vals = [_num(v, path, line, header[2 + k]) for k, v in enumerate(r[2:])]
        rec = per.setdefault(r[0], {})
        if day in rec:
            raise ParseError(f"{path}:{line}: duplicate day {day} for individual {r[0]!r}")
        rec[day] = (line, vals)
    out = []
    for ind, rec in per.items():
        days = sorted(rec)
        for a, b in zip(days, days[1:]):
            if b != a + 1:
                raise ParseError(f"{path}:{rec[b][0]}: individual {ind!r} has no rows for "
                                 f"days {a + 1}..{b - 1}")
        out.append(CovariateSeries(ind, days[0], np.array([rec[k][1] for k in days])))
    return out


def covariate_columns(path) -> list[str]:
    _, header, _ = _rows(path)
    return header[2:]


def write_covariates(path, series, columns=None) -> None:
    d = series[0].dim if series else 0
    columns = list(columns) if columns is not None else [f"x{k + 1}" for k in range(d)]
    rows = []
    for s in series:
        for k, v in enumerate(s.values):
            rows.append([s.individual_id, s.start_day + k, *v.tolist()])
    write_csv(path, ["individual_id", "day", *columns], rows)


def read_events(path) -> list:
    """Single-event (``individual_id,time,delta``) or multi-event
    (``individual_id,event_index,time,delta``) CSV."""
    path, header, rows = _rows(path)
    if not rows:
        raise ValidationError(f"{path}: events file has no records")
    if header == ["individual_id", "time", "delta"]:
        out, seen = [], set()
        for line, r in rows:
            if len(r) != 3:
                raise ParseError(f"{path}:{line}: expected 3 fields, got {len(r)}")
            if r[0] in seen:
                raise ParseError(f"{path}:{line}: duplicate individual {r[0]!r}")
            seen.add(r[0])
            try:
                out.append(EventObservation(r[0], _num(r[1], path, line, "time", int),
                                            _num(r[2], path, line, "delta", int)))
            except ValidationError as exc:
                raise ParseError(f"{path}:{line}: {exc}") from None
        return out
    if header == ["individual_id", "event_index", "time", "delta"]:
        per: dict = {}
        for line, r in rows:
            if len(r) != 4:
                raise ParseError(f"{path}:{line}: expected 4 fields, got {len(r)}")
            per.setdefault(r[0], []).append((line, _num(r[1], path, line, "event_index", int),
                                             _num(r[2], path, line, "time", int), r[3]))
        out = []
        for ind, recs in per.items():
            recs.sort(key=lambda x: x[1])
            if [x[1] for x in recs] != list(range(1, len(recs) + 1)):
                raise ParseError(f"{path}:{recs[0][0]}: event indices of {ind!r} must run 1..k")
            for line, _, _, dl in recs[:-1]:
                if dl not in ("", "1"):
                    raise ParseError(f"{path}:{line}: delta is only allowed on the last row")
            line, _, last, dl = recs[-1]
            if dl == "":
                raise ParseError(f"{path}:{line}: last row of {ind!r} needs a delta")
            try:
                out.append(MultiEventObservation(ind, tuple(x[2] for x in recs[:-1]), last,
                                                 _num(dl, path, line, "delta", int)))
            except ValidationError as exc:
                raise ParseError(f"{path}:{line}: {exc}") from None
        return out
    raise ParseError(f"{path}:1: expected header individual_id,time,delta or "
                     "individual_id,event_index,time,delta")


def write_events(path, observations) -> None:
    if observations and isinstance(observations[0], MultiEventObservation):
        rows = []
        for o in observations:
            for k, t in enumerate(o.event_times):
                rows.append([o.individual_id, k + 1, t, ""])
            rows.append([o.individual_id, len(o.event_times) + 1, o.last_time, o.delta])
        write_csv(path, ["individual_id", "event_index", "time", "delta"], rows)
    else:
        write_csv(path, ["individual_id", "time", "delta"],
                  [[o.individual_id, o.observed_time, o.delta] for o in observations])


def pair_dataset(series, observations) -> list:
    """Match covariate series to observations by id, in the events file's order."""
    by_id = {s.individual_id: s for s in series}
    data = []
    for o in observations:
        if o.individual_id not in by_id:
            raise ValidationError(f"events reference unknown individual {o.individual_id!r}")
        data.append((by_id[o.individual_id], o))
    return data


def read_history(path):
    """Daily temperature record ``date,tmin,tmax`` or ``date,tmean``.

    Returns ``(dates, mean)`` with ISO dates; the record must be contiguous.
    """
    path, header, rows = _rows(path)
    if header not in (["date", "tmin", "tmax"], ["date", "tmean"]):
        raise ParseError(f"{path}:1: expected header date,tmin,tmax or date,tmean")
    dates, mean = [], []
    for line, r in rows:
        if len(r) != len(header):
            raise ParseError(f"{path}:{line}: expected {len(header)} fields, got {len(r)}")
        try:
            d = dt.date.fromisoformat(r[0])
        except ValueError:
            raise ParseError(f"{path}:{line}: bad date {r[0]!r}") from None
        if dates and d != dates[-1] + dt.timedelta(days=1):
            raise ParseError(f"{path}:{line}: record is not contiguous at {d}")
        vals = [_num(v, path, line, header[1 + k]) for k, v in enumerate(r[1:])]
        dates.append(d)
        mean.append(sum(vals) / len(vals))
    if not dates:
        raise ValidationError(f"{path}: history has no records")
    return dates, np.array(mean)


def write_history(path, rows) -> None:
    write_csv(path, ["date", "tmin", "tmax"], [[d.isoformat(), lo, hi] for d, lo, hi in rows])


# -- JSON ----------------------------------------------------------------------

def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dump_json(obj))


def read_json(path):
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}: {exc.msg}") from None


def feature_spec_to_dict(spec: FeatureMapSpec) -> dict:
    return {"lag_window": spec.lag_window, "include_intercept": spec.include_intercept,
            "raw_terms": [list(t) for t in spec.raw_terms],
            "threshold_terms": [{"tmin_index": t.tmin_index, "tmax_index": t.tmax_index,
                                 "t_base": t.t_base, "accumulate_from": t.accumulate_from}
                                for t in spec.threshold_terms],
            "polynomial_degree": spec.polynomial_degree}


def feature_spec_from_dict(d: dict) -> FeatureMapSpec:
    terms = tuple(ThresholdFeatureSpec(int(t.get("tmin_index", 0)), int(t.get("tmax_index", 1)),
                                       float(t.get("t_base", 0.0)),
                                       int(t.get("accumulate_from", 0)))
                  for t in d.get("threshold_terms", ()))
    return FeatureMapSpec(int(d.get("lag_window", 0)), bool(d.get("include_intercept", True)),
                          tuple(tuple(t) for t in d.get("raw_terms", ())), terms,
                          int(d.get("polynomial_degree", 1)))


def model_spec_to_dict(model: ModelSpec) -> dict:
    return {"link": model.link.kind.value, "features": feature_spec_to_dict(model.feature_spec),
            "n_events": model.n_events,
            "share_beta_across_states": model.share_beta_across_states,
            "estimate_t_base": model.has_threshold_param}


def model_spec_from_dict(d: dict) -> ModelSpec:
    return ModelSpec(d.get("link", "logit"), feature_spec_from_dict(d.get("features", {})),
                     int(d.get("n_events", 1)), bool(d.get("share_beta_across_states", False)),
                     bool(d.get("estimate_t_base", False)))


def fit_config_to_dict(c: FitConfig) -> dict:
    return {"max_iterations": c.max_iterations, "gradient_tolerance": c.gradient_tolerance,
            "t_base_grid": list(c.t_base_grid), "restarts": c.restarts, "seed": c.seed,
            "refine": c.refine, "refine_tolerance": c.refine_tolerance}


def fit_config_from_dict(d: dict, seed: int | None = None) -> FitConfig:
    kw = dict(d)
    if "t_base_grid" in kw:
        kw["t_base_grid"] = tuple(kw["t_base_grid"])
    if seed is not None:
        kw["seed"] = seed
    return FitConfig(**kw)


def plan_from_dict(d: dict, seed: int, threads: int) -> EvaluationPlan:
    kw = {k: v for k, v in d.items() if k in ("lag_range", "pi_levels", "known_future_covariates",
                                              "n_paths", "horizon_day")}
    for k in ("lag_range", "pi_levels"):
        if k in kw:
            kw[k] = tuple(kw[k])
    return EvaluationPlan(seed=seed, threads=threads, **kw)


def fitted_model_to_dict(fm: FittedModel) -> dict:
    return {"model": model_spec_to_dict(fm.model), "param_names": fm.model.param_names(),
            "params": fm.params.to_dict(), "loglik_at_max": fm.loglik_at_max,
            "converged": fm.converged, "n_individuals": fm.n_individuals,
            "profile_curve": [[float(t), float(v)] for t, v in fm.profile_curve],
            "separation": fm.separation, "iterations": fm.iterations,
            "gradient_norm": fm.gradient_norm, "kind": fm.kind, "message": fm.message}


def fitted_model_from_dict(d: dict) -> FittedModel:
    try:
        model = model_spec_from_dict(d["model"])
        params = ParamVector.from_dict(d["params"])
        return FittedModel(model, params, float(d["loglik_at_max"]), bool(d["converged"]),
                           int(d["n_individuals"]),
                           [(float(t), float(v)) for t, v in d.get("profile_curve", [])],
                           bool(d.get("separation", False)), int(d.get("iterations", 0)),
                           float(d.get("gradient_norm", float("nan"))),
                           d.get("kind", "censored"), d.get("message", ""))
    except KeyError as exc:
        raise ValidationError(f"fitted-model file lacks field {exc.args[0]!r}") from None
