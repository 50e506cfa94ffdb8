"""Plug-in Monte Carlo predictive distributions of the next event day.

Given coefficients fitted elsewhere, covariates observed up to the current
day ``t_c`` and a generator of future covariate paths, the probability that
the event happens on day ``t_c + k`` is averaged over simulated paths::

    P(T = t_c + k) ~ mean_paths[ P_k * prod_{s < k} (1 - P_s) ]

Mass that falls after the horizon is reported as ``tail_mass``, never
renormalized away.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from eventhistory.core import CovariateSeries, ValidationError, log_link_inverse_pair
from eventhistory.features import feature_matrix, multi_feature_matrix

DEFAULT_HORIZON = 366
DEFAULT_PATHS = 1000
CDF_SLACK = 1e-12


@dataclass(frozen=True, eq=False)
class PredictionRequest:
    current_time: int
    observed_series: CovariateSeries
    horizon: int | None = None
    n_paths: int = DEFAULT_PATHS
    seed: int = 0
    event_prefix: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "event_prefix", tuple(int(t) for t in self.event_prefix))
        if self.horizon is None:
            object.__setattr__(self, "horizon", self.current_time + DEFAULT_HORIZON)
        if self.horizon <= self.current_time:
            raise ValidationError("horizon must lie after the current day")
        if self.n_paths < 1:
            raise ValidationError("need at least one path")
        if self.observed_series.last_day < self.current_time:
            raise ValidationError(
                f"covariates observed only through day {self.observed_series.last_day}, "
                f"current day is {self.current_time}")
        for a, b in zip(self.event_prefix, self.event_prefix[1:]):
            if b <= a:
                raise ValidationError("event prefix must be strictly increasing")
        if self.event_prefix and self.event_prefix[-1] > self.current_time:
            raise ValidationError("event prefix contains events after the current day")


@dataclass(eq=False)
class PredictiveDistribution:
    first_day: int
    pmf: np.ndarray
    tail_mass: float
    median: int | None = None
    median_beyond: bool = False
    intervals: dict = field(default_factory=dict)
    tail_warning: bool = False

    @property
    def horizon(self) -> int:
        return self.first_day + self.pmf.size - 1

    @property
    def support(self) -> np.ndarray:
        return np.arange(self.first_day, self.horizon + 1)

    def cdf(self) -> np.ndarray:
        return np.cumsum(self.pmf)


class FixedPathGenerator:
    """Covariate "generator" that always returns given future values.

    Used for the known-future-covariates evaluation and for degenerate cases.
    ``values`` holds rows for days ``start_day ..``; ``paths`` may instead give
    several explicit paths of shape ``(n_paths, n_days, d)``, returned in order
    and cycled if more are requested.
    """

    def __init__(self, values=None, start_day: int = 0, paths=None):
        if paths is not None:
            self.paths = np.asarray(paths, dtype=float)
            if self.paths.ndim == 2:
                self.paths = self.paths[:, :, None]
        else:
            v = np.asarray(values, dtype=float)
            self.paths = (v[:, None] if v.ndim == 1 else v)[None]
        self.start_day = int(start_day)

    @classmethod
    def from_series(cls, series: CovariateSeries) -> "FixedPathGenerator":
        return cls(series.values, series.start_day)

    def simulate(self, history, start: int, stop: int, n_paths: int, seed: int) -> np.ndarray:
        a = start - self.start_day
        b = stop - self.start_day + 1
        if a < 0 or b > self.paths.shape[1]:
            raise ValidationError(
                f"fixed covariate path covers days [{self.start_day}, "
                f"{self.start_day + self.paths.shape[1] - 1}], need [{start}, {stop}]")
        idx = np.arange(n_paths) % self.paths.shape[0]
        return self.paths[idx, a:b, :]


def _path_log_terms(model, req: PredictionRequest, cov_model, state: int):
    """Per-path daily ``(log P, log(1-P))`` for days ``t_c+1..H``."""
    spec_model = model.model
    spec = spec_model.feature_spec.with_base(
        model.params.t_base if spec_model.has_threshold_param else None)
    t_c, H = req.current_time, req.horizon
    hist = req.observed_series.truncated(t_c)
    future = np.asarray(cov_model.simulate(hist, t_c + 1, H, req.n_paths, req.seed), dtype=float)
    if future.ndim == 2:
        future = future[:, :, None]
    if future.shape[0] != req.n_paths or future.shape[1] != H - t_c:
        raise ValidationError(f"covariate generator returned shape {future.shape}")
    if future.shape[2] != hist.dim:
        raise ValidationError("simulated covariate dimension differs from the observed series")
    past = np.broadcast_to(hist.values, (req.n_paths,) + hist.values.shape)
    values = np.concatenate([past, future], axis=1)
    if spec_model.n_events == 1:
        X = feature_matrix(values, hist.start_day, spec, t_c + 1, H, hist.individual_id)
    else:
        X = multi_feature_matrix(values, hist.start_day, spec, req.event_prefix,
                                 spec_model.n_events, t_c + 1, H, hist.individual_id)
    beta = model.params.beta[0 if model.params.beta.shape[0] == 1 else state]
    return log_link_inverse_pair(spec_model.link, X @ beta)


def path_mean(a: np.ndarray) -> np.ndarray:
    """Mean over the leading (path) axis, independent of path order.

    Each column is summed exactly and the quotient corrected by the exact
    residual, so duplicated or identical paths give the same mean as one copy.
    """
    a = np.asarray(a, dtype=float)
    L = a.shape[0]
    flat = a.reshape(L, -1)
    out = np.empty(flat.shape[1])
    for j in range(flat.shape[1]):
        col = flat[:, j]
        q = math.fsum(col) / L
        out[j] = q + math.fsum(np.concatenate([col, np.full(L, -q)])) / L
    return out.reshape(a.shape[1:])


def _distribution(log_p: np.ndarray, log_q: np.ndarray, first_day: int) -> PredictiveDistribution:
    surv = np.cumsum(log_q, axis=1)
    before = np.concatenate([np.zeros((surv.shape[0], 1)), surv[:, :-1]], axis=1)
    pmf = path_mean(np.exp(log_p + before))
    tail = float(path_mean(np.exp(surv[:, -1])))
    dist = PredictiveDistribution(first_day, pmf, tail)
    dist.tail_warning = tail > 0.5
    return dist


def predict_event_time(model, req: PredictionRequest, cov_model, levels=(0.95,)) -> PredictiveDistribution:
    """Predictive distribution of a single event that has not happened by ``t_c``."""
    if model.model.n_events != 1:
        return predict_next_event_multi(model, req, cov_model, levels)
    log_p, log_q = _path_log_terms(model, req, cov_model, 0)
    dist = _distribution(log_p, log_q, req.current_time + 1)
    _attach_summary(dist, levels)
    return dist


def predict_next_event_multi(model, req: PredictionRequest, cov_model,
                             levels=(0.95,)) -> PredictiveDistribution:
    """Predictive distribution of the next event given the days of earlier events."""
    S = model.model.n_events
    state = len(req.event_prefix)
    if state >= S:
        raise ValidationError(f"all {S} events already happened")
    log_p, log_q = _path_log_terms(model, req, cov_model, state)
    dist = _distribution(log_p, log_q, req.current_time + 1)
    _attach_summary(dist, levels)
    return dist


def _quantile_day(cdf: np.ndarray, first_day: int, q: float):
    hit = np.nonzero(cdf >= q - CDF_SLACK)[0]
    if hit.size == 0:
        return first_day + cdf.size, True
    return first_day + int(hit[0]), False


def summarize(dist: PredictiveDistribution, levels: Sequence[float] = (0.95,)) -> dict:
    """Median and equal-tail intervals from the discrete CDF.

    A quantile that is not reached inside the horizon is reported as the day
    after the horizon with its ``beyond`` flag set.
    """
    cdf = dist.cdf()
    median, median_beyond = _quantile_day(cdf, dist.first_day, 0.5)
    intervals = {}
    for level in levels:
        a = (1.0 - level) / 2.0
        lo, lo_b = _quantile_day(cdf, dist.first_day, a)
        hi, hi_b = _quantile_day(cdf, dist.first_day, 1.0 - a)
        intervals[float(level)] = {"lo": lo, "hi": hi, "lo_beyond": lo_b, "hi_beyond": hi_b}
    return {"median": median, "median_beyond": median_beyond, "intervals": intervals,
            "tail_mass": dist.tail_mass, "tail_warning": dist.tail_warning}


def _attach_summary(dist: PredictiveDistribution, levels) -> None:
    s = summarize(dist, levels)
    dist.median = s["median"]
    dist.median_beyond = s["median_beyond"]
    dist.intervals = s["intervals"]
