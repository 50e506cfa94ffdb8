"""Covariate vectors for the daily event-probability regression.

A :class:`FeatureMapSpec` turns a raw covariate series into one fixed-length
vector per day: an optional intercept, lagged raw covariates, and accumulated
growing degree days over an (optionally unknown) base temperature. For
multi-event models the vector is extended with the days of the events that
have already happened.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from eventhistory.core import (
    ORIGIN,
    CovariateSeries,
    DomainError,
    MissingDataError,
    MultiEventObservation,
    ValidationError,
)


@dataclass(frozen=True)
class ThresholdFeatureSpec:
    """Accumulated growing degree days from ``accumulate_from`` to the current day."""

    tmin_index: int = 0
    tmax_index: int = 1
    t_base: float = 0.0
    accumulate_from: int = ORIGIN

    def with_base(self, t_base: float) -> "ThresholdFeatureSpec":
        return replace(self, t_base=float(t_base))


@dataclass(frozen=True)
class FeatureMapSpec:
    lag_window: int = 0
    include_intercept: bool = True
    raw_terms: tuple = ()
    threshold_terms: tuple = ()
    polynomial_degree: int = 1

    def __post_init__(self):
        object.__setattr__(self, "raw_terms",
                           tuple((int(i), int(lag)) for i, lag in self.raw_terms))
        object.__setattr__(self, "threshold_terms", tuple(self.threshold_terms))
        if self.lag_window < 0:
            raise ValidationError("lag_window must be nonnegative")
        if self.polynomial_degree < 1:
            raise ValidationError("polynomial_degree must be positive")
        for idx, lag in self.raw_terms:
            if lag < 0 or lag > self.lag_window:
                raise ValidationError(
                    f"raw term lag {lag} outside the lag window [0, {self.lag_window}]")
            if idx < 0:
                raise ValidationError("negative covariate index")

    @property
    def dim(self) -> int:
        """Length of the single-event feature vector."""
        return int(self.include_intercept) + len(self.raw_terms) + len(self.threshold_terms)

    def multi_dim(self, n_events: int) -> int:
        """Length of ``Z`` for a model with ``n_events`` events.

        With a single event ``Z`` is the plain feature vector; the polynomial
        expansion only applies once prior-event days enter.
        """
        if n_events <= 1:
            return self.dim
        m = len(self.raw_terms) + len(self.threshold_terms) + n_events - 1
        total = int(self.include_intercept)
        for k in range(1, self.polynomial_degree + 1):
            total += len(list(itertools.combinations_with_replacement(range(m), k)))
        return total

    def with_base(self, t_base: float | None) -> "FeatureMapSpec":
        """Same map with every threshold term's base temperature set to ``t_base``."""
        if t_base is None or not self.threshold_terms:
            return self
        return replace(self, threshold_terms=tuple(t.with_base(t_base)
                                                   for t in self.threshold_terms))

    def first_needed_day(self, first: int) -> int:
        """Earliest covariate day needed to build features from day ``first`` on."""
        days = [first - self.lag_window]
        days += [t.accumulate_from for t in self.threshold_terms]
        return min(days)

    def names(self, n_events: int = 1) -> list[str]:
        base = [f"x{i}_lag{lag}" for i, lag in self.raw_terms]
        base += ["agdd" if len(self.threshold_terms) == 1 else f"agdd{j}"
                 for j in range(len(self.threshold_terms))]
        base += [f"event{l}_day" for l in range(1, n_events)]
        out = ["intercept"] if self.include_intercept else []
        degree = self.polynomial_degree if n_events > 1 else 1
        for k in range(1, degree + 1):
            for combo in itertools.combinations_with_replacement(range(len(base)), k):
                out.append("*".join(base[c] for c in combo))
        return out


def gdd(tmin, tmax, t_base):
    """Growing degree days: the daily mean temperature in excess of ``t_base``.

    Days whose mean does not strictly exceed the base contribute zero.
    """
    tmin = np.asarray(tmin, dtype=float)
    tmax = np.asarray(tmax, dtype=float)
    if np.any(tmin > tmax):
        raise DomainError("gdd requires tmin <= tmax")
    excess = (tmin + tmax) / 2.0 - t_base
    out = np.where(excess > 0.0, excess, 0.0)
    return out[()] if out.ndim == 0 else out


def _daily_gdd(values: np.ndarray, term: ThresholdFeatureSpec, t_base: float) -> np.ndarray:
    mean = (values[..., term.tmin_index] + values[..., term.tmax_index]) / 2.0
    excess = mean - t_base
    return np.where(excess > 0.0, excess, 0.0)


def agdd(series: CovariateSeries, spec: ThresholdFeatureSpec, t: int) -> float:
    """Accumulated GDD over days ``accumulate_from..t`` (0 when ``t`` precedes them)."""
    t0 = spec.accumulate_from
    if t < t0:
        return 0.0
    w = series.window(t0, t)
    if np.any(w[:, spec.tmin_index] > w[:, spec.tmax_index]):
        raise DomainError(f"individual {series.individual_id!r}: tmin > tmax")
    return float(np.cumsum(_daily_gdd(w, spec, spec.t_base))[-1])


def build_features(series: CovariateSeries, spec: FeatureMapSpec, t: int) -> np.ndarray:
    """The feature vector for day ``t`` (intercept first when enabled)."""
    series.require(t - spec.lag_window, t)
    out = [1.0] if spec.include_intercept else []
    for idx, lag in spec.raw_terms:
        v = series.at(t - lag)
        if idx >= v.shape[0]:
            raise ValidationError(f"covariate index {idx} out of range for dimension {v.shape[0]}")
        out.append(float(v[idx]))
    for term in spec.threshold_terms:
        out.append(agdd(series, term, t))
    return np.array(out, dtype=float)


def tprime(event_times: Sequence[int], n_events: int, t: int) -> np.ndarray:
    """Prior-event-day covariates ``T'_1(t) .. T'_{S-1}(t)``.

    Component ``l`` is 0 until event ``l`` has happened and its day afterwards.
    Only events listed in ``event_times`` count as having happened.
    """
    out = np.zeros(max(n_events - 1, 0))
    for l, tl in enumerate(event_times[:n_events - 1]):
        if t >= tl:
            out[l] = tl
    return out


def expand_polynomial(base: np.ndarray, degree: int, intercept: bool) -> np.ndarray:
    """All monomials of ``base`` (last axis) up to ``degree``, grouped by degree."""
    base = np.asarray(base, dtype=float)
    cols = []
    if intercept:
        cols.append(np.ones(base.shape[:-1]))
    m = base.shape[-1]
    for k in range(1, degree + 1):
        for combo in itertools.combinations_with_replacement(range(m), k):
            term = base[..., combo[0]]
            for c in combo[1:]:
                term = term * base[..., c]
            cols.append(term)
    if not cols:
        return np.zeros(base.shape[:-1] + (0,))
    return np.stack(cols, axis=-1)


def build_multi_event_features(series: CovariateSeries, spec: FeatureMapSpec,
                               obs_prefix, t: int, n_events: int | None = None) -> np.ndarray:
    """Multi-event covariate vector ``Z`` for day ``t``.

    ``obs_prefix`` is a :class:`MultiEventObservation` or a sequence of event
    days; it should list only events that happened before ``t``.
    """
    if isinstance(obs_prefix, MultiEventObservation):
        times = obs_prefix.event_times
        if n_events is None:
            n_events = obs_prefix.n_events
    else:
        times = tuple(int(x) for x in obs_prefix)
    if n_events is None:
        raise ValidationError("number of events in the model is required")
    x = build_features(series, spec, t)
    if n_events <= 1:
        return x
    tp = tprime(times, n_events, t)
    body = x[1:] if spec.include_intercept else x
    return expand_polynomial(np.concatenate([body, tp]), spec.polynomial_degree,
                             spec.include_intercept)


# -- vectorized assembly -------------------------------------------------------

def feature_matrix(values: np.ndarray, start_day: int, spec: FeatureMapSpec,
                   first: int, last: int, individual_id=None) -> np.ndarray:
    """Feature vectors for days ``first..last`` in one pass.

    ``values`` has shape ``(..., n_days, d)`` with row 0 at ``start_day``;
    leading axes (e.g. Monte Carlo paths) are carried through, giving an
    output of shape ``(..., last - first + 1, spec.dim)``.
    """
    values = np.asarray(values, dtype=float)
    n_days = values.shape[-2]
    lo = spec.first_needed_day(first)
    if lo < start_day or last > start_day + n_days - 1:
        raise MissingDataError(
            f"individual {individual_id!r}: covariates cover days "
            f"[{start_day}, {start_day + n_days - 1}] but [{lo}, {last}] is needed")
    n = last - first + 1
    lead = values.shape[:-2]
    cols = []
    if spec.include_intercept:
        cols.append(np.ones(lead + (n,)))
    for idx, lag in spec.raw_terms:
        a = first - lag - start_day
        cols.append(values[..., a:a + n, idx])
    for term in spec.threshold_terms:
        t0 = term.accumulate_from
        col = np.zeros(lead + (n,))
        if last >= t0:
            g = _daily_gdd(values[..., t0 - start_day:last - start_day + 1, :], term, term.t_base)
            acc = np.cumsum(g, axis=-1)
            # acc[k] is the sum through day t0 + k
            lo_day = max(first, t0)
            col[..., lo_day - first:] = acc[..., lo_day - t0:]
        cols.append(col)
    if not cols:
        return np.zeros(lead + (n, 0))
    return np.stack(cols, axis=-1)


def tprime_matrix(event_times: Sequence[int], n_events: int, first: int, last: int,
                  strict: bool = True) -> np.ndarray:
    """``T'`` columns for days ``first..last``.

    With ``strict`` an event contributes only from the day after it happened,
    which is the prefix the likelihood conditions on at each day.
    """
    days = np.arange(first, last + 1)
    out = np.zeros((days.size, max(n_events - 1, 0)))
    for l, tl in enumerate(event_times[:n_events - 1]):
        on = days > tl if strict else days >= tl
        out[on, l] = tl
    return out


def multi_feature_matrix(values: np.ndarray, start_day: int, spec: FeatureMapSpec,
                         event_times: Sequence[int], n_events: int, first: int, last: int,
                         individual_id=None, strict: bool = True) -> np.ndarray:
    x = feature_matrix(values, start_day, spec, first, last, individual_id)
    if n_events <= 1:
        return x
    tp = tprime_matrix(event_times, n_events, first, last, strict)
    tp = np.broadcast_to(tp, x.shape[:-1] + tp.shape[-1:])
    body = x[..., 1:] if spec.include_intercept else x
    return expand_polynomial(np.concatenate([body, tp], axis=-1), spec.polynomial_degree,
                             spec.include_intercept)


def bloom_spec(t_base: float = 0.0, tmin_index: int = 0, tmax_index: int = 1,
               accumulate_from: int = ORIGIN) -> FeatureMapSpec:
    """Intercept plus same-day AGDD, the phenology model's default map."""
    return FeatureMapSpec(lag_window=0, include_intercept=True,
                          threshold_terms=(ThresholdFeatureSpec(tmin_index, tmax_index,
                                                                t_base, accumulate_from),))
