"""Random small instances and brute-force reference computations for tests."""

from __future__ import annotations

import itertools

import mpmath
import numpy as np

from eventhistory import (
    CovariateSeries,
    EventObservation,
    FeatureMapSpec,
    ModelSpec,
    MultiEventObservation,
    ParamVector,
    ThresholdFeatureSpec,
)
from eventhistory.core import as_link
from eventhistory.likelihood import build_design

LINKS = ("logit", "probit", "cloglog")
mpmath.mp.dps = 50


def random_spec(rng, n_events=1, max_degree=2):
    lag_window = int(rng.integers(0, 3))
    raw = tuple((int(rng.integers(0, 3)), int(rng.integers(0, lag_window + 1)))
                for _ in range(int(rng.integers(0, 3))))
    thresholds = ()
    if rng.random() < 0.7:
        thresholds = (ThresholdFeatureSpec(0, 1, float(rng.uniform(-2, 8))),)
    degree = int(rng.integers(1, max_degree + 1)) if n_events > 1 else 1
    return FeatureMapSpec(lag_window, True, raw, thresholds, degree)


def random_values(rng, n_days):
    """Columns (tmin, tmax, x3) with tmin <= tmax."""
    mean = rng.normal(5.0, 6.0, n_days)
    half = rng.uniform(0.0, 5.0, n_days)
    return np.column_stack([mean - half, mean + half, rng.normal(size=n_days)])


def random_dataset(rng, kind, n_events=1, max_ind=10, max_days=30, max_degree=2):
    """Random data and model with at most ``max_ind`` individuals and ``max_days`` days."""
    n = int(rng.integers(1, max_ind + 1))
    spec = random_spec(rng, n_events, max_degree)
    data = []
    for i in range(n):
        last = int(rng.integers(0, max_days))
        series = CovariateSeries(i, -spec.lag_window,
                                 random_values(rng, last + 1 + spec.lag_window))
        if kind == "multi":
            k = int(rng.integers(0, n_events + 1))
            days = np.sort(rng.choice(last + 1, size=min(k, last + 1), replace=False))
            if len(days) and (len(days) == n_events or rng.random() < 0.5):
                obs = MultiEventObservation(i, tuple(int(d) for d in days[:-1]), int(days[-1]), 1)
            else:
                obs = MultiEventObservation(i, tuple(int(d) for d in days), last, 0)
        else:
            delta = 1 if kind == "single" else int(rng.integers(0, 2))
            obs = EventObservation(i, last, delta)
        data.append((series, obs))
    link = LINKS[int(rng.integers(0, 3))]
    model = ModelSpec(link, spec, n_events, bool(rng.random() < 0.3) if n_events > 1 else False)
    return data, model


def feature_scale(data, model, kind):
    """Largest magnitude of each design column, floored at 1."""
    return np.maximum(np.abs(build_design(data, model, kind).X).max(axis=0), 1.0)


def random_params(rng, data, model, kind):
    """Coefficients scaled so that the linear predictor stays moderate."""
    scale = feature_scale(data, model, kind)
    beta = rng.normal(0.0, 0.6, (model.n_beta_states, model.feature_dim)) / scale
    beta[:, 0] += rng.normal(-1.5, 0.5, model.n_beta_states)
    return ParamVector(beta)


def fd_gradient(fn, params, data, model, kind, step=1e-5):
    """Central differences with the step for each coefficient inversely
    proportional to the magnitude of its feature."""
    beta = params.flat()
    h = step / np.tile(feature_scale(data, model, kind), model.n_beta_states)
    out = np.empty(beta.size)
    for j in range(beta.size):
        up, dn = beta.copy(), beta.copy()
        up[j] += h[j]
        dn[j] -= h[j]
        out[j] = (fn(ParamVector.from_flat(model, up), data, model)
                  - fn(ParamVector.from_flat(model, dn), data, model)) / (2 * h[j])
    return out


# -- reference computations -------------------------------------------------------

def ref_gdd(tmin, tmax, t_base):
    mean = (tmin + tmax) / 2.0
    return mean - t_base if mean > t_base else 0.0


def ref_features(series, spec, t, prior=(), n_events=1):
    """Day-``t`` covariate vector assembled element by element."""
    v = series.values
    s0 = series.start_day
    x = [1.0] if spec.include_intercept else []
    for idx, lag in spec.raw_terms:
        x.append(float(v[t - lag - s0, idx]))
    for term in spec.threshold_terms:
        total = 0.0
        for day in range(term.accumulate_from, t + 1):
            total += ref_gdd(v[day - s0, term.tmin_index], v[day - s0, term.tmax_index],
                             term.t_base)
        x.append(total)
    if n_events <= 1:
        return x
    tp = [0.0] * (n_events - 1)
    for l, tl in enumerate(prior[:n_events - 1]):
        if tl < t:
            tp[l] = float(tl)
    body = (x[1:] if spec.include_intercept else x) + tp
    out = [1.0] if spec.include_intercept else []
    for k in range(1, spec.polynomial_degree + 1):
        for combo in itertools.combinations_with_replacement(range(len(body)), k):
            term = 1.0
            for c in combo:
                term *= body[c]
            out.append(term)
    return out


def mp_prob(link, eta):
    eta = mpmath.mpf(eta)
    kind = as_link(link).kind.value
    if kind == "logit":
        return 1 / (1 + mpmath.exp(-eta))
    if kind == "probit":
        return mpmath.ncdf(eta)
    return 1 - mpmath.exp(-mpmath.exp(eta))


def ref_loglik(params, data, model, t_base=None):
    """Log of the joint probability built by successive conditioning day by day."""
    spec = model.feature_spec.with_base(t_base)
    S = model.n_events
    total = mpmath.mpf(1)
    for series, obs in data:
        if isinstance(obs, EventObservation):
            events = (obs.observed_time,) if obs.delta == 1 else ()
            last = obs.observed_time
        else:
            events = obs.all_event_times()
            last = obs.last_time
        state = 0
        for t in range(0, last + 1):
            if state >= S:
                break
            x = ref_features(series, spec, t, events[:state], S)
            b = params.beta[0 if params.beta.shape[0] == 1 else state]
            eta = mpmath.fsum(mpmath.mpf(float(bj)) * mpmath.mpf(xj) for bj, xj in zip(b, x))
            p = mp_prob(model.link, eta)
            if state < len(events) and events[state] == t:
                total *= p
                state += 1
            else:
                total *= 1 - p
    return mpmath.log(total)
