"""Synthetic datasets drawn from the model itself.

Event days are sampled by running the daily Bernoulli process: on each day
from the origin the event happens with the model's conditional probability,
given that it has not happened yet. Individuals still waiting at the horizon
are right-censored there and counted as truncated.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field

import numpy as np

from eventhistory import rng as rngmod
from eventhistory.core import (
    ORIGIN,
    CovariateSeries,
    EventObservation,
    LinkFunction,
    log_link_inverse_pair,
)
from eventhistory.covariates import ArmaModel, SeasonalModel, TemperatureGenerator, simulate_paths
from eventhistory.features import bloom_spec, feature_matrix
from eventhistory.likelihood import ModelSpec, ParamVector

# Reference values of the fitted phenology model.
BLOOM_INTERCEPT = -22.27
BLOOM_AGDD = 0.07
BLOOM_T_BASE = 2.97

DEMO_CLIMATE = TemperatureGenerator(
    SeasonalModel(9.0, [-11.0, 0.6], [-3.0, 0.4]),
    ArmaModel([0.75, -0.12, 0.05], [0.25], 2.6),
)


def bloom_params() -> ParamVector:
    return ParamVector([BLOOM_INTERCEPT, BLOOM_AGDD], BLOOM_T_BASE)


def bloom_model(link="logit") -> ModelSpec:
    return ModelSpec(link=LinkFunction(link), feature_spec=bloom_spec(), n_events=1,
                     has_threshold_param=True)


def sample_event_days(log_p: np.ndarray, rng: np.random.Generator, first_day: int = ORIGIN):
    """First day on which a uniform draw falls below the daily probability.

    ``log_p`` has shape ``(n, n_days)``; returns ``(days, observed)`` where
    unobserved individuals get the last day.
    """
    u = rng.random(log_p.shape)
    hit = u < np.exp(log_p)
    observed = hit.any(axis=1)
    days = np.where(observed, hit.argmax(axis=1), log_p.shape[1] - 1) + first_day
    return days.astype(int), observed


@dataclass
class BloomGenerator:
    """Independent years of simulated temperatures with AGDD-driven events.

    Each individual's series covers ``-lead_days .. horizon`` with columns
    ``(tmin, tmax)`` placed symmetrically around the simulated daily mean.
    """

    climate: TemperatureGenerator = field(default_factory=lambda: DEMO_CLIMATE)
    model: ModelSpec = field(default_factory=bloom_model)
    horizon: int = 364
    lead_days: int = 30
    diurnal_range: float = 10.0

    def temperatures(self, n: int, rng: np.random.Generator) -> np.ndarray:
        seed = int(rng.integers(0, 2**63 - 1))
        mean = simulate_paths(self.climate, None, -self.lead_days, self.horizon, n, seed)
        half = self.diurnal_range / 2.0
        return np.stack([mean - half, mean + half], axis=-1)

    def events_for(self, values: np.ndarray, params: ParamVector, rng: np.random.Generator):
        spec = self.model.feature_spec.with_base(params.t_base)
        X = feature_matrix(values, -self.lead_days, spec, ORIGIN, self.horizon)
        eta = X @ params.beta[0]
        log_p, _ = log_link_inverse_pair(self.model.link, eta)
        return sample_event_days(log_p, rng)

    def generate(self, params: ParamVector, n: int, rng: np.random.Generator):
        values = self.temperatures(n, rng)
        days, observed = self.events_for(values, params, rng)
        data = []
        for i in range(n):
            s = CovariateSeries(i, -self.lead_days, values[i])
            data.append((s, EventObservation(i, int(days[i]), int(observed[i]))))
        return data, int((~observed).sum())


def _trend_covariate(rng, n, n_days, slope=0.2, noise_sd=1.0):
    t = np.arange(n_days)
    return (slope * t + noise_sd * rng.standard_normal((n, n_days)))[:, :, None]


@dataclass
class ToyHazardGenerator:
    """One raw covariate per day, by default a noisy linear trend.

    ``covariate_fn(rng, n, n_days)`` returns covariates of shape
    ``(n, n_days, d)`` for days ``0 .. horizon``.
    """

    model: ModelSpec
    horizon: int = 99
    covariate_fn: object = _trend_covariate

    def generate(self, params: ParamVector, n: int, rng: np.random.Generator):
        values = np.asarray(self.covariate_fn(rng, n, self.horizon + 1), dtype=float)
        spec = self.model.feature_spec
        X = feature_matrix(values, ORIGIN, spec, ORIGIN + spec.lag_window, self.horizon)
        log_p, _ = log_link_inverse_pair(self.model.link, X @ params.beta[0])
        # no event is possible before the lag window is filled
        pad = np.full((n, spec.lag_window), -np.inf)
        days, observed = sample_event_days(np.concatenate([pad, log_p], axis=1), rng)
        data = [(CovariateSeries(i, ORIGIN, values[i]),
                 EventObservation(i, int(days[i]), int(observed[i]))) for i in range(n)]
        return data, int((~observed).sum())


def make_demo(seed: int = 1937, first_year: int = 1937, last_year: int = 1964,
              history_from: int = 1925, params: ParamVector | None = None,
              climate: TemperatureGenerator = DEMO_CLIMATE, lead_days: int = 30,
              diurnal_range: float = 10.0):
    """A phenology-style demo: one contiguous temperature record and yearly events.

    Returns ``(history, data)`` where ``history`` is a list of
    ``(date, tmin, tmax)`` rows and ``data`` pairs each year's covariate series
    (days relative to January 1) with its event observation.
    """
    params = params or bloom_params()
    start = dt.date(history_from, 1, 1)
    end = dt.date(last_year, 12, 31)
    n_days = (end - start).days + 1
    dates = [start + dt.timedelta(days=k) for k in range(n_days)]
    doy = np.array([d.timetuple().tm_yday - 1 for d in dates])
    flat = TemperatureGenerator(SeasonalModel(0.0), climate.arma)
    resid = simulate_paths(flat, None, 0, n_days - 1, 1, rngmod.child_seed(seed, "demo-temps"))[0]
    mean = climate.seasonal(doy) + resid
    half = diurnal_range / 2.0
    history = [(d, float(m - half), float(m + half)) for d, m in zip(dates, mean)]

    model = bloom_model()
    gen = BloomGenerator(climate, model, lead_days=lead_days)
    rng = rngmod.stream(seed, "demo-events")
    data = []
    for year in range(first_year, last_year + 1):
        a = (dt.date(year, 1, 1) - start).days - lead_days
        b = (dt.date(year, 12, 31) - start).days
        values = np.stack([mean[a:b + 1] - half, mean[a:b + 1] + half], axis=-1)
        gen.horizon = b - a - lead_days
        days, observed = gen.events_for(values[None], params, rng)
        data.append((CovariateSeries(year, -lead_days, values),
                     EventObservation(year, int(days[0]), int(observed[0]))))
    return history, data
