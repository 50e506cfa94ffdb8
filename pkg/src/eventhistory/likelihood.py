"""Log-likelihoods and gradients for single-event, censored and multi-event data.

Every variant is evaluated through the same person-day expansion: each
individual contributes one row per day at risk, labelled 1 on a day the
individual moved to the next state and 0 otherwise, together with the state it
was in. The log-likelihood is then a sum of ``log p`` / ``log(1 - p)`` terms,
reduced per individual and combined with an exactly rounded sum so that the
result does not depend on the order of individuals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from eventhistory.core import (
    ORIGIN,
    CovariateSeries,
    EventObservation,
    LinkFunction,
    MultiEventObservation,
    ValidationError,
    as_link,
    check_ids,
    dlog_pair,
    log_link_inverse_pair,
)
from eventhistory.features import FeatureMapSpec, feature_matrix, multi_feature_matrix

KINDS = ("single", "censored", "multi")


@dataclass(frozen=True)
class ModelSpec:
    link: LinkFunction = field(default_factory=LinkFunction)
    feature_spec: FeatureMapSpec = field(default_factory=FeatureMapSpec)
    n_events: int = 1
    share_beta_across_states: bool = False
    has_threshold_param: bool = False

    def __post_init__(self):
        object.__setattr__(self, "link", as_link(self.link))
        if self.n_events < 1:
            raise ValidationError("n_events must be at least 1")
        if self.has_threshold_param and not self.feature_spec.threshold_terms:
            raise ValidationError("threshold parameter requested but the feature map "
                                  "has no threshold terms")

    @property
    def feature_dim(self) -> int:
        return self.feature_spec.multi_dim(self.n_events)

    @property
    def n_beta_states(self) -> int:
        return 1 if (self.share_beta_across_states or self.n_events == 1) else self.n_events

    @property
    def n_beta(self) -> int:
        return self.feature_dim * self.n_beta_states

    @property
    def n_params(self) -> int:
        return self.n_beta + int(self.has_threshold_param)

    def param_names(self) -> list[str]:
        names = self.feature_spec.names(self.n_events)
        if self.n_beta_states > 1:
            names = [f"state{l}:{n}" for l in range(self.n_beta_states) for n in names]
        if self.has_threshold_param:
            names.append("t_base")
        return names


@dataclass(frozen=True, eq=False)
class ParamVector:
    """Coefficients, one row per event state (or a single shared row), plus ``t_base``."""

    beta: np.ndarray
    t_base: float | None = None

    def __post_init__(self):
        b = np.array(self.beta, dtype=float)
        if b.ndim == 1:
            b = b[None, :]
        if not np.all(np.isfinite(b)):
            raise ValidationError("parameter vector has non-finite entries")
        if self.t_base is not None and not math.isfinite(self.t_base):
            raise ValidationError("t_base must be finite")
        b.setflags(write=False)
        object.__setattr__(self, "beta", b)
        if self.t_base is not None:
            object.__setattr__(self, "t_base", float(self.t_base))

    def flat(self) -> np.ndarray:
        out = self.beta.ravel()
        if self.t_base is not None:
            out = np.append(out, self.t_base)
        return out

    @classmethod
    def from_flat(cls, model: ModelSpec, vec) -> "ParamVector":
        vec = np.asarray(vec, dtype=float).ravel()
        if vec.size != model.n_params:
            raise ValidationError(f"expected {model.n_params} parameters, got {vec.size}")
        beta = vec[:model.n_beta].reshape(model.n_beta_states, model.feature_dim)
        t_base = float(vec[-1]) if model.has_threshold_param else None
        return cls(beta, t_base)

    def __eq__(self, other):
        if not isinstance(other, ParamVector):
            return NotImplemented
        return np.array_equal(self.beta, other.beta) and self.t_base == other.t_base

    def to_dict(self) -> dict:
        return {"beta": self.beta.tolist(), "t_base": self.t_base}

    @classmethod
    def from_dict(cls, d: dict) -> "ParamVector":
        return cls(np.array(d["beta"], dtype=float), d.get("t_base"))


def as_params(params, model: ModelSpec) -> ParamVector:
    if isinstance(params, ParamVector):
        p = params
    else:
        p = ParamVector.from_flat(model, params)
    if p.beta.shape != (model.n_beta_states, model.feature_dim):
        raise ValidationError(
            f"beta has shape {p.beta.shape}, model needs "
            f"{(model.n_beta_states, model.feature_dim)}")
    if model.has_threshold_param and p.t_base is None:
        raise ValidationError("model estimates t_base but params carry none")
    return p


def daily_event_prob(params, features, link=None):
    """``(log P, log(1 - P))`` for one day's features under coefficients ``params``."""
    beta = params.beta[0] if isinstance(params, ParamVector) else np.asarray(params, dtype=float)
    features = np.asarray(features, dtype=float)
    if beta.shape[-1] != features.shape[-1]:
        raise ValidationError(
            f"dimension mismatch: {beta.shape[-1]} coefficients, {features.shape[-1]} features")
    return log_link_inverse_pair(link if link is not None else LinkFunction(),
                                 features @ beta)


# -- person-day design ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Design:
    """Stacked person-day rows for a dataset at a fixed ``t_base``."""

    X: np.ndarray
    y: np.ndarray
    state: np.ndarray
    starts: np.ndarray
    n_states: int

    @property
    def n_individuals(self) -> int:
        return self.starts.size

    @property
    def n_rows(self) -> int:
        return self.y.size


def as_multi(obs) -> MultiEventObservation:
    """View a single-event observation as a one-event history."""
    if isinstance(obs, MultiEventObservation):
        return obs
    return MultiEventObservation(obs.individual_id, (), obs.observed_time, obs.delta)


def _history_blocks(obs: MultiEventObservation, n_events: int):
    """``(state, first_day, last_day, transition_on_last)`` blocks of an observed history."""
    blocks = []
    prev = ORIGIN - 1
    for l, tl in enumerate(obs.event_times):
        blocks.append((l, prev + 1, tl, True))
        prev = tl
    k = len(obs.event_times)
    if obs.delta == 1:
        blocks.append((k, prev + 1, obs.last_time, True))
    elif k < n_events:
        blocks.append((k, prev + 1, obs.last_time, False))
    return blocks


def _individual_rows(series: CovariateSeries, obs, model: ModelSpec, spec: FeatureMapSpec):
    m = as_multi(obs)
    m.check_states(model.n_events)
    blocks = [b for b in _history_blocks(m, model.n_events) if b[2] >= b[1]]
    if not blocks:
        return (np.zeros((0, model.feature_dim)), np.zeros(0), np.zeros(0, dtype=int))
    first, last = blocks[0][1], blocks[-1][2]
    if model.n_events == 1:
        X = feature_matrix(series.values, series.start_day, spec, first, last,
                           series.individual_id)
    else:
        X = multi_feature_matrix(series.values, series.start_day, spec, m.event_times,
                                 model.n_events, first, last, series.individual_id)
    y = np.zeros(last - first + 1)
    state = np.zeros(last - first + 1, dtype=int)
    for l, a, b, jump in blocks:
        state[a - first:b - first + 1] = l
        if jump:
            y[b - first] = 1.0
    if model.n_beta_states == 1:
        state[:] = 0
    return X, y, state


def build_design(data: Sequence, model: ModelSpec, kind: str = "censored",
                 t_base: float | None = None) -> Design:
    """Expand ``data`` (pairs of series and observation) into person-day rows."""
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    if not data:
        raise ValidationError("empty dataset")
    series = [d[0] for d in data]
    observations = [d[1] for d in data]
    check_ids(series, observations)
    for o in observations:
        if kind == "single":
            if not isinstance(o, EventObservation) or o.delta != 1:
                raise ValidationError(
                    f"individual {o.individual_id!r}: single-event likelihood needs an "
                    "uncensored event observation")
        elif kind == "censored" and not isinstance(o, EventObservation):
            raise ValidationError(f"individual {o.individual_id!r}: expected an event observation")
        elif kind == "censored" and model.n_events != 1:
            raise ValidationError("censored single-event likelihood needs n_events == 1")
    spec = model.feature_spec.with_base(t_base)
    Xs, ys, ss, starts = [], [], [], []
    row = 0
    for s, o in zip(series, observations):
        X, y, st = _individual_rows(s, o, model, spec)
        starts.append(row)
        row += y.size
        Xs.append(X)
        ys.append(y)
        ss.append(st)
    return Design(np.vstack(Xs), np.concatenate(ys), np.concatenate(ss),
                  np.asarray(starts, dtype=np.intp), model.n_beta_states)


def _eta(design: Design, beta: np.ndarray) -> np.ndarray:
    if design.n_states == 1:
        return design.X @ beta[0]
    return np.einsum("ij,ij->i", design.X, beta[design.state])


def _per_individual(design: Design, terms: np.ndarray) -> np.ndarray:
    """Sum row terms within each individual (rows are contiguous)."""
    out = np.zeros((design.n_individuals,) + terms.shape[1:])
    if design.n_rows == 0:
        return out
    nonempty = np.append(design.starts[1:], design.n_rows) > design.starts
    idx = design.starts[nonempty]
    out[nonempty] = np.add.reduceat(terms, idx, axis=0)
    return out


def design_terms(design: Design, beta: np.ndarray, link: LinkFunction) -> np.ndarray:
    log_p, log_q = log_link_inverse_pair(link, _eta(design, beta))
    return np.where(design.y > 0.5, log_p, log_q)


def design_loglik(design: Design, beta: np.ndarray, link: LinkFunction) -> float:
    return math.fsum(_per_individual(design, design_terms(design, beta, link)))


def _grad_from_weights(design: Design, w: np.ndarray) -> np.ndarray:
    p = design.X.shape[1]
    if design.n_states == 1:
        contrib = _per_individual(design, design.X * w[:, None])
        return np.array([[math.fsum(contrib[:, j]) for j in range(p)]])
    out = np.zeros((design.n_states, p))
    for l in range(design.n_states):
        wl = np.where(design.state == l, w, 0.0)
        contrib = _per_individual(design, design.X * wl[:, None])
        out[l] = [math.fsum(contrib[:, j]) for j in range(p)]
    return out


def design_grad(design: Design, beta: np.ndarray, link: LinkFunction) -> np.ndarray:
    """Gradient in ``beta`` (same shape as ``beta``)."""
    dp, dq = dlog_pair(link, _eta(design, beta))
    return _grad_from_weights(design, np.where(design.y > 0.5, dp, dq))


def design_value_and_grad(design: Design, beta: np.ndarray, link: LinkFunction):
    """Log-likelihood and gradient sharing one pass over the rows.

    For the logit link both come from a single ``log(1 - p)`` evaluation via
    ``log p = log(1 - p) + eta`` and ``d log(1-p)/d eta = -p``.
    """
    eta = _eta(design, beta)
    event = design.y > 0.5
    if link.kind.value == "logit":
        log_q = -np.logaddexp(0.0, eta)
        terms = np.where(event, log_q + eta, log_q)
        p = np.exp(log_q + eta)
        w = np.where(event, 1.0 - p, -p)
    else:
        log_p, log_q = log_link_inverse_pair(link, eta)
        terms = np.where(event, log_p, log_q)
        dp, dq = dlog_pair(link, eta)
        w = np.where(event, dp, dq)
    value = math.fsum(_per_individual(design, terms))
    return value, _grad_from_weights(design, w)


def _t_base_for(params: ParamVector, model: ModelSpec) -> float | None:
    return params.t_base if model.has_threshold_param else None


def _loglik(params, data, model: ModelSpec, kind: str) -> float:
    params = as_params(params, model)
    design = build_design(data, model, kind, _t_base_for(params, model))
    return design_loglik(design, params.beta, model.link)


def loglik_single(params, data, model: ModelSpec) -> float:
    """Log-likelihood of fully observed single events.

    Each individual contributes ``log P(t_i) + sum_{s < t_i} log(1 - P(s))``.
    """
    return _loglik(params, data, model, "single")


def loglik_censored(params, data, model: ModelSpec) -> float:
    """Log-likelihood under non-informative right censoring.

    Censored individuals contribute the survivor term ``sum_{s <= t_i} log(1 - P(s))``.
    """
    return _loglik(params, data, model, "censored")


def loglik_multi(params, data, model: ModelSpec) -> float:
    """Log-likelihood of ordered multi-event histories with per-state coefficients."""
    return _loglik(params, data, model, "multi")


def grad_loglik(params, data, model: ModelSpec, which: str = "censored") -> np.ndarray:
    """Analytic gradient in the coefficients, flattened like ``ParamVector.beta``.

    There is no ``t_base`` component; the base temperature is profiled out.
    """
    params = as_params(params, model)
    design = build_design(data, model, which, _t_base_for(params, model))
    return design_grad(design, params.beta, model.link).ravel()
