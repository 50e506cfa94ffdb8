"""Domain types shared by every module: time grids, covariate series,
event observations and link functions.

All probability arithmetic downstream goes through :func:`log_link_inverse_pair`
so that likelihoods never multiply raw daily probabilities.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np
from scipy import special

ORIGIN = 0


class ValidationError(ValueError):
    """Input data violates a structural invariant."""


class MissingDataError(ValidationError):
    """A covariate value needed for some day is not available."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation."""


@dataclass(frozen=True)
class TimeGrid:
    origin: int = ORIGIN
    horizon: int = 365

    def __post_init__(self):
        if self.origin > self.horizon:
            raise ValidationError(f"origin {self.origin} > horizon {self.horizon}")

    def contains(self, day: int) -> bool:
        return self.origin <= day <= self.horizon

    def check(self, day: int, what: str = "time") -> None:
        if not self.contains(day):
            raise ValidationError(
                f"{what} {day} outside grid [{self.origin}, {self.horizon}]")


@dataclass(frozen=True, eq=False)
class CovariateSeries:
    """Daily covariate vectors for one individual over a contiguous day range.

    ``values[k]`` is the covariate vector for day ``start_day + k``. The range
    may start before the time origin so that lag windows can be served.
    """

    individual_id: Hashable
    start_day: int
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] == 0:
            raise ValidationError(
                f"individual {self.individual_id!r}: covariate values must be a "
                "non-empty (n_days, d) array")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "start_day", int(self.start_day))

    @classmethod
    def from_mapping(cls, individual_id, mapping: dict) -> "CovariateSeries":
        """Build from ``{day: vector}``; days must be contiguous."""
        if not mapping:
            raise ValidationError(f"individual {individual_id!r}: no covariate rows")
        days = sorted(mapping)
        expected = list(range(days[0], days[-1] + 1))
        if days != expected:
            missing = sorted(set(expected) - set(days))
            raise MissingDataError(
                f"individual {individual_id!r}: gap in covariate days, missing {missing[:5]}")
        rows = [np.atleast_1d(np.asarray(mapping[d], dtype=float)) for d in days]
        dims = {r.shape for r in rows}
        if len(dims) != 1:
            raise ValidationError(
                f"individual {individual_id!r}: covariate dimension varies across days")
        return cls(individual_id, days[0], np.vstack(rows))

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def last_day(self) -> int:
        return self.start_day + self.values.shape[0] - 1

    def covers(self, first: int, last: int) -> bool:
        return self.start_day <= first and last <= self.last_day

    def require(self, first: int, last: int) -> None:
        if not self.covers(first, last):
            raise MissingDataError(
                f"individual {self.individual_id!r}: covariates cover days "
                f"[{self.start_day}, {self.last_day}] but [{first}, {last}] is needed")

    def at(self, day: int) -> np.ndarray:
        self.require(day, day)
        return self.values[day - self.start_day]

    def window(self, first: int, last: int) -> np.ndarray:
        self.require(first, last)
        return self.values[first - self.start_day:last - self.start_day + 1]

    def truncated(self, last: int) -> "CovariateSeries":
        """Copy holding only days up to ``last``."""
        self.require(self.start_day, last)
        return CovariateSeries(self.individual_id, self.start_day,
                               self.values[:last - self.start_day + 1])

    def extended(self, future: np.ndarray) -> "CovariateSeries":
        """Copy with ``future`` rows appended after ``last_day``."""
        future = np.asarray(future, dtype=float).reshape(-1, self.dim)
        return CovariateSeries(self.individual_id, self.start_day,
                               np.vstack([self.values, future]))


@dataclass(frozen=True)
class EventObservation:
    individual_id: Hashable
    observed_time: int
    delta: int = 1

    def __post_init__(self):
        if self.delta not in (0, 1):
            raise ValidationError(
                f"individual {self.individual_id!r}: delta must be 0 or 1, got {self.delta!r}")
        if self.observed_time < ORIGIN:
            raise ValidationError(
                f"individual {self.individual_id!r}: observed time {self.observed_time} "
                "precedes the origin")


@dataclass(frozen=True)
class MultiEventObservation:
    """Observed event days of events ``1..K`` plus the final observation time.

    ``delta == 1`` means ``last_time`` is the day of event ``K + 1``;
    ``delta == 0`` means observation was censored at ``last_time``.
    """

    individual_id: Hashable
    event_times: tuple = ()
    last_time: int = 0
    delta: int = 0
    n_events: int | None = None

    def __post_init__(self):
        times = tuple(int(t) for t in self.event_times)
        object.__setattr__(self, "event_times", times)
        who = f"individual {self.individual_id!r}"
        if self.delta not in (0, 1):
            raise ValidationError(f"{who}: delta must be 0 or 1")
        if times and times[0] < ORIGIN:
            raise ValidationError(f"{who}: first event precedes the origin")
        for a, b in zip(times, times[1:]):
            if b <= a:
                raise ValidationError(
                    f"{who}: event times must be strictly increasing, got {list(times)}")
        if self.delta == 1:
            if times and self.last_time <= times[-1]:
                raise ValidationError(f"{who}: observed event time {self.last_time} "
                                      f"does not follow event at {times[-1]}")
            if self.last_time < ORIGIN:
                raise ValidationError(f"{who}: last time precedes the origin")
        else:
            if times and self.last_time < times[-1]:
                raise ValidationError(
                    f"{who}: censoring time {self.last_time} precedes event at {times[-1]}")
            if self.last_time < ORIGIN:
                raise ValidationError(f"{who}: last time precedes the origin")
        if self.n_events is not None:
            self.check_states(self.n_events)

    @property
    def n_observed(self) -> int:
        """Number of events known to have occurred by ``last_time`` (inclusive)."""
        return len(self.event_times) + self.delta

    def check_states(self, n_events: int) -> None:
        k = len(self.event_times)
        if k > n_events or (self.delta == 1 and k + 1 > n_events):
            raise ValidationError(
                f"individual {self.individual_id!r}: {self.n_observed} events observed "
                f"but the model has only {n_events}")

    def all_event_times(self) -> tuple:
        return self.event_times + ((self.last_time,) if self.delta == 1 else ())


class LinkKind(str, enum.Enum):
    LOGIT = "logit"
    PROBIT = "probit"
    CLOGLOG = "cloglog"


@dataclass(frozen=True)
class LinkFunction:
    kind: LinkKind = LinkKind.LOGIT

    def __post_init__(self):
        object.__setattr__(self, "kind", LinkKind(_canonical_kind(self.kind)))

    @property
    def name(self) -> str:
        return self.kind.value


def _canonical_kind(kind) -> str:
    if isinstance(kind, LinkKind):
        return kind.value
    k = str(kind).lower().replace("_", "-")
    aliases = {"complementary-log-log": "cloglog", "c-log-log": "cloglog", "clog-log": "cloglog"}
    return aliases.get(k, k)


LOGIT = LinkFunction(LinkKind.LOGIT)
PROBIT = LinkFunction(LinkKind.PROBIT)
CLOGLOG = LinkFunction(LinkKind.CLOGLOG)


def as_link(link) -> LinkFunction:
    if isinstance(link, LinkFunction):
        return link
    return LinkFunction(link)


def link_forward(link, p):
    """The link ``g(p)``; raises :class:`DomainError` outside ``(0, 1)``."""
    link = as_link(link)
    p = np.asarray(p, dtype=float)
    if np.any(~((p > 0.0) & (p < 1.0))):
        raise DomainError("link_forward requires 0 < p < 1")
    if link.kind is LinkKind.LOGIT:
        out = np.log(p) - np.log1p(-p)
    elif link.kind is LinkKind.PROBIT:
        out = special.ndtri(p)
    else:
        out = np.log(-np.log1p(-p))
    return out[()] if out.ndim == 0 else out


def link_inverse(link, eta):
    """Inverse link ``g^{-1}(eta)``, evaluated without overflow."""
    link = as_link(link)
    eta = np.asarray(eta, dtype=float)
    if link.kind is LinkKind.LOGIT:
        out = special.expit(eta)
    elif link.kind is LinkKind.PROBIT:
        out = special.ndtr(eta)
    else:
        out = -np.expm1(-np.exp(eta))
    return out[()] if out.ndim == 0 else out


def log_link_inverse_pair(link, eta):
    """``(log g^{-1}(eta), log(1 - g^{-1}(eta)))`` computed in log space."""
    link = as_link(link)
    eta = np.asarray(eta, dtype=float)
    if link.kind is LinkKind.LOGIT:
        log_p = -np.logaddexp(0.0, -eta)
        log_q = -np.logaddexp(0.0, eta)
    elif link.kind is LinkKind.PROBIT:
        log_p = special.log_ndtr(eta)
        log_q = special.log_ndtr(-eta)
    else:
        e = np.exp(eta)
        log_q = -e
        # log(1 - exp(-e)); the two branches keep full precision at both ends
        with np.errstate(divide="ignore"):
            log_p = np.where(e < 0.6931471805599453,
                             np.log(-np.expm1(-e)),
                             np.log1p(-np.exp(-e)))
    if log_p.ndim == 0:
        return log_p[()], log_q[()]
    return log_p, log_q


def dlog_pair(link, eta):
    """Derivatives of the log pair with respect to ``eta``.

    Returns ``(d log p / d eta, d log(1-p) / d eta)``.
    """
    link = as_link(link)
    eta = np.asarray(eta, dtype=float)
    if link.kind is LinkKind.LOGIT:
        return special.expit(-eta), -special.expit(eta)
    if link.kind is LinkKind.PROBIT:
        log_phi = -0.5 * eta * eta - 0.5 * np.log(2.0 * np.pi)
        return (np.exp(log_phi - special.log_ndtr(eta)),
                -np.exp(log_phi - special.log_ndtr(-eta)))
    e = np.exp(eta)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        dp = np.where(e > 700.0, 0.0, e / np.expm1(e))
    dp = np.where(e < 1e-300, 1.0, dp)
    return dp, -e


def check_ids(series: Sequence[CovariateSeries], observations: Sequence) -> None:
    """Observations and series must pair up by individual id."""
    if len(series) != len(observations):
        raise ValidationError("covariate series and observations differ in length")
    for s, o in zip(series, observations):
        if s.individual_id != o.individual_id:
            raise ValidationError(
                f"covariates for {s.individual_id!r} paired with observation for "
                f"{o.individual_id!r}")
