"""Daily temperature generator: harmonic seasonal cycle plus ARMA residuals.

The ARMA convention is ``r_t = sum_j ar[j] r_{t-1-j} + e_t + sum_k ma[k] e_{t-1-k}``
with Gaussian innovations ``e_t ~ N(0, (noise_sd * noise_scale_factor)^2)``.
Day indices passed to the seasonal curve are days since January 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import linalg, signal

from eventhistory import rng as rngmod
from eventhistory.core import CovariateSeries, ValidationError

PERIOD = 365.25


class NonStationaryError(ValueError):
    """Fitted or supplied AR polynomial has a root on or inside the unit circle."""


@dataclass(frozen=True, eq=False)
class SeasonalModel:
    mean: float
    cos_coef: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sin_coef: np.ndarray = field(default_factory=lambda: np.zeros(0))
    period: float = PERIOD

    def __post_init__(self):
        object.__setattr__(self, "cos_coef", np.asarray(self.cos_coef, dtype=float).ravel())
        object.__setattr__(self, "sin_coef", np.asarray(self.sin_coef, dtype=float).ravel())
        if self.cos_coef.shape != self.sin_coef.shape:
            raise ValidationError("cos and sin coefficient counts differ")

    @property
    def n_harmonics(self) -> int:
        return self.cos_coef.size

    def __call__(self, days) -> np.ndarray:
        return harmonic_design(days, self.n_harmonics, self.period) @ self.coefficients()

    def coefficients(self) -> np.ndarray:
        out = [self.mean]
        for a, b in zip(self.cos_coef, self.sin_coef):
            out += [a, b]
        return np.array(out)

    def to_dict(self) -> dict:
        return {"mean": self.mean, "cos": self.cos_coef.tolist(), "sin": self.sin_coef.tolist(),
                "period": self.period}

    @classmethod
    def from_dict(cls, d) -> "SeasonalModel":
        return cls(float(d["mean"]), d["cos"], d["sin"], float(d.get("period", PERIOD)))


def harmonic_design(days, n_harmonics: int, period: float = PERIOD) -> np.ndarray:
    """Columns ``1, cos(w t), sin(w t), cos(2 w t), ...`` with ``w = 2 pi / period``."""
    t = np.asarray(days, dtype=float)
    cols = [np.ones_like(t)]
    for k in range(1, n_harmonics + 1):
        w = 2.0 * np.pi * k / period
        cols += [np.cos(w * t), np.sin(w * t)]
    return np.stack(cols, axis=-1)


def fit_seasonal(days, values, n_harmonics: int = 2, period: float = PERIOD) -> SeasonalModel:
    """Least-squares harmonic regression of ``values`` on day of year."""
    values = np.asarray(values, dtype=float)
    days = np.asarray(days, dtype=float)
    if values.size < 2 * 365:
        raise ValidationError("seasonal fit needs at least two years of daily data")
    coef, *_ = np.linalg.lstsq(harmonic_design(days, n_harmonics, period), values, rcond=None)
    return SeasonalModel(float(coef[0]), coef[1::2], coef[2::2], period)


@dataclass(frozen=True, eq=False)
class ArmaModel:
    ar: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ma: np.ndarray = field(default_factory=lambda: np.zeros(0))
    noise_sd: float = 1.0
    residual_variance: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "ar", np.asarray(self.ar, dtype=float).ravel())
        object.__setattr__(self, "ma", np.asarray(self.ma, dtype=float).ravel())
        if not self.noise_sd >= 0:
            raise ValidationError("noise_sd must be nonnegative")
        check_stationary(self.ar)

    @property
    def order(self) -> tuple:
        return (self.ar.size, self.ma.size)

    def innovations(self, residuals) -> np.ndarray:
        """Reconstruct innovations by inverting the recursion from zero initial state."""
        return signal.lfilter(np.r_[1.0, -self.ar], np.r_[1.0, self.ma],
                              np.asarray(residuals, dtype=float))

    def to_dict(self) -> dict:
        return {"ar": self.ar.tolist(), "ma": self.ma.tolist(), "noise_sd": self.noise_sd,
                "residual_variance": self.residual_variance}

    @classmethod
    def from_dict(cls, d) -> "ArmaModel":
        return cls(d["ar"], d["ma"], float(d["noise_sd"]), d.get("residual_variance"))


def ar_roots(ar) -> np.ndarray:
    """Roots of ``1 - ar[0] z - ar[1] z^2 - ...``."""
    ar = np.asarray(ar, dtype=float)
    if ar.size == 0 or not np.any(ar):
        return np.zeros(0, dtype=complex)
    return np.roots(np.r_[-ar[::-1], 1.0])


def check_stationary(ar) -> None:
    roots = ar_roots(ar)
    if roots.size and np.min(np.abs(roots)) <= 1.0 + 1e-10:
        raise NonStationaryError(
            "AR polynomial not stationary: root moduli "
            + ", ".join(f"{m:.4f}" for m in sorted(np.abs(roots))))


def _segments(residuals) -> list:
    if isinstance(residuals, np.ndarray) and residuals.ndim == 1:
        return [residuals.astype(float)]
    if residuals and np.ndim(residuals[0]) == 0:
        return [np.asarray(residuals, dtype=float)]
    return [np.asarray(s, dtype=float) for s in residuals]


def _lagged(seg: np.ndarray, lags: int, start: int) -> np.ndarray:
    """Columns ``seg[t-1], ..., seg[t-lags]`` for ``t = start .. len-1``."""
    n = seg.size
    return np.column_stack([seg[start - j:n - j] for j in range(1, lags + 1)]) if lags else \
        np.zeros((n - start, 0))


def _long_ar(segments: list, max_order: int) -> np.ndarray:
    """Yule-Walker autoregression pooled over segments, order chosen by BIC.

    Order zero is allowed: for uncorrelated data the proxy innovations are then
    the series itself, and the second stage returns the minimum-norm split of
    the unidentified AR and MA coefficients.
    """
    total = sum(s.size for s in segments)
    acov = np.zeros(max_order + 1)
    for s in segments:
        for k in range(max_order + 1):
            if s.size > k:
                acov[k] += s[k:] @ s[:s.size - k]
    acov /= total
    if acov[0] <= 0:
        return np.zeros(0)
    best, best_score = np.zeros(0), total * math.log(acov[0])
    for m in range(1, max_order + 1):
        a = linalg.solve_toeplitz(acov[:m], acov[1:m + 1])
        var = acov[0] - acov[1:m + 1] @ a
        if var <= 0:
            break
        score = total * math.log(var) + m * math.log(total)
        if score < best_score:
            best, best_score = a, score
    return best


def fit_arma(residuals, p: int, q: int, long_ar_order: int | None = None) -> ArmaModel:
    """Two-stage (Hannan-Rissanen) least-squares ARMA estimate.

    A long autoregression, with order chosen by BIC up to ``long_ar_order``,
    supplies proxy innovations; the ARMA coefficients are then the least-squares
    regression of each residual on its own lags and the lagged proxy innovations. ``residuals`` may be one series or a list of
    separate segments. The series is not demeaned.
    """
    segs = _segments(residuals)
    n = sum(s.size for s in segs)
    if n < 10 * (p + q + 1):
        raise ValidationError(f"{n} residuals are too few for an ARMA({p},{q}) fit")
    if q == 0:
        m = 0
        proxies = [np.zeros_like(s) for s in segs]
    else:
        a = _long_ar(segs, long_ar_order or max(2 * (p + q), min(int(math.log(n) ** 2), 60)))
        m = a.size
        proxies = [signal.lfilter(np.r_[1.0, -a], [1.0], s) for s in segs]
    start = m + max(p, q)
    rows, target = [], []
    for s, e in zip(segs, proxies):
        if s.size <= start:
            continue
        rows.append(np.hstack([_lagged(s, p, start), _lagged(e, q, start)]))
        target.append(s[start:])
    if not rows:
        raise ValidationError("no segment is long enough for the requested order")
    Xr = np.vstack(rows)
    yr = np.concatenate(target)
    if p + q:
        coef, *_ = np.linalg.lstsq(Xr, yr, rcond=None)
    else:
        coef = np.zeros(0)
    resid = yr - Xr @ coef
    sd = float(np.sqrt(resid @ resid / max(yr.size - p - q, 1)))
    ar, ma = coef[:p], coef[p:]
    try:
        check_stationary(ar)
    except NonStationaryError as exc:
        raise NonStationaryError(f"ARMA({p},{q}) fit: {exc}") from None
    model = ArmaModel(ar, ma, sd)
    inn = np.concatenate([model.innovations(s)[start:] for s in segs if s.size > start])
    return replace(model, residual_variance=float(inn @ inn / inn.size))


def bic(residuals, model: ArmaModel, burn: int = 0) -> float:
    """``n log(sigma^2) + k log(n)`` from one-step innovations after ``burn`` days."""
    segs = _segments(residuals)
    inn = np.concatenate([model.innovations(s)[burn:] for s in segs if s.size > burn])
    n = inn.size
    k = model.ar.size + model.ma.size + 1
    return n * math.log(inn @ inn / n) + k * math.log(n)


def model_select(residuals, candidates: Sequence) -> tuple:
    """Candidate ``(p, q)`` with the smallest BIC.

    Ties go to the smaller ``p + q``, then the smaller ``p``; candidates whose
    fit is not stationary are skipped.
    """
    candidates = [tuple(int(v) for v in c) for c in candidates]
    if not candidates:
        raise ValidationError("no candidate orders")
    if len(candidates) == 1:
        return candidates[0]
    burn = 60 + max(p + q for p, q in candidates)
    scored = []
    for p, q in candidates:
        try:
            m = fit_arma(residuals, p, q)
        except NonStationaryError:
            continue
        scored.append((bic(residuals, m, burn), p + q, p, (p, q)))
    if not scored:
        raise NonStationaryError("every candidate order gave a non-stationary fit")
    return min(scored)[3]


@dataclass(frozen=True, eq=False)
class TemperatureGenerator:
    """Seasonal curve plus ARMA noise for the daily mean temperature.

    When simulating for a covariate series, the series' daily mean is taken as
    the average of ``mean_columns`` and the simulated mean is written into
    every column of the output.
    """

    seasonal: SeasonalModel
    arma: ArmaModel = field(default_factory=ArmaModel)
    noise_scale_factor: float = 1.0
    mean_columns: tuple | None = None

    def __post_init__(self):
        if not self.noise_scale_factor >= 0:
            raise ValidationError("noise_scale_factor must be nonnegative")

    def with_noise_scale(self, factor: float) -> "TemperatureGenerator":
        return replace(self, noise_scale_factor=float(factor))

    def daily_mean(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            return values
        cols = self.mean_columns if self.mean_columns is not None else range(values.shape[1])
        return values[:, list(cols)].mean(axis=1)

    def simulate(self, history: CovariateSeries | None, start: int, stop: int, n_paths: int,
                 seed: int) -> np.ndarray:
        """Covariate paths for days ``start..stop``, shape ``(n_paths, n_days, d)``."""
        d = history.dim if history is not None else 1
        paths = simulate_paths(self, history, start, stop, n_paths, seed)
        return np.repeat(paths[:, :, None], d, axis=2)

    def to_dict(self) -> dict:
        return {"seasonal": self.seasonal.to_dict(), "arma": self.arma.to_dict(),
                "noise_scale_factor": self.noise_scale_factor,
                "mean_columns": list(self.mean_columns) if self.mean_columns is not None else None}

    @classmethod
    def from_dict(cls, d) -> "TemperatureGenerator":
        mc = d.get("mean_columns")
        return cls(SeasonalModel.from_dict(d["seasonal"]), ArmaModel.from_dict(d["arma"]),
                   float(d.get("noise_scale_factor", 1.0)), tuple(mc) if mc is not None else None)


BURN_IN = 500


def simulate_paths(gen: TemperatureGenerator, condition_on, start: int, stop: int,
                   n_paths: int, seed: int) -> np.ndarray:
    """Daily-mean paths for days ``start..stop``, shape ``(n_paths, n_days)``.

    ``condition_on`` is a :class:`CovariateSeries` (or ``(start_day, values)``
    pair) observed up to some day before ``start``; its residuals and
    reconstructed innovations seed the ARMA recursion. With ``None`` each path
    starts from a burn-in of the unconditional process. Path ``l`` draws its
    innovations from the stream ``(seed, "path", l)``.
    """
    if stop < start:
        raise ValidationError("simulation range is empty")
    arma = gen.arma
    p, q = arma.order
    sd = arma.noise_sd * gen.noise_scale_factor
    if condition_on is None:
        r_hist = np.zeros(0)
        e_hist = np.zeros(0)
        first = start - BURN_IN
    else:
        if isinstance(condition_on, CovariateSeries):
            h_start, h_vals = condition_on.start_day, condition_on.values
        else:
            h_start, h_vals = condition_on
        h_mean = gen.daily_mean(np.asarray(h_vals, dtype=float))
        h_last = h_start + h_mean.size - 1
        if h_last >= start:
            h_mean = h_mean[:start - h_start]
            h_last = start - 1
        r_hist = h_mean - gen.seasonal(np.arange(h_start, h_last + 1))
        e_hist = arma.innovations(r_hist)
        first = h_last + 1
    n_sim = stop - first + 1
    eps = np.empty((n_paths, n_sim))
    for l in range(n_paths):
        eps[l] = rngmod.stream(seed, "path", l).standard_normal(n_sim)
    eps *= sd
    b = np.r_[1.0, arma.ma]
    a = np.r_[1.0, -arma.ar]
    if p + q == 0:
        resid = eps
    else:
        y_past = np.zeros(p)
        x_past = np.zeros(q)
        k = min(p, r_hist.size)
        y_past[:k] = r_hist[::-1][:k]
        k = min(q, e_hist.size)
        x_past[:k] = e_hist[::-1][:k]
        zi = signal.lfiltic(b, a, y_past, x_past)
        resid, _ = signal.lfilter(b, a, eps, axis=1, zi=np.tile(zi, (n_paths, 1)))
    days = np.arange(first, stop + 1)
    out = gen.seasonal(days)[None, :] + resid
    return out[:, start - first:]


def fit_generator(days, values, n_harmonics: int = 2, candidates: Sequence = ((3, 1),),
                  segments: Sequence[int] | None = None,
                  mean_columns: tuple | None = None) -> TemperatureGenerator:
    """Fit the seasonal curve, pick an ARMA order by BIC and fit it.

    ``segments`` optionally gives the lengths of contiguous runs in ``values``
    (e.g. separate years); residual lags never cross segment boundaries.
    """
    values = np.asarray(values, dtype=float)
    seasonal = fit_seasonal(days, values, n_harmonics)
    resid = values - seasonal(days)
    if segments is not None:
        cuts = np.cumsum(segments)[:-1]
        resid = list(np.split(resid, cuts))
    order = model_select(resid, candidates)
    arma = fit_arma(resid, *order)
    return TemperatureGenerator(seasonal, arma, 1.0, mean_columns)
