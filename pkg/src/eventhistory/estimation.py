"""Maximum-likelihood fitting, bootstrap intervals and the consistency study.

The coefficients are found by quasi-Newton (BFGS) ascent on the analytic
gradient, in coordinates where every non-constant feature column is centred
and scaled. The base temperature of the degree-day features is not a smooth
parameter, so it is profiled: the coefficients are maximized on a grid of
``t_base`` values and the best grid cell is refined by golden-section search.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from eventhistory import rng as rngmod
from eventhistory.core import MultiEventObservation, ValidationError, link_forward
from eventhistory.likelihood import (
    Design,
    ModelSpec,
    ParamVector,
    build_design,
    design_value_and_grad,
    log_link_inverse_pair,
)

log = logging.getLogger(__name__)

ETA_CAP = 700.0
SEPARATION_P = 1.0 - 1e-8


@dataclass(frozen=True)
class FitConfig:
    max_iterations: int = 500
    gradient_tolerance: float = 1e-8
    t_base_grid: tuple = (-5.0, 15.0, 0.05)
    restarts: int = 1
    seed: int = 0
    refine: bool = True
    refine_tolerance: float = 1e-3

    def __post_init__(self):
        lo, hi, step = (float(v) for v in self.t_base_grid)
        object.__setattr__(self, "t_base_grid", (lo, hi, step))
        if step <= 0 or lo >= hi:
            raise ValidationError("t_base grid needs lo < hi and step > 0")
        if self.gradient_tolerance <= 0:
            raise ValidationError("gradient tolerance must be positive")
        if self.max_iterations < 1 or self.restarts < 1:
            raise ValidationError("max_iterations and restarts must be positive")

    def grid(self) -> np.ndarray:
        lo, hi, step = self.t_base_grid
        n = int(math.floor((hi - lo) / step + 1e-9))
        return lo + step * np.arange(n + 1)


@dataclass(eq=False)
class FittedModel:
    model: ModelSpec
    params: ParamVector
    loglik_at_max: float
    converged: bool
    n_individuals: int
    profile_curve: list = field(default_factory=list)
    separation: bool = False
    iterations: int = 0
    gradient_norm: float = float("nan")
    kind: str = "censored"
    message: str = ""


@dataclass(eq=False)
class BootstrapResult:
    n_replicates: int
    replicate_params: list
    ci_level: float
    intervals: dict
    n_dropped: int = 0
    point_estimate: ParamVector | None = None
    param_names: list = field(default_factory=list)


# -- optimizer -------------------------------------------------------------------

@dataclass
class _OptResult:
    x: np.ndarray
    f: float
    grad: np.ndarray
    iterations: int
    converged: bool
    separated: bool
    message: str


def bfgs_minimize(fun, x0, max_iter=500, gtol=1e-8, guard=None, H0=None) -> _OptResult:
    """BFGS with backtracking line search.

    ``fun(x)`` returns ``(f, grad)``. ``guard(x)`` may reject trial points
    (e.g. overflowing linear predictors); rejected points shrink the step.
    Near the optimum, where function differences fall below rounding, a step
    is also accepted when it reduces the gradient sup-norm. ``H0`` is an
    optional starting inverse-Hessian estimate.
    """
    x = np.array(x0, dtype=float)
    f, g = fun(x)
    n = x.size
    first = H0 is None
    H = np.eye(n) if first else np.array(H0, dtype=float)
    it = 0
    message = "iteration limit"
    converged = False
    for it in range(1, max_iter + 1):
        gnorm = np.max(np.abs(g)) if n else 0.0
        if gnorm <= gtol:
            converged, message = True, "gradient below tolerance"
            it -= 1
            break
        d = -H @ g
        slope = g @ d
        if slope >= 0:
            H = np.eye(n)
            d = -g
            slope = g @ d
        step = 1.0
        accepted = False
        for _ in range(60):
            xt = x + step * d
            if guard is None or guard(xt):
                ft, gt = fun(xt)
                if np.isfinite(ft):
                    if ft <= f + 1e-4 * step * slope:
                        accepted = True
                        break
                    if (ft <= f + 8 * np.finfo(float).eps * max(1.0, abs(f))
                            and np.max(np.abs(gt)) < gnorm):
                        accepted = True
                        break
            step *= 0.5
        if not accepted:
            message = "line search failed"
            break
        s = xt - x
        yv = gt - g
        sy = s @ yv
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(yv):
            if first:
                H = np.eye(n) * (sy / (yv @ yv))
                first = False
            rho = 1.0 / sy
            V = np.eye(n) - rho * np.outer(s, yv)
            H = V @ H @ V.T + rho * np.outer(s, s)
        x, f, g = xt, ft, gt
    else:
        gnorm = np.max(np.abs(g)) if n else 0.0
        converged = gnorm <= gtol
        if converged:
            message = "gradient below tolerance"
    res = _OptResult(x, f, g, it, converged, False, message)
    res.H = H
    return res


class _Coords:
    """Affine map ``beta = theta @ A.T`` that centres and scales feature columns."""

    def __init__(self, X: np.ndarray, intercept: bool):
        p = X.shape[1]
        A = np.eye(p)
        if X.shape[0] > 0 and p > 0:
            # sorted columns make the scaling independent of row order
            Xs = np.sort(X, axis=0)
            mean = Xs.mean(axis=0)
            sd = Xs.std(axis=0)
            for j in range(p):
                if intercept and j == 0:
                    continue
                if sd[j] > 1e-12 * max(1.0, abs(mean[j])):
                    A[j, j] = 1.0 / sd[j]
                    if intercept:
                        A[0, j] = -mean[j] / sd[j]
        self.A = A
        self.A_inv = np.linalg.inv(A)

    def to_beta(self, theta: np.ndarray) -> np.ndarray:
        return theta @ self.A.T

    def to_theta(self, beta: np.ndarray) -> np.ndarray:
        return beta @ self.A_inv.T


def _initial_beta(design: Design, model: ModelSpec) -> np.ndarray:
    beta = np.zeros((design.n_states, design.X.shape[1]))
    if model.feature_spec.include_intercept and beta.shape[1] > 0:
        for l in range(design.n_states):
            mask = design.state == l
            n = max(int(mask.sum()), 1)
            rate = float(np.clip(design.y[mask].sum() / n, 1e-6, 1 - 1e-6))
            beta[l, 0] = float(link_forward(model.link, rate))
    return beta


def _fit_beta(design: Design, model: ModelSpec, config: FitConfig, start: np.ndarray | None,
              restarts: int, seed: int, H_beta: np.ndarray | None = None) -> _OptResult:
    """Maximize the log-likelihood over coefficients on a fixed design.

    ``H_beta`` is an inverse-Hessian estimate in coefficient space carried over
    from a neighbouring fit; the result's ``H`` is returned in the same space.
    """
    coords = _Coords(design.X, model.feature_spec.include_intercept)
    shape = (design.n_states, design.X.shape[1])
    link = model.link
    B = np.kron(np.eye(shape[0]), coords.A)
    B_inv = np.kron(np.eye(shape[0]), coords.A_inv)
    H0 = None if H_beta is None else B_inv @ H_beta @ B_inv.T

    def fun(theta_flat):
        beta = coords.to_beta(theta_flat.reshape(shape))
        ll, g = design_value_and_grad(design, beta, link)
        return -ll, -(g @ coords.A).ravel()

    def guard(theta_flat):
        beta = coords.to_beta(theta_flat.reshape(shape))
        eta = design.X @ beta.T
        return bool(np.all(np.abs(eta) <= ETA_CAP))

    starts = []
    base = _initial_beta(design, model) if start is None else np.asarray(start, dtype=float)
    starts.append(coords.to_theta(base).ravel())
    for r in range(1, restarts):
        g = rngmod.stream(seed, "restart", r)
        starts.append(starts[0] + g.normal(scale=1.0, size=starts[0].size))
    best = None
    for k, x0 in enumerate(starts):
        res = bfgs_minimize(fun, x0, config.max_iterations, config.gradient_tolerance, guard,
                            H0 if k == 0 else None)
        if best is None or res.f < best.f:
            best = res
    best.x = coords.to_beta(best.x.reshape(shape))
    best.H = B @ best.H @ B.T
    eta = design.X @ best.x.T
    log_p, _ = log_link_inverse_pair(link, eta)
    best.separated = bool(np.max(np.exp(log_p), initial=0.0) > SEPARATION_P) or \
        bool(np.max(np.abs(eta), initial=0.0) >= ETA_CAP * (1 - 1e-6))
    return best


class _ProfileDesign:
    """Person-day design whose degree-day columns can be recomputed for any ``t_base``.

    The row layout does not depend on ``t_base``; only the accumulated
    degree-day columns do, and those are refreshed with one cumulative sum
    per individual.
    """

    def __init__(self, data, model: ModelSpec, kind: str):
        self.model = model
        self.kind = kind
        self.data = data
        spec = model.feature_spec
        self.fast = model.n_events == 1 or spec.polynomial_degree == 1
        t0_base = spec.threshold_terms[0].t_base
        self.base = build_design(data, model, kind, t0_base)
        if not self.fast:
            return
        offset = int(spec.include_intercept) + len(spec.raw_terms)
        self.columns = []
        # row -> (individual, day)
        ind = np.repeat(np.arange(self.base.n_individuals),
                        np.diff(np.append(self.base.starts, self.base.n_rows)))
        # every individual's rows run from the origin, one per day
        counts = np.diff(np.append(self.base.starts, self.base.n_rows))
        day = np.arange(self.base.n_rows) - np.repeat(self.base.starts, counts)
        for j, term in enumerate(spec.threshold_terms):
            t0 = term.accumulate_from
            last = [max(int(c) - 1, t0 - 1) for c in counts]
            width = max(max(last) - t0 + 1, 1)
            M = np.full((self.base.n_individuals, width), -np.inf)
            for i, (series, obs) in enumerate(data):
                if last[i] >= t0:
                    w = series.window(t0, last[i])
                    M[i, :last[i] - t0 + 1] = (w[:, term.tmin_index] + w[:, term.tmax_index]) / 2.0
            active = day >= t0
            self.columns.append((offset + j, M, ind[active], day[active] - t0, active))

    def at(self, t_base: float) -> Design:
        if not self.fast:
            return build_design(self.data, self.model, self.kind, t_base)
        X = self.base.X.copy()
        for col, M, rows_i, rows_k, active in self.columns:
            excess = M - t_base
            acc = np.cumsum(np.where(excess > 0.0, excess, 0.0), axis=1)
            vals = np.zeros(X.shape[0])
            vals[active] = acc[rows_i, rows_k]
            X[:, col] = vals
        return Design(X, self.base.y, self.base.state, self.base.starts, self.base.n_states)


def _infer_kind(data, model: ModelSpec) -> str:
    if model.n_events > 1 or any(isinstance(o, MultiEventObservation) for _, o in data):
        return "multi"
    return "censored"


def _check_estimable(design: Design, model: ModelSpec) -> None:
    if design.y.sum() < 1:
        raise ValidationError("no observed events: coefficients are not estimable")
    for l in range(design.n_states):
        if design.y[design.state == l].sum() < 1:
            raise ValidationError(f"no observed transition out of state {l}")


def golden_section_max(f, lo: float, hi: float, tol: float):
    """Maximize a unimodal-ish scalar function on ``[lo, hi]``; returns all evaluations."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    evals = {}

    def fe(x):
        if x not in evals:
            evals[x] = f(x)
        return evals[x]

    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    while b - a > tol:
        if fe(c)[0] >= fe(d)[0]:
            b = d
        else:
            a = c
        c = b - invphi * (b - a)
        d = a + invphi * (b - a)
    fe(c)
    fe(d)
    return evals


def fit_mle(data: Sequence, model: ModelSpec, config: FitConfig | None = None,
            kind: str | None = None) -> FittedModel:
    """Maximum-likelihood fit; profiles ``t_base`` when the model estimates it.

    Non-convergence is reported through ``converged=False`` rather than raised.
    """
    config = config or FitConfig()
    kind = kind or _infer_kind(data, model)
    seed = config.seed
    if not model.has_threshold_param:
        design = build_design(data, model, kind)
        _check_estimable(design, model)
        res = _fit_beta(design, model, config, None, config.restarts, seed)
        fm = FittedModel(model, ParamVector(res.x), -res.f, res.converged, len(data), [],
                         res.separated, res.iterations, float(np.max(np.abs(res.grad), initial=0.0)),
                         kind, res.message)
        if fm.separation:
            log.warning("separation: fitted daily probability reached 1 - 1e-8")
        return fm

    prof = _ProfileDesign(data, model, kind)
    _check_estimable(prof.base, model)
    results = {}
    start = H = None
    for k, tb in enumerate(config.grid()):
        design = prof.at(tb)
        res = _fit_beta(design, model, config, start,
                        config.restarts if k == 0 else 1, seed, H)
        results[float(tb)] = res
        start, H = res.x, res.H

    best_tb = max(results, key=lambda t: (-results[t].f, -t))
    if config.refine:
        step = config.t_base_grid[2]
        warm = results[best_tb]

        def profile(tb):
            r = _fit_beta(prof.at(tb), model, config, warm.x, 1, seed, warm.H)
            return (-r.f, r)

        lo = max(best_tb - step, config.t_base_grid[0])
        hi = min(best_tb + step, config.t_base_grid[1])
        for tb, (_, r) in golden_section_max(profile, lo, hi, config.refine_tolerance).items():
            results.setdefault(float(tb), r)
        best_tb = max(results, key=lambda t: (-results[t].f, -t))

    best = results[best_tb]
    curve = [(tb, -results[tb].f) for tb in sorted(results)]
    fm = FittedModel(model, ParamVector(best.x, best_tb), -best.f, best.converged, len(data),
                     curve, best.separated, best.iterations,
                     float(np.max(np.abs(best.grad), initial=0.0)), kind, best.message)
    if fm.separation:
        log.warning("separation: fitted daily probability reached 1 - 1e-8")
    return fm


def _map_ordered(fn, items, threads: int):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def bootstrap_ci(data: Sequence, model: ModelSpec, config: FitConfig | None = None,
                 n_replicates: int = 200, level: float = 0.95, seed: int | None = None,
                 threads: int = 1, point: FittedModel | None = None) -> BootstrapResult:
    """Quantile intervals from refitting on individuals resampled with replacement.

    Replicates whose fit does not converge are dropped and counted.
    """
    config = config or FitConfig()
    if n_replicates < 50:
        raise ValidationError("bootstrap needs at least 50 replicates")
    if not 0.0 < level < 1.0:
        raise ValidationError("level must lie in (0, 1)")
    seed = config.seed if seed is None else seed
    n = len(data)

    def replicate(b):
        idx = rngmod.stream(seed, "bootstrap", b).integers(0, n, size=n)
        sample = [data[i] for i in idx]
        try:
            fm = fit_mle(sample, model, config)
        except ValidationError as exc:
            log.info("bootstrap replicate %d failed: %s", b, exc)
            return None
        return fm.params if fm.converged else None

    reps = _map_ordered(replicate, range(n_replicates), threads)
    kept = [r for r in reps if r is not None]
    dropped = n_replicates - len(kept)
    names = model.param_names()
    intervals = {}
    if kept:
        mat = np.vstack([r.flat() for r in kept])
        alpha = (1.0 - level) / 2.0
        lo = np.quantile(mat, alpha, axis=0)
        hi = np.quantile(mat, 1.0 - alpha, axis=0)
        for j, name in enumerate(names):
            intervals[name] = (float(lo[j]), float(hi[j]))
    return BootstrapResult(n_replicates, kept, level, intervals, dropped,
                           point.params if point is not None else None, names)


def consistency_study(true_params: ParamVector, sample_sizes: Sequence[int], n_replicates: int,
                      generator, seed: int = 0, config: FitConfig | None = None,
                      threads: int = 1) -> dict:
    """Mean and variance of the MLE across simulated datasets for each sample size.

    ``generator.generate(params, n, rng)`` must return ``(data, n_truncated)``
    and ``generator.model`` the model to fit.
    """
    config = config or FitConfig()
    model = generator.model
    names = model.param_names()
    truth = true_params.flat()
    report = {"param_names": names, "truth": truth.tolist(), "sizes": []}
    for n in sample_sizes:
        def one(r, n=n):
            g = rngmod.stream(seed, f"study-n{n}", r)
            data, truncated = generator.generate(true_params, n, g)
            try:
                fm = fit_mle(data, model, config)
            except ValidationError as exc:
                log.warning("study replicate n=%d r=%d failed: %s", n, r, exc)
                return None, truncated
            return fm, truncated

        out = _map_ordered(one, range(n_replicates), threads)
        fits = [fm for fm, _ in out if fm is not None]
        est = np.vstack([fm.params.flat() for fm in fits]) if fits else np.zeros((0, truth.size))
        report["sizes"].append({
            "n": int(n),
            "n_fitted": len(fits),
            "n_failed": n_replicates - len(fits),
            "n_converged": int(sum(fm.converged for fm in fits)),
            "n_truncated": int(sum(t for _, t in out)),
            "mean": est.mean(axis=0).tolist() if len(fits) else [],
            "variance": est.var(axis=0, ddof=1).tolist() if len(fits) > 1 else [],
            "abs_bias": np.abs(est.mean(axis=0) - truth).tolist() if len(fits) else [],
            "estimates": est.tolist(),
        })
    return report
