"""Rolling-origin evaluation: point-forecast errors and interval scores by level."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from gts import arima
from gts.arima import ArimaFitError, OrderBounds
from gts.bootstrap import INTERVAL_METHODS, interval_forecasts
from gts.hierarchy import GroupedHierarchy, PanelSeries, rates_summing_stack
from gts.reconcile import ReconciliationError, reconcile

log = logging.getLogger(__name__)

POINT_METRICS = ("MFE", "MAFE", "RMSFE")
ALL_METHODS = ("base", "bottom-up", "ols", "gls")
MAX_FAIL_FRACTION = 0.20


class EvaluationError(RuntimeError):
    pass


@dataclass(frozen=True)
class RollingPlan:
    """Origins ``n0, n0 + 1, ..., n_end - 1`` (training sizes, 1-based ends).

    At origin ``w`` the model sees observations ``1..w`` and forecasts up to
    ``n_end``; horizon ``h`` is therefore forecast ``H - h + 1`` times.
    """

    n0: int
    n_end: int

    def __post_init__(self):
        if not 0 < self.n0 < self.n_end:
            raise ValueError(f"need 0 < n0 < n_end, got n0={self.n0}, n_end={self.n_end}")

    @property
    def H(self) -> int:
        return self.n_end - self.n0

    @property
    def origins(self) -> range:
        return range(self.n0, self.n_end)

    def horizons(self, origin: int) -> int:
        return self.n_end - origin

    def count(self, h: int) -> int:
        return self.H - h + 1


@dataclass(frozen=True)
class ScoreTable:
    """Scores by series and by level for horizons ``1..H``.

    ``series`` is ``(m, H)``; ``levels`` is ``(n_levels, H)``.
    """

    metric: str
    method: str
    series: np.ndarray
    levels: np.ndarray
    level_names: tuple

    @property
    def level_mean(self) -> np.ndarray:
        return np.nanmean(self.levels, axis=1)

    @property
    def level_median(self) -> np.ndarray:
        return np.nanmedian(self.levels, axis=1)


def _level_average(h: GroupedHierarchy, per_series: np.ndarray) -> np.ndarray:
    return np.stack([np.nanmean(per_series[h.level_members(k)], axis=0) for k in range(h.n_levels)])


def _errors(forecasts: np.ndarray, holdout: np.ndarray, plan: RollingPlan) -> np.ndarray:
    """Forecast errors indexed ``(origin, series, horizon)``; NaN outside the plan."""
    n_orig = len(plan.origins)
    if forecasts.shape[0] != n_orig or forecasts.shape[2] != plan.H:
        raise EvaluationError(f"forecast array of shape {forecasts.shape} does not cover the plan")
    err = np.full(forecasts.shape, np.nan)
    for i, w in enumerate(plan.origins):
        H_w = plan.horizons(w)
        actual = holdout[:, w:w + H_w]
        if actual.shape[1] != H_w:
            raise EvaluationError(f"holdout ends before origin {w} + {H_w}")
        err[i, :, :H_w] = actual - forecasts[i, :, :H_w]
    return err


def _check_cells(values: np.ndarray, plan: RollingPlan, allow_missing: bool):
    for i, w in enumerate(plan.origins):
        block = values[i, :, : plan.horizons(w)]
        if not allow_missing and np.isnan(block).any():
            raise EvaluationError(f"missing forecast cells at origin {w}")


def point_scores(forecasts, holdout, plan: RollingPlan, h: GroupedHierarchy, method: str = "",
                 allow_missing: bool = False) -> dict[str, ScoreTable]:
    """MFE, MAFE and RMSFE per series and level.

    Parameters
    ----------
    forecasts : array, shape (n_origins, m, H)
        Forecast of origin ``i`` for horizon ``h`` in ``[i, :, h - 1]``.
    holdout : array, shape (m, n)
        Realised values on the full time axis.
    """
    forecasts = np.asarray(forecasts, dtype=float)
    _check_cells(forecasts, plan, allow_missing)
    err = _errors(forecasts, np.asarray(holdout, dtype=float), plan)
    with np.errstate(invalid="ignore"), _quiet_nan():
        per = {
            "MFE": np.nanmean(err, axis=0),
            "MAFE": np.nanmean(np.abs(err), axis=0),
            "RMSFE": np.sqrt(np.nanmean(err**2, axis=0)),
        }
    return {k: ScoreTable(k, method, v, _level_average(h, v), h.level_names) for k, v in per.items()}


def interval_score(L, U, y, alpha):
    """Interval score of the central ``1 - alpha`` interval ``[L, U]`` at ``y``."""
    L = np.asarray(L, dtype=float)
    U = np.asarray(U, dtype=float)
    y = np.asarray(y, dtype=float)
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if np.any(L > U):
        raise ValueError("lower bound exceeds upper bound")
    score = (U - L) + (2.0 / alpha) * (L - y) * (y < L) + (2.0 / alpha) * (y - U) * (y > U)
    return score if score.ndim else float(score)


def mean_interval_scores(lower, upper, holdout, plan: RollingPlan, alpha: float, h: GroupedHierarchy,
                         method: str = "", allow_missing: bool = False) -> ScoreTable:
    """Horizon-wise mean interval scores per series, then averaged per level."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    _check_cells(lower, plan, allow_missing)
    _check_cells(upper, plan, allow_missing)
    holdout = np.asarray(holdout, dtype=float)
    scores = np.full(lower.shape, np.nan)
    for i, w in enumerate(plan.origins):
        H_w = plan.horizons(w)
        lo, up = lower[i, :, :H_w], upper[i, :, :H_w]
        ok = ~(np.isnan(lo) | np.isnan(up))
        s = np.full(lo.shape, np.nan)
        s[ok] = interval_score(lo[ok], up[ok], holdout[:, w:w + H_w][ok], alpha)
        scores[i, :, :H_w] = s
    with _quiet_nan():
        per = np.nanmean(scores, axis=0)
    return ScoreTable("IntervalScore", method, per, _level_average(h, per), h.level_names)


class _quiet_nan:
    def __enter__(self):
        import warnings

        self._w = warnings.catch_warnings()
        self._w.__enter__()
        warnings.filterwarnings("ignore", message="Mean of empty slice")
        warnings.filterwarnings("ignore", message="All-NaN slice")

    def __exit__(self, *exc):
        return self._w.__exit__(*exc)


# ---------------------------------------------------------------------------
# Rolling harness


@dataclass
class EvalConfig:
    bounds: OrderBounds = field(default_factory=OrderBounds)
    log_rates: bool = False
    intervals: bool = False
    alpha: float = 0.2
    B: int = 100
    P: int = 100
    seed: int = 0
    n_jobs: int = 1


@dataclass
class OriginResult:
    origin: int
    base: np.ndarray
    variances: np.ndarray
    forecasts: dict
    lower: dict
    upper: dict
    failures: dict
    base_hash: str


@dataclass
class RollingResult:
    plan: RollingPlan
    methods: tuple
    s_mode: str
    forecasts: dict
    lower: dict
    upper: dict
    scores: dict
    failures: dict
    base_hashes: list


def base_forecasts(panel: PanelSeries, H: int, bounds: OrderBounds | None = None, log_rates: bool = False):
    """Per-node automatic ARIMA point forecasts and one-step variances.

    Returns ``(means (m, H), variances (m,), failures {node index: message})``;
    failed nodes carry NaN.
    """
    m = panel.hierarchy.m
    means = np.full((m, H), np.nan)
    variances = np.full(m, np.nan)
    failures = {}
    rates = panel.rates
    for j in range(m):
        try:
            model, back = arima.fit_series(rates[j], bounds, log_rates)
        except ArimaFitError as exc:
            failures[j] = str(exc)
            continue
        means[j] = back(arima.forecast(model, H).mean)
        variances[j] = model.sigma2
    return means, variances, failures


def exposure_forecasts(panel: PanelSeries, H: int, bounds: OrderBounds | None = None) -> np.ndarray:
    """Bottom-level exposure forecasts ``(m_K, H)`` from log-scale models."""
    m_k = panel.hierarchy.m_bottom
    out = np.empty((m_k, H))
    for j, e in enumerate(panel.exposure[-m_k:]):
        out[j] = arima.fit_forecast_log_exposure(e, H, bounds=bounds).mean
    return out


def _reconcile_with_gaps(method, base, S, variances, labels):
    """Reconcile, dropping rows whose base forecast is missing."""
    ok = ~np.isnan(base[:, 0])
    if ok.all():
        return reconcile(method, base, S, variances, labels).values
    m_k = S.shape[-1]
    out = np.full(base.shape, np.nan)
    if method == "bottom-up":
        bottom_ok = ok[-m_k:]
        full = np.einsum("hij,jh->ih", S, np.where(bottom_ok[:, None], base[-m_k:], 0.0))
        depends = (S[0][:, ~bottom_ok] != 0).any(axis=1)
        full[depends] = np.nan
        return full
    try:
        sub = reconcile(method, base[ok], S[:, ok], None if variances is None else variances[ok],
                        None if labels is None else [l for l, k in zip(labels, ok) if k])
    except ReconciliationError:
        return out
    return np.einsum("hij,jh->ih", S, sub.beta)


def _hash(a: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(a).tobytes()).hexdigest()[:16]


def _run_origin(panel: PanelSeries, plan: RollingPlan, w: int, index: int, methods, s_mode, cfg: EvalConfig):
    h = panel.hierarchy
    H_w = plan.horizons(w)
    train = panel.window(w)
    base, variances, failures = base_forecasts(train, H_w, cfg.bounds, cfg.log_rates)
    if s_mode == "holdout":
        E = panel.exposure[-h.m_bottom:, w:w + H_w]
    else:
        E = exposure_forecasts(train, H_w, cfg.bounds)
    S = rates_summing_stack(h, E.T)
    labels = h.labels()
    out = {}
    for method in methods:
        if method == "base":
            out[method] = base.copy()
        else:
            out[method] = _reconcile_with_gaps(method, base, S, variances, labels)
    lower, upper = {}, {}
    if cfg.intervals:
        holdout_E = E if s_mode == "holdout" else None
        for method in methods:
            if method not in INTERVAL_METHODS:
                continue
            iv = interval_forecasts(
                train, H_w, cfg.alpha, cfg.B, cfg.P, method,
                rng_seed=cfg.seed + 1_000_003 * index,
                holdout_exposure=holdout_E if method != "base" else None,
                bounds=cfg.bounds, log_rates=cfg.log_rates,
            )
            lower[method], upper[method] = iv.lower, iv.upper
    return OriginResult(w, base, variances, out, lower, upper, failures, _hash(base))


def run_rolling(panel: PanelSeries, plan: RollingPlan, methods=("base", "bottom-up", "ols", "gls"),
                s_mode: str = "forecast", config: EvalConfig | None = None) -> RollingResult:
    """Expanding-window evaluation over all origins of ``plan``."""
    cfg = config or EvalConfig()
    methods = tuple(methods)
    bad = [m for m in methods if m not in ALL_METHODS]
    if bad:
        raise ValueError(f"unknown methods {bad}; choose from {ALL_METHODS}")
    if s_mode not in ("forecast", "holdout"):
        raise ValueError(f"s_mode must be 'forecast' or 'holdout', not {s_mode!r}")
    if plan.n_end > panel.n:
        raise EvaluationError(f"plan ends at {plan.n_end} but the panel has {panel.n} observations")
    if plan.n0 < cfg.bounds.min_length:
        raise EvaluationError(f"first origin {plan.n0} is shorter than the minimum series length")
    h = panel.hierarchy

    jobs = [delayed(_run_origin)(panel, plan, w, i, methods, s_mode, cfg) for i, w in enumerate(plan.origins)]
    if cfg.n_jobs == 1:
        results = [fn(*a, **k) for fn, a, k in jobs]
    else:
        results = Parallel(n_jobs=cfg.n_jobs)(jobs)

    failures = {}
    for r in results:
        for j, msg in r.failures.items():
            log.warning("fit failed at origin %d for %s: %s", r.origin, h.labels()[j], msg)
            failures[(r.origin, j)] = msg
        if len(r.failures) > MAX_FAIL_FRACTION * h.m:
            raise EvaluationError(f"origin {r.origin} lost {len(r.failures)} of {h.m} series")

    n_orig = len(results)
    forecasts, lower, upper, scores = {}, {}, {}, {}
    for method in methods:
        F = np.full((n_orig, h.m, plan.H), np.nan)
        for i, r in enumerate(results):
            F[i, :, : plan.horizons(r.origin)] = r.forecasts[method]
        forecasts[method] = F
        scores[method] = point_scores(F, panel.rates, plan, h, method, allow_missing=bool(failures))
        if cfg.intervals and method in INTERVAL_METHODS:
            Lo = np.full_like(F, np.nan)
            Up = np.full_like(F, np.nan)
            for i, r in enumerate(results):
                Lo[i, :, : plan.horizons(r.origin)] = r.lower[method]
                Up[i, :, : plan.horizons(r.origin)] = r.upper[method]
            lower[method], upper[method] = Lo, Up
            scores[method]["IntervalScore"] = mean_interval_scores(
                Lo, Up, panel.rates, plan, cfg.alpha, h, method, allow_missing=bool(failures)
            )
    return RollingResult(plan, methods, s_mode, forecasts, lower, upper, scores, failures,
                         [r.base_hash for r in results])
