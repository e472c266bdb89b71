"""Maximum-entropy bootstrap of the observed panel nested with a parametric
bootstrap of future paths, producing averaged (optionally reconciled)
prediction intervals.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed
from scipy.stats import trim_mean

from gts import arima
from gts.arima import ArimaFitError, OrderBounds
from gts.hierarchy import PanelSeries, rates_summing_stack
from gts.reconcile import reconcile_paths

log = logging.getLogger(__name__)

TRIM = 0.10
MAX_SKIP_FRACTION = 0.20
INTERVAL_METHODS = ("base", "bottom-up", "ols")


class BootstrapError(RuntimeError):
    pass


@dataclass(frozen=True)
class MeBootReplicate:
    values: np.ndarray
    order: np.ndarray


@dataclass(frozen=True)
class MeBootSupport:
    """Order statistics and the piecewise-uniform density built from them."""

    sorted_x: np.ndarray
    order: np.ndarray
    knots: np.ndarray
    interval_means: np.ndarray
    trimmed_mean: float


def meboot_support(x, trim: float = TRIM) -> MeBootSupport:
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4:
        raise ValueError(f"maximum-entropy bootstrap needs at least 4 observations, got {n}")
    order = np.argsort(x, kind="stable")
    xs = x[order]
    mid = 0.5 * (xs[:-1] + xs[1:])
    m_trim = float(trim_mean(np.abs(np.diff(x)), trim))
    knots = np.r_[xs[0] - m_trim, mid, xs[-1] + m_trim]
    means = np.empty(n)
    means[0] = 0.75 * xs[0] + 0.25 * xs[1]
    means[1:-1] = 0.25 * xs[:-2] + 0.5 * xs[1:-1] + 0.25 * xs[2:]
    means[-1] = 0.25 * xs[-2] + 0.75 * xs[-1]
    return MeBootSupport(xs, order, knots, means, m_trim)


def _quantiles(support: MeBootSupport, u: np.ndarray) -> np.ndarray:
    """Quantiles of the maximum-entropy density at probabilities ``u``.

    Each of the ``n`` equal-probability intervals is uniform on its knot
    interval, shifted so its mean equals the prescribed interval mean.
    """
    n = support.sorted_x.size
    k = np.minimum((u * n).astype(int), n - 1)
    lo, hi = support.knots[k], support.knots[k + 1]
    frac = u * n - k
    shift = support.interval_means[k] - 0.5 * (lo + hi)
    return lo + frac * (hi - lo) + shift


def _replicate_from_uniforms(x: np.ndarray, u_sorted: np.ndarray, trim: float) -> np.ndarray:
    if np.ptp(x) == 0:
        return x.copy()
    sup = meboot_support(x, trim)
    q = np.sort(_quantiles(sup, u_sorted))
    out = np.empty_like(q)
    out[sup.order] = q
    return out


def meboot_replicate(x, rng, trim: float = TRIM) -> MeBootReplicate:
    """One maximum-entropy bootstrap replicate of ``x``.

    A constant series is returned unchanged.
    """
    x = np.asarray(x, dtype=float)
    if x.size < 4:
        raise ValueError(f"maximum-entropy bootstrap needs at least 4 observations, got {x.size}")
    rng = np.random.default_rng(rng)
    u = np.sort(rng.uniform(size=x.size))
    order = np.argsort(x, kind="stable")
    return MeBootReplicate(_replicate_from_uniforms(x, u, trim), order)


def meboot_panel(panel: np.ndarray, rng, trim: float = TRIM) -> np.ndarray:
    """Replicate every row of ``panel`` (shape ``(k, n)``) from one set of draws.

    The shared uniforms tie the rows' quantile mappings together, so series
    that move together in the data keep doing so in the replicate; each row
    keeps its own ordering index.
    """
    X = np.atleast_2d(np.asarray(panel, dtype=float))
    rng = np.random.default_rng(rng)
    u = np.sort(rng.uniform(size=X.shape[1]))
    return np.stack([_replicate_from_uniforms(row, u, trim) for row in X])


@dataclass(frozen=True)
class IntervalForecasts:
    """Averaged ``1 - alpha`` prediction intervals, arrays of shape ``(m, H)``."""

    lower: np.ndarray
    upper: np.ndarray
    alpha: float
    method: str
    n_outer: int
    n_inner: int
    n_used: int


def _fit_and_simulate(series, H, n_paths, rng, bounds, log_scale, allow_drift=False):
    model, back = arima.fit_series(series, bounds, log_scale, allow_drift)
    return back(arima.simulate_paths(model, H, n_paths, rng))


def _one_replicate(rates, log_exposure, h, H, alpha, P, method, seed, bounds, log_rates,
                   holdout_exposure, trim):
    rng = np.random.default_rng(seed)
    m, m_k = rates.shape[0], log_exposure.shape[0]
    rep = meboot_panel(np.vstack([rates, log_exposure]), rng, trim)
    rep_rates, rep_logE = rep[:m], rep[m:]
    # one stream per series, always drawn in full, so every method sees the
    # same bottom-level paths for a given seed
    streams = rng.spawn(m + m_k)
    need_rates = range(m - m_k, m) if method == "bottom-up" else range(m)
    try:
        paths = np.full((P, m, H), np.nan)
        for j in need_rates:
            paths[:, j, :] = _fit_and_simulate(rep_rates[j], H, P, streams[j], bounds, log_rates)
        if method == "base":
            coherent = paths
        else:
            if holdout_exposure is not None:
                S = rates_summing_stack(h, holdout_exposure.T)[None]
            else:
                E = np.empty((P, m_k, H))
                for j in range(m_k):
                    E[:, j, :] = np.exp(_fit_and_simulate(rep_logE[j], H, P, streams[m + j], bounds, False, True))
                S = rates_summing_stack(h, np.swapaxes(E, 1, 2))
            coherent = reconcile_paths(method, paths, S)
    except ArimaFitError as exc:
        return None, str(exc)
    lower = np.quantile(coherent, alpha / 2, axis=0, method="linear")
    upper = np.quantile(coherent, 1 - alpha / 2, axis=0, method="linear")
    return (lower, upper), None


def interval_forecasts(panel: PanelSeries, H: int, alpha: float = 0.2, B: int = 100, P: int = 100,
                       method: str = "base", rng_seed: int = 0, holdout_exposure=None,
                       bounds: OrderBounds | None = None, log_rates: bool = False,
                       n_jobs: int = 1, trim: float = TRIM) -> IntervalForecasts:
    """Averaged bootstrap prediction intervals for every node.

    Parameters
    ----------
    panel : PanelSeries
        Training panel.
    H : int
        Forecast horizon.
    alpha : float
        Intervals have nominal coverage ``1 - alpha``.
    B, P : int
        Outer maximum-entropy replicates and inner simulated paths.
    method : {"base", "bottom-up", "ols"}
        How simulated forecasts are made coherent.
    rng_seed : int
        Replicate ``b`` uses seed ``rng_seed + b``.
    holdout_exposure : array_like, optional
        ``(m_K, H)`` realised bottom exposures; when given, summing matrices
        use them instead of simulated exposure paths.
    """
    if method not in INTERVAL_METHODS:
        raise ValueError(f"intervals are available for {INTERVAL_METHODS}, not {method!r}")
    if B < 2 or P < 2:
        raise ValueError("B and P must both be at least 2")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    h = panel.hierarchy
    m_k = h.m_bottom
    rates = np.asarray(panel.rates)
    log_exposure = np.log(panel.exposure[-m_k:])
    if holdout_exposure is not None:
        holdout_exposure = np.asarray(holdout_exposure, dtype=float)[:, :H]
        if holdout_exposure.shape != (m_k, H):
            raise ValueError(f"holdout exposures must have shape {(m_k, H)}")

    jobs = (
        delayed(_one_replicate)(rates, log_exposure, h, H, alpha, P, method, rng_seed + b, bounds,
                                log_rates, holdout_exposure, trim)
        for b in range(B)
    )
    if n_jobs == 1:
        results = [fn(*args, **kw) for fn, args, kw in jobs]
    else:
        results = Parallel(n_jobs=n_jobs)(jobs)

    bounds_ok = [r for r, _ in results if r is not None]
    failed = [(b, msg) for b, (r, msg) in enumerate(results) if r is None]
    for b, msg in failed:
        log.warning("bootstrap replicate %d skipped: %s", b, msg)
    if len(failed) > MAX_SKIP_FRACTION * B:
        raise BootstrapError(f"{len(failed)} of {B} bootstrap replicates could not be fitted")
    lower = np.mean(np.stack([lo for lo, _ in bounds_ok]), axis=0)
    upper = np.mean(np.stack([up for _, up in bounds_ok]), axis=0)
    return IntervalForecasts(lower, upper, alpha, method, B, P, len(bounds_ok))
