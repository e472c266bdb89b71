"""Automatic non-seasonal ARIMA.

The differencing order comes from successive KPSS tests, (p, q) from an
exhaustive AICc search, and parameters from the exact Gaussian likelihood of
the differenced series evaluated by a Kalman filter (see ``_kalman.pyx``).

The model for the differenced series ``w_t = (1 - B)^d x_t`` is::

    phi(B) (w_t - mu) = theta(B) e_t,   e_t ~ N(0, sigma2)

with intercept ``gamma = mu * (1 - sum(phi))``; ``mu`` is estimated only when
``d == 0`` unless requested otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from gts._backend import ConcentratedNLL, arma_filter

KPSS_CRITICAL_5PCT = 0.463
ROOT_MARGIN = 1e-6
# candidates with roots this close to the unit circle are dropped from the search
SEARCH_ROOT_MARGIN = 0.01
MAX_ITER = 500
FTOL = 1e-8
GTOL = 1e-7
_U_BOUND = 4.0
_MU_BOUND = 50.0


class ArimaFitError(RuntimeError):
    """Raised when a model cannot be estimated.

    ``diagnostics`` carries whatever the optimiser reached before failing.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class ArimaOrder:
    p: int
    d: int
    q: int

    def __post_init__(self):
        if min(self.p, self.d, self.q) < 0:
            raise ValueError(f"negative order {self}")

    def __str__(self):
        return f"({self.p},{self.d},{self.q})"


@dataclass(frozen=True)
class OrderBounds:
    max_p: int = 5
    max_q: int = 5
    max_d: int = 2
    min_length: int = 20


# ---------------------------------------------------------------------------
# KPSS and differencing


def kpss_lags(n: int) -> int:
    return int(math.floor(4.0 * (n / 100.0) ** 0.25))


def kpss_statistic(x, lags: int | None = None) -> float:
    """KPSS level-stationarity statistic with a Bartlett long-run variance.

    A series with zero long-run variance (constant) gets statistic 0.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 10:
        raise ValueError(f"KPSS needs at least 10 observations, got {n}")
    e = x - x.mean()
    l = kpss_lags(n) if lags is None else int(lags)
    s2 = np.dot(e, e) / n
    for s in range(1, l + 1):
        s2 += 2.0 * (1.0 - s / (l + 1.0)) * np.dot(e[s:], e[:-s]) / n
    eta = np.sum(np.cumsum(e) ** 2) / n**2
    scale = max(1.0, float(np.abs(x).max()))
    if s2 <= (1e-13 * scale) ** 2:
        return 0.0
    return float(eta / s2)


def kpss_is_stationary(x, critical: float = KPSS_CRITICAL_5PCT) -> bool:
    return kpss_statistic(x) < critical


def select_d(x, d_max: int = 2) -> int:
    """Smallest ``d <= d_max`` whose differenced series passes KPSS at 5%."""
    x = np.asarray(x, dtype=float)
    if x.size - d_max < 10:
        raise ValueError(f"series of length {x.size} too short to test up to d={d_max}")
    for d in range(d_max + 1):
        if kpss_is_stationary(np.diff(x, d)):
            return d
    return d_max


# ---------------------------------------------------------------------------
# Parameter transforms


def _pacf_to_coef(u: np.ndarray) -> np.ndarray:
    """Map unconstrained values to coefficients of a stationary AR polynomial."""
    r = np.tanh(u)
    k = r.size
    phi = np.zeros(k)
    for j in range(k):
        prev = phi[:j].copy()
        phi[j] = r[j]
        phi[:j] = prev - r[j] * prev[::-1]
    return phi


def _coef_to_pacf(phi: np.ndarray) -> np.ndarray:
    """Inverse of :func:`_pacf_to_coef` (Durbin-Levinson backwards)."""
    phi = np.asarray(phi, dtype=float).copy()
    k = phi.size
    r = np.zeros(k)
    for j in range(k - 1, -1, -1):
        r[j] = phi[j]
        if j:
            denom = 1.0 - r[j] ** 2
            phi[:j] = (phi[:j] + r[j] * phi[:j][::-1]) / denom
    return np.arctanh(np.clip(r, -0.999, 0.999))


def min_root_modulus(coefs, sign: float = -1.0) -> float:
    """Smallest root modulus of ``1 + sign * (c_1 z + ... + c_k z^k)``."""
    c = np.trim_zeros(np.asarray(coefs, dtype=float), "b")
    if c.size == 0:
        return math.inf
    poly = np.r_[1.0, sign * c][::-1]
    return float(np.abs(np.roots(poly)).min())


# forward-difference step for the likelihood gradient (standardised scale)
GRAD_STEP = 1e-7


def _start_values(z: np.ndarray, p: int, q: int, include_mean: bool) -> np.ndarray:
    """Hannan-Rissanen least-squares start on the transformed scale.

    A long autoregression supplies proxy innovations; ``z`` is then regressed
    on its own lags and lagged innovations.  Falls back to zeros whenever the
    regression is not usable or lands outside the admissible region.
    """
    k = p + q + int(include_mean)
    x0 = np.zeros(k)
    n = z.size
    if p + q == 0:
        return x0
    zc = z - z.mean() if include_mean else z
    L = min(max(p, q) + 3, n // 4)
    if n - L <= 2 * (p + q) + 5:
        return x0
    lags = np.column_stack([zc[L - j - 1 : n - j - 1] for j in range(L)])
    ar_long = np.linalg.lstsq(lags, zc[L:], rcond=None)[0]
    e = np.zeros(n)
    e[L:] = zc[L:] - lags @ ar_long
    start = L + max(p, q)
    if n - start <= p + q + 2:
        return x0
    cols = [zc[start - i : n - i] for i in range(1, p + 1)]
    cols += [e[start - j : n - j] for j in range(1, q + 1)]
    coef = np.linalg.lstsq(np.column_stack(cols), zc[start:], rcond=None)[0]
    phi, theta = coef[:p], coef[p:]
    if min_root_modulus(phi) <= 1.01 or min_root_modulus(theta, +1.0) <= 1.01:
        return x0
    x0[:p] = np.clip(_coef_to_pacf(phi), -_U_BOUND + 0.1, _U_BOUND - 0.1)
    x0[p:p + q] = np.clip(_coef_to_pacf(-theta), -_U_BOUND + 0.1, _U_BOUND - 0.1)
    return x0


def aicc(loglik: float, k: int, n_eff: int) -> float:
    if n_eff - k - 1 <= 0:
        return math.inf
    return -2.0 * loglik + 2.0 * k + 2.0 * k * (k + 1) / (n_eff - k - 1)


# ---------------------------------------------------------------------------
# Model


@dataclass(frozen=True)
class ArimaModel:
    """A fitted ARIMA(p, d, q) model and the state needed to forecast it."""

    order: ArimaOrder
    phi: np.ndarray
    theta: np.ndarray
    mean: float
    include_mean: bool
    sigma2: float
    residuals: np.ndarray
    loglik: float
    aicc: float
    n_eff: int
    history: np.ndarray = field(repr=False)
    state: np.ndarray = field(repr=False)

    @property
    def intercept(self) -> float:
        return self.mean * (1.0 - float(np.sum(self.phi)))

    @property
    def n_params(self) -> int:
        return self.order.p + self.order.q + int(self.include_mean) + 1

    @property
    def one_step_variance(self) -> float:
        return self.sigma2


@dataclass(frozen=True)
class ForecastDistribution:
    mean: np.ndarray
    variance: np.ndarray
    one_step_variance: float


def _check_length(n: int, order: ArimaOrder):
    if n - order.d <= order.p + order.q + 2:
        raise ArimaFitError(f"series of length {n} too short for ARIMA{order}")


def _degenerate(x, w, order, include_mean):
    mu = float(w[0]) if include_mean else 0.0
    r = max(order.p, order.q + 1)
    return ArimaModel(
        order=order,
        phi=np.zeros(order.p),
        theta=np.zeros(order.q),
        mean=mu,
        include_mean=include_mean,
        sigma2=0.0,
        residuals=np.zeros(w.size),
        loglik=math.inf,
        aicc=-math.inf,
        n_eff=w.size,
        history=x.copy(),
        state=np.zeros(r),
    )


def fit(x, order: ArimaOrder | tuple, include_mean: bool | None = None) -> ArimaModel:
    """Maximum-likelihood ARIMA fit for a fixed order.

    The differenced series is standardised before optimisation so the
    parameter surface does not depend on the data's units; parameters are
    optimised on the partial-autocorrelation scale, which keeps the AR part
    stationary and the MA part invertible throughout.
    """
    if not isinstance(order, ArimaOrder):
        order = ArimaOrder(*order)
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ArimaFitError("series contains non-finite values")
    _check_length(x.size, order)
    if include_mean is None:
        include_mean = order.d == 0
    p, q = order.p, order.q
    w = np.diff(x, order.d)
    n = w.size

    if include_mean:
        center = float(w.mean())
        scale = float(w.std())
    else:
        center = 0.0
        scale = float(np.sqrt(np.mean(w * w)))
    if scale <= 1e-13 * max(1.0, float(np.abs(w).max())):
        if include_mean or not np.any(w):
            return _degenerate(x, w, order, include_mean)
    z = (w - center) / scale

    def unpack(params):
        phi = _pacf_to_coef(params[:p]) if p else np.zeros(0)
        theta = -_pacf_to_coef(params[p:p + q]) if q else np.zeros(0)
        mu = params[p + q] if include_mean else 0.0
        return phi, theta, mu

    k = p + q + int(include_mean)
    diagnostics = {}
    if k:
        nll = ConcentratedNLL(z, p, q, include_mean, GRAD_STEP, False)
        bounds = [(-_U_BOUND, _U_BOUND)] * (p + q) + [(-_MU_BOUND, _MU_BOUND)] * int(include_mean)
        res = minimize(
            nll.value_and_grad,
            _start_values(z, p, q, include_mean),
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxiter": MAX_ITER, "ftol": FTOL, "gtol": GTOL},
        )
        params = res.x
        diagnostics = {"nit": res.nit, "fun": float(res.fun), "message": str(res.message), "x": params.tolist()}
        if res.status == 1 or not np.isfinite(res.fun) or res.fun >= 1e10:
            raise ArimaFitError(f"ARIMA{order} did not converge: {res.message}", diagnostics)
    else:
        params = np.zeros(0)

    phi, theta, mu_z = unpack(params)
    if min_root_modulus(phi) <= 1.0 + ROOT_MARGIN or min_root_modulus(theta, +1.0) <= 1.0 + ROOT_MARGIN:
        raise ArimaFitError(f"ARIMA{order} estimate lies on the stationarity/invertibility boundary", diagnostics)

    out = arma_filter(z - mu_z, phi, theta)
    if out is None:
        raise ArimaFitError(f"ARIMA{order} filter failed at the optimum", diagnostics)
    ssq, sumlog, v, _F, a_filt, _P = out
    sigma2_z = ssq / n
    loglik = -0.5 * (n * math.log(2.0 * math.pi * sigma2_z) + sumlog + n) - n * math.log(scale)
    n_params = k + 1
    return ArimaModel(
        order=order,
        phi=phi,
        theta=theta,
        mean=center + scale * mu_z,
        include_mean=include_mean,
        sigma2=sigma2_z * scale**2,
        residuals=v * scale,
        loglik=loglik,
        aicc=aicc(loglik, n_params, n),
        n_eff=n,
        history=x.copy(),
        state=a_filt * scale,
    )


@dataclass(frozen=True)
class SearchResult:
    model: ArimaModel
    candidates: dict
    failures: dict


def auto_fit(x, bounds: OrderBounds | None = None, return_search: bool = False, allow_drift: bool = False):
    """KPSS differencing plus exhaustive AICc search over ``p, q``.

    Ties in AICc go to fewer parameters, then lower ``p``.  A mean is
    estimated only when ``d == 0``; with ``allow_drift`` a drift term is also
    tried when ``d == 1`` (candidates keyed ``(order, True)`` in the search
    record).
    """
    bounds = bounds or OrderBounds()
    x = np.asarray(x, dtype=float)
    if x.size - bounds.max_d < 10 or x.size < bounds.min_length:
        raise ArimaFitError(
            f"series of length {x.size} is below the minimum of {bounds.min_length} after differencing"
        )
    d = select_d(x, bounds.max_d)
    if x.size - d < bounds.min_length:
        raise ArimaFitError(f"only {x.size - d} observations after differencing (minimum {bounds.min_length})")
    best = None
    best_key = None
    candidates = {}
    failures = {}
    means = (d == 0,) + ((True,) if allow_drift and d == 1 else ())
    for include_mean in means:
        for p in range(bounds.max_p + 1):
            for q in range(bounds.max_q + 1):
                order = ArimaOrder(p, d, q)
                tag = order if include_mean == (d == 0) else (order, True)
                try:
                    model = fit(x, order, include_mean)
                except ArimaFitError as exc:
                    failures[tag] = str(exc)
                    continue
                if model.sigma2 > 0 and (
                    min_root_modulus(model.phi) <= 1.0 + SEARCH_ROOT_MARGIN
                    or min_root_modulus(model.theta, +1.0) <= 1.0 + SEARCH_ROOT_MARGIN
                ):
                    failures[tag] = "root within the unit-circle search margin"
                    continue
                candidates[tag] = model.aicc
                key = (model.aicc, model.n_params, p)
                if best_key is None or key < best_key:
                    best, best_key = model, key
                if model.sigma2 == 0.0:
                    break
            if best is not None and best.sigma2 == 0.0:
                break
    if best is None:
        detail = "; ".join(f"{o}: {m}" for o, m in failures.items())
        raise ArimaFitError(f"no ARIMA candidate could be fitted ({detail})", {"failures": failures})
    if return_search:
        return SearchResult(best, candidates, failures)
    return best


# ---------------------------------------------------------------------------
# Forecasting


def _integrate(history: np.ndarray, d: int, w_future: np.ndarray) -> np.ndarray:
    """Undo ``d`` differences; ``w_future`` has horizon on the last axis."""
    out = w_future
    for k in range(d - 1, -1, -1):
        last = np.diff(history, k)[-1]
        out = last + np.cumsum(out, axis=-1)
    return out


def _propagate(model: ArimaModel, H: int, shocks: np.ndarray | None) -> np.ndarray:
    """Roll the state forward ``H`` steps; ``shocks`` has shape (n_paths, H)."""
    phi, theta = model.phi, model.theta
    r = model.state.size
    ph = np.zeros(r)
    ph[: phi.size] = phi
    R = np.zeros(r)
    R[0] = 1.0
    R[1 : theta.size + 1] = theta
    n_paths = 1 if shocks is None else shocks.shape[0]
    a = np.broadcast_to(model.state, (n_paths, r)).copy()
    w = np.empty((n_paths, H))
    for h in range(H):
        nxt = a[:, :1] * ph
        nxt[:, :-1] += a[:, 1:]
        if shocks is not None:
            nxt += shocks[:, h : h + 1] * R
        a = nxt
        w[:, h] = model.mean + a[:, 0]
    return _integrate(model.history, model.order.d, w)


def psi_weights(model: ArimaModel, H: int) -> np.ndarray:
    """MA(infinity) weights of the integrated model, ``psi_0 = 1``."""
    ar = np.r_[1.0, -model.phi]
    for _ in range(model.order.d):
        ar = np.convolve(ar, [1.0, -1.0])
    ma = np.r_[1.0, model.theta]
    psi = np.zeros(H)
    for j in range(H):
        acc = ma[j] if j < ma.size else 0.0
        for i in range(1, min(j, ar.size - 1) + 1):
            acc -= ar[i] * psi[j - i]
        psi[j] = acc
    return psi


def forecast(model: ArimaModel, H: int) -> ForecastDistribution:
    """Point forecasts and forecast variances for horizons ``1..H``."""
    if H < 1:
        raise ValueError("H must be at least 1")
    mean = _propagate(model, H, None)[0]
    psi = psi_weights(model, H)
    var = model.sigma2 * np.cumsum(psi**2)
    return ForecastDistribution(mean, var, model.sigma2)


def simulate_paths(model: ArimaModel, H: int, n_paths: int, rng_seed) -> np.ndarray:
    """Future sample paths conditional on the observed history.

    ``rng_seed`` is an int seed or a :class:`numpy.random.Generator`.
    Returns an array of shape ``(n_paths, H)``.
    """
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    shocks = rng.standard_normal((n_paths, H)) * math.sqrt(model.sigma2)
    return _propagate(model, H, shocks)


@dataclass(frozen=True)
class ExposureForecast:
    mean: np.ndarray
    paths: np.ndarray | None
    model: ArimaModel


def fit_forecast_log_exposure(exposure, H: int, n_paths: int = 0, rng_seed=None,
                              bounds: OrderBounds | None = None) -> ExposureForecast:
    """Fit on log exposures and back-transform forecasts (and paths).

    Exposures trend steadily, so a drift term is allowed when ``d == 1``.
    """
    e = np.asarray(exposure, dtype=float)
    if np.any(~(e > 0)):
        raise ValueError("exposures must be positive to model them on the log scale")
    model = auto_fit(np.log(e), bounds, allow_drift=True)
    fc = forecast(model, H)
    paths = None
    if n_paths:
        paths = np.exp(simulate_paths(model, H, n_paths, rng_seed))
    return ExposureForecast(np.exp(fc.mean), paths, model)


def fit_series(x, bounds: OrderBounds | None = None, log_scale: bool = False, allow_drift: bool = False):
    """``auto_fit`` on the raw or log scale; returns ``(model, back_transform)``."""
    x = np.asarray(x, dtype=float)
    if log_scale:
        if np.any(~(x > 0)):
            raise ArimaFitError("log-scale modelling requires positive values")
        return auto_fit(np.log(x), bounds, allow_drift=allow_drift), np.exp
    return auto_fit(x, bounds, allow_drift=allow_drift), _identity


def _identity(v):
    return v

