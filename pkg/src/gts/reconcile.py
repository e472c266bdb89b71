"""Bottom-up and optimal-combination (OLS / GLS) reconciliation of rate forecasts.

All functions accept base forecasts shaped ``(m,)`` for one horizon or
``(m, H)`` for several, and summing matrices shaped ``(m, m_K)`` (shared by
all horizons) or ``(H, m, m_K)`` (one per horizon).  Least-squares problems
are solved through a QR factorisation of ``diag(sqrt(w)) S``; the normal
equations are never formed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gts.hierarchy import SummingMatrix

METHODS = ("bottom-up", "ols", "gls")


class ReconciliationError(ValueError):
    pass


@dataclass(frozen=True)
class ReconciledForecasts:
    """Coherent forecasts ``values = S @ beta`` per horizon.

    ``values`` has shape ``(m, H)`` and ``beta`` shape ``(m_K, H)``.
    """

    values: np.ndarray
    beta: np.ndarray
    method: str
    s_source: str = "forecast"


def _as_matrix(S) -> np.ndarray:
    return S.matrix if isinstance(S, SummingMatrix) else np.asarray(S, dtype=float)


def _prepare(base, S_h):
    """Return base as (m, H), S as (H, m, m_K) and whether base was 1-D."""
    base = np.asarray(base, dtype=float)
    vector = base.ndim == 1
    B = base[:, None] if vector else base
    if isinstance(S_h, (list, tuple)):
        S = np.stack([_as_matrix(s) for s in S_h])
    else:
        S = _as_matrix(S_h)
    if S.ndim == 2:
        S = np.broadcast_to(S, (B.shape[1],) + S.shape)
    m, H = B.shape
    if S.shape[0] != H or S.shape[1] != m:
        raise ReconciliationError(
            f"base forecasts of shape {base.shape} do not match summing matrices of shape {S.shape}"
        )
    if S.shape[2] > m:
        raise ReconciliationError("summing matrix has more columns than rows")
    if not np.all(np.isfinite(B)):
        raise ReconciliationError("base forecasts contain non-finite values")
    return B, S, vector


def _finish(values, beta, vector, method, s_source):
    if vector:
        values, beta = values[:, 0], beta[:, 0]
    return ReconciledForecasts(values, beta, method, s_source)


def bottom_up(base, S_h, s_source: str = "forecast") -> ReconciledForecasts:
    """Aggregate bottom-level base forecasts with the (rates) summing matrix."""
    B, S, vector = _prepare(base, S_h)
    m_k = S.shape[2]
    beta = B[-m_k:]
    values = np.einsum("hij,jh->ih", S, beta)
    return _finish(values, beta.copy(), vector, "bottom-up", s_source)


def wls_beta(S: np.ndarray, y: np.ndarray, w: np.ndarray | None = None) -> np.ndarray:
    """Weighted least-squares coefficients of ``y`` on the columns of ``S``.

    Works on stacks: ``S`` is ``(..., m, m_K)`` and ``y`` is ``(..., m)``;
    ``w`` broadcasts against ``y``.
    """
    if w is not None:
        sw = np.sqrt(w)
        S = S * sw[..., :, None]
        y = y * sw
    Q, R = np.linalg.qr(S)
    diag = np.abs(np.diagonal(R, axis1=-2, axis2=-1))
    if np.any(diag <= 1e-12 * diag.max(axis=-1, keepdims=True)):
        raise ReconciliationError("summing matrix is rank deficient")
    qty = np.einsum("...ij,...i->...j", Q, y)
    return np.linalg.solve(R, qty[..., None])[..., 0]


def ols_combine(base, S_h, s_source: str = "forecast") -> ReconciledForecasts:
    """Ordinary least-squares reconciliation (identity error covariance)."""
    B, S, vector = _prepare(base, S_h)
    beta = wls_beta(S, B.T).T
    values = np.einsum("hij,jh->ih", S, beta)
    return _finish(values, beta, vector, "ols", s_source)


def _check_variances(variances, m, labels=None) -> np.ndarray:
    v = np.asarray(variances, dtype=float)
    if v.shape != (m,):
        raise ReconciliationError(f"expected {m} variances, got shape {v.shape}")
    bad = np.flatnonzero(~(v > 0) | ~np.isfinite(v))
    if bad.size:
        j = int(bad[0])
        name = labels[j] if labels is not None else f"series {j}"
        raise ReconciliationError(f"non-positive one-step variance {v[j]!r} for {name}")
    return v


def gls_combine(base, S_h, variances, labels=None, s_source: str = "forecast") -> ReconciledForecasts:
    """Reconciliation weighted by inverse one-step residual variances."""
    B, S, vector = _prepare(base, S_h)
    v = _check_variances(variances, B.shape[0], labels)
    beta = wls_beta(S, B.T, 1.0 / v).T
    values = np.einsum("hij,jh->ih", S, beta)
    return _finish(values, beta, vector, "gls", s_source)


def reconcile(method: str, base, S_h, variances=None, labels=None, s_source: str = "forecast") -> ReconciledForecasts:
    """Dispatch on ``method`` in ``{"bottom-up", "ols", "gls"}``."""
    if method == "bottom-up":
        return bottom_up(base, S_h, s_source)
    if method == "ols":
        return ols_combine(base, S_h, s_source)
    if method == "gls":
        if variances is None:
            raise ReconciliationError("GLS reconciliation needs one-step variances")
        return gls_combine(base, S_h, variances, labels, s_source)
    raise ReconciliationError(f"unknown reconciliation method {method!r}")


def projection(S, w=None) -> np.ndarray:
    """``P = (S' W S)^{-1} S' W`` computed through QR, for checks and diagnostics."""
    S = _as_matrix(S)
    m = S.shape[0]
    return np.stack([wls_beta(S, e, w) for e in np.eye(m)], axis=1)


def reconcile_paths(method: str, paths: np.ndarray, S: np.ndarray) -> np.ndarray:
    """Reconcile simulated forecasts in bulk.

    ``paths`` is ``(P, m, H)`` and ``S`` is ``(P, H, m, m_K)`` or broadcastable
    to it.  Returns coherent paths of the same shape as ``paths``.
    """
    P, m, H = paths.shape
    S = np.broadcast_to(S, (P, H) + S.shape[-2:])
    m_k = S.shape[-1]
    y = np.swapaxes(paths, 1, 2)  # (P, H, m)
    if method == "bottom-up":
        beta = y[..., -m_k:]
    elif method == "ols":
        beta = wls_beta(S, y)
    else:
        raise ReconciliationError(f"path reconciliation is not available for {method!r}")
    out = np.einsum("phij,phj->phi", S, beta)
    return np.swapaxes(out, 1, 2)
