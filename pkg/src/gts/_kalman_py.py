"""Pure-Python ARMA Kalman filter, used when the compiled kernel is absent.

Mirrors ``_kalman.pyx`` exactly; see there for the state-space layout.
"""

import math

import numpy as np


def _dims(phi, theta):
    p, q = len(phi), len(theta)
    return max(p, q + 1)


def _system(phi, theta, r):
    ph = np.zeros(r)
    ph[: len(phi)] = phi
    R = np.zeros(r)
    R[0] = 1.0
    R[1 : len(theta) + 1] = theta
    return ph, R


def stationary_cov(phi, theta):
    """Unconditional state covariance (unit innovation variance)."""
    phi = np.asarray(phi, dtype=float)
    theta = np.asarray(theta, dtype=float)
    r = _dims(phi, theta)
    ph, R = _system(phi, theta, r)
    T = np.zeros((r, r))
    T[:, 0] = ph
    T[np.arange(r - 1), np.arange(1, r)] = 1.0
    A = np.eye(r * r) - np.kron(T, T)
    b = np.outer(R, R).ravel()
    try:
        P = np.linalg.solve(A, b).reshape(r, r)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(P)):
        return None
    return P


def _run(w, phi, theta, keep):
    phi = np.asarray(phi, dtype=float)
    theta = np.asarray(theta, dtype=float)
    w = np.asarray(w, dtype=float)
    r = _dims(phi, theta)
    ph, R = _system(phi, theta, r)
    P = stationary_cov(phi, theta)
    n = w.size
    if P is None or P[0, 0] <= 0:
        return None
    ph = ph.tolist()
    RR = np.outer(R, R).tolist()
    P = P.tolist()
    a = [0.0] * r
    ssq = 0.0
    sumlog = 0.0
    if keep:
        v_out = np.empty(n)
        f_out = np.empty(n)
    au = a
    Pu = P
    for t in range(n):
        F = P[0][0]
        if not F > 0.0:
            return None
        v = w[t] - a[0]
        ssq += v * v / F
        sumlog += math.log(F)
        if keep:
            v_out[t] = v
            f_out[t] = F
        col = [P[i][0] for i in range(r)]
        au = [a[i] + col[i] * v / F for i in range(r)]
        Pu = [[P[i][j] - col[i] * col[j] / F for j in range(r)] for i in range(r)]
        a = [ph[i] * au[0] + (au[i + 1] if i + 1 < r else 0.0) for i in range(r)]
        TP = [[ph[i] * Pu[0][j] + (Pu[i + 1][j] if i + 1 < r else 0.0) for j in range(r)] for i in range(r)]
        P = [
            [TP[i][0] * ph[j] + (TP[i][j + 1] if j + 1 < r else 0.0) + RR[i][j] for j in range(r)]
            for i in range(r)
        ]
    if keep:
        return ssq, sumlog, v_out, f_out, np.array(au), np.array(Pu)
    return ssq, sumlog


def arma_loglik(w, phi, theta):
    """Return ``(sum v_t^2 / F_t, sum log F_t)`` or ``None`` if non-stationary."""
    return _run(w, phi, theta, False)


def arma_filter(w, phi, theta):
    """Return ``(ssq, sumlog, innovations, F, a_filtered, P_filtered)``."""
    return _run(w, phi, theta, True)


def _pacf_to_coef(u):
    r = np.tanh(u)
    phi = np.zeros(r.size)
    for j in range(r.size):
        prev = phi[:j].copy()
        phi[j] = r[j]
        phi[:j] = prev - r[j] * prev[::-1]
    return phi


class ConcentratedNLL:
    """Negative concentrated log-likelihood per observation (see ``_kalman.pyx``)."""

    def __init__(self, z, p, q, include_mean, step=1e-6, central=True):
        self.z = np.asarray(z, dtype=float)
        self.n = self.z.size
        self.p, self.q = p, q
        self.include_mean = include_mean
        self.k = p + q + int(include_mean)
        self.step = step
        self.central = central

    def value(self, x):
        x = np.asarray(x, dtype=float)
        p, q = self.p, self.q
        phi = _pacf_to_coef(x[:p])
        theta = -_pacf_to_coef(x[p:p + q])
        mu = x[p + q] if self.include_mean else 0.0
        out = arma_loglik(self.z - mu, phi, theta)
        if out is None or not out[0] > 0:
            return 1e10
        ssq, sumlog = out
        return 0.5 * (self.n * math.log(ssq / self.n) + sumlog) / self.n

    def value_and_grad(self, x):
        x = np.array(x, dtype=float)
        f = self.value(x)
        g = np.zeros(self.k)
        h = self.step
        for i in range(self.k):
            orig = x[i]
            x[i] = orig + h
            fp = self.value(x)
            if self.central or fp >= 1e10:
                x[i] = orig - h
                fm = self.value(x)
                if fp >= 1e10 and fm < 1e10:
                    g[i] = (f - fm) / h
                elif fp < 1e10 and self.central:
                    g[i] = (fp - fm) / (2.0 * h)
            else:
                g[i] = (fp - f) / h
            x[i] = orig
        return f, g
