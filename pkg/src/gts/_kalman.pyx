# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled ARMA Kalman filter.

State-space form with state dimension ``r = max(p, q + 1)``::

    alpha_t = T alpha_{t-1} + R eps_t,   w_t = alpha_t[0]

where ``T`` has the AR coefficients in its first column and ones on the
superdiagonal, and ``R = (1, theta_1, ..., theta_{r-1})``.  The filter starts
from the stationary covariance and runs with unit innovation variance, so the
concentrated Gaussian likelihood follows from ``ssq`` and ``sum log F``.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport log, fabs, tanh

cnp.import_array()


cdef int _solve(double[:, ::1] A, double[::1] b, Py_ssize_t n) noexcept nogil:
    # Gaussian elimination with partial pivoting, in place; solution in b.
    cdef Py_ssize_t i, j, k, piv
    cdef double best, tmp, f
    for k in range(n):
        piv = k
        best = fabs(A[k, k])
        for i in range(k + 1, n):
            if fabs(A[i, k]) > best:
                best = fabs(A[i, k])
                piv = i
        if best < 1e-14:
            return -1
        if piv != k:
            for j in range(n):
                tmp = A[k, j]
                A[k, j] = A[piv, j]
                A[piv, j] = tmp
            tmp = b[k]
            b[k] = b[piv]
            b[piv] = tmp
        for i in range(k + 1, n):
            f = A[i, k] / A[k, k]
            if f != 0.0:
                for j in range(k, n):
                    A[i, j] -= f * A[k, j]
                b[i] -= f * b[k]
    for k in range(n - 1, -1, -1):
        tmp = b[k]
        for j in range(k + 1, n):
            tmp -= A[k, j] * b[j]
        b[k] = tmp / A[k, k]
    return 0


cdef inline Py_ssize_t _sym(Py_ssize_t i, Py_ssize_t j, Py_ssize_t r) noexcept nogil:
    # packed upper-triangle index of (min(i,j), max(i,j))
    cdef Py_ssize_t a = i if i < j else j
    cdef Py_ssize_t c = j if i < j else i
    return a * r - a * (a - 1) // 2 + (c - a)


cdef int _init_cov(double[::1] ph, double[::1] R, Py_ssize_t r, double[:, ::1] P,
                   double[:, ::1] A, double[::1] b) noexcept nogil:
    # Solve P = T P T' + R R' over the r(r+1)/2 free entries of symmetric P.
    # With companion T: (T P T')[i,j] = ph_i ph_j P00 + ph_i P[0,j+1]
    #                                  + ph_j P[i+1,0] + P[i+1,j+1].
    cdef Py_ssize_t i, j, row, col, m = r * (r + 1) // 2
    for row in range(m):
        b[row] = 0.0
        for col in range(m):
            A[row, col] = 0.0
    for i in range(r):
        for j in range(i, r):
            row = _sym(i, j, r)
            A[row, row] += 1.0
            A[row, 0] -= ph[i] * ph[j]
            if j + 1 < r:
                A[row, _sym(0, j + 1, r)] -= ph[i]
            if i + 1 < r:
                A[row, _sym(i + 1, 0, r)] -= ph[j]
            if j + 1 < r:
                A[row, _sym(i + 1, j + 1, r)] -= 1.0
            b[row] = R[i] * R[j]
    if _solve(A, b, m) != 0:
        return -1
    for i in range(r):
        for j in range(r):
            P[i, j] = b[_sym(i, j, r)]
    return 0


cdef int _filter(const double[::1] w, double[::1] ph, double[::1] R, Py_ssize_t r,
                 double[:, ::1] P, double[::1] a, double[::1] au, double[:, ::1] Pu,
                 double[::1] K, double* ssq, double* sumlog,
                 double[::1] v_out, double[::1] f_out, bint keep) noexcept nogil:
    cdef Py_ssize_t n = w.shape[0]
    cdef Py_ssize_t t, i, j
    cdef double v, F, x, invF, a0, F_prev = -1.0
    cdef bint steady = False
    for i in range(r):
        a[i] = 0.0
    ssq[0] = 0.0
    sumlog[0] = 0.0
    for t in range(n):
        if not steady:
            F = P[0, 0]
            if not F > 0.0:
                return -1
            invF = 1.0 / F
            for i in range(r):
                K[i] = P[i, 0] * invF
            sumlog[0] += log(F)
        v = w[t] - a[0]
        ssq[0] += v * v * invF
        if keep:
            v_out[t] = v
            f_out[t] = F
        for i in range(r):
            au[i] = a[i] + K[i] * v
        a0 = au[0]
        for i in range(r - 1):
            a[i] = ph[i] * a0 + au[i + 1]
        a[r - 1] = ph[r - 1] * a0
        if steady:
            continue
        # once F stops moving the covariance recursion is at its fixed point
        if fabs(F - F_prev) <= 1e-13 * F:
            steady = True
            sumlog[0] += (n - t - 1) * log(F)
            if not keep:
                continue
        F_prev = F
        # filtered covariance, upper triangle
        for i in range(r):
            for j in range(i, r):
                Pu[i, j] = P[i, j] - P[i, 0] * K[j]
                Pu[j, i] = Pu[i, j]
        # P <- T Pu T' + R R' using the companion structure of T
        for i in range(r):
            for j in range(i, r):
                x = ph[i] * ph[j] * Pu[0, 0] + R[i] * R[j]
                if j + 1 < r:
                    x += ph[i] * Pu[0, j + 1] + Pu[i + 1, j + 1] + ph[j] * Pu[i + 1, 0]
                elif i + 1 < r:
                    x += ph[j] * Pu[i + 1, 0]
                P[i, j] = x
                P[j, i] = x
    return 0


def _prepare(phi, theta):
    phi = np.ascontiguousarray(phi, dtype=np.float64)
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    cdef Py_ssize_t p = phi.shape[0], q = theta.shape[0]
    cdef Py_ssize_t r = max(p, q + 1)
    ph = np.zeros(r)
    ph[:p] = phi
    R = np.zeros(r)
    R[0] = 1.0
    R[1:q + 1] = theta
    return ph, R, r


def stationary_cov(phi, theta):
    """Unconditional state covariance (unit innovation variance)."""
    ph, R, r = _prepare(phi, theta)
    P = np.empty((r, r))
    A = np.empty((r * r, r * r))
    b = np.empty(r * r)
    if _init_cov(ph, R, r, P, A, b) != 0:
        return None
    return P


def _run(w, phi, theta, bint keep):
    ph, R, r = _prepare(phi, theta)
    cdef const double[::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t n = wv.shape[0]
    P = np.empty((r, r))
    A = np.empty((r * r, r * r))
    b = np.empty(r * r)
    if _init_cov(ph, R, r, P, A, b) != 0 or not P[0, 0] > 0:
        return None
    a = np.empty(r)
    au = np.zeros(r)
    Pu = np.zeros((r, r))
    K = np.empty(r)
    v_out = np.empty(n if keep else 1)
    f_out = np.empty(n if keep else 1)
    cdef double ssq = 0.0, sumlog = 0.0
    if _filter(wv, ph, R, r, P, a, au, Pu, K, &ssq, &sumlog, v_out, f_out, keep) != 0:
        return None
    if keep:
        return ssq, sumlog, v_out, f_out, au, Pu
    return ssq, sumlog


def arma_loglik(w, phi, theta):
    """Return ``(sum v_t^2 / F_t, sum log F_t)`` or ``None`` if non-stationary."""
    return _run(w, phi, theta, False)


def arma_filter(w, phi, theta):
    """Return ``(ssq, sumlog, innovations, F, a_filtered, P_filtered)``."""
    return _run(w, phi, theta, True)


cdef void _pacf_to_coef(const double* u, Py_ssize_t k, double* out, double* tmp) noexcept nogil:
    cdef Py_ssize_t j, i
    cdef double r
    for j in range(k):
        r = tanh(u[j])
        for i in range(j):
            tmp[i] = out[i]
        out[j] = r
        for i in range(j):
            out[i] = tmp[i] - r * tmp[j - 1 - i]


cdef class ConcentratedNLL:
    """Negative concentrated log-likelihood per observation, on transformed parameters.

    Parameters are ``(u_ar[p], u_ma[q], mu?)`` where the AR and MA
    coefficients are the Durbin-Levinson images of ``tanh(u)``; the MA
    coefficients carry a sign flip so that both polynomials are constrained.
    """

    cdef double[::1] z, zc, ph, R, a, au, b, v_out, f_out, phi, theta, tmp, K
    cdef double[:, ::1] P, Pu, A
    cdef Py_ssize_t p, q, r, n, k
    cdef bint include_mean
    cdef public double step
    cdef public bint central

    def __init__(self, z, int p, int q, bint include_mean, double step=1e-6, bint central=True):
        self.z = np.ascontiguousarray(z, dtype=np.float64)
        self.n = self.z.shape[0]
        self.zc = np.empty(self.n)
        self.p = p
        self.q = q
        self.include_mean = include_mean
        self.k = p + q + (1 if include_mean else 0)
        self.r = max(p, q + 1)
        r = self.r
        self.ph = np.zeros(r)
        self.R = np.zeros(r)
        self.a = np.zeros(r)
        self.au = np.zeros(r)
        self.P = np.zeros((r, r))
        self.Pu = np.zeros((r, r))
        self.K = np.zeros(r)
        self.A = np.zeros((r * r, r * r))
        self.b = np.zeros(r * r)
        self.v_out = np.zeros(1)
        self.f_out = np.zeros(1)
        self.phi = np.zeros(max(p, 1))
        self.theta = np.zeros(max(q, 1))
        self.tmp = np.zeros(max(p, q, 1))
        self.step = step
        self.central = central

    cdef double _eval(self, const double* x) noexcept nogil:
        cdef Py_ssize_t i
        cdef double mu = 0.0, ssq = 0.0, sumlog = 0.0
        for i in range(self.r):
            self.ph[i] = 0.0
            self.R[i] = 0.0
        self.R[0] = 1.0
        if self.p:
            _pacf_to_coef(x, self.p, &self.phi[0], &self.tmp[0])
            for i in range(self.p):
                self.ph[i] = self.phi[i]
        if self.q:
            _pacf_to_coef(x + self.p, self.q, &self.theta[0], &self.tmp[0])
            for i in range(self.q):
                self.R[i + 1] = -self.theta[i]
        if self.include_mean:
            mu = x[self.p + self.q]
        for i in range(self.n):
            self.zc[i] = self.z[i] - mu
        if _init_cov(self.ph, self.R, self.r, self.P, self.A, self.b) != 0:
            return 1e10
        if _filter(self.zc, self.ph, self.R, self.r, self.P, self.a, self.au, self.Pu,
                   self.K, &ssq, &sumlog, self.v_out, self.f_out, False) != 0:
            return 1e10
        if not ssq > 0.0:
            return 1e10
        return 0.5 * (self.n * log(ssq / self.n) + sumlog) / self.n

    def value(self, x):
        cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
        if self.k == 0:
            return self._eval(NULL)
        return self._eval(&xv[0])

    def value_and_grad(self, x):
        cdef double[::1] xv = np.array(x, dtype=np.float64)
        g = np.zeros(self.k)
        cdef double[::1] gv = g
        cdef Py_ssize_t i
        cdef double f, fp, fm, orig, h = self.step
        if self.k == 0:
            return self._eval(NULL), g
        f = self._eval(&xv[0])
        for i in range(self.k):
            orig = xv[i]
            xv[i] = orig + h
            fp = self._eval(&xv[0])
            if self.central or fp >= 1e10:
                xv[i] = orig - h
                fm = self._eval(&xv[0])
                if fp >= 1e10 and fm < 1e10:
                    gv[i] = (f - fm) / h
                elif fp < 1e10 and self.central:
                    gv[i] = (fp - fm) / (2.0 * h)
                else:
                    gv[i] = 0.0
            else:
                gv[i] = (fp - f) / h
            xv[i] = orig
        return f, g
