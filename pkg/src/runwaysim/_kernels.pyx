# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels.

Every function here has a line-for-line twin in ``_pykernels.py``; the two are
kept arithmetically identical so either backend yields the same floats.
"""

from libc.math cimport sqrt, exp, log, erfc, fabs, INFINITY
import numpy as np
from scipy.special.cython_special cimport gammaincinv, gammainc, gammaincc, gammainccinv

cdef double SQRT2 = 1.4142135623730951
cdef double HALF_LOG_2PI = 0.9189385332046728
cdef double U_MAX = 0.9999999999999999
cdef double ROOT_TOL = 1e-7
cdef int MAX_ITER = 200
cdef double INV_SQRT_2PI = 0.3989422804014327
cdef double ASYMPTOTIC_Y = 30.0


cdef inline double _log_tail_excess(double y) noexcept nogil:
    # log Phi(-y) + y*y/2 for large y (asymptotic series)
    cdef double y2 = 1.0 / (y * y)
    cdef double series = 1.0 - y2 * (1.0 - y2 * (3.0 - y2 * (15.0 - y2 * 105.0)))
    return -log(y) - HALF_LOG_2PI + log(series)


cdef inline double _ig_cdf(double x, double gap, double sigma) noexcept nogil:
    cdef double sx, z1, y, t1, e2, s2
    if x <= 0.0:
        return 0.0
    sx = sigma * sqrt(x)
    z1 = (x - gap) / sx
    t1 = 0.5 * erfc(-z1 / SQRT2)
    y = (x + gap) / sx
    s2 = sigma * sigma
    if y < ASYMPTOTIC_Y:
        e2 = 2.0 * gap / s2 + log(0.5 * erfc(y / SQRT2))
    else:
        e2 = -0.5 * z1 * z1 + _log_tail_excess(y)
    t1 = t1 + exp(e2)
    if t1 > 1.0:
        return 1.0
    return t1


cdef inline double _ig_pdf(double x, double gap, double sigma) noexcept nogil:
    cdef double d
    if x <= 0.0:
        return 0.0
    d = x - gap
    return gap / (sigma * x * sqrt(x)) * INV_SQRT_2PI * exp(-d * d / (2.0 * sigma * sigma * x))


cdef inline double _ig_quantile(double gap, double sigma, double u) noexcept nogil:
    # safeguarded Newton inside the bracket [0, hi]; a bisection step is taken
    # whenever the Newton step leaves the bracket or converges too slowly
    cdef double lo, hi, x, dx, dxold, F, f
    cdef int it
    if gap <= 0.0:
        return 0.0
    if sigma <= 0.0:
        return gap
    hi = gap + 12.0 * sigma * sqrt(gap)
    it = 0
    while _ig_cdf(hi, gap, sigma) < U_MAX and it < 64:
        hi = 2.0 * hi
        it += 1
    lo = 0.0
    x = gap
    dxold = hi - lo
    dx = dxold
    F = _ig_cdf(x, gap, sigma) - u
    f = _ig_pdf(x, gap, sigma)
    for it in range(MAX_ITER):
        if F == 0.0:
            return x
        if F < 0.0:
            lo = x
        else:
            hi = x
        if ((x - hi) * f - F) * ((x - lo) * f - F) > 0.0 or fabs(2.0 * F) > fabs(dxold * f):
            dxold = dx
            dx = 0.5 * (hi - lo)
            x = lo + dx
        else:
            dxold = dx
            dx = F / f
            x = x - dx
        if fabs(dx) < ROOT_TOL:
            return x
        F = _ig_cdf(x, gap, sigma) - u
        f = _ig_pdf(x, gap, sigma)
    return x


cpdef double ig_cdf(double x, double gap, double sigma):
    return _ig_cdf(x, gap, sigma)


cpdef double ig_quantile(double gap, double sigma, double u):
    return _ig_quantile(gap, sigma, u)


def ig_quantiles(const double[::1] gaps, const double[::1] sigmas, const double[::1] us,
                 double[::1] out):
    cdef Py_ssize_t i, n = gaps.shape[0]
    with nogil:
        for i in range(n):
            out[i] = _ig_quantile(gaps[i], sigmas[i], us[i])


cpdef double erlang_unit_quantile(double k, double u):
    # quantile of Erlang(k) scaled to unit mean
    if k == INFINITY:
        return 1.0
    return gammaincinv(k, u) / k


def erlang_unit_quantiles(double k, const double[::1] us, double[::1] out):
    cdef Py_ssize_t i, n = us.shape[0]
    for i in range(n):
        out[i] = erlang_unit_quantile(k, us[i])


cpdef double erlang_residual_quantile(double mean, double k, double elapsed, double u):
    """u-quantile of (M - elapsed | M > elapsed), M ~ Erlang(k, rate k/mean)."""
    cdef double x, p0, q0, y
    if k == INFINITY:
        y = mean - elapsed
        return y if y > 0.0 else 0.0
    x = elapsed * k / mean
    p0 = gammainc(k, x)
    if p0 < 0.5:
        y = gammaincinv(k, p0 + u * (1.0 - p0))
    else:
        q0 = gammaincc(k, x)
        if q0 <= 0.0:
            # far tail: residual is effectively exponential with the phase rate
            return -log(1.0 - u) * mean / k
        y = gammainccinv(k, (1.0 - u) * q0)
    # same rounding as the unconditional quantile, so elapsed = 0 reproduces it exactly
    y = mean * (y / k) - elapsed
    return y if y > 0.0 else 0.0


cdef inline double _pos_sq(double v) noexcept nogil:
    if v > 0.0:
        return v * v
    return 0.0


cdef double _sequence_cost(const int[::1] seq, Py_ssize_t length, double t0,
                           const double[::1] q, const double[::1] travel, const double[::1] z,
                           const double[::1] a, const double[::1] g, const int[::1] cls,
                           const double[:, ::1] sep, double phi, double w0, double w1,
                           bint has_prev, int prev_cls, double prev_L,
                           double theta_s, double theta_w, double gamma_s, double gamma_w,
                           double* first_A, double* first_slot) noexcept nogil:
    cdef Py_ssize_t p
    cdef int j, pc = prev_cls
    cdef double rel = t0, R, A, L, M, pL = prev_L, total = 0.0
    cdef bint hp = has_prev
    for p in range(length):
        j = seq[p]
        R = q[j]
        if R < rel:
            R = rel
        rel = R
        A = R + travel[j]
        if hp:
            M = sep[pc, cls[j]] * z[j]
            if w0 <= R and R <= w1:
                M = M * phi
            L = pL + M
            if p == 0:
                first_slot[0] = L
            if A > L:
                L = A
        else:
            L = A
            if p == 0:
                first_slot[0] = -INFINITY
        if p == 0:
            first_A[0] = A
        total += g[j] * (theta_s * _pos_sq(L - a[j] - gamma_s)
                         + theta_w * _pos_sq(L - (A - (R - q[j])) - gamma_w))
        pL = L
        pc = cls[j]
        hp = True
    return total


def sequence_costs(const int[:, ::1] seqs, double t0,
                   const double[::1] q, const double[::1] travel, const double[::1] z,
                   const double[::1] a, const double[::1] g, const int[::1] cls,
                   const double[:, ::1] sep, double phi, double w0, double w1,
                   bint has_prev, int prev_cls, double prev_L, bint queue_nonempty,
                   double theta_s, double theta_w, double gamma_s, double gamma_w,
                   double[::1] J_out, double[::1] xi_out):
    cdef Py_ssize_t s, n = seqs.shape[0], length = seqs.shape[1]
    cdef double first_A = 0.0, first_slot = 0.0
    with nogil:
        for s in range(n):
            J_out[s] = _sequence_cost(seqs[s], length, t0, q, travel, z, a, g, cls, sep, phi,
                                      w0, w1, has_prev, prev_cls, prev_L,
                                      theta_s, theta_w, gamma_s, gamma_w,
                                      &first_A, &first_slot)
            if not queue_nonempty:
                xi_out[s] = 1.0
            elif first_A > first_slot:
                xi_out[s] = 1.0
            else:
                xi_out[s] = 0.0


cpdef double order_cost(const int[::1] seq, double t0,
                        const double[::1] q, const double[::1] travel, const double[::1] z,
                        const double[::1] a, const double[::1] g, const int[::1] cls,
                        const double[:, ::1] sep, double phi, double w0, double w1,
                        double theta_s, double theta_w, double gamma_s, double gamma_w):
    cdef double first_A = 0.0, first_slot = 0.0
    return _sequence_cost(seq, seq.shape[0], t0, q, travel, z, a, g, cls, sep, phi, w0, w1,
                          False, 0, 0.0, theta_s, theta_w, gamma_s, gamma_w,
                          &first_A, &first_slot)


def first_hits(const double[:, ::1] grid, double dt, double offset, double[::1] start,
               double[::1] out):
    """First time t >= start[i] at which the piecewise-constant row i satisfies
    grid[i, k] - offset <= t. Writes +inf when no hit occurs inside the grid."""
    cdef Py_ssize_t i, k, k0, nf = grid.shape[0], ng = grid.shape[1]
    cdef double tk, tn, v, hit
    with nogil:
        for i in range(nf):
            out[i] = INFINITY
            k0 = <Py_ssize_t>(start[i] / dt)
            if k0 < 0:
                k0 = 0
            for k in range(k0, ng):
                tk = k * dt
                if tk < start[i]:
                    tk = start[i]
                v = grid[i, k] - offset
                tn = (k + 1) * dt if k + 1 < ng else INFINITY
                if v < tn:
                    hit = v if v > tk else tk
                    out[i] = hit
                    break


cdef inline Py_ssize_t _triangular_from_int(Py_ssize_t m, Py_ssize_t x) noexcept nogil:
    # position p in 1..m owns (m + 1 - p) consecutive integers
    cdef Py_ssize_t p = 1, width = m
    while x >= width:
        x -= width
        p += 1
        width -= 1
    return p


cdef void _h_move(const int[::1] base, long long x, int* out) noexcept nogil:
    # x = 6 * c + rem: c picks the position by the triangular rule,
    # rem % 2 == 0 moves forwards, rem // 2 + 1 is the distance
    cdef Py_ssize_t l = base.shape[0], i, j, tgt, P, c, rem
    cdef int f
    c = x // 6
    rem = x - 6 * c
    j = _triangular_from_int(l, c)
    P = rem // 2 + 1
    f = base[j - 1]
    if rem % 2 == 0:
        tgt = j - P
        if tgt < 1:
            tgt = 1
        for i in range(tgt - 1):
            out[i] = base[i]
        out[tgt - 1] = f
        for i in range(tgt - 1, j - 1):
            out[i + 1] = base[i]
        for i in range(j, l):
            out[i] = base[i]
    else:
        tgt = j + P
        if tgt > l:
            tgt = l
        for i in range(j - 1):
            out[i] = base[i]
        for i in range(j, tgt):
            out[i - 1] = base[i]
        out[tgt - 1] = f
        for i in range(tgt, l):
            out[i] = base[i]


def h_moves(const int[::1] base, const long long[::1] xs, int[:, ::1] out):
    """Apply the shift move encoded by each integer in ``xs`` to ``base``."""
    cdef Py_ssize_t r
    with nogil:
        for r in range(xs.shape[0]):
            _h_move(base, xs[r], &out[r, 0])


def fill_population(const int[::1] base, int[:, ::1] pop, Py_ssize_t n_have, Py_ssize_t S,
                    const double[::1] us):
    """Append distinct moves of ``base`` to the first ``n_have`` rows of
    ``pop`` until it holds ``S`` rows. Move ``r`` has code
    ``floor(us[r] * 3l(l+1))``.

    Returns ``(rows held, uniforms consumed)``.
    """
    cdef Py_ssize_t l = base.shape[0], r, k, i, tries = 0
    cdef long long n_codes = 3 * l * (l + 1)
    cdef bint dup
    with nogil:
        for r in range(us.shape[0]):
            if n_have >= S:
                break
            _h_move(base, <long long>(us[r] * n_codes), &pop[n_have, 0])
            tries += 1
            for k in range(n_have):
                dup = True
                for i in range(l):
                    if pop[k, i] != pop[n_have, i]:
                        dup = False
                        break
                if dup:
                    break
            if n_have == 0 or not dup:
                n_have += 1
    return n_have, tries


def keep_best(const int[:, ::1] arr, const double[::1] V, Py_ssize_t n_keep):
    """Rows of ``arr`` with the ``n_keep`` smallest ``V`` (ties to the lower
    index), in their original order, and the index of the best row.

    Returns ``(kept rows, best row index in arr)``.
    """
    cdef Py_ssize_t k = arr.shape[0], i, j, n = 0, best = 0
    if n_keep > k:
        n_keep = k
    for i in range(1, k):
        if V[i] < V[best]:
            best = i
    out = np.empty((n_keep, arr.shape[1]), dtype=np.int32)
    cdef int[:, ::1] o = out
    cdef Py_ssize_t rank
    for i in range(k):
        # stable rank of row i: smaller values, or equal values at lower index
        rank = 0
        for j in range(k):
            if V[j] < V[i] or (V[j] == V[i] and j < i):
                rank += 1
        if rank < n_keep:
            o[n, :] = arr[i, :]
            n += 1
    return out, best


def running_update(double[::1] V, double[::1] W, double[::1] U, const double[::1] J,
                   const double[::1] xi, double psi):
    """In-place exponential averages of J, J^2 and xi with weight ``psi``."""
    cdef Py_ssize_t i
    cdef double a = 1.0 - psi
    for i in range(V.shape[0]):
        V[i] = a * V[i] + psi * J[i]
        W[i] = a * W[i] + psi * (J[i] * J[i])
        U[i] = a * U[i] + psi * xi[i]


def row_in(const int[::1] row, const int[:, ::1] arr):
    """Whether ``row`` equals some row of ``arr``."""
    cdef Py_ssize_t r, i
    for r in range(arr.shape[0]):
        for i in range(arr.shape[1]):
            if arr[r, i] != row[i]:
                break
        else:
            return True
    return False


def row_union(const int[:, ::1] pop, Py_ssize_t n_flights):
    """Sorted distinct entries of ``pop`` (all in ``[0, n_flights)``) as int32."""
    cdef unsigned char[::1] mk = np.zeros(n_flights, dtype=np.uint8)
    cdef Py_ssize_t r, i, n = 0
    for r in range(pop.shape[0]):
        for i in range(pop.shape[1]):
            if not mk[pop[r, i]]:
                mk[pop[r, i]] = 1
                n += 1
    out = np.empty(n, dtype=np.int32)
    cdef int[::1] o = out
    n = 0
    for i in range(n_flights):
        if mk[i]:
            o[n] = i
            n += 1
    return out


cdef int _predict_unreleased(double t, double tau, double k, const int[::1] idx,
                            const signed char[::1] status, const double[::1] etas,
                            const double[::1] h, const double[::1] sigma,
                            const double[::1] pool_times, const double[::1] us,
                            Py_ssize_t u0, bint expected,
                            double[::1] q, double[::1] travel, double[::1] z) except -1:
    cdef Py_ssize_t r, i, b
    cdef double start, gap
    for r in range(idx.shape[0]):
        i = idx[r]
        b = u0 + 3 * r
        if status[i] == 1:
            q[i] = pool_times[i]
        elif status[i] == 0:
            start = h[i] if h[i] > t else t
            gap = etas[i] - tau - start
            if gap > 0.0:
                if expected:
                    q[i] = start + gap
                else:
                    q[i] = start + _ig_quantile(gap, sigma[i], us[b])
            else:
                q[i] = etas[i] - tau if etas[i] - tau > t else t
        else:
            raise ValueError(f"flight {i} is not unreleased")
        if expected:
            travel[i] = tau
            z[i] = 1.0
        else:
            travel[i] = _ig_quantile(tau, sigma[i], us[b + 1])
            z[i] = erlang_unit_quantile(k, us[b + 2])
    return 0


def predict_unreleased(double t, double tau, double k, const int[::1] idx,
                       const signed char[::1] status, const double[::1] etas,
                       const double[::1] h, const double[::1] sigma,
                       const double[::1] pool_times, const double[::1] us, bint expected,
                       double[::1] q, double[::1] travel, double[::1] z):
    """Pool entry, remaining travel and separation factor for unreleased flights.

    Flight ``idx[r]`` uses uniforms ``us[3r:3r+3]`` (pool entry, travel,
    separation). With ``expected`` every draw is replaced by its mean.
    """
    _predict_unreleased(t, tau, k, idx, status, etas, h, sigma, pool_times, us, 0, expected,
                        q, travel, z)


cdef void _predict_queue(double t, double k, const int[::1] queue,
                         const unsigned char[::1] arrived, const double[::1] arrival_times,
                         const double[::1] etas, const double[::1] sigma, const int[::1] cls,
                         const double[:, ::1] sep, double phi, const unsigned char[::1] bad,
                         bint* has_prev, int* prev_cls, double* prev_L, int service_head,
                         double elapsed, const double[::1] us, Py_ssize_t u0, bint expected,
                         double[::1] z, double[::1] qa, double[::1] ql) noexcept:
    cdef Py_ssize_t r, j, b
    cdef double zj, mean, A, L, rem
    for r in range(queue.shape[0]):
        j = queue[r]
        b = u0 + 3 * r
        zj = 1.0 if expected else erlang_unit_quantile(k, us[b])
        z[j] = zj
        mean = 0.0
        if has_prev[0]:
            mean = sep[prev_cls[0], cls[j]]
            if bad[j]:
                mean = mean * phi
        if arrived[j]:
            A = arrival_times[j]
        elif expected:
            A = t + (etas[j] - t if etas[j] - t > 0.0 else 0.0)
        else:
            A = t + _ig_quantile(etas[j] - t, sigma[j], us[b + 1])
        qa[j] = A
        if not has_prev[0]:
            L = A
        elif r == 0 and service_head == j:
            if expected:
                rem = mean - elapsed
                L = t + (rem if rem > 0.0 else 0.0)
            else:
                L = t + erlang_residual_quantile(mean, k, elapsed, us[b + 2])
        else:
            L = prev_L[0] + mean * zj
            if A > L:
                L = A
        ql[j] = L
        has_prev[0] = True
        prev_cls[0] = cls[j]
        prev_L[0] = L


def predict_queue(double t, double k, const int[::1] queue, const unsigned char[::1] arrived,
                  const double[::1] arrival_times, const double[::1] etas,
                  const double[::1] sigma, const int[::1] cls, const double[:, ::1] sep,
                  double phi, const unsigned char[::1] bad, bint has_prev, int prev_cls,
                  double prev_L, int service_head, double elapsed, const double[::1] us,
                  bint expected, double[::1] z, double[::1] qa, double[::1] ql):
    """Arrival and landing times of queued flights in release order.

    Queue position ``r`` uses uniforms ``us[3r:3r+3]`` (separation factor,
    arrival, residual service). Returns ``(has_tail, tail_cls, tail_L)``.
    """
    _predict_queue(t, k, queue, arrived, arrival_times, etas, sigma, cls, sep, phi, bad,
                   &has_prev, &prev_cls, &prev_L, service_head, elapsed, us, 0, expected,
                   z, qa, ql)
    return has_prev, prev_cls, prev_L


cdef double _weather_end(double t, double f, double nu, double u, bint expected) noexcept nogil:
    if expected:
        return t + (f - t if f - t > 0.0 else 0.0)
    return t + _ig_quantile(f - t, nu, u)


cdef class PassContext:
    """Per-scenario constants and work buffers for one controller pass.

    :meth:`evaluate` predicts a future from the supplied state arrays and
    costs every row of ``seqs`` on it in a single call. The uniform block
    ``us`` is laid out as 2 weather slots, 3 per queued flight, then 3 per
    unreleased flight (the layout of :func:`runwaysim.paths.sample_predicted_path`).
    """

    cdef double[::1] a, g, sigma, h, q, travel, z, qa, ql
    cdef int[::1] cls
    cdef double[:, ::1] sep
    cdef double phi, tau, k, theta_s, theta_w, gamma_s, gamma_w

    def __init__(self, a, g, sigma, h, cls, sep, double phi, double tau, double k,
                 double theta_s, double theta_w, double gamma_s, double gamma_w):
        import numpy as np
        self.a = np.ascontiguousarray(a, dtype=np.float64)
        self.g = np.ascontiguousarray(g, dtype=np.float64)
        self.sigma = np.ascontiguousarray(sigma, dtype=np.float64)
        self.h = np.ascontiguousarray(h, dtype=np.float64)
        self.cls = np.ascontiguousarray(cls, dtype=np.int32)
        self.sep = np.ascontiguousarray(sep, dtype=np.float64)
        n = len(self.a)
        self.q = np.full(n, np.nan)
        self.travel = np.full(n, np.nan)
        self.z = np.full(n, np.nan)
        self.qa = np.full(n, np.nan)
        self.ql = np.full(n, np.nan)
        self.phi, self.tau, self.k = phi, tau, k
        self.theta_s, self.theta_w = theta_s, theta_w
        self.gamma_s, self.gamma_w = gamma_s, gamma_w

    def evaluate(self, double t, int weather_mode, double f0, double f1, double started,
                 double nu, const int[::1] queue, const unsigned char[::1] arrived,
                 const double[::1] arrival_times, const double[::1] etas,
                 const unsigned char[::1] bad, bint has_prev, int prev_cls, double prev_L,
                 int service_head, double elapsed, const int[::1] idx,
                 const signed char[::1] status, const double[::1] pool_times,
                 const double[::1] us, bint expected, const int[:, ::1] seqs,
                 double[::1] J_out, double[::1] xi_out):
        """weather_mode: 0 no weather expected, 1 forecast (f0, f1), 2 started
        at ``started`` and forecast to end at f1."""
        cdef double w0 = INFINITY, w1 = -INFINITY, u0, u1
        cdef Py_ssize_t s, nq = queue.shape[0], length = seqs.shape[1]
        cdef double first_A = 0.0, first_slot = 0.0
        cdef bint queue_nonempty = nq > 0
        if weather_mode != 0:
            if weather_mode == 1:
                u0 = _weather_end(t, f0, nu, 0.0 if expected else us[0], expected)
            else:
                u0 = started
            u1 = _weather_end(t, f1, nu, 0.0 if expected else us[1], expected)
            if u0 < u1:
                w0, w1 = u0, u1
        _predict_queue(t, self.k, queue, arrived, arrival_times, etas, self.sigma, self.cls,
                       self.sep, self.phi, bad, &has_prev, &prev_cls, &prev_L, service_head,
                       elapsed, us, 2, expected, self.z, self.qa, self.ql)
        _predict_unreleased(t, self.tau, self.k, idx, status, etas, self.h, self.sigma,
                            pool_times, us, 2 + 3 * nq, expected, self.q, self.travel, self.z)
        with nogil:
            for s in range(seqs.shape[0]):
                J_out[s] = _sequence_cost(seqs[s], length, t, self.q, self.travel, self.z,
                                          self.a, self.g, self.cls, self.sep, self.phi,
                                          w0, w1, has_prev, prev_cls, prev_L,
                                          self.theta_s, self.theta_w, self.gamma_s,
                                          self.gamma_w, &first_A, &first_slot)
                if not queue_nonempty:
                    xi_out[s] = 1.0
                elif first_A > first_slot:
                    xi_out[s] = 1.0
                else:
                    xi_out[s] = 0.0
