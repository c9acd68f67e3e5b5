"""Pure-Python fallback for the compiled kernels.

Arithmetic is written in the same order as ``_kernels.pyx`` and uses the same
libm and scipy special functions, so both backends agree bit for bit.
"""

from math import erfc, exp, inf, log, sqrt

import numpy as np
from scipy.special import gammainc, gammaincc, gammainccinv, gammaincinv

SQRT2 = 1.4142135623730951
HALF_LOG_2PI = 0.9189385332046728
U_MAX = 0.9999999999999999
ROOT_TOL = 1e-7
MAX_ITER = 200
INV_SQRT_2PI = 0.3989422804014327
ASYMPTOTIC_Y = 30.0


def _log_tail_excess(y):
    y2 = 1.0 / (y * y)
    series = 1.0 - y2 * (1.0 - y2 * (3.0 - y2 * (15.0 - y2 * 105.0)))
    return -log(y) - HALF_LOG_2PI + log(series)


def ig_cdf(x, gap, sigma):
    if x <= 0.0:
        return 0.0
    sx = sigma * sqrt(x)
    z1 = (x - gap) / sx
    t1 = 0.5 * erfc(-z1 / SQRT2)
    y = (x + gap) / sx
    s2 = sigma * sigma
    if y < ASYMPTOTIC_Y:
        tail = 0.5 * erfc(y / SQRT2)
        # libm log(0) is -inf; mirror that instead of raising
        e2 = 2.0 * gap / s2 + (log(tail) if tail > 0.0 else -inf)
    else:
        e2 = -0.5 * z1 * z1 + _log_tail_excess(y)
    t1 = t1 + (exp(e2) if e2 < 709.0 else inf)
    if t1 > 1.0:
        return 1.0
    return t1


def _ig_pdf(x, gap, sigma):
    if x <= 0.0:
        return 0.0
    d = x - gap
    return gap / (sigma * x * sqrt(x)) * INV_SQRT_2PI * exp(-d * d / (2.0 * sigma * sigma * x))


def ig_quantile(gap, sigma, u):
    if gap <= 0.0:
        return 0.0
    if sigma <= 0.0:
        return gap
    hi = gap + 12.0 * sigma * sqrt(gap)
    it = 0
    while ig_cdf(hi, gap, sigma) < U_MAX and it < 64:
        hi = 2.0 * hi
        it += 1
    lo = 0.0
    x = gap
    dxold = hi - lo
    dx = dxold
    F = ig_cdf(x, gap, sigma) - u
    f = _ig_pdf(x, gap, sigma)
    for _ in range(MAX_ITER):
        if F == 0.0:
            return x
        if F < 0.0:
            lo = x
        else:
            hi = x
        if ((x - hi) * f - F) * ((x - lo) * f - F) > 0.0 or abs(2.0 * F) > abs(dxold * f):
            dxold = dx
            dx = 0.5 * (hi - lo)
            x = lo + dx
        else:
            dxold = dx
            dx = F / f
            x = x - dx
        if abs(dx) < ROOT_TOL:
            return x
        F = ig_cdf(x, gap, sigma) - u
        f = _ig_pdf(x, gap, sigma)
    return x


def ig_quantiles(gaps, sigmas, us, out):
    for i in range(len(gaps)):
        out[i] = ig_quantile(float(gaps[i]), float(sigmas[i]), float(us[i]))


def erlang_unit_quantile(k, u):
    if k == inf:
        return 1.0
    return float(gammaincinv(k, u)) / k


def erlang_unit_quantiles(k, us, out):
    for i in range(len(us)):
        out[i] = erlang_unit_quantile(k, float(us[i]))


def erlang_residual_quantile(mean, k, elapsed, u):
    """u-quantile of (M - elapsed | M > elapsed), M ~ Erlang(k, rate k/mean)."""
    if k == inf:
        y = mean - elapsed
        return y if y > 0.0 else 0.0
    x = elapsed * k / mean
    p0 = float(gammainc(k, x))
    if p0 < 0.5:
        y = float(gammaincinv(k, p0 + u * (1.0 - p0)))
    else:
        q0 = float(gammaincc(k, x))
        if q0 <= 0.0:
            return -log(1.0 - u) * mean / k
        y = float(gammainccinv(k, (1.0 - u) * q0))
    # same rounding as the unconditional quantile, so elapsed = 0 reproduces it exactly
    y = mean * (y / k) - elapsed
    return y if y > 0.0 else 0.0


def _sequence_cost(seq, t0, q, travel, z, a, g, cls, sep, phi, w0, w1,
                   has_prev, prev_cls, prev_L, theta_s, theta_w, gamma_s, gamma_w):
    pc = prev_cls
    rel = t0
    pL = prev_L
    total = 0.0
    hp = has_prev
    first_A = 0.0
    first_slot = 0.0
    for p, j in enumerate(seq):
        R = q[j]
        if R < rel:
            R = rel
        rel = R
        A = R + travel[j]
        if hp:
            M = sep[pc][cls[j]] * z[j]
            if w0 <= R and R <= w1:
                M = M * phi
            L = pL + M
            if p == 0:
                first_slot = L
            if A > L:
                L = A
        else:
            L = A
            if p == 0:
                first_slot = -inf
        if p == 0:
            first_A = A
        ds = L - a[j] - gamma_s
        dw = L - (A - (R - q[j])) - gamma_w
        total += g[j] * (theta_s * (ds * ds if ds > 0.0 else 0.0)
                         + theta_w * (dw * dw if dw > 0.0 else 0.0))
        pL = L
        pc = cls[j]
        hp = True
    return total, first_A, first_slot


def _as_lists(*arrays):
    return [a.tolist() if hasattr(a, "tolist") else list(a) for a in arrays]


def sequence_costs(seqs, t0, q, travel, z, a, g, cls, sep, phi, w0, w1,
                   has_prev, prev_cls, prev_L, queue_nonempty,
                   theta_s, theta_w, gamma_s, gamma_w, J_out, xi_out):
    q, travel, z, a, g, cls, sep = _as_lists(q, travel, z, a, g, cls, sep)
    for s, seq in enumerate(seqs.tolist() if hasattr(seqs, "tolist") else seqs):
        J, fA, fS = _sequence_cost(seq, t0, q, travel, z, a, g, cls, sep, phi, w0, w1,
                                   bool(has_prev), prev_cls, prev_L,
                                   theta_s, theta_w, gamma_s, gamma_w)
        J_out[s] = J
        if not queue_nonempty:
            xi_out[s] = 1.0
        elif fA > fS:
            xi_out[s] = 1.0
        else:
            xi_out[s] = 0.0


def order_cost(seq, t0, q, travel, z, a, g, cls, sep, phi, w0, w1,
               theta_s, theta_w, gamma_s, gamma_w):
    seq, q, travel, z, a, g, cls, sep = _as_lists(seq, q, travel, z, a, g, cls, sep)
    return _sequence_cost(seq, t0, q, travel, z, a, g, cls, sep, phi, w0, w1,
                          False, 0, 0.0, theta_s, theta_w, gamma_s, gamma_w)[0]


def first_hits(grid, dt, offset, start, out):
    """First time t >= start[i] at which the piecewise-constant row i satisfies
    grid[i, k] - offset <= t. Writes +inf when no hit occurs inside the grid."""
    nf, ng = grid.shape
    for i in range(nf):
        out[i] = inf
        row = grid[i].tolist()
        s = float(start[i])
        k0 = int(s / dt)
        if k0 < 0:
            k0 = 0
        for k in range(k0, ng):
            tk = k * dt
            if tk < s:
                tk = s
            v = row[k] - offset
            tn = (k + 1) * dt if k + 1 < ng else inf
            if v < tn:
                out[i] = v if v > tk else tk
                break


def _triangular_from_int(m, x):
    p = 1
    width = m
    while x >= width:
        x -= width
        p += 1
        width -= 1
    return p


def _h_move(base, x):
    l = len(base)
    c, rem = divmod(int(x), 6)
    j = _triangular_from_int(l, c)
    P = rem // 2 + 1
    f = base[j - 1]
    if rem % 2 == 0:
        tgt = max(j - P, 1)
        return base[: tgt - 1] + [f] + base[tgt - 1: j - 1] + base[j:]
    tgt = min(j + P, l)
    return base[: j - 1] + base[j:tgt] + [f] + base[tgt:]


def h_moves(base, xs, out):
    base = [int(v) for v in base]
    for r in range(len(xs)):
        out[r, :] = _h_move(base, xs[r])


def fill_population(base, pop, n_have, S, us):
    base = [int(v) for v in base]
    n_codes = 3 * len(base) * (len(base) + 1)
    seen = {tuple(row) for row in pop[:n_have].tolist()}
    tries = 0
    for u in us.tolist():
        if n_have >= S:
            break
        row = _h_move(base, int(u * n_codes))
        tries += 1
        key = tuple(row)
        if key not in seen:
            seen.add(key)
            pop[n_have, :] = row
            n_have += 1
    return n_have, tries


def keep_best(arr, V, n_keep):
    order = np.argsort(V, kind="stable")
    return arr[np.sort(order[:n_keep])], int(order[0])


def running_update(V, W, U, J, xi, psi):
    a = 1.0 - psi
    V[:] = a * V + psi * J
    W[:] = a * W + psi * (J * J)
    U[:] = a * U + psi * xi


def row_in(row, arr):
    return bool((arr == row).all(axis=1).any())


def row_union(pop, n_flights):
    return np.unique(pop).astype(np.int32)


def predict_unreleased(t, tau, k, idx, status, etas, h, sigma, pool_times, us, expected,
                       q, travel, z):
    for r in range(len(idx)):
        i = int(idx[r])
        st = int(status[i])
        if st == 1:
            q[i] = pool_times[i]
        elif st == 0:
            hi = float(h[i])
            start = hi if hi > t else t
            gap = float(etas[i]) - tau - start
            if gap > 0.0:
                if expected:
                    q[i] = start + gap
                else:
                    q[i] = start + ig_quantile(gap, float(sigma[i]), float(us[3 * r]))
            else:
                q[i] = etas[i] - tau if etas[i] - tau > t else t
        else:
            raise ValueError(f"flight {i} is not unreleased")
        if expected:
            travel[i] = tau
            z[i] = 1.0
        else:
            travel[i] = ig_quantile(tau, float(sigma[i]), float(us[3 * r + 1]))
            z[i] = erlang_unit_quantile(k, float(us[3 * r + 2]))


def predict_queue(t, k, queue, arrived, arrival_times, etas, sigma, cls, sep, phi, bad,
                  has_prev, prev_cls, prev_L, service_head, elapsed, us, expected, z, qa, ql):
    for r in range(len(queue)):
        j = int(queue[r])
        zj = 1.0 if expected else erlang_unit_quantile(k, float(us[3 * r]))
        z[j] = zj
        mean = 0.0
        if has_prev:
            mean = float(sep[prev_cls, cls[j]])
            if bad[j]:
                mean = mean * phi
        if arrived[j]:
            A = float(arrival_times[j])
        elif expected:
            gap = float(etas[j]) - t
            A = t + (gap if gap > 0.0 else 0.0)
        else:
            A = t + ig_quantile(float(etas[j]) - t, float(sigma[j]), float(us[3 * r + 1]))
        qa[j] = A
        if not has_prev:
            L = A
        elif r == 0 and service_head == j:
            if expected:
                rem = mean - elapsed
                L = t + (rem if rem > 0.0 else 0.0)
            else:
                L = t + erlang_residual_quantile(mean, k, elapsed, float(us[3 * r + 2]))
        else:
            L = prev_L + mean * zj
            if A > L:
                L = A
        ql[j] = L
        has_prev = True
        prev_cls = int(cls[j])
        prev_L = L
    return has_prev, prev_cls, prev_L


class PassContext:
    """Per-scenario constants and work buffers for one controller pass."""

    def __init__(self, a, g, sigma, h, cls, sep, phi, tau, k, theta_s, theta_w, gamma_s,
                 gamma_w):
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
        self.phi, self.tau, self.k = float(phi), float(tau), float(k)
        self.costs = (float(theta_s), float(theta_w), float(gamma_s), float(gamma_w))

    def evaluate(self, t, weather_mode, f0, f1, started, nu, queue, arrived, arrival_times,
                 etas, bad, has_prev, prev_cls, prev_L, service_head, elapsed, idx, status,
                 pool_times, us, expected, seqs, J_out, xi_out):
        w0, w1 = inf, -inf
        if weather_mode != 0:
            if weather_mode == 1:
                u0 = _weather_end(t, f0, nu, 0.0 if expected else float(us[0]), expected)
            else:
                u0 = started
            u1 = _weather_end(t, f1, nu, 0.0 if expected else float(us[1]), expected)
            if u0 < u1:
                w0, w1 = u0, u1
        nq = len(queue)
        has_prev, prev_cls, prev_L = predict_queue(
            t, self.k, queue, arrived, arrival_times, etas, self.sigma, self.cls, self.sep,
            self.phi, bad, has_prev, prev_cls, prev_L, service_head, elapsed,
            us[2: 2 + 3 * nq], expected, self.z, self.qa, self.ql)
        predict_unreleased(t, self.tau, self.k, idx, status, etas, self.h, self.sigma,
                           pool_times, us[2 + 3 * nq:], expected, self.q, self.travel, self.z)
        sequence_costs(seqs, t, self.q, self.travel, self.z, self.a, self.g, self.cls,
                       self.sep, self.phi, w0, w1, has_prev, prev_cls, prev_L, nq > 0,
                       *self.costs, J_out, xi_out)


def _weather_end(t, f, nu, u, expected):
    if expected:
        gap = f - t
        return t + (gap if gap > 0.0 else 0.0)
    return t + ig_quantile(f - t, nu, u)
