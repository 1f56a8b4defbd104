"""Hot numeric kernels in two flavours.

Every kernel ``foo`` has a numba implementation ``foo_nb`` and a vectorized
numpy implementation ``foo_np``; the public name ``foo`` is bound to one of
them according to :mod:`pitof._backend`. Both flavours are importable at all
times so they can be cross-checked and benchmarked against each other.

Notation: ``x`` is a dimensionless product ``sigma * phi0``; ``g(x)`` is the
exponentially scaled exponential integral ``exp(x) * E1(x)``, which stays
finite and well conditioned for every ``x > 0``.
"""
import math

import numpy as np

from ._backend import USE_NUMBA, njit, prange

EULER_GAMMA = 0.57721566490153286061
_CF_EPS = 1e-16
_CF_TINY = 1e-300
_CF_MAXIT = 500
_SERIES_TERMS = 30

# QUADPACK qk15 abscissae / weights.
_XGK = np.array([
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.0,
])
_WGK = np.array([
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327,
])


def _expand_rule():
    nodes = np.concatenate([-_XGK[:7], [0.0], _XGK[6::-1]])
    wk = np.concatenate([_WGK[:7], [_WGK[7]], _WGK[6::-1]])
    wg = np.zeros(15)
    # gauss nodes are xgk[1], xgk[3], xgk[5] and the centre
    for j, k in enumerate((1, 3, 5)):
        wg[k] = _WG[j]
        wg[14 - k] = _WG[j]
    wg[7] = _WG[3]
    return nodes, wk, wg


GK_NODES, GK_WK, GK_WG = _expand_rule()

POLARIZED = 0
UNPOLARIZED = 1
N_MOMENTS = 4  # M = int a, Re Z, Im Z, M1 = int phi * a


# ---------------------------------------------------------------------------
# exponential integral
# ---------------------------------------------------------------------------

@njit(cache=True)
def _e1_series(x):
    # E1(x) = -gamma - ln x - sum_{k>=1} (-x)^k / (k k!)
    term = 1.0
    acc = 0.0
    for k in range(1, _SERIES_TERMS + 1):
        term *= -x / k
        acc += term / k
    return -EULER_GAMMA - math.log(x) - acc


@njit(cache=True)
def _e1_scaled_cf(x):
    # modified Lentz on exp(x) E1(x) = 1/(x+1- 1/(x+3- 4/(x+5- ...)))
    b = x + 1.0
    c = 1.0 / _CF_TINY
    d = 1.0 / b
    h = d
    for i in range(1, _CF_MAXIT):
        an = -float(i * i)
        b += 2.0
        d = 1.0 / (an * d + b)
        c = b + an / c
        delta = c * d
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            break
    return h


@njit(cache=True)
def e1_scaled_scalar(x):
    if x <= 1.0:
        return math.exp(x) * _e1_series(x)
    return _e1_scaled_cf(x)


@njit(cache=True)
def e1_scalar(x):
    if x <= 1.0:
        return _e1_series(x)
    return _e1_scaled_cf(x) * math.exp(-x)


@njit(cache=True)
def _e1_scaled_loop(x, out):
    for i in range(x.size):
        out[i] = e1_scaled_scalar(x[i])


def e1_scaled_nb(x):
    x = np.asarray(x, dtype=np.float64)
    flat = np.ascontiguousarray(x).ravel()
    out = np.empty_like(flat)
    _e1_scaled_loop(flat, out)
    return out.reshape(x.shape)


def e1_scaled_np(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    small = x <= 1.0
    if np.any(small):
        xs = x[small]
        term = np.ones_like(xs)
        acc = np.zeros_like(xs)
        for k in range(1, _SERIES_TERMS + 1):
            term = term * (-xs / k)
            acc += term / k
        out[small] = np.exp(xs) * (-EULER_GAMMA - np.log(xs) - acc)
    big = ~small
    if np.any(big):
        xb = x[big]
        b = xb + 1.0
        c = np.full_like(xb, 1.0 / _CF_TINY)
        d = 1.0 / b
        h = d.copy()
        active = np.ones(xb.shape, dtype=bool)
        for i in range(1, _CF_MAXIT):
            an = -float(i * i)
            b = b + 2.0
            d = 1.0 / (an * d + b)
            c = b + an / c
            delta = c * d
            h = np.where(active, h * delta, h)
            active &= np.abs(delta - 1.0) >= _CF_EPS
            if not active.any():
                break
        out[big] = h
    return out


# ---------------------------------------------------------------------------
# closed-form mean phases
# ---------------------------------------------------------------------------

@njit(cache=True)
def mean_phase_pol_scalar(sigma, phi0):
    x = sigma * phi0
    g = e1_scaled_scalar(x)
    return phi0 * g / (1.0 - x * g)


@njit(cache=True)
def mean_phase_pol_grad_scalar(sigma, phi0):
    """Value and d/dsigma of the polarized mean-phase model."""
    x = sigma * phi0
    g = e1_scaled_scalar(x)
    den = 1.0 / phi0 - sigma * g
    val = g / den
    grad = (g * g - den / sigma) / (den * den)
    return val, grad


@njit(cache=True)
def mean_phase_unpol_scalar(sigma_i, sigma, phi0):
    # everything multiplied by exp(sigma_i * phi0)
    xi = sigma_i * phi0
    x = sigma * phi0
    gi = e1_scaled_scalar(xi)
    g = e1_scaled_scalar(x)
    dx = x - xi
    w = math.exp(-dx)
    num = gi - w * g
    den = -math.expm1(-dx) / phi0 - sigma_i * gi + sigma * w * g
    return num / den


@njit(cache=True)
def _mean_pol_loop(sigma, phi0, out):
    for i in range(sigma.size):
        out[i] = mean_phase_pol_scalar(sigma[i], phi0[i])


@njit(cache=True)
def _mean_unpol_loop(sigma_i, sigma, phi0, out):
    for i in range(sigma.size):
        out[i] = mean_phase_unpol_scalar(sigma_i[i], sigma[i], phi0[i])


def _flat(*arrays):
    b = np.broadcast_arrays(*[np.asarray(a, dtype=np.float64) for a in arrays])
    return b[0].shape, [np.ascontiguousarray(a).ravel() for a in b]


def mean_phase_pol_nb(sigma, phi0):
    shape, (s, p) = _flat(sigma, phi0)
    out = np.empty_like(s)
    _mean_pol_loop(s, p, out)
    return out.reshape(shape)


def mean_phase_unpol_nb(sigma_i, sigma, phi0):
    shape, (si, s, p) = _flat(sigma_i, sigma, phi0)
    out = np.empty_like(s)
    _mean_unpol_loop(si, s, p, out)
    return out.reshape(shape)


def mean_phase_pol_np(sigma, phi0):
    sigma, phi0 = np.broadcast_arrays(np.asarray(sigma, float), np.asarray(phi0, float))
    x = sigma * phi0
    g = e1_scaled_np(x)
    return phi0 * g / (1.0 - x * g)


def mean_phase_pol_grad_np(sigma, phi0):
    sigma, phi0 = np.broadcast_arrays(np.asarray(sigma, float), np.asarray(phi0, float))
    g = e1_scaled_np(sigma * phi0)
    den = 1.0 / phi0 - sigma * g
    return g / den, (g * g - den / sigma) / (den * den)


def mean_phase_unpol_np(sigma_i, sigma, phi0):
    sigma_i, sigma, phi0 = np.broadcast_arrays(
        np.asarray(sigma_i, float), np.asarray(sigma, float), np.asarray(phi0, float))
    xi = sigma_i * phi0
    x = sigma * phi0
    gi = e1_scaled_np(xi)
    g = e1_scaled_np(x)
    dx = x - xi
    w = np.exp(-dx)
    num = gi - w * g
    den = -np.expm1(-dx) / phi0 - sigma_i * gi + sigma * w * g
    return num / den


# ---------------------------------------------------------------------------
# decay-rate fits: f(sigma) = target per pixel
# ---------------------------------------------------------------------------

_B1 = 0.9
_B2 = 0.999
_ADAM_EPS = 1e-12


@njit(cache=True, parallel=True)
def _adam_loop(target, theta0, phi0, lr, max_iters, tol, log_lo, log_hi,
               sigma_out, resid_out, iters_out, ok_out):
    for p in prange(target.size):
        th = theta0[p]
        m = 0.0
        v = 0.0
        b1t = 1.0
        b2t = 1.0
        r = np.inf
        it = 0
        for it in range(max_iters):
            s = math.exp(th)
            val, grad = mean_phase_pol_grad_scalar(s, phi0)
            r = val - target[p]
            if r * r < tol:
                break
            gth = 2.0 * r * grad * s
            m = _B1 * m + (1.0 - _B1) * gth
            v = _B2 * v + (1.0 - _B2) * gth * gth
            b1t *= _B1
            b2t *= _B2
            th -= lr * (m / (1.0 - b1t)) / (math.sqrt(v / (1.0 - b2t)) + _ADAM_EPS)
            if th < log_lo:
                th = log_lo
            elif th > log_hi:
                th = log_hi
        s = math.exp(th)
        r = mean_phase_pol_scalar(s, phi0) - target[p]
        sigma_out[p] = s
        resid_out[p] = r * r
        iters_out[p] = it + 1
        ok_out[p] = r * r < tol


def fit_adam_nb(target, theta0, phi0, lr, max_iters, tol, lo, hi):
    target = np.ascontiguousarray(target, dtype=np.float64)
    theta0 = np.ascontiguousarray(theta0, dtype=np.float64)
    n = target.size
    sigma = np.empty(n)
    resid = np.empty(n)
    iters = np.empty(n, dtype=np.int64)
    ok = np.empty(n, dtype=np.bool_)
    _adam_loop(target, theta0, float(phi0), float(lr), int(max_iters), float(tol),
               math.log(lo), math.log(hi), sigma, resid, iters, ok)
    return sigma, resid, iters, ok


def fit_adam_np(target, theta0, phi0, lr, max_iters, tol, lo, hi):
    target = np.asarray(target, dtype=np.float64).ravel()
    th = np.asarray(theta0, dtype=np.float64).ravel().copy()
    n = target.size
    log_lo, log_hi = math.log(lo), math.log(hi)
    m = np.zeros(n)
    v = np.zeros(n)
    iters = np.zeros(n, dtype=np.int64)
    active = np.ones(n, dtype=bool)
    b1t = b2t = 1.0
    for it in range(max_iters):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        s = np.exp(th[idx])
        val, grad = mean_phase_pol_grad_np(s, phi0)
        r = val - target[idx]
        iters[idx] = it + 1
        done = r * r < tol
        active[idx[done]] = False
        keep = ~done
        idx, r, grad, s = idx[keep], r[keep], grad[keep], s[keep]
        gth = 2.0 * r * grad * s
        m[idx] = _B1 * m[idx] + (1.0 - _B1) * gth
        v[idx] = _B2 * v[idx] + (1.0 - _B2) * gth * gth
        b1t *= _B1
        b2t *= _B2
        step = lr * (m[idx] / (1.0 - b1t)) / (np.sqrt(v[idx] / (1.0 - b2t)) + _ADAM_EPS)
        th[idx] = np.clip(th[idx] - step, log_lo, log_hi)
    sigma = np.exp(th)
    r = mean_phase_pol_np(sigma, phi0) - target
    resid = r * r
    return sigma, resid, iters, resid < tol


@njit(cache=True, parallel=True)
def _bisect_pol_loop(target, phi0, log_lo, log_hi, log_tol, sigma_out, ok_out):
    f_lo = mean_phase_pol_scalar(math.exp(log_lo), phi0)  # largest value
    f_hi = mean_phase_pol_scalar(math.exp(log_hi), phi0)
    for p in prange(target.size):
        t = target[p]
        if not (f_hi < t < f_lo):
            sigma_out[p] = np.nan
            ok_out[p] = False
            continue
        a = log_lo
        b = log_hi
        while b - a > log_tol:
            mid = 0.5 * (a + b)
            if mean_phase_pol_scalar(math.exp(mid), phi0) > t:
                a = mid
            else:
                b = mid
        s = math.exp(0.5 * (a + b))
        s_lo = math.exp(a)
        s_hi = math.exp(b)
        for _ in range(6):
            val, grad = mean_phase_pol_grad_scalar(s, phi0)
            if grad == 0.0:
                break
            s_new = s - (val - t) / grad
            if not (s_lo <= s_new <= s_hi):
                break
            if abs(s_new - s) <= 1e-15 * s:
                s = s_new
                break
            s = s_new
        sigma_out[p] = s
        ok_out[p] = True


def invert_pol_bisect_nb(target, phi0, lo, hi, rtol=1e-6):
    target = np.ascontiguousarray(target, dtype=np.float64).ravel()
    sigma = np.empty(target.size)
    ok = np.empty(target.size, dtype=np.bool_)
    _bisect_pol_loop(target, float(phi0), math.log(lo), math.log(hi),
                     math.log1p(rtol), sigma, ok)
    return sigma, ok


def invert_pol_bisect_np(target, phi0, lo, hi, rtol=1e-6):
    target = np.asarray(target, dtype=np.float64).ravel()
    log_lo, log_hi = math.log(lo), math.log(hi)
    f_lo = mean_phase_pol_np(lo, phi0)
    f_hi = mean_phase_pol_np(hi, phi0)
    ok = (target > f_hi) & (target < f_lo)
    a = np.full(target.size, log_lo)
    b = np.full(target.size, log_hi)
    log_tol = math.log1p(rtol)
    while np.any(b - a > log_tol):
        mid = 0.5 * (a + b)
        above = mean_phase_pol_np(np.exp(mid), phi0) > target
        a = np.where(above, mid, a)
        b = np.where(above, b, mid)
    s = np.exp(0.5 * (a + b))
    s_lo, s_hi = np.exp(a), np.exp(b)
    live = ok.copy()
    for _ in range(6):
        val, grad = mean_phase_pol_grad_np(s, phi0)
        with np.errstate(divide="ignore", invalid="ignore"):
            s_new = s - (val - target) / grad
        step_ok = live & (grad != 0) & (s_new >= s_lo) & (s_new <= s_hi)
        converged = step_ok & (np.abs(s_new - s) <= 1e-15 * s)
        s = np.where(step_ok, s_new, s)
        live = step_ok & ~converged
        if not live.any():
            break
    return np.where(ok, s, np.nan), ok


@njit(cache=True, parallel=True)
def _bisect_alpha_loop(target, sigma, phi0, eps, xtol, alpha_out, ok_out):
    # mean_phase_unpol decreases in alpha = sigma_i / sigma
    for p in prange(target.size):
        s = sigma[p]
        t = target[p]
        if not (s > 0.0) or not (t == t):
            alpha_out[p] = np.nan
            ok_out[p] = False
            continue
        a = eps
        b = 1.0 - eps
        fa = mean_phase_unpol_scalar(a * s, s, phi0)
        fb = mean_phase_unpol_scalar(b * s, s, phi0)
        if not (fb < t < fa):
            alpha_out[p] = np.nan
            ok_out[p] = False
            continue
        while b - a > xtol:
            mid = 0.5 * (a + b)
            if mean_phase_unpol_scalar(mid * s, s, phi0) > t:
                a = mid
            else:
                b = mid
        alpha_out[p] = 0.5 * (a + b)
        ok_out[p] = True


def invert_alpha_bisect_nb(target, sigma, phi0, eps=1e-6, xtol=1e-12):
    shape, (t, s) = _flat(target, sigma)
    alpha = np.empty(t.size)
    ok = np.empty(t.size, dtype=np.bool_)
    _bisect_alpha_loop(t, s, float(phi0), eps, xtol, alpha, ok)
    return alpha.reshape(shape), ok.reshape(shape)


def invert_alpha_bisect_np(target, sigma, phi0, eps=1e-6, xtol=1e-12):
    shape, (t, s) = _flat(target, sigma)
    good = (s > 0) & np.isfinite(t)
    s_safe = np.where(good, s, 1.0)
    a = np.full(t.size, eps)
    b = np.full(t.size, 1.0 - eps)
    fa = mean_phase_unpol_np(a * s_safe, s_safe, phi0)
    fb = mean_phase_unpol_np(b * s_safe, s_safe, phi0)
    ok = good & (fb < t) & (t < fa)
    while np.any(b - a > xtol):
        mid = 0.5 * (a + b)
        above = mean_phase_unpol_np(mid * s_safe, s_safe, phi0) > t
        a = np.where(above, mid, a)
        b = np.where(above, b, mid)
    alpha = np.where(ok, 0.5 * (a + b), np.nan)
    return alpha.reshape(shape), ok.reshape(shape)


# ---------------------------------------------------------------------------
# moment quadrature of the backscatter densities
# ---------------------------------------------------------------------------

@njit(cache=True)
def _density(kind, phi, sigma_i, sigma_p):
    inv2 = 1.0 / (phi * phi)
    if kind == POLARIZED:
        return inv2 * math.exp(-(sigma_i + sigma_p) * phi)
    return inv2 * math.exp(-sigma_i * phi) * (-math.expm1(-sigma_p * phi))


@njit(cache=True)
def _gk_interval(kind, a, b, sigma_i, sigma_p, nodes, wk, wg, val, err):
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    for c in range(N_MOMENTS):
        val[c] = 0.0
        err[c] = 0.0
    for j in range(15):
        phi = mid + half * nodes[j]
        d = _density(kind, phi, sigma_i, sigma_p)
        f0 = d
        f1 = d * math.cos(phi)
        f2 = d * math.sin(phi)
        f3 = d * phi
        val[0] += wk[j] * f0
        val[1] += wk[j] * f1
        val[2] += wk[j] * f2
        val[3] += wk[j] * f3
        err[0] += wg[j] * f0
        err[1] += wg[j] * f1
        err[2] += wg[j] * f2
        err[3] += wg[j] * f3
    for c in range(N_MOMENTS):
        val[c] *= half
        err[c] = abs(val[c] - err[c] * half)


@njit(cache=True)
def _initial_breaks(phi0, upper, buf):
    # geometric near phi0 (1/phi^2 varies on that scale), then pi/2 steps
    n = 0
    buf[n] = phi0
    p = phi0
    while p < upper and n < buf.size - 1:
        step = min(p, 0.5 * math.pi)
        q = min(p + step, upper)
        n += 1
        buf[n] = q
        p = q
    return n + 1


@njit(cache=True)
def _quad_one(kind, sigma_i, sigma_p, phi0, upper, rel_tol, abs_tol, max_sub,
              nodes, wk, wg, out):
    """Adaptive GK15 over [phi0, upper]; returns (converged, n_intervals)."""
    for c in range(N_MOMENTS):
        out[c] = 0.0
    if not (upper > phi0):
        return True, 0
    lo = np.empty(max_sub)
    hi = np.empty(max_sub)
    val = np.empty((max_sub, N_MOMENTS))
    err = np.empty((max_sub, N_MOMENTS))
    breaks = np.empty(max_sub + 1)
    nb = _initial_breaks(phi0, upper, breaks)
    n = nb - 1
    for i in range(n):
        lo[i] = breaks[i]
        hi[i] = breaks[i + 1]
        _gk_interval(kind, lo[i], hi[i], sigma_i, sigma_p, nodes, wk, wg, val[i], err[i])
    total_len = upper - phi0
    tol = np.empty(N_MOMENTS)
    converged = False
    while True:
        tot = np.zeros(N_MOMENTS)
        for i in range(n):
            for c in range(N_MOMENTS):
                tot[c] += val[i, c]
        zabs = math.hypot(tot[1], tot[2])
        tol[0] = max(abs_tol, rel_tol * abs(tot[0]))
        tol[1] = max(abs_tol, rel_tol * zabs)
        tol[2] = tol[1]
        tol[3] = max(abs_tol, rel_tol * abs(tot[3]))
        n_old = n
        any_bad = False
        for i in range(n_old):
            frac = (hi[i] - lo[i]) / total_len
            bad = False
            for c in range(N_MOMENTS):
                if err[i, c] > tol[c] * frac:
                    bad = True
            if not bad:
                continue
            any_bad = True
            if n >= max_sub:
                break
            m = 0.5 * (lo[i] + hi[i])
            lo[n] = m
            hi[n] = hi[i]
            hi[i] = m
            _gk_interval(kind, lo[i], hi[i], sigma_i, sigma_p, nodes, wk, wg, val[i], err[i])
            _gk_interval(kind, lo[n], hi[n], sigma_i, sigma_p, nodes, wk, wg, val[n], err[n])
            n += 1
        if not any_bad:
            converged = True
            break
        if n >= max_sub:
            break
    for c in range(N_MOMENTS):
        out[c] = 0.0
    for i in range(n):
        for c in range(N_MOMENTS):
            out[c] += val[i, c]
    return converged, n


@njit(cache=True)
def _quad_loop(kind, sigma_i, sigma_p, phi0, upper, rel_tol, abs_tol, max_sub,
               nodes, wk, wg, out, ok, nsub):
    for p in range(sigma_i.size):
        conv, n = _quad_one(kind[p], sigma_i[p], sigma_p[p], phi0[p], upper[p],
                            rel_tol, abs_tol, max_sub, nodes, wk, wg, out[p])
        ok[p] = conv
        nsub[p] = n


def quad_moments_nb(kind, sigma_i, sigma_p, phi0, upper, rel_tol, abs_tol, max_sub):
    """Moments (M, Re Z, Im Z, M1) for a batch of density parameter sets."""
    shape, (k, si, sp, p0, up) = _flat(kind, sigma_i, sigma_p, phi0, upper)
    n = si.size
    out = np.empty((n, N_MOMENTS))
    ok = np.empty(n, dtype=np.bool_)
    nsub = np.empty(n, dtype=np.int64)
    _quad_loop(k.astype(np.int64), si, sp, p0, up, float(rel_tol), float(abs_tol),
               int(max_sub), GK_NODES, GK_WK, GK_WG, out, ok, nsub)
    return out.reshape(shape + (N_MOMENTS,)), ok.reshape(shape), nsub.reshape(shape)


def _density_np(kind, phi, sigma_i, sigma_p):
    inv2 = 1.0 / (phi * phi)
    if kind == POLARIZED:
        return inv2 * np.exp(-(sigma_i + sigma_p) * phi)
    return inv2 * np.exp(-sigma_i * phi) * (-np.expm1(-sigma_p * phi))


def _gk_np(kind, lo, hi, sigma_i, sigma_p):
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    phi = mid[:, None] + half[:, None] * GK_NODES[None, :]
    d = _density_np(kind, phi, sigma_i, sigma_p)
    f = np.stack([d, d * np.cos(phi), d * np.sin(phi), d * phi], axis=-1)  # (n, 15, 4)
    k = np.einsum("j,njc->nc", GK_WK, f) * half[:, None]
    g = np.einsum("j,njc->nc", GK_WG, f) * half[:, None]
    return k, np.abs(k - g)


def _quad_one_np(kind, sigma_i, sigma_p, phi0, upper, rel_tol, abs_tol, max_sub):
    if not upper > phi0:
        return np.zeros(N_MOMENTS), True, 0
    breaks = [phi0]
    p = phi0
    while p < upper and len(breaks) < max_sub + 1:
        p = min(p + min(p, 0.5 * math.pi), upper)
        breaks.append(p)
    breaks = np.asarray(breaks)
    lo, hi = breaks[:-1].copy(), breaks[1:].copy()
    val, err = _gk_np(kind, lo, hi, sigma_i, sigma_p)
    total_len = upper - phi0
    converged = False
    while True:
        tot = val.sum(axis=0)
        zabs = math.hypot(tot[1], tot[2])
        tol = np.array([max(abs_tol, rel_tol * abs(tot[0])), max(abs_tol, rel_tol * zabs),
                        max(abs_tol, rel_tol * zabs), max(abs_tol, rel_tol * abs(tot[3]))])
        frac = (hi - lo) / total_len
        bad = np.any(err > tol[None, :] * frac[:, None], axis=1)
        if not bad.any():
            converged = True
            break
        room = max_sub - lo.size
        if room <= 0:
            break
        idx = np.flatnonzero(bad)[:room]
        mid = 0.5 * (lo[idx] + hi[idx])
        new_lo = np.concatenate([lo[idx], mid])
        new_hi = np.concatenate([mid, hi[idx]])
        nv, ne = _gk_np(kind, new_lo, new_hi, sigma_i, sigma_p)
        keep = np.ones(lo.size, dtype=bool)
        keep[idx] = False
        lo = np.concatenate([lo[keep], new_lo])
        hi = np.concatenate([hi[keep], new_hi])
        val = np.concatenate([val[keep], nv])
        err = np.concatenate([err[keep], ne])
    return val.sum(axis=0), converged, lo.size


def quad_moments_np(kind, sigma_i, sigma_p, phi0, upper, rel_tol, abs_tol, max_sub):
    shape, (k, si, sp, p0, up) = _flat(kind, sigma_i, sigma_p, phi0, upper)
    n = si.size
    out = np.empty((n, N_MOMENTS))
    ok = np.empty(n, dtype=bool)
    nsub = np.empty(n, dtype=np.int64)
    for p in range(n):
        out[p], ok[p], nsub[p] = _quad_one_np(int(k[p]), si[p], sp[p], p0[p], up[p],
                                              rel_tol, abs_tol, max_sub)
    return out.reshape(shape + (N_MOMENTS,)), ok.reshape(shape), nsub.reshape(shape)


if USE_NUMBA:
    e1_scaled = e1_scaled_nb
    mean_phase_pol = mean_phase_pol_nb
    mean_phase_unpol = mean_phase_unpol_nb
    fit_adam = fit_adam_nb
    invert_pol_bisect = invert_pol_bisect_nb
    invert_alpha_bisect = invert_alpha_bisect_nb
    quad_moments = quad_moments_nb
else:
    e1_scaled = e1_scaled_np
    mean_phase_pol = mean_phase_pol_np
    mean_phase_unpol = mean_phase_unpol_np
    fit_adam = fit_adam_np
    invert_pol_bisect = invert_pol_bisect_np
    invert_alpha_bisect = invert_alpha_bisect_np
    quad_moments = quad_moments_np

mean_phase_pol_grad = mean_phase_pol_grad_np
