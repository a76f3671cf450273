"""Hot numeric loops, each with a numba and a vectorized-numpy implementation.

The public functions here dispatch on :func:`gibbsinit._accel.use_numba`. Both
paths consume identical pre-drawn noise, so they agree to floating-point
reordering error.
"""
import numpy as np

from ._accel import njit, use_numba

BOX = 0
BALL = 1

_NUMPY_CHUNK = 256


# --------------------------------------------------------------------------
# Weighted Gaussian kernel sums:  value(x) = sum_j w_j exp(-|x - c_j|^2 / (2 s^2))


@njit(fastmath=False)
def _kernel_sum_nb(X, C, w, inv2s2, want_grad):
    k, d = X.shape
    n = C.shape[0]
    vals = np.zeros(k)
    grads = np.zeros((k, d)) if want_grad else np.zeros((0, d))
    g = np.zeros(d)
    for a in range(k):
        v = 0.0
        for i in range(d):
            g[i] = 0.0
        for j in range(n):
            d2 = 0.0
            for i in range(d):
                t = X[a, i] - C[j, i]
                d2 += t * t
            e = w[j] * np.exp(-d2 * inv2s2)
            v += e
            if want_grad:
                for i in range(d):
                    g[i] += e * (C[j, i] - X[a, i])
        vals[a] = v
        if want_grad:
            for i in range(d):
                grads[a, i] = g[i] * 2.0 * inv2s2
    return vals, grads


def _kernel_sum_np(X, C, w, inv2s2, want_grad):
    k, d = X.shape
    vals = np.empty(k)
    grads = np.empty((k, d)) if want_grad else np.zeros((0, d))
    for lo in range(0, k, _NUMPY_CHUNK):
        xb = X[lo:lo + _NUMPY_CHUNK]
        diff = C[None, :, :] - xb[:, None, :]
        e = w * np.exp(-np.einsum("knd,knd->kn", diff, diff) * inv2s2)
        vals[lo:lo + _NUMPY_CHUNK] = e.sum(axis=1)
        if want_grad:
            grads[lo:lo + _NUMPY_CHUNK] = np.einsum("kn,knd->kd", e, diff) * (2.0 * inv2s2)
    return vals, grads


def kernel_sum(X, centers, weights, sigma, want_grad=True):
    """Values (k,) and gradients (k, d) of a weighted Gaussian kernel sum at rows of X."""
    X = np.ascontiguousarray(X, dtype=float)
    C = np.ascontiguousarray(centers, dtype=float)
    w = np.ascontiguousarray(weights, dtype=float)
    inv2s2 = 1.0 / (2.0 * sigma * sigma)
    if use_numba():
        return _kernel_sum_nb(X, C, w, inv2s2, want_grad)
    return _kernel_sum_np(X, C, w, inv2s2, want_grad)


# --------------------------------------------------------------------------
# Domain projection


@njit
def _project_inplace_nb(x, kind, lo, hi, center, radius):
    d = x.shape[0]
    if kind == BOX:
        for i in range(d):
            if x[i] < lo[i]:
                x[i] = lo[i]
            elif x[i] > hi[i]:
                x[i] = hi[i]
    else:
        r2 = 0.0
        for i in range(d):
            t = x[i] - center[i]
            r2 += t * t
        if r2 > radius * radius:
            s = radius / np.sqrt(r2)
            for i in range(d):
                x[i] = center[i] + (x[i] - center[i]) * s


def _project_np(x, kind, lo, hi, center, radius):
    if kind == BOX:
        return np.minimum(np.maximum(x, lo), hi)
    off = x - center
    nrm = np.sqrt(off @ off)
    if nrm > radius:
        return center + off * (radius / nrm)
    return x


# --------------------------------------------------------------------------
# Fused ULA chain on a kernel-sum potential


@njit
def _ula_kernel_chain_nb(x0, C, w, inv2s2, beta, h, noise, burnin, thinning, L,
                         kind, lo, hi, center, radius):
    d = x0.shape[0]
    n = C.shape[0]
    x = x0.copy()
    out = np.empty((L, d))
    g = np.zeros(d)
    sq = np.sqrt(2.0 * h)
    total = burnin + L * thinning
    rec = 0
    for step in range(total):
        for i in range(d):
            g[i] = 0.0
        for j in range(n):
            d2 = 0.0
            for i in range(d):
                t = x[i] - C[j, i]
                d2 += t * t
            e = w[j] * np.exp(-d2 * inv2s2)
            for i in range(d):
                g[i] += e * (C[j, i] - x[i])
        for i in range(d):
            gi = g[i] * 2.0 * inv2s2
            if not np.isfinite(gi):
                return out, step
            x[i] = x[i] - h * beta * gi + sq * noise[step, i]
        _project_inplace_nb(x, kind, lo, hi, center, radius)
        if step >= burnin and (step - burnin + 1) % thinning == 0:
            out[rec] = x
            rec += 1
    return out, -1


def _ula_kernel_chain_np(x0, C, w, inv2s2, beta, h, noise, burnin, thinning, L,
                         kind, lo, hi, center, radius):
    x = x0.copy()
    out = np.empty((L, x0.shape[0]))
    sq = np.sqrt(2.0 * h)
    rec = 0
    for step in range(burnin + L * thinning):
        diff = C - x
        e = w * np.exp(-np.einsum("nd,nd->n", diff, diff) * inv2s2)
        g = (e @ diff) * (2.0 * inv2s2)
        if not np.all(np.isfinite(g)):
            return out, step
        x = _project_np(x - h * beta * g + sq * noise[step], kind, lo, hi, center, radius)
        if step >= burnin and (step - burnin + 1) % thinning == 0:
            out[rec] = x
            rec += 1
    return out, -1


def ula_kernel_chain(x0, centers, weights, sigma, beta, h, noise, burnin, thinning, L,
                     domain_arrays):
    """Run ULA on ``beta * kernel_sum`` and return (points (L, d), failed_step or -1)."""
    kind, lo, hi, center, radius = domain_arrays
    args = (np.ascontiguousarray(x0, dtype=float), np.ascontiguousarray(centers, dtype=float),
            np.ascontiguousarray(weights, dtype=float), 1.0 / (2.0 * sigma * sigma),
            float(beta), float(h), np.ascontiguousarray(noise), int(burnin), int(thinning),
            int(L), int(kind), lo, hi, center, float(radius))
    if use_numba():
        out, bad = _ula_kernel_chain_nb(*args)
    else:
        out, bad = _ula_kernel_chain_np(*args)
    return out, int(bad)


# --------------------------------------------------------------------------
# GMNL simulated negative log-likelihood
#
# v = X phi (J,), s_nr = exp(z_n . psi) * E_nr with E = exp(frozen shocks).
# Per draw: log l_nr = s v_y - logsumexp_j(s v_j).
# F = -(1/N) sum_n [logsumexp_r(log l_nr) - log R].


@njit
def _gmnl_nb(v, a, E, y, Z, want_grad):
    N, R = E.shape
    J = v.shape[0]
    q = Z.shape[1]
    logl = np.empty(R)
    dlogl_ds = np.empty(R)
    svals = np.empty(R)
    P = np.empty((R, J))
    gv = np.zeros(J)
    gpsi = np.zeros(q)
    loglik = np.empty(N)
    bad = -1
    for n in range(N):
        yn = y[n]
        for r in range(R):
            s = a[n] * E[n, r]
            m = -np.inf
            for j in range(J):
                u = s * v[j]
                if u > m:
                    m = u
            if not np.isfinite(m):
                return 0.0, gv, gpsi, loglik, n * R + r
            den = 0.0
            for j in range(J):
                P[r, j] = np.exp(s * v[j] - m)
                den += P[r, j]
            pv = 0.0
            for j in range(J):
                P[r, j] /= den
                pv += P[r, j] * v[j]
            logl[r] = s * v[yn] - m - np.log(den)
            dlogl_ds[r] = v[yn] - pv
            svals[r] = s
        mx = logl[0]
        for r in range(1, R):
            if logl[r] > mx:
                mx = logl[r]
        tot = 0.0
        for r in range(R):
            tot += np.exp(logl[r] - mx)
        loglik[n] = mx + np.log(tot) - np.log(R)
        if want_grad:
            acc_psi = 0.0
            for r in range(R):
                wr = np.exp(logl[r] - mx) / tot * svals[r]
                acc_psi += wr * dlogl_ds[r]
                for j in range(J):
                    gv[j] -= wr * P[r, j]
                gv[yn] += wr
            for i in range(q):
                gpsi[i] += acc_psi * Z[n, i]
    value = 0.0
    for n in range(N):
        value -= loglik[n]
    return value / N, -gv / N, -gpsi / N, loglik, bad


def _gmnl_np(v, a, E, y, Z, want_grad):
    N, R = E.shape
    S = a[:, None] * E
    U = S[:, :, None] * v
    m = U.max(axis=2)
    if not np.all(np.isfinite(m)):
        flat = int(np.flatnonzero(~np.isfinite(m).ravel())[0])
        return 0.0, np.zeros_like(v), np.zeros(Z.shape[1]), np.empty(N), flat
    ex = np.exp(U - m[:, :, None])
    den = ex.sum(axis=2)
    P = ex / den[:, :, None]
    logl = S * v[y][:, None] - m - np.log(den)
    mx = logl.max(axis=1)
    wts = np.exp(logl - mx[:, None])
    tot = wts.sum(axis=1)
    loglik = mx + np.log(tot) - np.log(R)
    value = -loglik.mean()
    if not want_grad:
        return value, np.zeros_like(v), np.zeros(Z.shape[1]), loglik, -1
    W = wts / tot[:, None] * S
    onehot = np.zeros((N, v.shape[0]))
    onehot[np.arange(N), y] = 1.0
    gv = np.einsum("nr,nrj->j", W, P) - W.sum(axis=1) @ onehot
    dl_ds = v[y][:, None] - P @ v
    gpsi = -((W * dl_ds).sum(axis=1) @ Z)
    return value, gv / N, gpsi / N, loglik, -1


def gmnl_eval(v, a, E, y, Z, want_grad=True):
    """Return (value, dF/dv, dF/dpsi, per-customer log-likelihood, overflow index or -1)."""
    args = (np.ascontiguousarray(v, dtype=float), np.ascontiguousarray(a, dtype=float),
            np.ascontiguousarray(E, dtype=float), np.ascontiguousarray(y, dtype=np.int64),
            np.ascontiguousarray(Z, dtype=float), bool(want_grad))
    if use_numba():
        out = _gmnl_nb(*args)
    else:
        out = _gmnl_np(*args)
    value, gv, gpsi, loglik, bad = out
    return float(value), gv, gpsi, loglik, int(bad)
