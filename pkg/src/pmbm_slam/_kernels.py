"""Compiled scalar kernels for the bistatic measurement model and the per-cell
Gaussian filter.

Everything in here works on plain float64 arrays so the same code serves the
Python-facing model functions and the data-association hot loop.

Sensor state layout: ``[x, y, z, heading, clock_bias]``.
Measurement layout: ``[range, aod_az, aod_el, aoa_az, aoa_el]``.
"""

import math

import numba as nb
import numpy as np

TWO_PI = 2.0 * math.pi
LOG_2PI = math.log(TWO_PI)


@nb.njit(cache=True)
def wrap(a):
    """Wrap an angle to (-pi, pi]."""
    if -math.pi < a <= math.pi:
        return a
    w = (a + math.pi) % TWO_PI - math.pi
    if w <= -math.pi:
        w += TWO_PI
    return w


@nb.njit(cache=True)
def wrap_innovation(v):
    # components 1..4 are angles
    for i in range(1, 5):
        v[i] = wrap(v[i])
    return v


@nb.njit(cache=True)
def motion_mean(s, speed, turn_rate):
    out = s.copy()
    h = wrap(s[3] + turn_rate)
    out[0] = s[0] + speed * math.cos(h)
    out[1] = s[1] + speed * math.sin(h)
    out[3] = h
    return out


@nb.njit(cache=True)
def motion_jacobian(s, speed, turn_rate):
    F = np.eye(5)
    h = s[3] + turn_rate
    F[0, 3] = -speed * math.sin(h)
    F[1, 3] = speed * math.cos(h)
    return F


@nb.njit(cache=True)
def measure(x, s, bs):
    """Noise-free measurement; NaNs flag coincident geometry."""
    out = np.empty(5)
    d1x, d1y, d1z = x[0] - bs[0], x[1] - bs[1], x[2] - bs[2]
    d2x, d2y, d2z = x[0] - s[0], x[1] - s[1], x[2] - s[2]
    rho1 = math.hypot(d1x, d1y)
    rho2 = math.hypot(d2x, d2y)
    r1 = math.sqrt(rho1 * rho1 + d1z * d1z)
    r2 = math.sqrt(rho2 * rho2 + d2z * d2z)
    if r1 == 0.0 or r2 == 0.0 or rho1 == 0.0 or rho2 == 0.0:
        out[:] = np.nan
        return out
    out[0] = r1 + r2 + s[4]
    out[1] = math.atan2(d1y, d1x)
    out[2] = math.atan2(d1z, rho1)
    out[3] = wrap(math.atan2(d2y, d2x) - s[3])
    out[4] = math.atan2(d2z, rho2)
    return out


@nb.njit(cache=True)
def _direction_rows(dx, dy, dz, rows, sign):
    # rows 0: range, 1: azimuth, 2: elevation partials w.r.t. the difference vector
    rho2 = dx * dx + dy * dy
    rho = math.sqrt(rho2)
    r2 = rho2 + dz * dz
    r = math.sqrt(r2)
    rows[0, 0] = sign * dx / r
    rows[0, 1] = sign * dy / r
    rows[0, 2] = sign * dz / r
    rows[1, 0] = -sign * dy / rho2
    rows[1, 1] = sign * dx / rho2
    rows[1, 2] = 0.0
    rows[2, 0] = -sign * dz * dx / (rho * r2)
    rows[2, 1] = -sign * dz * dy / (rho * r2)
    rows[2, 2] = sign * rho / r2


@nb.njit(cache=True)
def landmark_jacobian(x, s, bs):
    H = np.zeros((5, 3))
    a = np.empty((3, 3))
    b = np.empty((3, 3))
    _direction_rows(x[0] - bs[0], x[1] - bs[1], x[2] - bs[2], a, 1.0)
    _direction_rows(x[0] - s[0], x[1] - s[1], x[2] - s[2], b, 1.0)
    for j in range(3):
        H[0, j] = a[0, j] + b[0, j]
        H[1, j] = a[1, j]
        H[2, j] = a[2, j]
        H[3, j] = b[1, j]
        H[4, j] = b[2, j]
    return H


@nb.njit(cache=True)
def sensor_jacobian(x, s, bs):
    H = np.zeros((5, 5))
    b = np.empty((3, 3))
    _direction_rows(x[0] - s[0], x[1] - s[1], x[2] - s[2], b, -1.0)
    for j in range(3):
        H[0, j] = b[0, j]
        H[3, j] = b[1, j]
        H[4, j] = b[2, j]
    H[3, 3] = -1.0
    H[0, 4] = 1.0
    return H


@nb.njit(cache=True)
def back_project(z, s, bs):
    """Landmark position explaining range and AOA of ``z``.

    Returns ``(x, d, feasible)`` with ``d`` the UE-to-landmark distance. When
    the bistatic range is too short the distance is clamped to a small
    positive value and ``feasible`` is False.
    """
    az = z[3] + s[3]
    el = z[4]
    ce = math.cos(el)
    u = np.array([ce * math.cos(az), ce * math.sin(az), math.sin(el)])
    ax, ay, az_ = bs[0] - s[0], bs[1] - s[1], bs[2] - s[2]
    na2 = ax * ax + ay * ay + az_ * az_
    rho = z[0] - s[4]
    adot = ax * u[0] + ay * u[1] + az_ * u[2]
    feasible = rho > math.sqrt(na2)
    if feasible:
        d = (rho * rho - na2) / (2.0 * (rho - adot))
    else:
        d = 1e-3
    x = np.empty(3)
    for i in range(3):
        x[i] = s[i] + d * u[i]
    return x, d, feasible


@nb.njit(cache=True)
def _gauss_logpdf(x, mean, cov):
    L = np.linalg.cholesky(cov)
    d = x - mean
    y = np.linalg.solve(L, d)
    logdet = 0.0
    for i in range(L.shape[0]):
        logdet += math.log(L[i, i])
    return -0.5 * (y @ y) - logdet - 0.5 * L.shape[0] * LOG_2PI


@nb.njit(cache=True)
def cell_filter(Z, ks, traj, traj_cov, bs, R, C0, log_pd, log_miss, fov, log_rate, env_lo, env_hi):
    """Linearised Gaussian filter over one cell.

    Z holds the cell's measurements sorted by time step ``ks`` (1-based rows of
    ``traj``). Returns ``(detect_term, mean, cov, feasible)`` where
    ``detect_term`` approximates ``log <prod_k l_k ; lambda>`` for a uniform
    intensity: the filter starts from a broad prior at the back-projection of
    the earliest measurement and the prior density at the final mean is
    divided out again, which turns the broad prior into a flat one.

    Steps strictly between the cell's first and last measurement that carry
    no measurement of the cell add ``log_miss`` when the running mean is
    inside the field of view of that step's sensor position.

    ``traj_cov`` is either empty or ``(K+1, 5, 5)``; when given, each
    step's sensor covariance is mapped into the innovation covariance.
    """
    n = Z.shape[0]
    u0, _, feasible = back_project(Z[0], traj[ks[0]], bs)
    if not feasible:
        return -np.inf, u0, C0.copy(), False
    use_cov = traj_cov.shape[0] > 0
    u = u0.copy()
    P = C0.copy()
    I3 = np.eye(3)
    ll = 0.0
    j = 0
    for k in range(ks[0], ks[n - 1] + 1):
        s = traj[k]
        if ks[j] != k:
            dx = u[0] - s[0]
            dy = u[1] - s[1]
            dz = u[2] - s[2]
            if dx * dx + dy * dy + dz * dz <= fov * fov:
                ll += log_miss
            continue
        zh = measure(u, s, bs)
        if np.isnan(zh[0]):
            return -np.inf, u, P, False
        H = landmark_jacobian(u, s, bs)
        nu = wrap_innovation(Z[j] - zh)
        PHt = P @ H.T
        S = H @ PHt + R
        if use_cov:
            Hs = sensor_jacobian(u, s, bs)
            S = S + Hs @ traj_cov[k] @ Hs.T
        S = 0.5 * (S + S.T)
        L = np.linalg.cholesky(S)
        y = np.linalg.solve(L, nu)
        logdet = 0.0
        for i in range(5):
            logdet += math.log(L[i, i])
        ll += log_pd - 0.5 * (y @ y) - logdet - 2.5 * LOG_2PI
        G = np.linalg.solve(S, PHt.T).T
        u = u + G @ nu
        A = I3 - G @ H
        P = A @ P @ A.T + G @ (S - H @ PHt) @ G.T
        P = 0.5 * (P + P.T)
        j += 1
    for i in range(3):
        if u[i] < env_lo[i] or u[i] > env_hi[i]:
            return -np.inf, u, P, True
    ll += log_rate - _gauss_logpdf(u, u0, C0)
    return ll, u, P, True


@nb.njit(cache=True)
def measurement_factors(Z, ks, lm, traj, lms, bs):
    """Residuals ``h(x, s_k) - z`` (angles wrapped) with their sensor and
    landmark Jacobians for a batch of measurements. ``ok`` is False where the
    geometry is degenerate."""
    M = Z.shape[0]
    e = np.zeros((M, 5))
    Hs = np.zeros((M, 5, 5))
    Hl = np.zeros((M, 5, 3))
    ok = True
    for i in range(M):
        s = traj[ks[i]]
        x = lms[lm[i]]
        zh = measure(x, s, bs)
        if np.isnan(zh[0]):
            ok = False
            continue
        r = zh - Z[i]
        e[i] = wrap_innovation(r)
        Hs[i] = sensor_jacobian(x, s, bs)
        Hl[i] = landmark_jacobian(x, s, bs)
    return e, Hs, Hl, ok


@nb.njit(cache=True)
def motion_factors(traj, speed, turn_rate):
    """Residuals ``s_k - v(s_{k-1})`` (heading wrapped) and motion Jacobians
    ``F_k`` for k = 1..K."""
    K = traj.shape[0] - 1
    e = np.zeros((K, 5))
    F = np.zeros((K, 5, 5))
    for k in range(1, K + 1):
        pred = motion_mean(traj[k - 1], speed, turn_rate)
        r = traj[k] - pred
        r[3] = wrap(r[3])
        e[k - 1] = r
        F[k - 1] = motion_jacobian(traj[k - 1], speed, turn_rate)
    return e, F
