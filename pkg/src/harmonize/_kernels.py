"""Hot fitting loops: regularized EM fixed-point and mirror ascent.

Each loop is written once as a plain numpy function and compiled a second
time with numba ``@njit``; :func:`harmonize._backend.active_backend`
decides which build runs. Both builds share the same source, so the
fallback path cannot drift from the compiled one.

Kernels never raise: they report trouble through an integer status so the
numba build stays object-mode free. Callers translate statuses to typed
exceptions.

Conventions baked into both loops:

* ``A`` is the (support, R) slice of a discretized model restricted to
  score rows with positive empirical mass, ``At`` its contiguous transpose.
* The objective is sum_y phat_y*log((A theta)_y) + (mu/R)*sum_r log(R*theta_r).
* One EM step is theta' = theta*(At(phat/m))/(1+mu) + mu/((1+mu)R) with
  m = A theta; the additive constant is written exactly as
  ``mu / ((1.0 + mu) * R)`` so the post-step floor holds bit-exactly.
* ``floor`` > 0 clamps marginals at that value inside logs and ratios
  (used by the feasibility fits at mu=0); floor == 0 means a vanishing
  marginal on the support is a degenerate model. While a clamp is active
  the EM ratios sum below 1, so the floor path renormalizes theta every
  step; off the clamp that division is by 1 and changes nothing.
* EM stops when the per-step objective gain drops below ``tol``; its
  movement shrinks with the gain, so a tiny gain means a near fixed point.
  For tolerances below absolute rounding resolution the gain is computed
  as a relative difference (log1p of the marginal and coordinate ratios),
  otherwise a single rounding-induced zero would stop the loop while the
  iterate is still crawling along a flat ridge of the objective.
* Mirror ascent can take long uphill steps even when gains fall below
  floating-point resolution, so it stops only when the gain is small AND
  the weighted stationarity residual
  max_r theta_r*|grad_r - sum(theta*grad)| is below _KKT_RTOL relative to
  the gradient scale, or when the accepted step no longer changes theta
  bitwise.
"""

from __future__ import annotations

import numpy as np

from ._backend import HAS_NUMBA, njit

STATUS_OK = 0
STATUS_MAXITER = 1
STATUS_DEGENERATE = 2

# Step-size bounds for the mirror-ascent backtracking line search.
_ETA_MIN = 1e-18
_ETA_MAX = 1e6

# Stationarity tolerance for the mirror stop, relative to the gradient scale.
_KKT_RTOL = 1e-12


def _em_fit(A, At, phat, mu, theta0, max_iters, tol, floor):
    R = A.shape[1]
    shrink = 1.0 / (1.0 + mu)
    c = mu / ((1.0 + mu) * R)
    reg = mu / R
    # below the absolute rounding floor of the objective, per-step gains
    # must be computed as relative differences or they round to zero while
    # the iterate is still crawling along a flat ridge
    precise = tol < 1e-12 and floor == 0.0

    theta = theta0.copy()
    if mu > 0.0 and np.any(theta <= 0.0):
        return theta, -np.inf, 0, False, np.nan, STATUS_DEGENERATE
    m = np.dot(A, theta)
    if floor > 0.0:
        m = np.maximum(m, floor)
    if np.any(m <= 0.0):
        return theta, -np.inf, 0, False, np.nan, STATUS_DEGENERATE
    obj = np.dot(phat, np.log(m))
    if mu > 0.0:
        obj += reg * np.sum(np.log(R * theta))

    gain = np.inf
    it = 0
    for it in range(1, max_iters + 1):
        ratio = phat / m
        new_theta = shrink * (theta * np.dot(At, ratio)) + c
        if floor > 0.0:
            # active clamps break the update's exact mass preservation
            # (ratios against clamped marginals sum below 1), so project
            # back onto the simplex; a no-op while no clamp is active
            s = np.sum(new_theta)
            if not s > 0.0:
                return new_theta, obj, it, False, np.nan, STATUS_DEGENERATE
            new_theta = new_theta / s
        new_m = np.dot(A, new_theta)
        if floor > 0.0:
            new_m = np.maximum(new_m, floor)
        if np.any(new_m <= 0.0):
            return new_theta, obj, it, False, np.nan, STATUS_DEGENERATE
        if precise:
            dm = np.dot(A, new_theta - theta)
            gain = np.dot(phat, np.log1p(dm / m))
            if mu > 0.0:
                gain += reg * np.sum(np.log1p((new_theta - theta) / theta))
            obj = obj + gain
        else:
            new_obj = np.dot(phat, np.log(new_m))
            if mu > 0.0:
                new_obj += reg * np.sum(np.log(R * new_theta))
            gain = new_obj - obj
            obj = new_obj
        theta = new_theta
        m = new_m
        if abs(gain) < tol:
            out = np.dot(phat, np.log(m))
            if mu > 0.0:
                out += reg * np.sum(np.log(R * theta))
            return theta, out, it, True, gain, STATUS_OK
    out = np.dot(phat, np.log(m))
    if mu > 0.0:
        out += reg * np.sum(np.log(R * theta))
    return theta, out, it, False, gain, STATUS_MAXITER


def _mirror_fit(A, At, phat, mu, theta0, max_iters, tol, floor):
    R = A.shape[1]
    reg = mu / R

    theta = theta0.copy()
    if np.any(theta <= 0.0):
        # exp-family parameterization needs a strictly interior start
        return theta, -np.inf, 0, False, np.nan, STATUS_DEGENERATE
    m = np.dot(A, theta)
    if floor > 0.0:
        m = np.maximum(m, floor)
    if np.any(m <= 0.0):
        return theta, -np.inf, 0, False, np.nan, STATUS_DEGENERATE
    obj = np.dot(phat, np.log(m))
    if mu > 0.0:
        obj += reg * np.sum(np.log(R * theta))

    log_theta = np.log(theta)
    eta = 1.0
    gain = np.inf
    it = 0
    for it in range(1, max_iters + 1):
        grad = np.dot(At, phat / m)
        if mu > 0.0:
            grad = grad + reg / theta
        if gain < tol:
            # gains vanish before the iterate settles on flat ridges, so
            # also require stationarity: theta-weighted gradient deviation
            scale = np.dot(theta, grad)
            resid = np.max(theta * np.abs(grad - scale))
            if resid <= _KKT_RTOL * abs(scale):
                out = np.dot(phat, np.log(m))
                if mu > 0.0:
                    out += reg * np.sum(np.log(R * theta))
                return theta, out, it - 1, True, gain, STATUS_OK

        accepted = False
        halved = False
        gain = 0.0
        v = theta
        mv = m
        while eta >= _ETA_MIN:
            w = log_theta + eta * grad
            w = w - np.max(w)
            v = np.exp(w)
            v = v / np.sum(v)
            mv = np.dot(A, v)
            if floor > 0.0:
                mv = np.maximum(mv, floor)
            ok = not np.any(mv <= 0.0)
            if ok and mu > 0.0:
                ok = not np.any(v <= 0.0)
            if ok:
                if floor > 0.0:
                    # clamped marginals break the smooth-difference form
                    new_obj = np.dot(phat, np.log(mv))
                    if mu > 0.0:
                        new_obj += reg * np.sum(np.log(R * v))
                    gain = new_obj - obj
                else:
                    # difference of objectives in relative precision: the
                    # flat-ridge polish depends on resolving gains far
                    # below the absolute rounding floor of the objective
                    dm = np.dot(A, v - theta)
                    gain = np.dot(phat, np.log1p(dm / m))
                    if mu > 0.0:
                        gain += reg * np.sum(np.log1p((v - theta) / theta))
                if gain >= 0.0:
                    accepted = True
                    break
            eta *= 0.5
            halved = True
        if not accepted or (halved and np.all(v == theta)):
            # no acceptable step moves the iterate: floating-point
            # resolution of the optimum is reached
            out = np.dot(phat, np.log(m))
            if mu > 0.0:
                out += reg * np.sum(np.log(R * theta))
            return theta, out, it, True, 0.0, STATUS_OK
        theta = v
        log_theta = np.log(theta)
        m = mv
        obj = obj + gain
        eta = min(eta * 2.0, _ETA_MAX)
    out = np.dot(phat, np.log(m))
    if mu > 0.0:
        out += reg * np.sum(np.log(R * theta))
    return theta, out, it, False, gain, STATUS_MAXITER


if HAS_NUMBA:
    _em_fit_numba = njit(cache=True)(_em_fit)
    _mirror_fit_numba = njit(cache=True)(_mirror_fit)
else:  # pragma: no cover
    _em_fit_numba = _em_fit
    _mirror_fit_numba = _mirror_fit

_IMPLS = {
    ("em_fixed_point", "numpy"): _em_fit,
    ("em_fixed_point", "numba"): _em_fit_numba,
    ("mirror_ascent", "numpy"): _mirror_fit,
    ("mirror_ascent", "numba"): _mirror_fit_numba,
}


def run_fit(solver, backend, A, At, phat, mu, theta0, max_iters, tol, floor):
    """Dispatch one full fit loop; returns (theta, obj, iters, converged, gain, status)."""
    impl = _IMPLS[(solver, backend)]
    return impl(A, At, phat, float(mu), theta0, int(max_iters), float(tol), float(floor))
