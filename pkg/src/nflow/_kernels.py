"""Inner loop of the equivariant flow driver.

The update is plain forward Euler on the reduced tension (the exact negative
gradient of the discrete midpoint-cell energy divided by the lumped mass),
with the rejection/halving protocol of `nflow.flow.run`.  A numba build is
used when available; `flow` falls back to an equivalent numpy loop.

Exit codes returned by `advance`:
    0 stride of accepted steps completed (snapshot point)
    1 stationary (max |tau| below tolerance)
    2 gradient threshold exceeded
    3 time step collapsed below dt_min
    4 max_time reached
    5 non-finite values encountered
"""

import math

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn
        if args and callable(args[0]):
            return args[0]
        return wrap

STRIDE_DONE = 0
STATIONARY = 1
GRAD_THRESHOLD = 2
DT_COLLAPSE = 3
MAX_TIME = 4
NON_FINITE = 5

# state vector layout (float64)
S_TIME = 0
S_DT = 1
S_ENERGY = 2      # energy sum of the current state (no |S^{n-1}|/n factor)
S_DISS = 3        # cumulative int |du/dt|^2 dv dt (with measure factor)
S_ACCEPTED = 4    # accepted steps since the last dt growth
S_HAVE_E = 5      # 0 before the first pass of a run
S_MAXTAU = 6
S_MAXGRAD = 7
STATE_LEN = 8


# Cody-Waite split of pi/2 for the quadrant reduction
_PIO2_HI = 1.5707963267948966
_PIO2_LO = 6.123233995736766e-17
_TWO_OVER_PI = 0.6366197723675814


@njit(cache=True, fastmath=True)
def _fast_sincos(x):
    """sin and cos by quadrant reduction plus degree-11/10 polynomials on
    [-pi/4, pi/4]; absolute error below ~1e-11, plenty below the scheme's
    truncation error.  Used only inside the run() kernel; the public numpy
    paths keep libm trig."""
    q = math.floor(x * _TWO_OVER_PI + 0.5)
    y = (x - q * _PIO2_HI) - q * _PIO2_LO
    y2 = y * y
    s = y * (1.0 + y2 * (-1.6666666666666666e-01 + y2 * (8.3333333333333332e-03
        + y2 * (-1.9841269841269841e-04 + y2 * (2.7557319223985893e-06
        + y2 * -2.5052108385441720e-08)))))
    c = 1.0 + y2 * (-0.5 + y2 * (4.1666666666666664e-02 + y2 * (-1.3888888888888889e-03
        + y2 * (2.4801587301587302e-05 + y2 * -2.7557319223985888e-07))))
    iq = int(q) & 3
    if iq == 0:
        return s, c
    if iq == 1:
        return c, -s
    if iq == 2:
        return -s, -c
    return -c, s


@njit(cache=True, fastmath=True)
def _g_pow(fe, n):
    """fe^{(n-2)/2} with fast paths for the common exponents."""
    if n == 2:
        return 1.0
    if n == 3:
        return math.sqrt(fe)
    if n == 4:
        return fe
    if n == 5:
        return fe * math.sqrt(fe)
    if n == 6:
        return fe * fe
    return fe ** (0.5 * (n - 2))


@njit(cache=True, fastmath=True)
def _e_pow(f, n):
    """f^{n/2} with fast paths."""
    if n == 2:
        return f
    if n == 3:
        return f * math.sqrt(f)
    if n == 4:
        return f * f
    if n == 5:
        return f * f * math.sqrt(f)
    if n == 6:
        return f * f * f
    return f ** (0.5 * n)


@njit(cache=True, fastmath=True)
def advance(h, h_backup, tau, flux, ang, gcell,
            inv_dx, dx_wmpow, wm_pow, inv_wm, ang_fac,
            rate_r_fac, rate_a_fac, inv_mass, mass,
            n, eps2, cfl, dt_min, dt_growth, growth_every,
            tol_stationary, grad_threshold, max_time, tol_step,
            stride, max_iters, state):
    """Run up to `stride` accepted forward-Euler steps in place.

    On exit `tau` holds the tension of the current (accepted) state and
    state[S_ENERGY] its energy sum (caller applies the |S^{n-1}|/n factor).
    The protocol of run(): a step whose result raises the energy beyond
    tol_step is rolled back and dt halves; dt halves until it satisfies the
    parabolic CFL bound before each step; dt grows by dt_growth after
    growth_every consecutive accepted steps.
    """
    num_cells = flux.shape[0]
    nm1 = float(n - 1)
    accepted = 0
    iters = 0
    while True:
        iters += 1
        if iters > max_iters:
            return STRIDE_DONE if accepted > 0 else DT_COLLAPSE
        # evaluation sweep over cells
        esum = 0.0
        maxgrad = 0.0
        for c in range(num_cells):
            d = (h[c + 1] - h[c]) * inv_dx[c]
            hm = 0.5 * (h[c] + h[c + 1])
            s, co = _fast_sincos(hm)
            q = s * inv_wm[c]
            f = d * d + nm1 * q * q
            g = _g_pow(f + eps2, n)
            gcell[c] = g
            flux[c] = wm_pow[c] * g * d
            ang[c] = ang_fac[c] * g * s * co
            esum += dx_wmpow[c] * _e_pow(f, n)
            ad = abs(d)
            if ad > maxgrad:
                maxgrad = ad
        if not math.isfinite(esum):
            return NON_FINITE
        # energy-monotonicity guard: reject the step that made this state
        if state[S_HAVE_E] != 0.0 and esum > state[S_ENERGY] + tol_step:
            for i in range(h.shape[0]):
                h[i] = h_backup[i]
            state[S_DT] *= 0.5
            if state[S_DT] < dt_min:
                return DT_COLLAPSE
            state[S_ACCEPTED] = 0.0
            continue
        # state accepted: tension at interior nodes + explicit stability rate
        maxtau = 0.0
        maxrate = 0.0
        for k in range(1, num_cells):
            t = (flux[k] - flux[k - 1] - 0.5 * (ang[k - 1] + ang[k])) * inv_mass[k]
            tau[k] = t
            at = abs(t)
            if at > maxtau:
                maxtau = at
            r = (rate_r_fac[k] * gcell[k] + rate_r_fac[k - 1] * gcell[k - 1]
                 + rate_a_fac[k] * gcell[k] + rate_a_fac[k - 1] * gcell[k - 1]) * inv_mass[k]
            if r > maxrate:
                maxrate = r
        tau[0] = 0.0
        tau[num_cells] = 0.0
        state[S_ENERGY] = esum
        state[S_HAVE_E] = 1.0
        state[S_MAXTAU] = maxtau
        state[S_MAXGRAD] = maxgrad
        # termination on the accepted state
        if maxtau < tol_stationary:
            return STATIONARY
        if maxgrad > grad_threshold:
            return GRAD_THRESHOLD
        if state[S_TIME] >= max_time:
            return MAX_TIME
        if accepted >= stride:
            return STRIDE_DONE
        # time-step selection: growth, then CFL halving
        if state[S_ACCEPTED] >= growth_every:
            state[S_DT] *= dt_growth
            state[S_ACCEPTED] = 0.0
        dt_max = 2.0 * cfl / maxrate if maxrate > 0.0 else max_time
        while state[S_DT] > dt_max:
            state[S_DT] *= 0.5
            if state[S_DT] < dt_min:
                return DT_COLLAPSE
        dt = state[S_DT]
        # forward Euler update; boundary nodes are Dirichlet data
        diss = 0.0
        for i in range(h.shape[0]):
            h_backup[i] = h[i]
        for k in range(1, num_cells):
            h[k] = h[k] + dt * tau[k]
            diss += mass[k] * tau[k] * tau[k]
        state[S_DISS] += dt * diss
        state[S_TIME] += dt
        state[S_ACCEPTED] += 1.0
        accepted += 1
