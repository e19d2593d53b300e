"""Small fitting helpers: log-log slopes, exponential tails, convergence orders."""

import numpy as np


def loglog_slope(x, y):
    """Least-squares slope of log|y| against log x.

    Values must be positive; pairs with y == 0 are dropped.
    """
    x = np.asarray(x, dtype=float)
    y = np.abs(np.asarray(y, dtype=float))
    keep = (y > 0) & (x > 0)
    if keep.sum() < 2:
        return np.nan
    lx, ly = np.log(x[keep]), np.log(y[keep])
    return np.polyfit(lx, ly, 1)[0]


def fit_exp_decay(t, y):
    """Fit |y| ~ A * exp(-rate * t) on a window; returns (A, rate).

    Used for tail diagnostics. Non-positive samples are dropped.
    """
    t = np.asarray(t, dtype=float)
    y = np.abs(np.asarray(y, dtype=float))
    keep = y > 0
    if keep.sum() < 2:
        return np.nan, np.nan
    coef = np.polyfit(t[keep], np.log(y[keep]), 1)
    return float(np.exp(coef[1])), float(-coef[0])


def fit_power_decay(r, y, decades=1.0):
    """Fitted exponent p of |y| ~ C r^p over the outermost `decades` of r."""
    r = np.asarray(r, dtype=float)
    y = np.abs(np.asarray(y, dtype=float))
    rmax = r.max()
    window = r >= rmax / 10.0**decades
    return loglog_slope(r[window], y[window])


def convergence_order(h, err):
    """Observed order from errors on a sequence of grid spacings."""
    return loglog_slope(h, err)


def extrapolate_in_inverse(x, y):
    """Linear extrapolation of y against 1/x to 1/x -> 0; returns the limit.

    Uses the last two samples, which suffices for O(1/x) convergent sweeps.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    u1, u2 = 1.0 / x[-2], 1.0 / x[-1]
    y1, y2 = y[-2], y[-1]
    slope = (y2 - y1) / (u2 - u1)
    return float(y2 - slope * u2)
