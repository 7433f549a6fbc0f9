"""Log-log regression for scaling-law measurements."""

import numpy as np

__all__ = ["loglog_fit"]


def loglog_fit(x, y):
    """Least-squares slope of log y against log x.

    Returns (slope, intercept, halfwidth) where halfwidth is the maximum
    absolute residual of log y divided by the log-x span -- a crude but
    deterministic confidence range for the fitted exponent.
    """
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    if lx.size < 2:
        raise ValueError("need at least two points to fit a slope")
    A = np.stack([lx, np.ones_like(lx)], axis=1)
    (slope, intercept), *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - (slope * lx + intercept)
    span = lx.max() - lx.min()
    halfwidth = float(np.abs(resid).max() / span) if span > 0 else np.inf
    return float(slope), float(intercept), halfwidth
