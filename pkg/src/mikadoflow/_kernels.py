"""Point-evaluation kernels for trigonometric interpolants.

The inner loop -- summing Fourier modes at scattered points -- dominates
the cost of composing fields with flow maps, so it is compiled with numba
when available.  Set MIKADOFLOW_NO_NUMBA=1 to force the pure-numpy path
(used by the benchmark and as a fallback when numba is not installed).
"""

import os

import numpy as np

NUMBA_ENABLED = os.environ.get("MIKADOFLOW_NO_NUMBA", "0") != "1"
if NUMBA_ENABLED:
    try:
        import numba
    except ImportError:  # pragma: no cover
        NUMBA_ENABLED = False

TWO_PI = 2.0 * np.pi


def trig_eval_numpy(points, kvecs, cre, cim):
    """Sum_m Re(c_m exp(2 pi i k_m . x)) at each point, vectorised.

    points: (npts, d); kvecs: (nm, d) float64 integers; cre/cim: (nm,).
    Chunked over points to bound the phase-matrix memory.
    """
    npts = points.shape[0]
    nm = kvecs.shape[0]
    out = np.empty(npts)
    chunk = max(1, int(4.0e6 / max(nm, 1)))
    for s in range(0, npts, chunk):
        e = min(npts, s + chunk)
        phase = TWO_PI * (points[s:e] @ kvecs.T)
        out[s:e] = np.cos(phase) @ cre - np.sin(phase) @ cim
    return out


if NUMBA_ENABLED:

    @numba.njit(parallel=True, fastmath=True, cache=True)
    def _trig_eval_numba(points, kvecs, cre, cim):  # pragma: no cover - compiled
        npts = points.shape[0]
        nm = kvecs.shape[0]
        d = points.shape[1]
        out = np.empty(npts)
        for p in numba.prange(npts):
            acc = 0.0
            for m in range(nm):
                ph = 0.0
                for a in range(d):
                    ph += kvecs[m, a] * points[p, a]
                ph *= TWO_PI
                acc += cre[m] * np.cos(ph) - cim[m] * np.sin(ph)
            out[p] = acc
        return out

    def trig_eval(points, kvecs, cre, cim):
        return _trig_eval_numba(
            np.ascontiguousarray(points),
            np.ascontiguousarray(kvecs),
            np.ascontiguousarray(cre),
            np.ascontiguousarray(cim),
        )

else:
    trig_eval = trig_eval_numpy
