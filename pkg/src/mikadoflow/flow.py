"""Inverse flow maps of a divergence-free velocity and their Jacobians.

The inverse flow map Phi_i of u solves the transport equation

    dPhi/dt + (u . grad) Phi = 0,   Phi(t_i, x) = x,

so Phi_i(t, x) is the position at time t_i of the characteristic through
(t, x).  We integrate characteristics directly (classical RK4, at least 4
substeps per snapshot interval) rather than transporting Phi on the grid,
which would smear det DPhi.  Phi is stored as the periodic displacement
Phi(t,x) - x; Jacobians are spectral derivatives of the displacement plus
the identity, and the inverse Jacobian is formed pointwise.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft
from scipy import ndimage

from .grid import Grid, ScalarField, VectorField, MatrixField, TimeField
from . import spectral
from .interp import compose

__all__ = [
    "Diffeo",
    "inverse_flow",
    "pullback_divfree",
    "cofactor_norm_check",
    "CallableVelocity",
    "SampledVelocity",
    "IdentityVelocity",
]

DET_HARD_LIMIT = 1e-3


class CallableVelocity:
    """Velocity given as a function vel(t, points) -> (npts, d)."""

    def __init__(self, fn, d):
        self.fn = fn
        self.d = d
        self.is_zero = False

    def eval(self, t, points):
        return self.fn(t, points)


class IdentityVelocity:
    """u = 0; flows are the identity."""

    def __init__(self, d):
        self.d = d
        self.is_zero = True

    def eval(self, t, points):
        return np.zeros_like(points)


class SampledVelocity:
    """Velocity from a vector TimeField.

    Space: quintic spline interpolation on a spectrally upsampled copy of
    each snapshot (periodic wrap).  Time: cubic Hermite between snapshots,
    with slopes from 2nd-order finite differences.  The four Hermite
    coefficient arrays are cached per snapshot interval.
    """

    def __init__(self, u, upsample=2, order=5):
        self.u = u
        self.grid = u.grid
        self.d = u.grid.d
        self.is_zero = bool(np.all(u.data == 0.0))
        self.upsample = upsample
        self.order = order
        self.nf = u.grid.n * upsample
        self._du = u.dt().data
        self._steady = bool(np.all(u.data == u.data[:1]))
        self._cache_k = None
        self._cache = None

    def _upsampled(self, arr):
        """Zero-padded spectral upsampling of (d, n, n, ..) to (d, nf, ..)."""
        n, nf, d = self.grid.n, self.nf, self.grid.d
        axes = tuple(range(1, d + 1))
        hat = sfft.fftn(arr, axes=axes)
        pad = np.zeros((arr.shape[0],) + (nf,) * d, dtype=complex)
        idx = np.fft.fftfreq(n, 1.0 / n).astype(int)
        sel = tuple(np.ix_(*([np.arange(arr.shape[0])] + [idx % nf] * d)))
        src = tuple(np.ix_(*([np.arange(arr.shape[0])] + [idx % n] * d)))
        pad[sel] = hat[src]
        out = sfft.ifftn(pad, axes=axes).real * (nf / n) ** d
        # spline prefilter once per cached array
        return np.stack([
            ndimage.spline_filter(out[c], order=self.order, mode="grid-wrap")
            for c in range(arr.shape[0])
        ])

    def _interval(self, k):
        if self._steady:
            # one upsampled copy serves every interval
            if self._cache is None:
                f = self._upsampled(self.u.data[0])
                z = np.zeros_like(f)
                self._cache = (f, f, z, z)
            return self._cache
        if self._cache_k != k:
            dt = self.u.dt_step
            f0 = self.u.data[k]
            f1 = self.u.data[k + 1]
            d0 = self._du[k] * dt
            d1 = self._du[k + 1] * dt
            # cubic Hermite in s = (t - t_k)/dt: f = h00 f0 + h10 d0 + h01 f1 + h11 d1
            self._cache = tuple(self._upsampled(a) for a in (f0, f1, d0, d1))
            self._cache_k = k
        return self._cache

    def eval(self, t, points):
        if self.is_zero:
            return np.zeros_like(points)
        n_t = self.u.n_t
        s = np.clip(t * n_t, 0.0, n_t)
        k = min(int(np.floor(s)), n_t - 1)
        s -= k
        f0, f1, d0, d1 = self._interval(k)
        h00 = (1 + 2 * s) * (1 - s) ** 2
        h10 = s * (1 - s) ** 2
        h01 = s ** 2 * (3 - 2 * s)
        h11 = s ** 2 * (s - 1)
        fld = h00 * f0 + h10 * d0 + h01 * f1 + h11 * d1
        coords = (points.T % 1.0) * self.nf
        out = np.empty_like(points)
        for c in range(self.d):
            out[:, c] = ndimage.map_coordinates(
                fld[c], coords, order=self.order, mode="grid-wrap", prefilter=False
            )
        return out


def rk4_trace(vel, t0, t1, points, n_steps):
    """Integrate dy/ds = vel(s, y) from t0 to t1 (RK4, fixed step)."""
    if n_steps <= 0 or t0 == t1:
        return points.copy()
    h = (t1 - t0) / n_steps
    y = points.copy()
    t = t0
    for _ in range(n_steps):
        k1 = vel.eval(t, y)
        k2 = vel.eval(t + 0.5 * h, y + 0.5 * h * k1)
        k3 = vel.eval(t + 0.5 * h, y + 0.5 * h * k2)
        k4 = vel.eval(t + h, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
    return y


@dataclass
class Diffeo:
    """Inverse flow map on a snapshot window [k_lo, k_hi].

    disp[k - k_lo] holds Phi(t_k, x) - x on the lattice (component-major).
    Jacobians are derived on demand: DPhi = Id + spectral Jacobian of the
    displacement, (DPhi)^{-1} by pointwise inversion (cofactor formula).
    """

    grid: Grid
    n_t: int
    anchor_index: int
    k_lo: int
    k_hi: int
    disp: np.ndarray
    det_residual: float = 0.0
    is_identity: bool = False
    _jac_cache: dict = field(default_factory=dict, repr=False)

    @property
    def t_anchor(self):
        return self.anchor_index / self.n_t

    def _check_window(self, k):
        if not (self.k_lo <= k <= self.k_hi):
            raise IndexError(f"snapshot {k} outside flow window [{self.k_lo}, {self.k_hi}]")

    def displacement(self, k):
        self._check_window(k)
        return VectorField(self.grid, self.disp[k - self.k_lo])

    def phi_points(self, k):
        """Phi(t_k) at all lattice points, shape (n^d, d), mod 1."""
        self._check_window(k)
        pts = self.grid.points()
        d = self.grid.d
        disp = self.disp[k - self.k_lo].reshape(d, -1).T
        return (pts + disp) % 1.0

    def jacobian(self, k):
        self._check_window(k)
        if k not in self._jac_cache:
            J = spectral.jacobian(self.displacement(k))
            data = J.data.copy()
            for l in range(self.grid.d):
                data[l, l] += 1.0
            self._jac_cache[k] = MatrixField(self.grid, data)
            if len(self._jac_cache) > 4:
                self._jac_cache.pop(next(iter(self._jac_cache)))
        return self._jac_cache[k]

    def inverse_jacobian(self, k):
        J = self.jacobian(k)
        perm = np.moveaxis(J.data, (0, 1), (-2, -1))
        inv = np.linalg.inv(perm)
        return MatrixField(self.grid, np.moveaxis(inv, (-2, -1), (0, 1)))

    def det(self, k):
        return self.jacobian(k).det()


def _identity_diffeo(grid, n_t, anchor_index, k_lo, k_hi):
    d = grid.d
    disp = np.zeros((k_hi - k_lo + 1, d) + grid.shape)
    return Diffeo(grid, n_t, anchor_index, k_lo, k_hi, disp, 0.0, True)


def inverse_flow(vel, grid, n_t, anchor_index, window=None, substeps=4):
    """Solve the inverse-flow transport equation by characteristics.

    vel: velocity provider (IdentityVelocity / CallableVelocity /
    SampledVelocity); must be divergence-free (checked by the caller for
    sampled fields).  anchor_index: snapshot index of t_i.  window:
    (k_lo, k_hi) snapshot range to cover (defaults to all).  substeps:
    RK4 steps per snapshot interval (>= 4 enforced).
    """
    substeps = max(int(substeps), 4)
    if window is None:
        window = (0, n_t)
    k_lo, k_hi = window
    if not (0 <= k_lo <= anchor_index <= k_hi <= n_t):
        raise ValueError("anchor must lie inside the window")
    if getattr(vel, "is_zero", False):
        return _identity_diffeo(grid, n_t, anchor_index, k_lo, k_hi)

    d = grid.d
    pts = grid.points()
    disp = np.zeros((k_hi - k_lo + 1, d) + grid.shape)
    t_a = anchor_index / n_t
    for k in range(k_lo, k_hi + 1):
        if k == anchor_index:
            continue
        t_k = k / n_t
        n_steps = substeps * abs(k - anchor_index)
        y = rk4_trace(vel, t_k, t_a, pts, n_steps)
        delta = y - pts
        delta -= np.round(delta)
        disp[k - k_lo] = delta.T.reshape((d,) + grid.shape)

    out = Diffeo(grid, n_t, anchor_index, k_lo, k_hi, disp)
    det_res = 0.0
    for k in (k_lo, k_hi, anchor_index):
        det_res = max(det_res, float(np.abs(out.det(k).data - 1.0).max()))
    out.det_residual = det_res
    if det_res > DET_HARD_LIMIT:
        raise RuntimeError(
            f"flow integration lost measure preservation: max|det DPhi - 1| = {det_res:.3e}"
        )
    return out


def pullback_divfree(G, diffeo, k):
    """(DPhi)^{-1} (G o Phi) at snapshot k; div of the result is (div G) o Phi."""
    if diffeo.is_identity:
        return VectorField(G.grid, G.data.copy())
    comp = compose(G, diffeo.phi_points(k))
    inv = diffeo.inverse_jacobian(k)
    return inv.apply(comp)


def cofactor_norm_check(diffeo, k, order=0, c_k=1.0):
    """Measured ||D^order (DPhi)^{-1}||_C0 against c_k ||DPhi||_{C^order}^{d-1}."""
    if order not in (0, 1):
        raise ValueError("order must be 0 or 1")
    J = diffeo.jacobian(k)
    Jinv = diffeo.inverse_jacobian(k)
    lhs = spectral.ck_norm(Jinv, order)
    bound = c_k * spectral.ck_norm(J, order) ** (diffeo.grid.d - 1)
    return {"lhs": lhs, "bound": bound}
