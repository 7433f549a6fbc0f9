"""Spectral calculus on the periodic lattice.

Derivatives, the inverse Laplacian on mean-zero data, integer dilations,
and the lattice norms used throughout.  All operators act on the
trigonometric interpolant of the samples, so they are exact for
band-limited fields; products of sampled fields alias as usual.

Conventions: wavenumbers are integers k (fft layout), Fourier symbol of
d/dx_m is 2*pi*i*k_m with the Nyquist mode dropped (an odd symbol has no
consistent real value there), and the inverse Laplacian has symbol
-1/(4 pi^2 |k|^2) with the k=0 mode mapped to zero.
"""

from functools import lru_cache

import numpy as np
from scipy import fft as sfft

from .grid import Grid, ScalarField, VectorField, MatrixField

__all__ = [
    "gradient",
    "jacobian",
    "divergence",
    "divergence_matrix",
    "laplacian",
    "inverse_laplacian",
    "grad_inv_laplacian",
    "dilate",
    "lp_norm",
    "ck_norm",
    "w1p_norm",
]

TWO_PI = 2.0 * np.pi


@lru_cache(maxsize=32)
def _deriv_symbol(n):
    """2*pi*i*k with the Nyquist wavenumber zeroed, as a complex array."""
    k = np.fft.fftfreq(n, d=1.0 / n)
    k = k.copy()
    k[n // 2] = 0.0
    sym = TWO_PI * 1j * k
    sym.flags.writeable = False
    return sym


@lru_cache(maxsize=32)
def _inv_lap_symbol(d, n):
    # built from the same Nyquist-zeroed wavenumbers as the derivative
    # symbol, so that div(grad(inverse_laplacian(f))) = f - mean f exactly
    # on the invertible modes
    k = np.fft.fftfreq(n, d=1.0 / n)
    k = k.copy()
    k[n // 2] = 0.0
    ksq = np.zeros((n,) * d)
    for axis in range(d):
        shape = [1] * d
        shape[axis] = n
        ksq = ksq + (k ** 2).reshape(shape)
    sym = np.zeros_like(ksq)
    nz = ksq > 0
    sym[nz] = -1.0 / (TWO_PI ** 2 * ksq[nz])
    sym.flags.writeable = False
    return sym


def _deriv_hat(fhat, grid, axis):
    # axis indexes from the back (spatial axes are trailing)
    sym = _deriv_symbol(grid.n)
    shape = [1] * fhat.ndim
    shape[axis] = grid.n
    return fhat * sym.reshape(shape)


def _fftn(data, grid):
    axes = tuple(range(data.ndim - grid.d, data.ndim))
    return sfft.fftn(data, axes=axes)

def _ifftn(hat, grid):
    axes = tuple(range(hat.ndim - grid.d, hat.ndim))
    return sfft.ifftn(hat, axes=axes).real


def gradient(f):
    """Gradient of a ScalarField, returned as a VectorField."""
    grid = f.grid
    fhat = _fftn(f.data, grid)
    out = np.empty((grid.d,) + grid.shape)
    for m in range(grid.d):
        out[m] = _ifftn(_deriv_hat(fhat, grid, m - grid.d), grid)
    return VectorField(grid, out)


def jacobian(v):
    """Jacobian of a VectorField; entry [l, m] is d v_l / d x_m."""
    grid = v.grid
    vhat = _fftn(v.data, grid)
    out = np.empty((grid.d, grid.d) + grid.shape)
    for l in range(grid.d):
        for m in range(grid.d):
            out[l, m] = _ifftn(_deriv_hat(vhat[l], grid, m - grid.d), grid)
    return MatrixField(grid, out)


def divergence(v):
    """Divergence of a VectorField."""
    grid = v.grid
    vhat = _fftn(v.data, grid)
    acc = np.zeros(grid.shape, dtype=complex)
    for m in range(grid.d):
        acc += _deriv_hat(vhat[m], grid, m - grid.d)
    return ScalarField(grid, sfft.ifftn(acc).real)


def divergence_matrix(A):
    """Row-wise divergence of a MatrixField: (div A)_l = sum_m d A_{lm}/d x_m."""
    grid = A.grid
    out = np.empty((grid.d,) + grid.shape)
    for l in range(grid.d):
        out[l] = divergence(VectorField(grid, A.data[l])).data
    return VectorField(grid, out)


def laplacian(f):
    grid = f.grid
    sym = _inv_lap_symbol(grid.d, grid.n)
    fhat = sfft.fftn(f.data)
    out = np.zeros_like(fhat)
    nz = sym != 0
    out[nz] = fhat[nz] / sym[nz]
    return ScalarField(grid, sfft.ifftn(out).real)


def inverse_laplacian(f):
    """Solve Lap u = f with mean-zero u.

    f must have zero mean (relative tolerance 1e-10); the k=0 mode is
    mapped to zero.
    """
    grid = f.grid
    scale = max(np.abs(f.data).max(), 1.0)
    if abs(f.data.mean()) > 1e-10 * scale:
        raise ValueError(
            f"inverse_laplacian requires zero-mean input, got mean {f.data.mean():.3e}"
        )
    fhat = sfft.fftn(f.data)
    return ScalarField(grid, sfft.ifftn(fhat * _inv_lap_symbol(grid.d, grid.n)).real)


def grad_inv_laplacian(f):
    """grad Lap^{-1} f, the standard vector potential with div = f - mean f."""
    return gradient(inverse_laplacian(f))


def dilate(f, lam):
    """Replace samples of g by samples of x -> g(lam x).

    For integer lam dividing n this is an exact index permutation
    (lam * j mod n), i.e. the dilation commutes exactly with sampling.
    """
    grid = f.grid
    lam = int(lam)
    if lam < 1 or grid.n % lam != 0:
        raise ValueError(f"dilation factor {lam} must be a positive divisor of n={grid.n}")
    idx = (lam * np.arange(grid.n)) % grid.n
    data = f.data
    for axis in range(grid.d):
        data = np.take(data, idx, axis=axis + (data.ndim - grid.d))
    return type(f)(grid, data)


def _pointwise_abs(f):
    if isinstance(f, ScalarField):
        return np.abs(f.data)
    if isinstance(f, VectorField):
        return np.sqrt((f.data ** 2).sum(axis=0))
    if isinstance(f, MatrixField):
        return np.sqrt((f.data ** 2).sum(axis=(0, 1)))
    raise TypeError(f"unsupported field type {type(f)}")


def lp_norm(f, p):
    """L^p lattice norm (h^d sum |f|^p)^(1/p); p=inf gives the lattice max.

    Vector and matrix fields are measured through their pointwise
    Euclidean / Frobenius magnitude.
    """
    mag = _pointwise_abs(f)
    if p == np.inf or p == "inf":
        return float(mag.max())
    p = float(p)
    if p <= 0:
        raise ValueError("p must be positive")
    return float((mag ** p).mean() ** (1.0 / p))


def _derivative_stack(f, k):
    """List of fields: f itself, then all spectral derivatives up to order k."""
    out = [f]
    if k >= 1:
        if isinstance(f, ScalarField):
            out.append(gradient(f))
        elif isinstance(f, VectorField):
            out.append(jacobian(f))
        else:
            grid = f.grid
            rows = [jacobian(VectorField(grid, f.data[l])) for l in range(grid.d)]
            out.extend(rows)
    if k >= 2:
        if k > 2:
            raise ValueError("ck_norm supports k <= 2")
        grid = f.grid
        if isinstance(f, ScalarField):
            out.append(jacobian(gradient(f)))
        elif isinstance(f, VectorField):
            for l in range(grid.d):
                out.append(jacobian(gradient(f.component(l))))
        else:
            for l in range(grid.d):
                for m in range(grid.d):
                    out.append(jacobian(gradient(f.entry(l, m))))
    return out


def ck_norm(f, k=0):
    """C^k norm proxy: max over the lattice of |D^j f|, j = 0..k (k <= 2).

    Derivatives are spectral, so this is the sup norm of the interpolant's
    derivatives sampled back on the lattice.
    """
    return max(float(_pointwise_abs(g).max()) for g in _derivative_stack(f, k))


def w1p_norm(f, p):
    """W^{1,p} lattice norm: lp_norm(f, p) + lp_norm(Df, p)."""
    stack = _derivative_stack(f, 1)
    return lp_norm(stack[0], p) + sum(lp_norm(g, p) for g in stack[1:])
