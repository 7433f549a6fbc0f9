"""Shared helpers: seeded random band-limited fields and analytic shears."""

import numpy as np
import pytest

from mikadoflow.grid import Grid, ScalarField, VectorField, MatrixField


def random_scalar(grid, rng, kmax=2, zero_mean=True):
    """Random real trigonometric polynomial with modes |k_i| <= kmax."""
    data = np.zeros(grid.shape)
    mesh = grid.meshgrid()
    for _ in range(4):
        k = rng.integers(-kmax, kmax + 1, size=grid.d)
        if zero_mean and not np.any(k):
            k[0] = 1
        amp = rng.uniform(0.2, 1.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        arg = 2.0 * np.pi * sum(k[a] * mesh[a] for a in range(grid.d))
        data += amp * np.cos(arg + phase)
    if zero_mean:
        data -= data.mean()
    return ScalarField(grid, data)


def random_vector(grid, rng, kmax=2, zero_mean=True):
    comps = [random_scalar(grid, rng, kmax, zero_mean) for _ in range(grid.d)]
    return VectorField(grid, np.stack([c.data for c in comps]))


def shear_maps(grid, amplitude):
    """Analytic shear Phi(x) = x - A sin(2 pi x_2) e_1 on the lattice.

    Returns (phi_points, dphi, dphi_inv): points are (npoints, d); the
    Jacobian and its inverse are exact (the shear is nilpotent, det = 1).
    """
    pts = grid.points().copy()
    pts[:, 0] = (pts[:, 0] - amplitude * np.sin(2.0 * np.pi * pts[:, 1])) % 1.0
    mesh = grid.meshgrid()
    slope = -amplitude * 2.0 * np.pi * np.cos(2.0 * np.pi * mesh[1])
    dphi = MatrixField.identity(grid)
    dphi.data[0, 1] = slope
    dphi_inv = MatrixField.identity(grid)
    dphi_inv.data[0, 1] = -slope
    return pts, dphi, dphi_inv


def sharp_holder_pair(grid, p, gamma=0.2):
    """(f, g) realizing the lambda^(-1/p) rate of the improved Hoelder bound.

    g = 1 + cos(2 pi y_1) is nonnegative and band-limited, so every lattice
    sum below is an exact integral.  |f|^p is built with Fourier amplitudes
    proportional to m^(-1/p), which makes the measured gap scale exactly
    like lambda^(-1/p) across dilations that keep the active modes below
    the Nyquist frequency.
    """
    x = grid.meshgrid()[0]
    h = np.ones(grid.shape)
    for m in range(1, grid.n // 2):
        h = h + (gamma / m ** (1.0 / p)) * np.cos(2.0 * np.pi * m * x)
    f = ScalarField(grid, h.copy() if p == 1 else np.sqrt(h))
    g = ScalarField(grid, np.broadcast_to(1.0 + np.cos(2.0 * np.pi * x),
                                          grid.shape).copy())
    return f, g


def sharp_mean_osc_pair(grid, gamma=1.0):
    """(f, g) whose oscillatory mean is exactly gamma / (2 lambda)."""
    x = grid.meshgrid()[0]
    h = np.full(grid.shape, 1.5)
    for m in range(1, grid.n // 2):
        h = h + (gamma / m) * np.cos(2.0 * np.pi * m * x)
    f = ScalarField(grid, h)
    g = ScalarField(grid, np.broadcast_to(np.cos(2.0 * np.pi * x),
                                          grid.shape).copy())
    return f, g


@pytest.fixture
def rng():
    return np.random.default_rng(20260826)
