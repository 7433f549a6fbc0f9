"""Inverse flow maps: closed-form checks, volume preservation, RK order."""

import numpy as np
import pytest

from mikadoflow.grid import Grid, VectorField, TimeField
from mikadoflow import spectral
from mikadoflow.flow import (
    CallableVelocity, IdentityVelocity, SampledVelocity,
    inverse_flow, pullback_divfree, cofactor_norm_check, rk4_trace,
)

from conftest import random_vector

A = 0.15


def steady_shear(t, pts):
    out = np.zeros_like(pts)
    out[:, 0] = A * np.sin(2.0 * np.pi * pts[:, 1])
    return out


def shear_inverse_flow_exact(grid, t, t_anchor):
    """Closed form for the steady shear: Phi(t,x) = x - (t - t_a) A sin(2 pi x_2) e_1."""
    pts = grid.points().copy()
    pts[:, 0] = (pts[:, 0] - (t - t_anchor) * A * np.sin(2.0 * np.pi * pts[:, 1])) % 1.0
    return pts


def test_identity_velocity_gives_identity_diffeo():
    g = Grid(3, 16)
    dif = inverse_flow(IdentityVelocity(3), g, 8, 4)
    assert dif.is_identity
    assert np.all(dif.disp == 0.0)
    pts = dif.phi_points(2)
    assert np.abs(pts - g.points()).max() == 0.0


def test_shear_flow_matches_closed_form():
    g = Grid(3, 32)
    n_t = 8
    vel = CallableVelocity(steady_shear, 3)
    dif = inverse_flow(vel, g, n_t, 4, substeps=8)
    for k in (0, 2, 6, 8):
        exact = shear_inverse_flow_exact(g, k / n_t, 0.5)
        got = dif.phi_points(k)
        err = np.abs(got - exact)
        err = np.minimum(err, 1.0 - err)  # periodic distance
        assert err.max() < 1e-6


def test_shear_jacobian_and_determinant():
    g = Grid(3, 32)
    n_t = 8
    dif = inverse_flow(CallableVelocity(steady_shear, 3), g, n_t, 4, substeps=8)
    k = 8
    J = dif.jacobian(k)
    slope = -0.5 * A * 2.0 * np.pi * np.cos(2.0 * np.pi * g.meshgrid()[1])
    assert np.abs(J.data[0, 1] - slope).max() < 1e-6
    assert np.abs(J.det().data - 1.0).max() < 1e-5
    Jinv = dif.inverse_jacobian(k)
    assert np.abs(Jinv.data[0, 1] + slope).max() < 1e-6


def test_pullback_preserves_divergence_free(rng):
    g = Grid(3, 32)
    n_t = 8
    dif = inverse_flow(CallableVelocity(steady_shear, 3), g, n_t, 4, substeps=8)
    # a divergence-free G: curl-type field from a random potential
    w = random_vector(g, rng, kmax=1)
    jac = spectral.jacobian(w)
    G = VectorField(g, np.stack([
        jac.data[2, 1] - jac.data[1, 2],
        jac.data[0, 2] - jac.data[2, 0],
        jac.data[1, 0] - jac.data[0, 1],
    ]))
    assert np.abs(spectral.divergence(G).data).max() < 1e-10
    V = pullback_divfree(G, dif, 8)
    scale = spectral.ck_norm(G, 1)
    assert np.abs(spectral.divergence(V).data).max() < 1e-5 * scale


def test_cofactor_norm_check_identity():
    g = Grid(3, 16)
    dif = inverse_flow(IdentityVelocity(3), g, 8, 4)
    out = cofactor_norm_check(dif, 4)
    # pointwise Frobenius norm of the identity matrix in d = 3
    assert out["lhs"] == pytest.approx(np.sqrt(3.0))
    assert out["lhs"] <= out["bound"] + 1e-12


def test_rk4_trace_fourth_order():
    # time-dependent shear with closed-form characteristics:
    # dy1/dt = sin(2 pi t), dy2/dt = 0 => y1(t) = y1(0) + (1-cos(2 pi t))/(2 pi)
    def vel_fn(t, pts):
        out = np.zeros_like(pts)
        out[:, 0] = np.sin(2.0 * np.pi * t)
        return out

    vel = CallableVelocity(vel_fn, 3)
    y0 = np.array([[0.1, 0.2, 0.3], [0.7, 0.4, 0.9]])
    exact = y0.copy()
    exact[:, 0] += (1.0 - np.cos(2.0 * np.pi * 0.5)) / (2.0 * np.pi)
    errs = []
    for n_steps in (4, 8, 16):
        y = rk4_trace(vel, 0.0, 0.5, y0, n_steps)
        errs.append(np.abs(y - exact).max())
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(rates - 4.0) < 0.3)


def test_sampled_velocity_matches_callable():
    g = Grid(3, 32)
    n_t = 8
    u = TimeField.zeros(g, "vector", n_t)
    prof = A * np.sin(2.0 * np.pi * g.meshgrid()[1])
    for k in range(n_t + 1):
        u.data[k][0] = prof
    sv = SampledVelocity(u)
    pts = np.random.default_rng(3).uniform(0.0, 1.0, size=(50, 3))
    got = sv.eval(0.3, pts)
    want = steady_shear(0.3, pts)
    assert np.abs(got - want).max() < 1e-4
