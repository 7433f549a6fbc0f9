"""Tube pair construction: calibration, supports, scaling."""

import numpy as np
import pytest

from mikadoflow.grid import Grid
from mikadoflow import spectral
from mikadoflow.mikado import (
    build_mikado, default_offsets, staggered_offsets, measure_constants,
    scaling_report,
)


def test_lattice_means_are_exactly_calibrated():
    g = Grid(3, 32)
    for j in (1, 2, 3):
        pair = build_mikado(j, 8.0, g)
        th = pair.theta()
        wp = pair.w_profile()
        assert abs(th.mean()) < 1e-14 * np.abs(th.data).max()
        # exact unit pairing on the lattice
        assert (th.data * wp.data).mean() == pytest.approx(1.0, abs=1e-12)
        # W has a single nonzero component, e_j
        w = pair.w()
        for a in range(3):
            if a != j - 1:
                assert np.all(w.data[a] == 0.0)


def test_w_mean_is_small():
    g = Grid(3, 32)
    pair = build_mikado(1, 8.0, g)
    w = pair.w()
    assert np.abs(w.mean()).max() < 1e-8 * np.abs(w.data).max()


def test_fields_constant_along_tube_direction():
    g = Grid(3, 32)
    pair = build_mikado(2, 8.0, g)
    th = pair.theta().data
    assert np.abs(np.diff(th, axis=1)).max() == 0.0
    # hence divergence-free W and Theta W exactly on the lattice spectrum
    assert np.abs(spectral.divergence(pair.w()).data).max() < 1e-10
    tw = pair.w()
    tw.data = pair.theta().data * tw.data
    assert np.abs(spectral.divergence(tw).data).max() < 1e-9


def test_cross_direction_supports_disjoint():
    g = Grid(3, 32)
    pairs = [build_mikado(j, 8.0, g) for j in (1, 2, 3)]
    for a in range(3):
        for b in range(a + 1, 3):
            prod = pairs[a].theta().data * pairs[b].theta().data
            assert np.all(prod == 0.0)


def test_support_radius_and_mask():
    g = Grid(3, 64)
    mu = 8.0
    pair = build_mikado(1, mu, g)
    assert pair.tube_radius == pytest.approx(0.5 / mu)
    mask = pair.support_mask()
    assert np.all(pair.theta().data[~mask] == 0.0)


def test_build_mikado_errors():
    g = Grid(3, 32)
    with pytest.raises(ValueError):
        build_mikado(0, 8.0, g)
    with pytest.raises(ValueError):
        build_mikado(1, 6.0, g)  # mu must exceed 2d
    with pytest.raises(ValueError):
        build_mikado(1, 16.0, g)  # n < 4 mu
    with pytest.raises(ValueError):
        build_mikado(1, 8.0, g, exponents=(1, 0))  # a + b != d - 1


def test_enforce_mu_false_allows_staggered_mu4():
    g = Grid(3, 32)
    pair = build_mikado(1, 4.0, g, enforce_mu=False)
    assert abs(pair.theta().mean()) < 1e-14
    assert (pair.theta().data * pair.w_profile().data).mean() == pytest.approx(1.0, abs=1e-12)


def test_thin_tube_quarter_shift_calibration():
    # on-lattice tubes thinner than a cell: the automatic quarter-cell
    # shift must restore an exact calibration
    g = Grid(3, 32)
    pair = build_mikado(1, 16.0, g, enforce_mu=False)
    assert abs(pair.theta().mean()) < 1e-12
    assert (pair.theta().data * pair.w_profile().data).mean() == pytest.approx(1.0, abs=1e-10)


def test_measure_constants_requires_mu_sweep():
    g = Grid(3, 32)
    pairs = [build_mikado(j, 8.0, g) for j in (1, 2, 3)]
    with pytest.raises(ValueError):
        measure_constants(pairs)


def test_scaling_slopes_match_prediction():
    # L^r norms against mu at fixed k: slope = e + k - (d-1)/r
    g = Grid(3, 64)
    rep = scaling_report(g, [8.0, 16.0])
    assert len(rep) == 12
    for entry in rep:
        assert abs(entry["slope"] - entry["predicted"]) < 0.15
