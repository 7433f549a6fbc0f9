"""Periodic lattice grids and sampled fields on the unit torus [0,1)^d.

Everything downstream (spectral calculus, Mikado constructions, flow maps,
the iteration driver) works with the plain containers defined here.  A field
is nothing more than a float64 sample array tied to a Grid; time-dependent
fields stack snapshots along a leading axis.  Keeping the containers thin
means the numerics live in functions that are easy to test in isolation.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

__all__ = [
    "Grid",
    "ScalarField",
    "VectorField",
    "MatrixField",
    "TimeField",
]


@dataclass(frozen=True)
class Grid:
    """Uniform periodic lattice with n points per axis on [0,1)^d.

    d must be at least 3 (the tube constructions below need at least two
    transverse directions) and n even (the spectral symbols zero the
    Nyquist mode) with enough room for the smallest bump; dilation factors
    must divide n, which the dilate routine checks per call.
    """

    d: int
    n: int

    def __post_init__(self):
        if self.d < 3:
            raise ValueError(f"need d >= 3, got d={self.d}")
        if self.n < 8 or self.n % 2 != 0:
            raise ValueError(f"n must be even and >= 8, got n={self.n}")

    @property
    def h(self):
        """Lattice spacing 1/n."""
        return 1.0 / self.n

    @property
    def shape(self):
        return (self.n,) * self.d

    @property
    def npoints(self):
        return self.n ** self.d

    def axis_coords(self):
        """1-d coordinate array j/n, j = 0..n-1."""
        return np.arange(self.n) / self.n

    def coords(self, axis):
        """Coordinate array of x_axis broadcast over the full lattice."""
        x = self.axis_coords()
        shape = [1] * self.d
        shape[axis] = self.n
        return x.reshape(shape)

    def meshgrid(self):
        """Tuple of d broadcastable coordinate arrays."""
        return tuple(self.coords(a) for a in range(self.d))

    def points(self):
        """All lattice points as an (n^d, d) array, row-major order."""
        axes = [self.axis_coords()] * self.d
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def wavenumbers(self):
        """Integer wavenumber array along one axis (fft order)."""
        return _wavenumbers(self.n)

    def zeros(self):
        return np.zeros(self.shape)


@lru_cache(maxsize=32)
def _wavenumbers(n):
    k = np.fft.fftfreq(n, d=1.0 / n)
    k.flags.writeable = False
    return k


def _as_samples(grid, data, extra_shape):
    data = np.asarray(data, dtype=np.float64)
    want = extra_shape + grid.shape
    if data.shape != want:
        raise ValueError(f"sample array has shape {data.shape}, expected {want}")
    return data


@dataclass
class ScalarField:
    """Scalar samples on a Grid; data shape (n,)*d."""

    grid: Grid
    data: np.ndarray

    def __post_init__(self):
        self.data = _as_samples(self.grid, self.data, ())

    @classmethod
    def zeros(cls, grid):
        return cls(grid, grid.zeros())

    def copy(self):
        return ScalarField(self.grid, self.data.copy())

    def mean(self):
        """Lattice average; equals the integral over the torus for the
        trigonometric interpolant of the samples."""
        return float(self.data.mean())

    def __add__(self, other):
        return ScalarField(self.grid, self.data + _raw(other, self.grid))

    def __sub__(self, other):
        return ScalarField(self.grid, self.data - _raw(other, self.grid))

    def __mul__(self, other):
        return ScalarField(self.grid, self.data * _raw(other, self.grid))

    __rmul__ = __mul__

    def __neg__(self):
        return ScalarField(self.grid, -self.data)


@dataclass
class VectorField:
    """Vector samples; data shape (d,) + (n,)*d, component axis first."""

    grid: Grid
    data: np.ndarray

    def __post_init__(self):
        self.data = _as_samples(self.grid, self.data, (self.grid.d,))

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros((grid.d,) + grid.shape))

    def copy(self):
        return VectorField(self.grid, self.data.copy())

    def component(self, j):
        return ScalarField(self.grid, self.data[j])

    def mean(self):
        """Componentwise lattice average, shape (d,)."""
        return self.data.mean(axis=tuple(range(1, self.grid.d + 1)))

    def magnitude(self):
        """Pointwise Euclidean norm as a ScalarField."""
        return ScalarField(self.grid, np.sqrt((self.data ** 2).sum(axis=0)))

    def __add__(self, other):
        return VectorField(self.grid, self.data + _raw(other, self.grid))

    def __sub__(self, other):
        return VectorField(self.grid, self.data - _raw(other, self.grid))

    def __mul__(self, other):
        """Scalar multiplication, by a number or a ScalarField (pointwise)."""
        if isinstance(other, ScalarField):
            return VectorField(self.grid, self.data * other.data)
        return VectorField(self.grid, self.data * other)

    __rmul__ = __mul__

    def __neg__(self):
        return VectorField(self.grid, -self.data)


@dataclass
class MatrixField:
    """Matrix samples; data shape (d, d) + (n,)*d, entry [l, m] first."""

    grid: Grid
    data: np.ndarray

    def __post_init__(self):
        d = self.grid.d
        self.data = _as_samples(self.grid, self.data, (d, d))

    @classmethod
    def identity(cls, grid):
        d = grid.d
        data = np.zeros((d, d) + grid.shape)
        for l in range(d):
            data[l, l] = 1.0
        return cls(grid, data)

    def copy(self):
        return MatrixField(self.grid, self.data.copy())

    def entry(self, l, m):
        return ScalarField(self.grid, self.data[l, m])

    def apply(self, v):
        """Pointwise matrix-vector product A(x) v(x)."""
        return VectorField(self.grid, np.einsum("lm...,m...->l...", self.data, v.data))

    def det(self):
        """Pointwise determinant (moves entries to the trailing axes)."""
        perm = np.moveaxis(self.data, (0, 1), (-2, -1))
        return ScalarField(self.grid, np.linalg.det(perm))

    def frobenius(self):
        return ScalarField(self.grid, np.sqrt((self.data ** 2).sum(axis=(0, 1))))

    def __sub__(self, other):
        return MatrixField(self.grid, self.data - _raw(other, self.grid))

    def __add__(self, other):
        return MatrixField(self.grid, self.data + _raw(other, self.grid))


def _raw(obj, grid):
    if isinstance(obj, (ScalarField, VectorField, MatrixField)):
        if obj.grid != grid:
            raise ValueError("grid mismatch")
        return obj.data
    return obj


_KINDS = {"scalar": 0, "vector": 1, "matrix": 2}
_FIELD_CLS = {"scalar": ScalarField, "vector": VectorField, "matrix": MatrixField}


@dataclass
class TimeField:
    """Snapshots at uniform times t_k = k/n_t, k = 0..n_t.

    data has shape (n_t + 1,) + component axes + grid.shape.  Snapshots are
    returned as views wrapped in the matching spatial field class, so writes
    through a snapshot modify the parent.
    """

    grid: Grid
    kind: str
    data: np.ndarray

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown kind {self.kind!r}")
        self.data = np.asarray(self.data, dtype=np.float64)
        d = self.grid.d
        comp = {"scalar": (), "vector": (d,), "matrix": (d, d)}[self.kind]
        want_tail = comp + self.grid.shape
        if self.data.ndim != 1 + len(want_tail) or self.data.shape[1:] != want_tail:
            raise ValueError(
                f"time-field data shape {self.data.shape} incompatible with "
                f"kind={self.kind!r} on {self.grid}"
            )
        if self.n_t < 4:
            raise ValueError(f"need at least 4 time intervals, got n_t={self.n_t}")

    @classmethod
    def zeros(cls, grid, kind, n_t):
        d = grid.d
        comp = {"scalar": (), "vector": (d,), "matrix": (d, d)}[kind]
        return cls(grid, kind, np.zeros((n_t + 1,) + comp + grid.shape))

    @property
    def n_t(self):
        return self.data.shape[0] - 1

    @property
    def dt_step(self):
        return 1.0 / self.n_t

    def times(self):
        return np.arange(self.n_t + 1) / self.n_t

    def snapshot(self, k):
        return _FIELD_CLS[self.kind](self.grid, self.data[k])

    def set_snapshot(self, k, fld):
        self.data[k] = _raw(fld, self.grid)

    def dt(self, order=2):
        """Time derivative by finite differences of the given order (2 or 4).

        Centred stencils at interior snapshots, one-sided stencils of the
        same order near the endpoints.
        """
        out = np.empty_like(self.data)
        dt = self.dt_step
        f = self.data
        if order == 2:
            out[1:-1] = (f[2:] - f[:-2]) / (2.0 * dt)
            out[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * dt)
            out[-1] = (3.0 * f[-1] - 4.0 * f[-2] + f[-3]) / (2.0 * dt)
        elif order == 4:
            out[2:-2] = (f[:-4] - 8.0 * f[1:-3] + 8.0 * f[3:-1] - f[4:]) / (12.0 * dt)
            out[0] = (-25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2]
                      + 16.0 * f[3] - 3.0 * f[4]) / (12.0 * dt)
            out[1] = (-3.0 * f[0] - 10.0 * f[1] + 18.0 * f[2]
                      - 6.0 * f[3] + f[4]) / (12.0 * dt)
            out[-2] = (3.0 * f[-1] + 10.0 * f[-2] - 18.0 * f[-3]
                       + 6.0 * f[-4] - f[-5]) / (12.0 * dt)
            out[-1] = (25.0 * f[-1] - 48.0 * f[-2] + 36.0 * f[-3]
                       - 16.0 * f[-4] + 3.0 * f[-5]) / (12.0 * dt)
        else:
            raise ValueError(f"order must be 2 or 4, got {order}")
        return TimeField(self.grid, self.kind, out)

    def map(self, fn):
        """Apply a snapshot-wise spatial operation, stacking the results."""
        first = fn(self.snapshot(0))
        kind = {ScalarField: "scalar", VectorField: "vector", MatrixField: "matrix"}[type(first)]
        out = TimeField.zeros(self.grid, kind, self.n_t)
        out.data[0] = first.data
        for k in range(1, self.n_t + 1):
            out.data[k] = fn(self.snapshot(k)).data
        return out
