"""Uniform periodic lattices, physical constants and difference stencils.

Scalar fields on a lattice are arrays whose trailing ``dim`` axes are the
lattice axes. Vector fields carry a leading Cartesian axis of length 3;
components along directions the lattice does not span have zero derivative.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import LatticeMismatch


@dataclass(frozen=True)
class Constants:
    """Unit system and particle parameters. Defaults are hbar = m = c = 1, q = 1."""

    hbar: float = 1.0
    m: float = 1.0
    c: float = 1.0
    q: float = 1.0

    @property
    def beta(self) -> float:
        """Gauge coupling ``q / (hbar c)``."""
        return self.q / (self.hbar * self.c)

    @property
    def magneton(self) -> float:
        """Zeeman prefactor ``hbar q / (2 m c)``."""
        return self.hbar * self.q / (2 * self.m * self.c)


@dataclass(frozen=True)
class Lattice:
    """Periodic grid centred on the origin.

    Axis ``k`` has ``points[k]`` sites spaced ``extents[k] / points[k]`` apart,
    starting at ``-extents[k] / 2``. ``directions[k]`` names the Cartesian
    direction (0, 1, 2 for x, y, z) that axis ``k`` spans.
    """

    points: tuple
    extents: tuple
    directions: tuple = field(default=None)

    def __post_init__(self):
        points = tuple(int(n) for n in np.atleast_1d(self.points))
        extents = tuple(float(x) for x in np.atleast_1d(self.extents))
        if not 1 <= len(points) <= 3 or len(points) != len(extents):
            raise ValueError("lattice needs 1 to 3 axes with matching points and extents")
        if min(points) < 3 or min(extents) <= 0:
            raise ValueError("each axis needs at least 3 points and a positive extent")
        directions = self.directions
        if directions is None:
            directions = tuple(range(len(points)))
        directions = tuple(int(d) for d in directions)
        if len(directions) != len(points) or len(set(directions)) != len(directions):
            raise ValueError("directions must be distinct, one per axis")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "extents", extents)
        object.__setattr__(self, "directions", directions)

    @property
    def dim(self) -> int:
        return len(self.points)

    @property
    def shape(self) -> tuple:
        return self.points

    @property
    def size(self) -> int:
        return int(np.prod(self.points))

    @property
    def spacing(self) -> tuple:
        return tuple(L / n for L, n in zip(self.extents, self.points))

    @property
    def cell_weight(self) -> float:
        return float(np.prod(self.spacing))

    def axis_coords(self, k: int) -> np.ndarray:
        h = self.spacing[k]
        return -0.5 * self.extents[k] + h * np.arange(self.points[k])

    def grid(self) -> list:
        """Meshgrid (``ij`` indexing) of lattice coordinates, one array per axis."""
        return np.meshgrid(*(self.axis_coords(k) for k in range(self.dim)), indexing="ij")

    def positions(self) -> np.ndarray:
        """Cartesian positions, shape ``(3, *points)``; unspanned directions are 0."""
        out = np.zeros((3,) + self.shape)
        for k, g in enumerate(self.grid()):
            out[self.directions[k]] = g
        return out

    def integrate(self, f) -> np.ndarray:
        """Weighted sum over the trailing lattice axes."""
        f = np.asarray(f)
        axes = tuple(range(f.ndim - self.dim, f.ndim))
        return self.cell_weight * np.sum(f, axis=axes)

    def require_same(self, other: "Lattice"):
        if self != other:
            raise LatticeMismatch(f"{self} != {other}")

    def wavenumbers(self, k: int) -> np.ndarray:
        return 2 * np.pi * np.fft.fftfreq(self.points[k], d=self.spacing[k])

    def refined(self, factor: int = 2) -> "Lattice":
        return Lattice(tuple(n * factor for n in self.points), self.extents, self.directions)


# stencils -----------------------------------------------------------------

DERIVATIVE_METHODS = ("central", "spectral")


def _array_axis(f, lattice, k):
    return f.ndim - lattice.dim + k


def partial(f, lattice: Lattice, k: int, method: str = "central") -> np.ndarray:
    """Derivative along lattice axis ``k``."""
    f = np.asarray(f)
    ax = _array_axis(f, lattice, k)
    if method == "central":
        return (np.roll(f, -1, axis=ax) - np.roll(f, 1, axis=ax)) / (2 * lattice.spacing[k])
    if method == "spectral":
        kvec = lattice.wavenumbers(k)
        shape = [1] * f.ndim
        shape[ax] = -1
        out = np.fft.ifft(1j * kvec.reshape(shape) * np.fft.fft(f, axis=ax), axis=ax)
        return out if np.iscomplexobj(f) else out.real
    raise ValueError(f"unknown derivative method {method!r}")


def second_partial(f, lattice: Lattice, k: int, method: str = "central") -> np.ndarray:
    f = np.asarray(f)
    ax = _array_axis(f, lattice, k)
    if method == "central":
        h = lattice.spacing[k]
        return (np.roll(f, -1, axis=ax) - 2 * f + np.roll(f, 1, axis=ax)) / (h * h)
    if method == "spectral":
        kvec = lattice.wavenumbers(k)
        shape = [1] * f.ndim
        shape[ax] = -1
        out = np.fft.ifft(-(kvec**2).reshape(shape) * np.fft.fft(f, axis=ax), axis=ax)
        return out if np.iscomplexobj(f) else out.real
    raise ValueError(f"unknown derivative method {method!r}")


def laplacian(f, lattice: Lattice, method: str = "central") -> np.ndarray:
    return sum(second_partial(f, lattice, k, method) for k in range(lattice.dim))


def gradient(f, lattice: Lattice, method: str = "central") -> np.ndarray:
    """Cartesian gradient with a new leading axis of length 3."""
    f = np.asarray(f)
    out = np.zeros((3,) + f.shape, dtype=np.result_type(f, float))
    for k in range(lattice.dim):
        out[lattice.directions[k]] = partial(f, lattice, k, method)
    return out


def divergence(v, lattice: Lattice, method: str = "central") -> np.ndarray:
    v = np.asarray(v)
    return sum(partial(v[lattice.directions[k]], lattice, k, method) for k in range(lattice.dim))


def curl(v, lattice: Lattice, method: str = "central") -> np.ndarray:
    """Curl of a Cartesian vector field of shape ``(3, *points)``."""
    v = np.asarray(v)
    grads = np.stack([gradient(v[j], lattice, method) for j in range(3)], axis=1)
    # grads[i, j] = d_i v_j
    out = np.empty_like(grads[0])
    out[0] = grads[1, 2] - grads[2, 1]
    out[1] = grads[2, 0] - grads[0, 2]
    out[2] = grads[0, 1] - grads[1, 0]
    return out
