"""Spinor wave functions on a lattice and their polar-chart and Born-rule views."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ga
from .errors import LatticeMismatch, NotNormalized
from .lattice import Lattice, gradient

RHO_FLOOR = 1e-300
POLE_EPS = ga.POLE_EPS


class SpinorField:
    """Amplitude pair ``(psi_plus, psi_minus)`` sampled on a lattice.

    ``psi`` has shape ``(2, *lattice.points)`` and is read-only.
    """

    __slots__ = ("lattice", "psi", "time")

    def __init__(self, lattice: Lattice, psi, time: float = 0.0):
        arr = np.array(psi, dtype=complex)
        if arr.shape != (2,) + lattice.shape:
            raise LatticeMismatch(f"amplitudes of shape {arr.shape} do not fit lattice {lattice.shape}")
        arr.setflags(write=False)
        self.lattice = lattice
        self.psi = arr
        self.time = float(time)

    @classmethod
    def uniform(cls, lattice: Lattice, psi_plus, psi_minus, time=0.0):
        psi = np.empty((2,) + lattice.shape, dtype=complex)
        psi[0] = psi_plus
        psi[1] = psi_minus
        return cls(lattice, psi, time)

    @classmethod
    def from_multivector(cls, lattice: Lattice, mv: ga.Multivector, time=0.0):
        plus, minus = ga.spinor_amplitudes(mv)
        return cls(lattice, np.stack([plus, minus]), time)

    @property
    def plus(self):
        return self.psi[0]

    @property
    def minus(self):
        return self.psi[1]

    def density(self) -> np.ndarray:
        return np.abs(self.psi[0]) ** 2 + np.abs(self.psi[1]) ** 2

    def norm(self) -> float:
        return float(self.lattice.integrate(self.density()))

    def normalized(self) -> "SpinorField":
        return self.with_psi(self.psi / np.sqrt(self.norm()))

    def with_psi(self, psi, time=None) -> "SpinorField":
        return SpinorField(self.lattice, psi, self.time if time is None else time)

    def to_multivector(self) -> ga.Spinor:
        return ga.spinor_from_amplitudes(self.psi[0], self.psi[1])

    def require_normalized(self, tol=1e-8):
        n = self.norm()
        if abs(n - 1.0) > tol:
            raise NotNormalized(f"norm {n!r} deviates from 1 by more than {tol}")

    def __repr__(self):
        return f"SpinorField(lattice={self.lattice}, time={self.time})"


# polar chart --------------------------------------------------------------


@dataclass(frozen=True)
class PolarChart:
    """Pointwise ``(rho, Phi, theta, phi)``; ``singular`` marks nodes and poles."""

    lattice: Lattice
    rho: np.ndarray
    Phi: np.ndarray
    theta: np.ndarray
    phi: np.ndarray
    singular: np.ndarray = None
    hbar: float = 1.0

    @property
    def chi_bar(self) -> np.ndarray:
        return -2.0 * self.Phi / self.hbar


def amplitudes_from_polar(chart: PolarChart, time: float = 0.0) -> SpinorField:
    root = np.sqrt(chart.rho)
    chi_bar = chart.chi_bar
    plus = root * np.cos(0.5 * chart.theta) * np.exp(-0.5j * (chi_bar + chart.phi))
    minus = root * np.sin(0.5 * chart.theta) * np.exp(-0.5j * (chi_bar - chart.phi))
    return SpinorField(chart.lattice, np.stack([plus, minus]), time)


def polar_from_amplitudes(field: SpinorField, hbar: float = 1.0, rho_floor: float = RHO_FLOOR) -> PolarChart:
    plus, minus = field.psi
    rho = field.density()
    theta = 2.0 * np.arctan2(np.abs(minus), np.abs(plus))
    arg_p = np.angle(plus)
    arg_m = np.angle(minus)
    raw = arg_m - arg_p
    phi = ga._wrap(raw)
    # wrapping phi by 2 pi flips the spinor sign unless chi_bar absorbs it
    chi_bar = -(arg_p + arg_m) - (phi - raw)
    pole = np.sin(theta) < POLE_EPS
    # at a pole only one amplitude carries phase; put all of it into chi_bar
    north = theta < 0.5 * np.pi
    phi = np.where(pole, 0.0, phi)
    chi_bar = np.where(pole & north, -2.0 * arg_p, chi_bar)
    chi_bar = np.where(pole & ~north, -2.0 * arg_m, chi_bar)
    singular = (rho < rho_floor) | pole
    return PolarChart(field.lattice, rho, -0.5 * hbar * chi_bar, theta, phi, singular, hbar)


# Born rule ----------------------------------------------------------------


@dataclass(frozen=True)
class BornData:
    """Density, unit spin direction and spin density ``rho (hbar/2) s``."""

    rho: np.ndarray
    s: np.ndarray
    spin_density: np.ndarray


def born_extract(field: SpinorField, hbar: float = 1.0, rho_floor: float = RHO_FLOOR) -> BornData:
    """Project ``Psi Psi~`` onto grades 0 and 1.

    Points with ``rho < rho_floor`` get ``s = e3`` by convention.
    """
    mv = field.to_multivector()
    product = mv * mv.reverse()
    rho = product.alpha
    direct = field.density()
    scale = max(1.0, float(np.max(direct, initial=0.0)))
    if np.max(np.abs(rho - direct), initial=0.0) > 1e-12 * scale:
        raise ArithmeticError("geometric-algebra density disagrees with amplitude density")
    rho_s = np.moveaxis(product.a, -1, 0)
    ok = rho >= rho_floor
    s = np.zeros_like(rho_s)
    s[2] = 1.0
    np.divide(rho_s, rho, out=s, where=ok)
    return BornData(rho, s, 0.5 * hbar * rho_s)


def spin_density_direct(field: SpinorField) -> np.ndarray:
    """``rho s`` from amplitudes: ``(2 Re, 2 Im, |+|^2 - |-|^2)`` of ``conj(psi_plus) psi_minus``."""
    plus, minus = field.psi
    cross = np.conj(plus) * minus
    return np.stack([2 * cross.real, 2 * cross.imag, np.abs(plus) ** 2 - np.abs(minus) ** 2])


# inner product and distance -----------------------------------------------


def inner_product(a: SpinorField, b: SpinorField) -> complex:
    """``sum w conj(a) b`` over both spin components."""
    if a.lattice != b.lattice:
        raise LatticeMismatch("inner product of fields on different lattices")
    return complex(a.lattice.integrate(np.sum(np.conj(a.psi) * b.psi, axis=0)))


def fs_distance_with_phase(a: SpinorField, b: SpinorField, hbar: float = 1.0, tol: float = 1e-8):
    """Minimum over global phase ``sigma`` of ``sum w |a - b e^{i sigma/hbar}|^2``.

    Returns ``(distance, sigma)`` with ``sigma`` in ``(-pi hbar, pi hbar]``.
    """
    a.require_normalized(tol)
    b.require_normalized(tol)
    overlap = inner_product(b, a)
    sigma = hbar * np.angle(overlap)
    shifted = b.psi * np.exp(1j * sigma / hbar)
    dist = float(a.lattice.integrate(np.sum(np.abs(a.psi - shifted) ** 2, axis=0)))
    return dist, sigma


def fs_distance(a: SpinorField, b: SpinorField, hbar: float = 1.0, tol: float = 1e-8) -> float:
    return fs_distance_with_phase(a, b, hbar, tol)[0]


def rotation_increment(chart: PolarChart, d_Phi, d_theta, d_phi) -> np.ndarray:
    """Rotation vector ``e3 dphi + e_phi dtheta + s dchi_bar``, shape ``(3, *points)``."""
    theta, phi = chart.theta, chart.phi
    s = np.stack([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])
    e_phi = np.stack([-np.sin(phi), np.cos(phi), np.zeros_like(phi)])
    d_chi = -2.0 * np.asarray(d_Phi) / chart.hbar
    e3 = np.zeros_like(s)
    e3[2] = 1.0
    return e3 * d_phi + e_phi * d_theta + s * d_chi


def fs_metric_polar(chart: PolarChart, d_rho, d_Phi, d_theta, d_phi) -> float:
    """Gauge-minimised quadratic form ``(1/4) sum w [drho^2/rho + rho (dzeta - s <s.dzeta>)^2]``."""
    lat = chart.lattice
    theta, phi = chart.theta, chart.phi
    s = np.stack([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])
    dzeta = rotation_increment(chart, d_Phi, d_theta, d_phi)
    mean_proj = lat.integrate(chart.rho * np.sum(s * dzeta, axis=0))
    perp = dzeta - s * mean_proj
    density_part = np.asarray(d_rho) ** 2 / chart.rho
    return 0.25 * float(lat.integrate(density_part + chart.rho * np.sum(perp**2, axis=0)))


def gauge_phase_shift(chart: PolarChart, d_Phi, d_theta, d_phi) -> float:
    """Closed-form gauge minimiser ``-<s . dzeta>`` (a shift of ``chi_bar``)."""
    theta, phi = chart.theta, chart.phi
    s = np.stack([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])
    dzeta = rotation_increment(chart, d_Phi, d_theta, d_phi)
    return -float(chart.lattice.integrate(chart.rho * np.sum(s * dzeta, axis=0)))


# gauge --------------------------------------------------------------------


def gauge_transform(field: SpinorField, xi, beta: float, vector_potential=None, method: str = "central"):
    """Apply ``A -> A + grad xi`` and ``psi -> psi e^{i beta xi}``.

    ``xi`` is an array over the lattice or a callable of Cartesian positions
    ``(3, *points)``. Returns ``(field, vector_potential)``; a missing
    potential is treated as zero.
    """
    lat = field.lattice
    xi_vals = xi(lat.positions()) if callable(xi) else np.asarray(xi, dtype=float)
    xi_vals = np.broadcast_to(xi_vals, lat.shape)
    phase = np.exp(1j * beta * xi_vals)
    new_field = field.with_psi(field.psi * phase)
    a = np.zeros((3,) + lat.shape) if vector_potential is None else np.asarray(vector_potential, float)
    return new_field, a + gradient(xi_vals, lat, method)
