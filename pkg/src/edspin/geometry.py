"""Finite-dimensional e-phase space: symplectic form, metric, complex structure,
Poisson brackets and flow tests for candidate generators.

A lattice of ``N`` points gives ``4N`` real-analytic coordinates
``(psi+, i hbar conj(psi+), psi-, i hbar conj(psi-))`` per point. Point
deltas are discretised as ``delta_{xx'} / w``, so a double integral of a
block tensor against two vectors collapses to ``sum_x w V^T block U``.

Amplitude arrays in this module are flattened to shape ``(2, N)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import scipy.linalg

from .errors import GradientMissing, LatticeMismatch, NonHermitianKernel
from .field import SpinorField
from .lattice import Lattice

OMEGA_BLOCK = np.array(
    [[0, 1, 0, 0], [-1, 0, 0, 0], [0, 0, 0, 1], [0, 0, -1, 0]],
    dtype=float,
)
_SWAP_BLOCK = np.array(
    [[0, 1, 0, 0], [1, 0, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]],
    dtype=float,
)


def metric_block(hbar: float = 1.0) -> np.ndarray:
    return _SWAP_BLOCK / (2j * hbar)


def metric_block_inverse(hbar: float = 1.0) -> np.ndarray:
    return 2j * hbar * _SWAP_BLOCK


def complex_structure_block() -> np.ndarray:
    """``-(1/2hbar) G^{-1} Omega`` per point.

    The scalar prefactor ``-(1/2hbar)(2i hbar)`` is reduced to ``-i`` by hand
    so the result is exact for every ``hbar``.
    """
    return -1j * (_SWAP_BLOCK @ OMEGA_BLOCK)


def omega_matrix(lattice: Lattice) -> np.ndarray:
    """Dense ``4N x 4N`` symplectic matrix in slot-major ordering."""
    return lattice.cell_weight * np.kron(OMEGA_BLOCK, np.eye(lattice.size))


def metric_matrix(lattice: Lattice, hbar: float = 1.0) -> np.ndarray:
    return lattice.cell_weight * np.kron(metric_block(hbar), np.eye(lattice.size))


def complex_structure_matrix(lattice: Lattice) -> np.ndarray:
    return np.kron(complex_structure_block(), np.eye(lattice.size))


# points and tangent vectors -----------------------------------------------


def _coords_from_amplitudes(psi, hbar):
    plus, minus = psi
    return np.stack([plus, 1j * hbar * np.conj(plus), minus, 1j * hbar * np.conj(minus)])


@dataclass(frozen=True)
class PhaseSpacePoint:
    lattice: Lattice
    psi: np.ndarray
    hbar: float = 1.0

    @classmethod
    def from_field(cls, field: SpinorField, hbar: float = 1.0):
        return cls(field.lattice, field.psi.reshape(2, -1).copy(), hbar)

    @property
    def coordinates(self) -> np.ndarray:
        """Shape ``(4, N)``: slots 2 and 4 are ``i hbar`` times conjugates of slots 1 and 3."""
        return _coords_from_amplitudes(self.psi, self.hbar)

    def to_field(self, time: float = 0.0) -> SpinorField:
        return SpinorField(self.lattice, self.psi.reshape((2,) + self.lattice.shape), time)

    def norm(self) -> float:
        return self.lattice.cell_weight * float(np.sum(np.abs(self.psi) ** 2))


@dataclass(frozen=True)
class TangentVector:
    lattice: Lattice
    coords: np.ndarray
    hbar: float = 1.0

    @classmethod
    def from_amplitudes(cls, lattice: Lattice, dpsi, hbar: float = 1.0):
        dpsi = np.asarray(dpsi, dtype=complex).reshape(2, -1)
        return cls(lattice, _coords_from_amplitudes(dpsi, hbar), hbar)

    @property
    def amplitudes(self) -> np.ndarray:
        return self.coords[[0, 2]]

    def is_consistent(self, tol: float = 1e-12) -> bool:
        expect = _coords_from_amplitudes(self.amplitudes, self.hbar)
        return bool(np.max(np.abs(expect - self.coords)) <= tol * max(1.0, np.max(np.abs(self.coords))))

    def density_rate(self, at: PhaseSpacePoint) -> float:
        """``sum_x w drho/dlambda``; zero for vectors tangent to the unit sphere."""
        cross = np.conj(at.psi) * self.amplitudes
        return self.lattice.cell_weight * float(np.sum(2 * cross.real))

    def gauge_rate(self, at: PhaseSpacePoint) -> float:
        """``<s . dzeta/dlambda>``, the component along the global phase direction."""
        cross = np.conj(at.psi) * self.amplitudes
        return -2.0 * self.lattice.cell_weight * float(np.sum(cross.imag))

    def is_tgf(self, at: PhaseSpacePoint, tol: float = 1e-10) -> bool:
        return abs(self.density_rate(at)) <= tol and abs(self.gauge_rate(at)) <= tol


def _pair(v: TangentVector, u: TangentVector, block) -> complex:
    if v.lattice != u.lattice:
        raise LatticeMismatch("tangent vectors live on different lattices")
    return v.lattice.cell_weight * np.einsum("ix,ij,jx->", v.coords, block, u.coords)


def omega_pair(v: TangentVector, u: TangentVector) -> float:
    return float(_pair(v, u, OMEGA_BLOCK).real)


def metric_pair(v: TangentVector, u: TangentVector) -> float:
    return float(_pair(v, u, metric_block(v.hbar)).real)


def complex_structure(v: TangentVector) -> TangentVector:
    return TangentVector(v.lattice, complex_structure_block() @ v.coords, v.hbar)


def omega_polar(v, u, lattice: Lattice) -> float:
    """Symplectic form on components ordered ``(rho, Phi, phi, rho_s)``."""
    v = np.asarray(v, dtype=float).reshape(4, -1)
    u = np.asarray(u, dtype=float).reshape(4, -1)
    return lattice.cell_weight * float(np.einsum("ix,ij,jx->", v, OMEGA_BLOCK, u))


# functionals --------------------------------------------------------------

CHARTS = ("psi", "polar")


class Functional:
    """Real-valued function on phase space.

    Subclasses implement ``_value(psi)`` and ``wirtinger(psi)``, the latter
    returning ``dF/d conj(psi)`` with shape ``(2, N)``. A ``polar_gradient``
    method is optional.
    """

    name = "functional"

    def __init__(self, lattice: Lattice, hbar: float = 1.0):
        self.lattice = lattice
        self.hbar = hbar

    def value(self, at: PhaseSpacePoint) -> float:
        return float(self._value(at.psi))

    def _value(self, psi) -> float:
        raise NotImplementedError

    def wirtinger(self, psi) -> np.ndarray:
        raise GradientMissing(f"{self.name} has no amplitude gradient")

    def polar_gradient(self, at: PhaseSpacePoint) -> np.ndarray:
        raise GradientMissing(f"{self.name} has no polar-chart gradient")

    def gradient(self, at: PhaseSpacePoint, chart: str = "psi") -> np.ndarray:
        """Functional derivatives with respect to the four coordinate families, shape ``(4, N)``."""
        if chart == "psi":
            g = self.wirtinger(at.psi)
            w = self.lattice.cell_weight
            return np.stack(
                [np.conj(g[0]) / w, g[0] / (1j * self.hbar * w), np.conj(g[1]) / w, g[1] / (1j * self.hbar * w)]
            )
        if chart == "polar":
            return self.polar_gradient(at)
        raise ValueError(f"unknown chart {chart!r}")

    def velocity(self, psi) -> np.ndarray:
        """Hamiltonian flow ``dpsi/dlambda = dF/d(i hbar conj(psi))``."""
        return self.wirtinger(psi) / (1j * self.hbar * self.lattice.cell_weight)

    def linearized_velocity(self, psi, dpsi) -> np.ndarray:
        """Tangent map of :meth:`velocity`; default is a central difference."""
        eps = 1e-6 * max(1.0, float(np.max(np.abs(psi))))
        scale = max(float(np.max(np.abs(dpsi))), 1e-300)
        step = dpsi / scale * eps
        return (self.velocity(psi + step) - self.velocity(psi - step)) / (2 * eps) * scale


class GeneratorKernel:
    """Hermitian matrix over the composite (spin, site) index, spin-major."""

    def __init__(self, lattice: Lattice, matrix, tol: float = 1e-12):
        matrix = np.asarray(matrix, dtype=complex)
        n = 2 * lattice.size
        if matrix.shape != (n, n):
            raise LatticeMismatch(f"kernel shape {matrix.shape} does not match {n}x{n}")
        scale = max(1.0, float(np.max(np.abs(matrix))))
        if np.max(np.abs(matrix - matrix.conj().T)) > tol * scale:
            raise NonHermitianKernel("kernel is not Hermitian")
        self.lattice = lattice
        self.matrix = matrix

    @classmethod
    def identity(cls, lattice: Lattice):
        return cls(lattice, np.eye(2 * lattice.size))

    @classmethod
    def random(cls, lattice: Lattice, rng: np.random.Generator, scale: float = 1.0):
        n = 2 * lattice.size
        raw = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        herm = 0.5 * (raw + raw.conj().T)
        return cls(lattice, scale * herm / np.sqrt(n))


class BilinearFunctional(Functional):
    """``w psi^dagger K psi`` for a Hermitian kernel ``K``."""

    def __init__(self, kernel: GeneratorKernel, hbar: float = 1.0, name: str = "bilinear"):
        super().__init__(kernel.lattice, hbar)
        self.kernel = kernel
        self.name = name

    def _value(self, psi):
        flat = psi.reshape(-1)
        return self.lattice.cell_weight * np.vdot(flat, self.kernel.matrix @ flat).real

    def wirtinger(self, psi):
        return self.lattice.cell_weight * (self.kernel.matrix @ psi.reshape(-1)).reshape(2, -1)

    def linearized_velocity(self, psi, dpsi):
        return self.velocity(dpsi)

    def propagator(self, dlam: float) -> np.ndarray:
        return scipy.linalg.expm(-1j * dlam / self.hbar * self.kernel.matrix)


class NormFunctional(Functional):
    """``1 - sum w |psi|^2``; vanishes on the unit sphere."""

    name = "norm"

    def _value(self, psi):
        return 1.0 - self.lattice.cell_weight * np.sum(np.abs(psi) ** 2)

    def wirtinger(self, psi):
        return -self.lattice.cell_weight * psi

    def linearized_velocity(self, psi, dpsi):
        return self.velocity(dpsi)

    def polar_gradient(self, at):
        out = np.zeros((4, self.lattice.size))
        out[0] = -1.0
        return out


class CoordinateFunctional(Functional):
    """One polar coordinate at a single site: ``rho``, ``Phi``, ``phi`` or ``rho_s``."""

    KINDS = ("rho", "Phi", "phi", "rho_s")

    def __init__(self, lattice: Lattice, kind: str, site: int, hbar: float = 1.0):
        super().__init__(lattice, hbar)
        if kind not in self.KINDS:
            raise ValueError(f"kind must be one of {self.KINDS}")
        self.kind = kind
        self.site = site
        self.name = f"{kind}[{site}]"

    def _value(self, psi):
        p, m = psi[0, self.site], psi[1, self.site]
        hb = self.hbar
        return {
            "rho": abs(p) ** 2 + abs(m) ** 2,
            "Phi": 0.5 * hb * (np.angle(p) + np.angle(m)),
            "phi": np.angle(m) - np.angle(p),
            "rho_s": 0.5 * hb * (abs(p) ** 2 - abs(m) ** 2),
        }[self.kind]

    def wirtinger(self, psi):
        g = np.zeros_like(psi, dtype=complex)
        p, m = psi[0, self.site], psi[1, self.site]
        hb = self.hbar
        if self.kind == "rho":
            g[:, self.site] = (p, m)
        elif self.kind == "Phi":
            g[:, self.site] = (0.25j * hb / np.conj(p), 0.25j * hb / np.conj(m))
        elif self.kind == "phi":
            g[:, self.site] = (-0.5j / np.conj(p), 0.5j / np.conj(m))
        else:
            g[:, self.site] = (0.5 * hb * p, -0.5 * hb * m)
        return g

    def polar_gradient(self, at):
        out = np.zeros((4, self.lattice.size))
        out[self.KINDS.index(self.kind), self.site] = 1.0 / self.lattice.cell_weight
        return out


class QuarticFunctional(Functional):
    """Diagonal-slice quartic ``K sum w |psi+|^2 |psi-|^2``; Hamiltonian but not Killing."""

    def __init__(self, lattice: Lattice, coupling: float = 1.0, hbar: float = 1.0):
        super().__init__(lattice, hbar)
        self.coupling = float(coupling)
        self.name = f"quartic(K={self.coupling:g})"

    def _value(self, psi):
        dens = np.abs(psi) ** 2
        return self.coupling * self.lattice.cell_weight * np.sum(dens[0] * dens[1])

    def wirtinger(self, psi):
        dens = np.abs(psi) ** 2
        scale = self.coupling * self.lattice.cell_weight
        return scale * np.stack([dens[1] * psi[0], dens[0] * psi[1]])

    def linearized_velocity(self, psi, dpsi):
        p, m = psi
        dp, dm = dpsi
        d_dens_p = 2 * (np.conj(p) * dp).real
        d_dens_m = 2 * (np.conj(m) * dm).real
        out = np.stack(
            [np.abs(m) ** 2 * dp + d_dens_m * p, np.abs(p) ** 2 * dm + d_dens_p * m]
        )
        return self.coupling * out / (1j * self.hbar)


class LinearFunctional(Functional):
    """``sum w 2 Re(conj(a) psi)``; generates a norm-changing translation."""

    def __init__(self, lattice: Lattice, amplitude, hbar: float = 1.0):
        super().__init__(lattice, hbar)
        self.amplitude = np.asarray(amplitude, dtype=complex).reshape(2, -1)
        self.name = "linear"

    def _value(self, psi):
        return self.lattice.cell_weight * np.sum(2 * (np.conj(self.amplitude) * psi).real)

    def wirtinger(self, psi):
        return self.lattice.cell_weight * self.amplitude

    def linearized_velocity(self, psi, dpsi):
        return np.zeros_like(dpsi)


class NumericFunctional(Functional):
    """Wraps ``fn(psi) -> float`` and differentiates it by central differences."""

    def __init__(self, lattice: Lattice, fn, hbar: float = 1.0, step: float = 1e-5, name: str = "numeric"):
        super().__init__(lattice, hbar)
        self.fn = fn
        self.step = step
        self.name = name

    def _value(self, psi):
        return self.fn(psi)

    def wirtinger(self, psi):
        g = np.zeros(psi.shape, dtype=complex)
        h = self.step
        for idx in np.ndindex(psi.shape):
            for unit, slot in ((1.0, "re"), (1j, "im")):
                bump = np.zeros(psi.shape, dtype=complex)
                bump[idx] = unit * h
                deriv = (self.fn(psi + bump) - self.fn(psi - bump)) / (2 * h)
                if slot == "re":
                    g[idx] += 0.5 * deriv
                else:
                    g[idx] += 0.5j * deriv
        return g


def poisson_bracket(f: Functional, g: Functional, at: PhaseSpacePoint, chart: str = "psi") -> float:
    """``sum_x w [F1 G2 - F2 G1 + F3 G4 - F4 G3]`` with functional derivatives in ``chart``."""
    df = f.gradient(at, chart)
    dg = g.gradient(at, chart)
    w = at.lattice.cell_weight
    total = np.sum(df[0] * dg[1] - df[1] * dg[0] + df[2] * dg[3] - df[3] * dg[2])
    return float((w * total).real)


def normalization_flow(start: PhaseSpacePoint, sigma: float) -> PhaseSpacePoint:
    """Flow generated by the norm functional: a global phase ``e^{i sigma/hbar}``."""
    return PhaseSpacePoint(start.lattice, start.psi * np.exp(1j * sigma / start.hbar), start.hbar)


def random_point(lattice: Lattice, rng: np.random.Generator, hbar: float = 1.0) -> PhaseSpacePoint:
    psi = rng.normal(size=(2, lattice.size)) + 1j * rng.normal(size=(2, lattice.size))
    psi /= np.sqrt(lattice.cell_weight * np.sum(np.abs(psi) ** 2))
    return PhaseSpacePoint(lattice, psi, hbar)


def sphere_tangent(at: PhaseSpacePoint, direction) -> np.ndarray:
    """Derivative at 0 of ``(psi + eps d)/|psi + eps d|``, an analytic family on the unit sphere."""
    w = at.lattice.cell_weight
    overlap = w * np.sum(np.conj(at.psi) * direction).real
    return direction - overlap * at.psi


# flow test ----------------------------------------------------------------


@dataclass
class FlowReport:
    generator_id: str
    steps: int
    dlambda: float
    omega_drift: float
    metric_drift: float
    norm_drift: float
    linearity_defect: float
    fs_drift: float
    integrator: str
    verdict: str

    def to_dict(self) -> dict:
        return asdict(self)


def _rk4(rate, state, h):
    k1 = rate(state)
    k2 = rate(state + 0.5 * h * k1)
    k3 = rate(state + 0.5 * h * k2)
    k4 = rate(state + h * k3)
    return state + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def hk_flow_test(
    generator: Functional,
    steps: int,
    dlambda: float,
    start: PhaseSpacePoint | None = None,
    n_tangents: int = 4,
    seed: int = 0,
    tol: float = 1e-8,
    integrator: str = "auto",
) -> FlowReport:
    """Integrate the Hamiltonian flow of ``generator`` and measure what it preserves.

    Drifts are maximal absolute changes over the run of: the symplectic and
    metric pairings of ``n_tangents`` unit tangent vectors carried by the
    tangent map, the norm, and the distance between two nearby states.
    ``integrator`` is ``"expm"`` (bilinear generators only), ``"rk4"`` or
    ``"auto"``.
    """
    lat = generator.lattice
    hbar = generator.hbar
    rng = np.random.default_rng(seed)
    if start is None:
        start = random_point(lat, rng, hbar)
    w = lat.cell_weight
    shape = start.psi.shape

    tangents = []
    for _ in range(n_tangents):
        d = rng.normal(size=shape) + 1j * rng.normal(size=shape)
        t = sphere_tangent(start, d)
        t /= np.sqrt(w * np.sum(np.abs(t) ** 2))
        tangents.append(t)
    partner = start.psi + 1e-2 * sphere_tangent(start, rng.normal(size=shape) + 1j * rng.normal(size=shape))
    partner /= np.sqrt(w * np.sum(np.abs(partner) ** 2))
    extra_a = rng.normal(size=shape) + 1j * rng.normal(size=shape)
    extra_b = rng.normal(size=shape) + 1j * rng.normal(size=shape)
    extra_a /= np.sqrt(w * np.sum(np.abs(extra_a) ** 2))
    extra_b /= np.sqrt(w * np.sum(np.abs(extra_b) ** 2))

    def pairings(vecs):
        tv = [TangentVector.from_amplitudes(lat, v, hbar) for v in vecs]
        om = np.array([[omega_pair(a, b) for b in tv] for a in tv])
        gm = np.array([[metric_pair(a, b) for b in tv] for a in tv])
        return om, gm

    def fs(a, b):
        overlap = w * np.sum(np.conj(b) * a)
        return w * np.sum(np.abs(a - b * np.exp(1j * np.angle(overlap))) ** 2)

    if integrator == "auto":
        integrator = "expm" if isinstance(generator, BilinearFunctional) else "rk4"

    states = [start.psi, partner, extra_a, extra_b, extra_a + extra_b]
    n_states = len(states)
    stack = np.stack(states + tangents)

    if integrator == "expm":
        if not isinstance(generator, BilinearFunctional):
            raise ValueError("exponential stepping needs a bilinear generator")
        prop = generator.propagator(dlambda)

        def advance(block):
            flat = block.reshape(block.shape[0], -1)
            return (flat @ prop.T).reshape(block.shape)

    elif integrator == "rk4":

        def rate(block):
            out = np.empty_like(block)
            for k in range(n_states):
                out[k] = generator.velocity(block[k])
            base = block[0]
            for k in range(n_states, block.shape[0]):
                out[k] = generator.linearized_velocity(base, block[k])
            return out

        def advance(block):
            return _rk4(rate, block, dlambda)

    else:
        raise ValueError(f"unknown integrator {integrator!r}")

    om0, gm0 = pairings(stack[n_states:])
    norm0 = w * np.sum(np.abs(stack[0]) ** 2)
    fs0 = fs(stack[0], stack[1])
    omega_drift = metric_drift = norm_drift = fs_drift = 0.0
    for _ in range(steps):
        stack = advance(stack)
        om, gm = pairings(stack[n_states:])
        omega_drift = max(omega_drift, float(np.max(np.abs(om - om0))))
        metric_drift = max(metric_drift, float(np.max(np.abs(gm - gm0))))
        norm_drift = max(norm_drift, float(abs(w * np.sum(np.abs(stack[0]) ** 2) - norm0)))
        fs_drift = max(fs_drift, float(abs(fs(stack[0], stack[1]) - fs0)))

    defect_vec = stack[2] + stack[3] - stack[4]
    linearity_defect = float(np.sqrt(w * np.sum(np.abs(defect_vec) ** 2)) / 2.0)

    if omega_drift <= tol and metric_drift <= tol:
        verdict = "hamilton-killing"
    elif omega_drift <= tol:
        verdict = "hamiltonian-not-killing"
    else:
        verdict = "not-hamiltonian"
    if norm_drift > tol:
        verdict += "+norm-changing"
    return FlowReport(
        generator_id=generator.name,
        steps=steps,
        dlambda=dlambda,
        omega_drift=omega_drift,
        metric_drift=metric_drift,
        norm_drift=norm_drift,
        linearity_defect=linearity_defect,
        fs_drift=fs_drift,
        integrator=integrator,
        verdict=verdict,
    )
