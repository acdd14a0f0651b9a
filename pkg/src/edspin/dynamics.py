"""Pauli Hamiltonian, time evolution and the observables built on it.

The Hamiltonian acting on amplitude pairs is

    H = (1/2m) [ -hbar^2 lap + i hbar (q/c) (d.(A .) + A.d) + (q/c)^2 A^2 ]
        + V + (-hbar q/(2mc) B + kappa_m B + kappa_e E) . sigma

where ``sigma`` acts on ``(psi+, psi-)`` exactly as left multiplication by a
vector acts on a spinor. The first bracket expands ``(p - qA/c)^2`` so that
it stays Hermitian for central differences.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field as dataclass_field, replace
from typing import Callable, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import CFLWarning, FieldMismatchWarning, LatticeMismatch, SolverDiverged, TimeReversalNotice
from .field import RHO_FLOOR, SpinorField, born_extract
from .lattice import Constants, Lattice, curl, divergence, gradient, laplacian, partial


# external fields ----------------------------------------------------------


def _vector_field(value, lattice):
    if value is None:
        return None
    arr = np.asarray(value, dtype=float)
    if arr.shape == (3,):
        arr = arr.reshape((3,) + (1,) * lattice.dim)
    try:
        return np.broadcast_to(arr, (3,) + lattice.shape).copy()
    except ValueError as exc:
        raise LatticeMismatch(f"vector field of shape {arr.shape} does not fit {lattice.shape}") from exc


def _scalar_field(value, lattice):
    if value is None:
        return None
    arr = np.asarray(value, dtype=float)
    try:
        return np.broadcast_to(arr, lattice.shape).copy()
    except ValueError as exc:
        raise LatticeMismatch(f"scalar field of shape {arr.shape} does not fit {lattice.shape}") from exc


@dataclass(frozen=True, eq=False)
class ExternalFields:
    """Potentials, fields and dipole couplings on a lattice.

    Vector inputs may be given as 3-vectors (uniform) or ``(3, *points)``
    arrays. The Zeeman term uses ``B`` if supplied, otherwise ``curl A``.
    """

    lattice: Lattice
    V: np.ndarray | None = None
    A: np.ndarray | None = None
    B: np.ndarray | None = None
    E: np.ndarray | None = None
    kappa_m: float = 0.0
    kappa_e: float = 0.0
    constants: Constants = dataclass_field(default_factory=Constants)
    derivative: str = "central"
    mismatch_rtol: float = 1e-2

    def __post_init__(self):
        lat = self.lattice
        object.__setattr__(self, "V", _scalar_field(self.V, lat))
        for name in ("A", "B", "E"):
            object.__setattr__(self, name, _vector_field(getattr(self, name), lat))
        if self.A is not None and self.B is not None:
            derived = curl(self.A, lat, self.derivative)
            scale = max(float(np.max(np.abs(self.B))), 1e-300)
            if np.max(np.abs(derived - self.B)) > self.mismatch_rtol * scale:
                warnings.warn("supplied B differs from curl A", FieldMismatchWarning, stacklevel=3)
        if self.kappa_e != 0:
            warnings.warn(
                "electric dipole coupling is active: dynamics is not time-reversal invariant",
                TimeReversalNotice,
                stacklevel=3,
            )

    @classmethod
    def free(cls, lattice: Lattice, constants: Constants | None = None, derivative: str = "central"):
        return cls(lattice, constants=constants or Constants(), derivative=derivative)

    def magnetic_field(self) -> np.ndarray:
        if self.B is not None:
            return self.B
        if self.A is not None:
            return curl(self.A, self.lattice, self.derivative)
        return np.zeros((3,) + self.lattice.shape)

    def spin_coupling(self) -> np.ndarray:
        """Total vector ``b`` multiplying sigma: ``(kappa_m - mu) B + kappa_e E``."""
        out = (self.kappa_m - self.constants.magneton) * self.magnetic_field()
        if self.E is not None and self.kappa_e != 0:
            out = out + self.kappa_e * self.E
        return out

    def potential(self) -> np.ndarray:
        return np.zeros(self.lattice.shape) if self.V is None else self.V

    def vector_potential(self) -> np.ndarray:
        return np.zeros((3,) + self.lattice.shape) if self.A is None else self.A

    def replace(self, **changes) -> "ExternalFields":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", TimeReversalNotice)
            return replace(self, **changes)


FieldsLike = Union[ExternalFields, Callable[[float], ExternalFields]]


def fields_at(ext: FieldsLike, t: float) -> ExternalFields:
    return ext(t) if callable(ext) else ext


# Hamiltonian application --------------------------------------------------


def _sigma_dot(b, psi):
    plus, minus = psi
    return np.stack(
        [b[2] * plus + (b[0] - 1j * b[1]) * minus, (b[0] + 1j * b[1]) * plus - b[2] * minus]
    )


def _kinetic(psi, ext: ExternalFields):
    """Dot-product part of ``(p - qA/c)^2 / 2m`` applied to both components."""
    lat = ext.lattice
    k = ext.constants
    method = ext.derivative
    out = -(k.hbar**2) * laplacian(psi, lat, method)
    if ext.A is not None:
        g = k.q / k.c
        cross = np.zeros_like(psi)
        for axis in range(lat.dim):
            a_comp = ext.A[lat.directions[axis]]
            cross += partial(a_comp * psi, lat, axis, method) + a_comp * partial(psi, lat, axis, method)
        out = out + 1j * k.hbar * g * cross + g * g * np.sum(ext.A**2, axis=0) * psi
    return out / (2 * k.m)


def apply_h0(field: SpinorField, ext: ExternalFields) -> SpinorField:
    """``(1/2m)(hbar/i grad - qA/c)^2 Psi`` including its Zeeman part ``-(hbar q/2mc) B Psi``."""
    ext.lattice.require_same(field.lattice)
    zeeman = -ext.constants.magneton * ext.magnetic_field()
    return field.with_psi(_kinetic(field.psi, ext) + _sigma_dot(zeeman, field.psi))


def apply_hamiltonian(field: SpinorField, ext: ExternalFields) -> SpinorField:
    ext.lattice.require_same(field.lattice)
    psi = field.psi
    out = _kinetic(psi, ext) + ext.potential() * psi + _sigma_dot(ext.spin_coupling(), psi)
    return field.with_psi(out)


def energy(field: SpinorField, ext: ExternalFields) -> float:
    """``<Psi|H|Psi>``, the e-Hamiltonian."""
    h_psi = apply_hamiltonian(field, ext).psi
    return float(field.lattice.integrate(np.sum(np.conj(field.psi) * h_psi, axis=0)).real)


def _periodic_difference(n, h):
    ones = np.ones(n)
    d = sp.diags([ones[:-1], -ones[:-1]], [1, -1], shape=(n, n), format="lil")
    d[0, n - 1] = -1.0
    d[n - 1, 0] = 1.0
    return d.tocsr() / (2 * h)


def _periodic_second_difference(n, h):
    ones = np.ones(n)
    d = sp.diags([ones[:-1], -2 * ones, ones[:-1]], [1, 0, -1], shape=(n, n), format="lil")
    d[0, n - 1] = 1.0
    d[n - 1, 0] = 1.0
    return d.tocsr() / (h * h)


def _axis_operator(lattice, axis, op1d):
    mats = [sp.identity(n, format="csr") for n in lattice.points]
    mats[axis] = op1d
    out = mats[0]
    for m in mats[1:]:
        out = sp.kron(out, m, format="csr")
    return out


def hamiltonian_matrix(ext: ExternalFields) -> sp.csr_matrix:
    """Sparse ``2N x 2N`` matrix of :func:`apply_hamiltonian` for central differences.

    Rows are ordered spin-major, then row-major over lattice sites.
    """
    if ext.derivative != "central":
        raise ValueError("sparse assembly supports central differences only")
    lat = ext.lattice
    k = ext.constants
    lap = sum(_axis_operator(lat, a, _periodic_second_difference(lat.points[a], lat.spacing[a])) for a in range(lat.dim))
    kin = -(k.hbar**2) * lap
    if ext.A is not None:
        g = k.q / k.c
        for axis in range(lat.dim):
            d = _axis_operator(lat, axis, _periodic_difference(lat.points[axis], lat.spacing[axis]))
            a_diag = sp.diags(ext.A[lat.directions[axis]].reshape(-1))
            kin = kin + 1j * k.hbar * g * (d @ a_diag + a_diag @ d)
        kin = kin + sp.diags(g * g * np.sum(ext.A**2, axis=0).reshape(-1))
    kin = kin / (2 * k.m)
    b = ext.spin_coupling().reshape(3, -1)
    v = ext.potential().reshape(-1)
    local = sp.bmat(
        [
            [sp.diags(v + b[2]), sp.diags(b[0] - 1j * b[1])],
            [sp.diags(b[0] + 1j * b[1]), sp.diags(v - b[2])],
        ]
    )
    return (sp.block_diag([kin, kin]) + local).tocsr().astype(complex)


# evolution ----------------------------------------------------------------

SCHEMES = ("crank_nicolson", "split_step")


@dataclass(frozen=True)
class EvolverConfig:
    dt: float
    scheme: str = "crank_nicolson"
    tol: float = 1e-12
    max_iter: int = 200
    max_steps: int = 10_000_000
    save_every: int = 1
    solver: str = "direct"
    cfl_safety: float = 10.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.solver not in ("direct", "iterative"):
            raise ValueError("solver must be 'direct' or 'iterative'")
        if self.save_every < 1:
            raise ValueError("save_every must be >= 1")


@dataclass
class Series:
    """Saved frames of a run plus the norm after every step."""

    frames: list
    step_times: np.ndarray
    step_norms: np.ndarray

    @property
    def times(self) -> np.ndarray:
        return np.array([f.time for f in self.frames])

    @property
    def lattice(self) -> Lattice:
        return self.frames[0].lattice

    def __len__(self):
        return len(self.frames)

    def __getitem__(self, k) -> SpinorField:
        return self.frames[k]


def cfl_bound(lattice: Lattice, constants: Constants, safety: float) -> float:
    return safety * constants.m * min(lattice.spacing) ** 2 / constants.hbar


class _CNStepper:
    def __init__(self, cfg: EvolverConfig):
        self.cfg = cfg
        self._cache_key = None
        self._ops = None

    def _prepare(self, ext: ExternalFields):
        if self._cache_key is ext:
            return self._ops
        cfg = self.cfg
        k = ext.constants
        half = 0.5j * cfg.dt / k.hbar
        if ext.derivative == "central" and cfg.solver == "direct":
            h = hamiltonian_matrix(ext)
            eye = sp.identity(h.shape[0], dtype=complex, format="csc")
            lu = spla.splu((eye + half * h).tocsc())
            explicit = (eye - half * h).tocsr()
            ops = ("direct", lu, explicit)
        else:
            lat = ext.lattice
            shape = (2,) + lat.shape

            def apply(x):
                return _kinetic(x.reshape(shape), ext) + ext.potential() * x.reshape(shape) + _sigma_dot(
                    ext.spin_coupling(), x.reshape(shape)
                )

            n = 2 * lat.size

            def implicit(x):
                return x + half * apply(x).reshape(-1)

            operator = spla.LinearOperator((n, n), matvec=implicit, dtype=complex)
            kin = _kinetic_symbol(lat, k, ext.derivative)

            def precondition(x):
                xs = x.reshape(shape)
                axes = tuple(range(1, lat.dim + 1))
                y = np.fft.ifftn(np.fft.fftn(xs, axes=axes) / (1 + half * kin), axes=axes)
                return y.reshape(-1)

            prec = spla.LinearOperator((n, n), matvec=precondition, dtype=complex)
            ops = ("iterative", operator, apply, prec)
        self._cache_key = ext
        self._ops = ops
        return ops

    def step(self, psi, ext: ExternalFields):
        ops = self._prepare(ext)
        flat = psi.reshape(-1)
        if ops[0] == "direct":
            _, lu, explicit = ops
            out = lu.solve(explicit @ flat)
        else:
            _, operator, apply, prec = ops
            half = 0.5j * self.cfg.dt / ext.constants.hbar
            rhs = flat - half * apply(flat).reshape(-1)
            out, info = spla.gmres(
                operator, rhs, x0=rhs, rtol=self.cfg.tol, atol=0.0, maxiter=self.cfg.max_iter, M=prec, restart=40
            )
            if info != 0:
                raise SolverDiverged(f"implicit solve did not reach tol={self.cfg.tol} (info={info})")
        return out.reshape(psi.shape)


def _kinetic_symbol(lattice: Lattice, constants: Constants, method: str):
    """Fourier symbol of the free kinetic operator on the lattice."""
    grids = np.meshgrid(*(lattice.wavenumbers(a) for a in range(lattice.dim)), indexing="ij")
    total = np.zeros(lattice.shape)
    for a, kk in enumerate(grids):
        if method == "spectral":
            total += kk**2
        else:
            h = lattice.spacing[a]
            total += 2 * (1 - np.cos(kk * h)) / (h * h)
    return constants.hbar**2 * total / (2 * constants.m)


def _local_exponential(b, v, tau):
    """``exp(-i tau (v + b.sigma))`` applied pointwise; returns the 2x2 entries."""
    mag = np.sqrt(np.sum(b**2, axis=0))
    safe = np.where(mag > 0, mag, 1.0)
    n = b / safe
    c = np.cos(mag * tau)
    s = np.where(mag > 0, np.sin(mag * tau), 0.0)
    phase = np.exp(-1j * v * tau)
    m00 = phase * (c - 1j * s * n[2])
    m01 = phase * (-1j * s * (n[0] - 1j * n[1]))
    m10 = phase * (-1j * s * (n[0] + 1j * n[1]))
    m11 = phase * (c + 1j * s * n[2])
    return m00, m01, m10, m11


class _SplitStepper:
    def __init__(self, cfg: EvolverConfig):
        self.cfg = cfg
        self._kin_key = None
        self._kin_phase = None
        self._loc_key = None
        self._loc = None

    def step(self, psi, ext: ExternalFields):
        if ext.A is not None and np.any(ext.A != 0):
            raise ValueError("split-step scheme requires A = 0")
        lat = ext.lattice
        k = ext.constants
        dt = self.cfg.dt
        if self._kin_key != (lat, k):
            symbol = _kinetic_symbol(lat, k, "spectral")
            self._kin_phase = np.exp(-1j * symbol * dt / k.hbar)
            self._kin_key = (lat, k)
        if self._loc_key is not ext:
            self._loc = _local_exponential(ext.spin_coupling(), ext.potential(), 0.5 * dt / k.hbar)
            self._loc_key = ext
        m00, m01, m10, m11 = self._loc
        plus, minus = psi
        plus, minus = m00 * plus + m01 * minus, m10 * plus + m11 * minus
        axes = tuple(range(-lat.dim, 0))
        plus = np.fft.ifftn(self._kin_phase * np.fft.fftn(plus, axes=axes), axes=axes)
        minus = np.fft.ifftn(self._kin_phase * np.fft.fftn(minus, axes=axes), axes=axes)
        plus, minus = m00 * plus + m01 * minus, m10 * plus + m11 * minus
        return np.stack([plus, minus])


def evolve(field: SpinorField, ext: FieldsLike, cfg: EvolverConfig, t_span) -> Series:
    """Integrate the Pauli equation from ``t_span[0]`` to ``t_span[1]``.

    ``ext`` is either fixed fields or a callable ``t -> ExternalFields``
    sampled at each half step; returning the same object for consecutive
    steps lets the stepper reuse its factorisation.
    """
    t0, t1 = float(t_span[0]), float(t_span[1])
    n_steps = int(round((t1 - t0) / cfg.dt))
    if n_steps < 0 or abs(n_steps * cfg.dt - (t1 - t0)) > 1e-9 * max(1.0, abs(t1 - t0)):
        raise ValueError("t_span must be a non-negative multiple of dt")
    if n_steps > cfg.max_steps:
        raise ValueError(f"{n_steps} steps exceed max_steps={cfg.max_steps}")
    field.require_normalized()
    first = fields_at(ext, t0 + 0.5 * cfg.dt)
    first.lattice.require_same(field.lattice)
    bound = cfl_bound(field.lattice, first.constants, cfg.cfl_safety)
    if cfg.dt > bound:
        warnings.warn(f"dt={cfg.dt} exceeds sanity bound {bound:.3g}", CFLWarning, stacklevel=2)
    stepper = _CNStepper(cfg) if cfg.scheme == "crank_nicolson" else _SplitStepper(cfg)

    psi = np.array(field.psi)
    lat = field.lattice
    w = lat.cell_weight
    frames = [field.with_psi(psi, time=t0)]
    step_times = np.empty(n_steps + 1)
    step_norms = np.empty(n_steps + 1)
    step_times[0] = t0
    step_norms[0] = w * np.sum(np.abs(psi) ** 2)
    for n in range(1, n_steps + 1):
        t_mid = t0 + (n - 0.5) * cfg.dt
        psi = stepper.step(psi, fields_at(ext, t_mid))
        t = t0 + n * cfg.dt
        step_times[n] = t
        step_norms[n] = w * np.sum(np.abs(psi) ** 2)
        if n % cfg.save_every == 0 or n == n_steps:
            frames.append(SpinorField(lat, psi, t))
    return Series(frames, step_times, step_norms)


# observables --------------------------------------------------------------


def _flux_numerator(field: SpinorField, method: str) -> np.ndarray:
    """``sum_pm Im(conj(psi) grad psi)``, shape ``(3, *points)``."""
    lat = field.lattice
    out = np.zeros((3,) + lat.shape)
    for comp in field.psi:
        out += np.imag(np.conj(comp) * gradient(comp, lat, method))
    return out


@dataclass(frozen=True)
class DriftVelocity:
    velocity: np.ndarray
    singular: np.ndarray


def drift_velocity(
    field: SpinorField, ext: ExternalFields, form: str = "projection", rho_floor: float = RHO_FLOOR
) -> DriftVelocity:
    """Drift velocity ``(hbar/m) Im(conj(psi) grad psi)/rho - (q/mc) A``.

    ``form="chart"`` evaluates the same field from phase gradients as
    ``(1/m) grad Phi - (q/mc) A - (hbar/2m) cos(theta) grad phi``.
    """
    lat = field.lattice
    k = ext.constants
    rho = field.density()
    singular = rho < rho_floor
    safe = np.maximum(rho, rho_floor)
    if form == "projection":
        v = k.hbar * _flux_numerator(field, ext.derivative) / (k.m * safe)
    elif form == "chart":
        plus, minus = field.psi
        cos_theta = (np.abs(plus) ** 2 - np.abs(minus) ** 2) / safe
        v = np.zeros((3,) + lat.shape)
        for axis in range(lat.dim):
            d_plus = _phase_derivative(plus, lat, axis)
            d_minus = _phase_derivative(minus, lat, axis)
            d_Phi = 0.5 * k.hbar * (d_plus + d_minus)
            d_phi = d_minus - d_plus
            v[lat.directions[axis]] = d_Phi / k.m - 0.5 * k.hbar / k.m * cos_theta * d_phi
    else:
        raise ValueError("form must be 'projection' or 'chart'")
    if ext.A is not None:
        v = v - k.q / (k.m * k.c) * ext.A
    return DriftVelocity(v, singular)


def _phase_derivative(comp, lattice, axis):
    """Central difference of ``arg comp`` that is immune to branch cuts."""
    ax = comp.ndim - lattice.dim + axis
    ratio = np.roll(comp, -1, axis=ax) * np.conj(np.roll(comp, 1, axis=ax))
    return np.angle(ratio) / (2 * lattice.spacing[axis])


def probability_current(field: SpinorField, ext: ExternalFields) -> np.ndarray:
    """``rho v`` without dividing by the density."""
    k = ext.constants
    j = k.hbar * _flux_numerator(field, ext.derivative) / k.m
    if ext.A is not None:
        j = j - k.q / (k.m * k.c) * ext.A * field.density()
    return j


def continuity_residual(series: Series, ext: FieldsLike) -> float:
    """RMS over interior frames of ``sqrt(sum w r^2)`` with ``r = d_t rho + div(rho v)``.

    Time derivatives use central differences between neighbouring frames,
    so frames must be equally spaced.
    """
    frames = series.frames
    if len(frames) < 3:
        raise ValueError("need at least three frames")
    times = series.times
    lat = series.lattice
    total = 0.0
    for n in range(1, len(frames) - 1):
        dt = times[n + 1] - times[n - 1]
        d_rho = (frames[n + 1].density() - frames[n - 1].density()) / dt
        fields_n = fields_at(ext, times[n])
        flux = probability_current(frames[n], fields_n)
        r = d_rho + divergence(flux, lat, fields_n.derivative)
        total += lat.integrate(r**2)
    return float(np.sqrt(total / (len(frames) - 2)))


def kinetic_identity_terms(field: SpinorField, ext: ExternalFields, rho_floor: float = RHO_FLOOR) -> dict:
    """Pointwise terms of the kinetic-energy decomposition.

    ``lhs = rho m v^2 / 2`` and
    ``rhs = <Psi~ H0 Psi>_0 + (hbar^2/2m) sqrt(rho) lap sqrt(rho)
            - (hbar^2/8m) rho (d_a s)^2 + (hbar q/2mc) rho B.s``.
    """
    lat = field.lattice
    k = ext.constants
    method = ext.derivative
    rho = field.density()
    v = drift_velocity(field, ext, rho_floor=rho_floor).velocity
    lhs = 0.5 * k.m * rho * np.sum(v**2, axis=0)
    h0 = apply_h0(field, ext).psi
    expectation = np.sum(np.conj(field.psi) * h0, axis=0).real
    root = np.sqrt(rho)
    quantum = k.hbar**2 / (2 * k.m) * root * laplacian(root, lat, method)
    s = born_extract(field, k.hbar, rho_floor).s
    ds2 = np.zeros(lat.shape)
    for axis in range(lat.dim):
        ds2 += np.sum(partial(s, lat, axis, method) ** 2, axis=0)
    spin_gradient = -(k.hbar**2) / (8 * k.m) * rho * ds2
    zeeman = k.magneton * rho * np.sum(ext.magnetic_field() * s, axis=0)
    rhs = expectation + quantum + spin_gradient + zeeman
    return {
        "lhs": lhs,
        "rhs": rhs,
        "expectation": expectation,
        "quantum": quantum,
        "spin_gradient": spin_gradient,
        "zeeman": zeeman,
    }


def kinetic_identity_residual(field: SpinorField, ext: ExternalFields) -> np.ndarray:
    """Pointwise residual ``lhs - rhs`` of the kinetic-energy decomposition."""
    terms = kinetic_identity_terms(field, ext)
    return terms["lhs"] - terms["rhs"]


# time reversal ------------------------------------------------------------


def time_reverse(field: SpinorField) -> SpinorField:
    plus, minus = field.psi
    return field.with_psi(np.stack([-np.conj(minus), np.conj(plus)]))


def reverse_fields(ext: ExternalFields) -> ExternalFields:
    return ext.replace(
        A=None if ext.A is None else -ext.A,
        B=None if ext.B is None else -ext.B,
    )


# diagnostics --------------------------------------------------------------


def action_diagnostic(series: Series, ext: FieldsLike) -> float:
    """Midpoint-rule action ``sum dt sum w Re(i hbar m^dagger dPsi/dt - m^dagger H m)``.

    ``m`` is the average of neighbouring frames. For a Crank-Nicolson run
    saved every step the integrand vanishes and the action is stationary
    under interior variations.
    """
    frames = series.frames
    times = series.times
    total = 0.0
    for n in range(len(frames) - 1):
        dt = times[n + 1] - times[n]
        mid_psi = 0.5 * (frames[n].psi + frames[n + 1].psi)
        mid = frames[n].with_psi(mid_psi)
        fields_n = fields_at(ext, 0.5 * (times[n] + times[n + 1]))
        hbar = fields_n.constants.hbar
        kinetic = np.sum(np.conj(mid_psi) * 1j * hbar * (frames[n + 1].psi - frames[n].psi), axis=0).real
        potential = np.sum(np.conj(mid_psi) * apply_hamiltonian(mid, fields_n).psi, axis=0).real * dt
        total += float(mid.lattice.integrate(kinetic - potential))
    return total


def local_energy(a: SpinorField, b: SpinorField, hbar: float = 1.0, rho_floor: float = RHO_FLOOR) -> np.ndarray:
    """``-d_t Phi + (hbar/2) cos(theta) d_t phi`` between two nearby frames."""
    dt = b.time - a.time
    rates = [np.angle(pb * np.conj(pa)) / dt for pa, pb in zip(a.psi, b.psi)]
    d_Phi = 0.5 * hbar * (rates[0] + rates[1])
    d_phi = rates[1] - rates[0]
    mid = 0.5 * (a.psi + b.psi)
    rho = np.maximum(np.abs(mid[0]) ** 2 + np.abs(mid[1]) ** 2, rho_floor)
    cos_theta = (np.abs(mid[0]) ** 2 - np.abs(mid[1]) ** 2) / rho
    return -d_Phi + 0.5 * hbar * cos_theta * d_phi


def electric_current(field: SpinorField, ext: ExternalFields) -> np.ndarray:
    """``q rho v + c curl M`` with magnetisation ``M = (q/mc) rho S``."""
    k = ext.constants
    spin = born_extract(field, k.hbar).spin_density
    magnetization = k.q / (k.m * k.c) * spin
    return k.q * probability_current(field, ext) + k.c * curl(magnetization, field.lattice, ext.derivative)


def expectation_values(field: SpinorField, ext: ExternalFields) -> dict:
    """Norm, energy, mean position, mean canonical momentum and total spin."""
    lat = field.lattice
    k = ext.constants
    rho = field.density()
    pos = lat.positions()
    momentum = np.zeros(3)
    for comp in field.psi:
        grad = gradient(comp, lat, ext.derivative)
        momentum += lat.integrate(np.real(np.conj(comp) * (-1j * k.hbar) * grad))
    spin = lat.integrate(born_extract(field, k.hbar).spin_density)
    return {
        "norm": float(lat.integrate(rho)),
        "energy": energy(field, ext),
        "position": lat.integrate(rho * pos),
        "momentum": momentum,
        "spin": spin,
    }


LEDGER_COLUMNS = (
    "t", "norm", "energy",
    "x_mean", "y_mean", "z_mean",
    "px_mean", "py_mean", "pz_mean",
    "Sx", "Sy", "Sz",
)


def ledger_rows(series: Series, ext: FieldsLike) -> list:
    rows = []
    for frame in series.frames:
        obs = expectation_values(frame, fields_at(ext, frame.time))
        rows.append(
            [frame.time, obs["norm"], obs["energy"], *obs["position"], *obs["momentum"], *obs["spin"]]
        )
    return rows


def write_ledger_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LEDGER_COLUMNS)
        for row in rows:
            writer.writerow([repr(float(x)) for x in row])


def precession_rate(times, spins) -> float:
    """Angular velocity of the transverse spin, from a least-squares fit of its unwrapped angle."""
    spins = np.asarray(spins)
    angle = np.unwrap(np.arctan2(spins[:, 1], spins[:, 0]))
    slope, _ = np.polyfit(np.asarray(times), angle, 1)
    return float(slope)


def scalar_ground_state(lattice: Lattice, potential, constants: Constants | None = None):
    """Lowest eigenpair of the scalar operator ``-hbar^2 lap/2m + V`` (central differences).

    The eigenvector is real, normalised and made positive.
    """
    constants = constants or Constants()
    ext = ExternalFields(lattice, V=potential, constants=constants)
    full = hamiltonian_matrix(ext)
    n = lattice.size
    block = full[:n, :n].real
    vals, vecs = spla.eigsh(block.tocsc(), k=1, sigma=float(np.min(ext.potential())) - 1.0, which="LM")
    vec = vecs[:, 0].reshape(lattice.shape)
    vec = vec * np.sign(np.sum(vec))
    vec /= np.sqrt(lattice.integrate(vec**2))
    return float(vals[0]), vec


def second_moment(field: SpinorField, axis: int = 0) -> tuple:
    """Mean and variance of the position along a lattice axis."""
    lat = field.lattice
    rho = field.density()
    x = lat.grid()[axis]
    mean = float(lat.integrate(rho * x))
    var = float(lat.integrate(rho * (x - mean) ** 2))
    return mean, var


__all__ = [
    "ExternalFields", "EvolverConfig", "Series", "DriftVelocity",
    "apply_hamiltonian", "apply_h0", "energy", "hamiltonian_matrix", "evolve",
    "drift_velocity", "probability_current", "continuity_residual",
    "kinetic_identity_residual", "kinetic_identity_terms", "time_reverse", "reverse_fields",
    "action_diagnostic", "local_energy", "electric_current", "expectation_values",
    "ledger_rows", "write_ledger_csv", "precession_rate", "scalar_ground_state",
    "second_moment", "fields_at", "cfl_bound",
]
