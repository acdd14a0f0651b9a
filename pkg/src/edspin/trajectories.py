"""Particle trajectories along the drift velocity, ensemble sampling and Stern-Gerlach runs."""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import asdict, dataclass, field as dataclass_field
from typing import Callable

import numpy as np
from scipy import stats

from .dynamics import EvolverConfig, ExternalFields, Series, drift_velocity, evolve
from .errors import LeftDomain, PacketsNotSeparated
from .field import SpinorField, born_extract
from .lattice import Constants, Lattice

log = logging.getLogger(__name__)


# per-particle random streams ----------------------------------------------


def particle_generator(seed: int, index: int) -> np.random.Generator:
    """Independent stream for particle ``index``; identical in serial and parallel runs."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(index)])))


def particle_uniforms(seed: int, n: int, k: int) -> np.ndarray:
    """``k`` uniforms in ``[0, 1)`` per particle, shape ``(n, k)``."""
    out = np.empty((n, k))
    for i in range(n):
        words = np.random.SeedSequence([int(seed), i]).generate_state(k, np.uint64)
        out[i] = (words >> np.uint64(11)) * 2.0**-53
    return out


# interpolation ------------------------------------------------------------


def interpolate(values: np.ndarray, lattice: Lattice, positions: np.ndarray) -> np.ndarray:
    """Periodic multilinear interpolation.

    ``values`` has shape ``(C, *points)``; ``positions`` has shape ``(N, 3)``.
    Returns ``(N, C)``.
    """
    positions = np.atleast_2d(positions)
    n = positions.shape[0]
    base = []
    frac = []
    for k in range(lattice.dim):
        u = (positions[:, lattice.directions[k]] + 0.5 * lattice.extents[k]) / lattice.spacing[k]
        i0 = np.floor(u)
        frac.append(u - i0)
        base.append(i0.astype(np.int64) % lattice.points[k])
    flat = values.reshape(values.shape[0], -1)
    out = np.zeros((n, values.shape[0]))
    for corner in range(2 ** lattice.dim):
        weight = np.ones(n)
        index = np.zeros(n, dtype=np.int64)
        for k in range(lattice.dim):
            bit = (corner >> k) & 1
            idx = (base[k] + bit) % lattice.points[k]
            weight *= frac[k] if bit else 1.0 - frac[k]
            index = index * lattice.points[k] + idx
        out += weight[:, None] * flat[:, index].T
    return out


class FrameInterpolator:
    """Field sampled on saved frames, interpolated linearly in time and multilinearly in space."""

    def __init__(self, times, values, lattice: Lattice):
        self.times = np.asarray(times, dtype=float)
        self.values = np.asarray(values)
        self.lattice = lattice
        if len(self.times) != len(self.values):
            raise ValueError("times and values must have equal length")

    def __call__(self, positions, t: float) -> np.ndarray:
        times = self.times
        if len(times) == 1:
            return interpolate(self.values[0], self.lattice, positions)
        j = int(np.clip(np.searchsorted(times, t, side="right") - 1, 0, len(times) - 2))
        a = (t - times[j]) / (times[j + 1] - times[j])
        a = min(max(a, 0.0), 1.0)
        lo = interpolate(self.values[j], self.lattice, positions)
        if a == 0.0:
            return lo
        hi = interpolate(self.values[j + 1], self.lattice, positions)
        return (1 - a) * lo + a * hi


def velocity_interpolator(series: Series, ext) -> FrameInterpolator:
    """Drift-velocity field of a run, usable as ``v(x, t)``."""
    vel = []
    for frame in series.frames:
        fields = ext(frame.time) if callable(ext) else ext
        vel.append(drift_velocity(frame, fields).velocity)
    return FrameInterpolator(series.times, np.stack(vel), series.lattice)


def spin_interpolator(series: Series, hbar: float = 1.0) -> FrameInterpolator:
    spins = np.stack([born_extract(f, hbar).s for f in series.frames])
    return FrameInterpolator(series.times, spins, series.lattice)


# deterministic trajectories -----------------------------------------------


@dataclass
class Paths:
    """Particle histories: ``positions`` has shape ``(steps + 1, N, 3)``."""

    times: np.ndarray
    positions: np.ndarray
    left_domain: np.ndarray

    @property
    def final(self) -> np.ndarray:
        return self.positions[-1]


def wrap_positions(positions, lattice: Lattice) -> np.ndarray:
    out = np.array(positions, dtype=float)
    for k in range(lattice.dim):
        d = lattice.directions[k]
        half = 0.5 * lattice.extents[k]
        out[..., d] = (out[..., d] + half) % lattice.extents[k] - half
    return out


def integrate_trajectory(
    start,
    velocity_field: Callable,
    t_span,
    dt: float,
    lattice: Lattice | None = None,
) -> Paths:
    """Classical RK4 for ``dx/dt = v(x, t)``, vectorised over particles.

    ``start`` is a 3-vector or an ``(N, 3)`` array. With a lattice, positions
    are wrapped into the periodic cell and particles that crossed the
    boundary are flagged.
    """
    x = np.atleast_2d(np.array(start, dtype=float))
    t0, t1 = float(t_span[0]), float(t_span[1])
    n_steps = int(round((t1 - t0) / dt))
    if n_steps < 0 or abs(n_steps * dt - (t1 - t0)) > 1e-9 * max(1.0, abs(t1 - t0)):
        raise ValueError("t_span must be a non-negative multiple of dt")
    history = np.empty((n_steps + 1,) + x.shape)
    history[0] = x
    for n in range(n_steps):
        t = t0 + n * dt
        k1 = velocity_field(x, t)
        k2 = velocity_field(x + 0.5 * dt * k1, t + 0.5 * dt)
        k3 = velocity_field(x + 0.5 * dt * k2, t + 0.5 * dt)
        k4 = velocity_field(x + dt * k3, t + dt)
        x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        history[n + 1] = x
    left = np.zeros(x.shape[0], dtype=bool)
    if lattice is not None:
        for k in range(lattice.dim):
            coord = history[..., lattice.directions[k]]
            half = 0.5 * lattice.extents[k]
            left |= np.any((coord < -half) | (coord >= half), axis=0)
        history = wrap_positions(history, lattice)
        if left.any():
            warnings.warn(f"{int(left.sum())} trajectories crossed the periodic boundary", LeftDomain, stacklevel=2)
    times = t0 + dt * np.arange(n_steps + 1)
    return Paths(times, history, left)


# sub-quantum fluctuations -------------------------------------------------


@dataclass(frozen=True)
class SubQuantumParams:
    """Short-step fluctuation parameters; ``gamma`` is fixed at 1/2."""

    eta: float
    dt_sub: float
    m: float = 1.0
    hbar: float = 1.0
    q: float = 1.0
    c: float = 1.0
    gamma: float = 0.5

    def __post_init__(self):
        if self.gamma != 0.5:
            raise ValueError("gamma is fixed at 1/2")
        if self.eta < 0 or self.dt_sub <= 0 or self.m <= 0:
            raise ValueError("need eta >= 0, dt_sub > 0, m > 0")

    @property
    def alpha(self) -> float:
        return self.m / (self.eta * self.dt_sub**3) if self.eta > 0 else np.inf

    @property
    def alpha_prime(self) -> float:
        return self.hbar / (self.eta * self.dt_sub**2) if self.eta > 0 else np.inf

    @property
    def beta(self) -> float:
        return self.q / (self.hbar * self.c)

    @property
    def variance(self) -> float:
        """Per-axis variance ``(eta/m) dt^3`` of the fluctuation."""
        return self.eta / self.m * self.dt_sub**3


def sample_subquantum_step(x, velocity, params: SubQuantumParams, rng: np.random.Generator, t: float = 0.0):
    """One step ``x + v dt + dw`` with isotropic Gaussian ``dw``.

    ``velocity`` is an array broadcastable to ``x`` or a callable ``v(x, t)``.
    """
    x = np.asarray(x, dtype=float)
    v = velocity(x, t) if callable(velocity) else np.asarray(velocity, dtype=float)
    step = v * params.dt_sub
    if params.eta > 0:
        step = step + np.sqrt(params.variance) * rng.standard_normal(x.shape)
    return x + step


def stochastic_paths(starts, velocity, params: SubQuantumParams, t_span, seed: int) -> np.ndarray:
    """Positions after sub-quantum stepping from ``t_span[0]`` to ``t_span[1]``, one stream per particle."""
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    n_steps = int(round((t_span[1] - t_span[0]) / params.dt_sub))
    noise = np.stack(
        [particle_generator(seed, i).standard_normal((n_steps, 3)) for i in range(starts.shape[0])], axis=1
    )
    x = starts.copy()
    sd = np.sqrt(params.variance)
    for n in range(n_steps):
        t = t_span[0] + n * params.dt_sub
        v = velocity(x, t) if callable(velocity) else velocity
        x = x + v * params.dt_sub + sd * noise[n]
    return x


# ensembles ----------------------------------------------------------------


@dataclass
class Ensemble:
    positions: np.ndarray
    seed: int
    history: Paths | None = None
    method: str = ""
    acceptance_rate: float = 1.0

    @property
    def size(self) -> int:
        return self.positions.shape[0]


def _cell_inverse_cdf(rho_line, h, u):
    """Invert the periodic piecewise-linear CDF of nodal values ``rho_line`` at uniforms ``u``."""
    left = rho_line
    right = np.roll(rho_line, -1)
    mass = 0.5 * h * (left + right)
    cdf = np.concatenate([[0.0], np.cumsum(mass)])
    target = u * cdf[-1]
    cell = np.clip(np.searchsorted(cdf, target, side="right") - 1, 0, len(rho_line) - 1)
    r = (target - cdf[cell]) / h
    a, b = left[cell], right[cell] - left[cell]
    # solve a t + b t^2 / 2 = r for t in [0, 1]
    disc = np.maximum(a * a + 2 * b * r, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(np.abs(b) > 1e-14 * np.maximum(a, 1e-300), 2 * r / (a + np.sqrt(disc)), r / np.where(a > 0, a, 1.0))
    t = np.clip(np.nan_to_num(t), 0.0, 1.0)
    return cell + t


def _is_separable(rho, rtol=1e-10):
    if rho.ndim == 1:
        return True
    total = rho.sum()
    marginals = [rho.sum(axis=tuple(j for j in range(rho.ndim) if j != k)) for k in range(rho.ndim)]
    product = marginals[0]
    for m in marginals[1:]:
        product = np.multiply.outer(product, m)
    product = product / total ** (rho.ndim - 1)
    return np.max(np.abs(product - rho)) <= rtol * np.max(rho)


def sample_positions(field: SpinorField, n: int, seed: int) -> Ensemble:
    """Draw ``n`` positions from the piecewise-linear interpolant of the density.

    Separable densities use per-axis inverse CDFs; others use rejection
    sampling against the density maximum.
    """
    lat = field.lattice
    rho = field.density()
    pos = np.zeros((n, 3))
    if _is_separable(rho):
        u = particle_uniforms(seed, n, lat.dim)
        for k in range(lat.dim):
            line = rho.sum(axis=tuple(j for j in range(lat.dim) if j != k))
            idx = _cell_inverse_cdf(line, lat.spacing[k], u[:, k])
            pos[:, lat.directions[k]] = -0.5 * lat.extents[k] + lat.spacing[k] * idx
        pos = wrap_positions(pos, lat)
        return Ensemble(pos, seed, method="inverse_cdf")
    peak = float(rho.max())
    attempts = 0
    for i in range(n):
        rng = particle_generator(seed, i)
        while True:
            attempts += 1
            trial = np.zeros(3)
            for k in range(lat.dim):
                trial[lat.directions[k]] = (rng.random() - 0.5) * lat.extents[k]
            if rng.random() * peak <= interpolate(rho[None], lat, trial[None])[0, 0]:
                pos[i] = trial
                break
    rate = n / attempts
    log.info("rejection sampling acceptance rate %.4f", rate)
    return Ensemble(pos, seed, method="rejection", acceptance_rate=rate)


def run_ensemble(ensemble: Ensemble, series: Series, ext, dt: float | None = None) -> Ensemble:
    """Carry an ensemble along the drift velocity of ``series``."""
    times = series.times
    dt = dt or float(times[1] - times[0])
    velocity = velocity_interpolator(series, ext)
    paths = integrate_trajectory(ensemble.positions, velocity, (times[0], times[-1]), dt, series.lattice)
    return Ensemble(paths.final, ensemble.seed, paths, ensemble.method, ensemble.acceptance_rate)


@dataclass
class BornReport:
    edges: np.ndarray
    counts: np.ndarray
    expected: np.ndarray
    chi2: float
    dof: int
    p_value: float
    total_variation: float
    alpha: float

    @property
    def passed(self) -> bool:
        return self.p_value > self.alpha

    def to_dict(self) -> dict:
        return {
            "edges": self.edges.tolist(),
            "counts": self.counts.tolist(),
            "expected": self.expected.tolist(),
            "chi2": self.chi2,
            "dof": self.dof,
            "p_value": self.p_value,
            "total_variation": self.total_variation,
            "alpha": self.alpha,
            "passed": self.passed,
        }


def chi2_equiprobable(samples, quantile: Callable, bins: int, alpha: float = 0.01) -> BornReport:
    """Chi-square test of 1-D ``samples`` against a distribution given by its quantile function."""
    samples = np.asarray(samples)
    inner = quantile(np.arange(1, bins) / bins)
    edges = np.concatenate([[-np.inf], inner, [np.inf]])
    counts = np.histogram(samples, bins=edges)[0]
    expected = np.full(bins, len(samples) / bins)
    chi2 = float(np.sum((counts - expected) ** 2 / expected))
    dof = bins - 1
    p = float(stats.chi2.sf(chi2, dof))
    tv = 0.5 * float(np.sum(np.abs(counts - expected))) / len(samples)
    return BornReport(edges, counts, expected, chi2, dof, p, tv, alpha)


def born_statistics(ensemble: Ensemble, field: SpinorField, bins: int = 50, axis: int = 0, alpha: float = 0.01) -> BornReport:
    """Compare the ensemble's marginal along lattice ``axis`` with the density of ``field``."""
    lat = field.lattice
    rho = field.density()
    line = rho.sum(axis=tuple(j for j in range(lat.dim) if j != axis))
    h = lat.spacing[axis]
    x0 = -0.5 * lat.extents[axis]

    def quantile(u):
        return x0 + h * _cell_inverse_cdf(line, h, np.asarray(u))

    pos = wrap_positions(ensemble.positions, lat)[:, lat.directions[axis]]
    return chi2_equiprobable(pos, quantile, bins, alpha)


def write_trajectory_csv(path, paths: Paths, spins: FrameInterpolator | None = None, stride: int = 1) -> None:
    """Rows of ``particle_id, t, x, y, z, s_x, s_y, s_z``; spin columns are empty without ``spins``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["particle_id", "t", "x", "y", "z", "s_x", "s_y", "s_z"])
        for n in range(0, len(paths.times), stride):
            t = paths.times[n]
            pos = paths.positions[n]
            s = spins(pos, t) if spins is not None else None
            for i in range(pos.shape[0]):
                spin = [repr(float(c)) for c in s[i]] if s is not None else ["", "", ""]
                writer.writerow([i, repr(float(t)), *(repr(float(c)) for c in pos[i]), *spin])


# Stern-Gerlach ------------------------------------------------------------


@dataclass(frozen=True)
class SGConfig:
    """One-dimensional Stern-Gerlach run along z.

    The field ``B = (0, 0, gradient * z)`` is on during ``[t_on, t_off)``;
    afterwards the packets drift freely for ``drift`` time units.
    """

    theta0: float = np.pi / 2
    phi0: float = 0.0
    center: float = 0.0
    width: float = 1.0
    gradient: float = 10.0
    t_on: float = 0.0
    t_off: float = 1.0
    drift: float = 4.0
    points: int = 1024
    extent: float = 100.0
    dt: float = 0.005
    save_every: int = 4
    constants: Constants = dataclass_field(default_factory=Constants)
    overlap_tol: float = 1e-3
    spin_threshold: float = 0.99
    margin_sigmas: float = 6.0

    def lattice(self) -> Lattice:
        return Lattice((self.points,), (self.extent,), (2,))

    @property
    def t_final(self) -> float:
        return self.t_off + self.drift

    def kick(self) -> float:
        """Momentum transferred to each component, ``mu B' tau``."""
        return self.constants.magneton * self.gradient * (self.t_off - self.t_on)

    def predicted_offset(self) -> float:
        k = self.constants
        tau = self.t_off - self.t_on
        accel = self.kick() / (k.m * tau)
        return 0.5 * accel * tau**2 + self.kick() / k.m * self.drift

    def predicted_width(self) -> float:
        k = self.constants
        t = self.t_final - self.t_on
        return self.width * np.sqrt(1 + (k.hbar * t / (2 * k.m * self.width**2)) ** 2)

    def validate(self):
        if not 0 <= self.theta0 <= np.pi:
            raise ValueError("theta0 must lie in [0, pi]")
        if not self.t_on < self.t_off:
            raise ValueError("need t_on < t_off")
        reach = abs(self.center) + self.predicted_offset() + self.margin_sigmas * self.predicted_width()
        if reach > 0.5 * self.extent:
            raise ValueError(f"packets reach {reach:.3g} beyond half extent {0.5 * self.extent:.3g}")
        for t in (self.t_on, self.t_off, self.t_final):
            if abs(t / self.dt - round(t / self.dt)) > 1e-9:
                raise ValueError("field switching times must be multiples of dt")


@dataclass
class SGReport:
    theta0: float
    n_particles: int
    fraction_up: float
    fraction_up_error: float
    expected_fraction_up: float
    spin_correlation: float
    packet_separation: float
    overlap: float
    midpoint: float
    off_mode_fraction: float
    off_mode_mass: float
    crossings: int
    final_positions: np.ndarray
    final_spin_z: np.ndarray
    final_packet: np.ndarray

    def to_dict(self, per_particle: bool = True) -> dict:
        out = {k: v for k, v in asdict(self).items() if not isinstance(v, np.ndarray)}
        if per_particle:
            out["particles"] = [
                {"z": float(z), "s_z": float(s), "packet": "up" if p else "down"}
                for z, s, p in zip(self.final_positions, self.final_spin_z, self.final_packet)
            ]
        return out


def sg_initial_state(cfg: SGConfig) -> SpinorField:
    lat = cfg.lattice()
    z = lat.axis_coords(0)
    g = np.exp(-((z - cfg.center) ** 2) / (4 * cfg.width**2))
    psi = np.stack(
        [
            np.cos(0.5 * cfg.theta0) * np.exp(-0.5j * cfg.phi0) * g,
            np.sin(0.5 * cfg.theta0) * np.exp(0.5j * cfg.phi0) * g,
        ]
    )
    return SpinorField(lat, psi, cfg.t_on).normalized()


def sg_fields(cfg: SGConfig):
    lat = cfg.lattice()
    z = lat.axis_coords(0)
    on = ExternalFields(lat, B=np.stack([0 * z, 0 * z, cfg.gradient * z]), constants=cfg.constants, derivative="spectral")
    off = ExternalFields.free(lat, cfg.constants, derivative="spectral")

    def at(t):
        return on if cfg.t_on <= t < cfg.t_off else off

    return at


def _centroid(weight, z, lat):
    mass = lat.integrate(weight)
    return float(lat.integrate(weight * z) / mass) if mass > 0 else None


def stern_gerlach(cfg: SGConfig, n_particles: int, seed: int = 0, keep_history: bool = False) -> SGReport:
    cfg.validate()
    lat = cfg.lattice()
    k = cfg.constants
    ext = sg_fields(cfg)
    start = sg_initial_state(cfg)
    run_cfg = EvolverConfig(dt=cfg.dt, scheme="split_step", save_every=cfg.save_every)
    series = evolve(start, ext, run_cfg, (cfg.t_on, cfg.t_final))
    final = series[-1]
    z = lat.axis_coords(0)
    up_density = np.abs(final.psi[0]) ** 2
    down_density = np.abs(final.psi[1]) ** 2
    overlap = float(lat.integrate(np.abs(final.psi[0]) * np.abs(final.psi[1])))
    if overlap > cfg.overlap_tol:
        raise PacketsNotSeparated(f"packet overlap {overlap:.3g} exceeds {cfg.overlap_tol}")

    up_c = _centroid(up_density, z, lat)
    down_c = _centroid(down_density, z, lat)
    tiny = 1e-12
    rho = final.density()
    if lat.integrate(up_density) > tiny and lat.integrate(down_density) > tiny:
        between = (z > down_c) & (z < up_c)
        midpoint = float(z[between][np.argmin(rho[between])])
        separation = up_c - down_c
    else:
        midpoint = cfg.center
        separation = 0.0

    ensemble = sample_positions(start, n_particles, seed)
    dt_traj = cfg.dt * cfg.save_every
    moved = run_ensemble(ensemble, series, ext, dt_traj)
    zs = moved.positions[:, 2]
    spins = born_extract(final, k.hbar).s
    sz = interpolate(spins[2:3], lat, moved.positions)[:, 0]
    up = zs > midpoint
    n = n_particles
    p = float(np.mean(up))
    expected = float(np.cos(0.5 * cfg.theta0) ** 2)
    off_mode = np.abs(np.abs(sz) - 1) > 1 - cfg.spin_threshold
    correlation = float(np.mean(np.where(up, 1.0, -1.0) * np.sign(sz)))
    side0 = np.sign(moved.history.positions[0, :, 2] - cfg.center)
    sides = np.sign(moved.history.positions[:, :, 2] - cfg.center)
    crossings = int(np.sum(np.any(sides != side0[None, :], axis=0)))
    off_mode_points = np.abs(np.abs(spins[2]) - 1) > 1 - cfg.spin_threshold
    off_mass = float(lat.integrate(rho * off_mode_points))
    report = SGReport(
        theta0=float(cfg.theta0),
        n_particles=n,
        fraction_up=p,
        fraction_up_error=float(np.sqrt(max(expected * (1 - expected), 1e-300) / n)),
        expected_fraction_up=expected,
        spin_correlation=correlation,
        packet_separation=float(separation),
        overlap=overlap,
        midpoint=midpoint,
        off_mode_fraction=float(np.mean(off_mode)),
        off_mode_mass=off_mass,
        crossings=crossings,
        final_positions=zs,
        final_spin_z=sz,
        final_packet=up,
    )
    if keep_history:
        report.series = series
        report.paths = moved.history
    return report
