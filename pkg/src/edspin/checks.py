"""Named self-check suites runnable from the command line.

Each suite returns a list of :class:`CheckResult`; a suite passes when all
of its checks do.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from . import dynamics as dyn
from . import ga, geometry
from . import trajectories as traj
from .field import PolarChart, SpinorField, amplitudes_from_polar, born_extract, fs_distance, inner_product
from .lattice import Lattice


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float
    relation: str = "<="

    def to_dict(self) -> dict:
        return asdict(self)


def _le(name, value, threshold):
    return CheckResult(name, bool(value <= threshold), float(value), float(threshold), "<=")


def _ge(name, value, threshold):
    return CheckResult(name, bool(value >= threshold), float(value), float(threshold), ">=")


# algebra ------------------------------------------------------------------


def blade_product_table() -> np.ndarray:
    """Signed product table rebuilt from ``e_a e_b + e_b e_a = 2 delta_ab``.

    Blades are bitmasks over {e1, e2, e3}; the sign counts the swaps needed
    to bring the concatenated word into canonical order.
    """
    # (bitmask, orientation) of each basis slot; e31 = -e1e3
    blades = [(0b000, 1), (0b001, 1), (0b010, 1), (0b100, 1), (0b011, 1), (0b110, 1), (0b101, -1), (0b111, 1)]
    lookup = {mask: (slot, sign) for slot, (mask, sign) in enumerate(blades)}

    def reorder_sign(a, b):
        swaps = 0
        a >>= 1
        while a:
            swaps += bin(a & b).count("1")
            a >>= 1
        return -1 if swaps % 2 else 1

    table = np.zeros((8, 8), dtype=int)
    for i, (ma, sa) in enumerate(blades):
        for j, (mb, sb) in enumerate(blades):
            slot, sc = lookup[ma ^ mb]
            table[i, j] = sa * sb * sc * reorder_sign(ma, mb) * (slot + 1)
    return table


def algebra_suite(n_random: int = 1000, seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    out = [CheckResult("product_table_matches", bool(np.array_equal(blade_product_table(), ga.PRODUCT_TABLE)), 0, 0, "==")]
    a = ga.Multivector(rng.normal(size=(n_random, 8)))
    b = ga.Multivector(rng.normal(size=(n_random, 8)))
    c = ga.Multivector(rng.normal(size=(n_random, 8)))
    out.append(_le("associativity", np.max(np.abs(((a * b) * c - a * (b * c)).coeffs)), 1e-12))
    out.append(_le("reverse_antiautomorphism", np.max(np.abs((a * b).reverse().coeffs - (b.reverse() * a.reverse()).coeffs)), 1e-12))
    out.append(_le("spatial_inverse_automorphism", np.max(np.abs((a * b).spatial_inverse().coeffs - (a.spatial_inverse() * b.spatial_inverse()).coeffs)), 1e-12))
    out.append(_le("involutions_square_to_identity", max(
        np.max(np.abs(a.reverse().reverse().coeffs - a.coeffs)),
        np.max(np.abs(a.spatial_inverse().spatial_inverse().coeffs - a.coeffs)),
    ), 0.0))
    grade_sum = sum(a.grade(k) for k in range(4))
    out.append(_le("grades_partition", np.max(np.abs(grade_sum.coeffs - a.coeffs)), 0.0))
    out.append(_le("pseudoscalar_central", np.max(np.abs((ga.I * a - a * ga.I).coeffs)), 1e-12))
    pauli = np.max(np.abs((a * b).to_matrix() - a.to_matrix() @ b.to_matrix()))
    out.append(_le("pauli_homomorphism", pauli, 1e-12))

    theta = rng.uniform(0, np.pi, n_random)
    phi = rng.uniform(-np.pi, np.pi, n_random)
    chi = rng.uniform(-np.pi, np.pi, n_random)
    u = ga.rotor_from_angles(theta, phi, chi)
    unit = u * u.reverse()
    out.append(_le("rotor_unit", np.max(np.abs(unit.coeffs - ga.ONE.coeffs)), 1e-12))
    out.append(_le("rotor_closed_form", np.max(np.abs(u.coeffs - ga.rotor_from_angles_expanded(theta, phi, chi).coeffs)), 1e-12))
    s = ga.spin_vector(u)
    expected = np.stack([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)], axis=-1)
    out.append(_le("spin_vector", np.max(np.abs(s - expected)), 1e-12))
    out.append(_le("double_cover", np.max(np.abs(ga.spin_vector(-u) - s)), 1e-12))
    t2, p2, c2 = ga.angles_from_rotor(u)
    back = ga.rotor_from_angles(t2, p2, c2)
    out.append(_le("euler_round_trip", np.max(np.abs(back.coeffs - u.coeffs)), 1e-10))
    return out


# geometry -----------------------------------------------------------------


def geometry_suite(seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    lat = Lattice((4,), (1.0,))
    om = geometry.omega_matrix(lat)
    gm = geometry.metric_matrix(lat)
    jm = geometry.complex_structure_matrix(lat)
    out = [
        _le("J_squared_minus_one", np.max(np.abs(jm @ jm + np.eye(jm.shape[0]))), 0.0),
        _le("omega_antisymmetric", np.max(np.abs(om + om.T)), 0.0),
        _le("metric_symmetric", np.max(np.abs(gm - gm.T)), 0.0),
    ]
    point = geometry.random_point(lat, rng)
    worst_pos = np.inf
    worst_compat = 0.0
    for _ in range(50):
        v = geometry.TangentVector.from_amplitudes(lat, rng.normal(size=(2, 4)) + 1j * rng.normal(size=(2, 4)))
        u = geometry.TangentVector.from_amplitudes(lat, rng.normal(size=(2, 4)) + 1j * rng.normal(size=(2, 4)))
        worst_pos = min(worst_pos, geometry.metric_pair(v, v))
        compat = geometry.omega_pair(v, u) - 2 * geometry.metric_pair(geometry.complex_structure(v), u)
        worst_compat = max(worst_compat, abs(compat))
    out.append(_ge("metric_positive", worst_pos, 1e-12))
    out.append(_le("omega_metric_compatibility", worst_compat, 1e-12))

    kernel = geometry.GeneratorKernel.random(lat, rng)
    hermitian = geometry.hk_flow_test(geometry.BilinearFunctional(kernel), steps=100, dlambda=0.05, seed=seed)
    out.append(_le("bilinear_fs_drift", hermitian.fs_drift, 1e-10))
    out.append(_le("bilinear_metric_drift", hermitian.metric_drift, 1e-10))
    quartic = geometry.hk_flow_test(geometry.QuarticFunctional(lat), steps=100, dlambda=0.01, seed=seed)
    out.append(_ge("quartic_metric_drift", quartic.metric_drift, 1e-3))
    out.append(_le("quartic_norm_drift", quartic.norm_drift, 1e-8))
    out.append(_le("quartic_omega_drift", quartic.omega_drift, 1e-6))
    linear = geometry.hk_flow_test(
        geometry.LinearFunctional(lat, rng.normal(size=(2, 4)) + 1j * rng.normal(size=(2, 4))), steps=20, dlambda=0.01, seed=seed
    )
    out.append(_ge("linear_generator_changes_norm", linear.norm_drift, 1e-6))
    norm = geometry.NormFunctional(lat)
    energy = geometry.BilinearFunctional(kernel)
    out.append(_le("norm_energy_bracket", abs(geometry.poisson_bracket(norm, energy, point)), 1e-12))
    return out


# kinetic-energy identity ----------------------------------------------------


def smooth_test_state(lattice: Lattice):
    """Smooth periodic state with non-trivial density, phase and spin texture, plus a vector potential."""
    grids = lattice.grid()
    ph = [2 * np.pi * grids[k] / lattice.extents[k] for k in range(lattice.dim)]
    c = sum(np.cos(p + 0.3 * k) for k, p in enumerate(ph))
    s = sum(np.sin(2 * p - 0.2 * k) for k, p in enumerate(ph))
    rho = (1 + 0.5 * np.cos(ph[0] + 0.4) + 0.2 * s) / np.prod(lattice.extents)
    chart = PolarChart(
        lattice,
        rho,
        0.7 * c + 0.3 * s,
        1.2 + 0.5 * np.sin(ph[-1] + 0.3 * c),
        0.8 * s - 0.5 * c,
    )
    potential = np.stack([0.5 * np.sin(ph[-1]), 0.4 * np.cos(ph[0]), 0.3 * np.sin(ph[0] + ph[-1])])
    return amplitudes_from_polar(chart), potential


def identity_refinement_ratio(points, extents) -> float:
    """Ratio of max residuals on a lattice and its 2x refinement, compared on shared sites."""
    residuals = []
    for factor in (1, 2):
        lat = Lattice(tuple(p * factor for p in points), extents)
        field, potential = smooth_test_state(lat)
        ext = dyn.ExternalFields(lat, A=potential)
        r = dyn.kinetic_identity_residual(field, ext)
        residuals.append(r[tuple(slice(None, None, factor) for _ in points)])
    return float(np.max(np.abs(residuals[0])) / np.max(np.abs(residuals[1])))


def identity_suite() -> list:
    out = []
    for label, pts in (("1d", (128,)), ("2d", (64, 64))):
        ratio = identity_refinement_ratio(pts, (2 * np.pi,) * len(pts))
        out.append(CheckResult(f"refinement_ratio_{label}", bool(abs(ratio - 4) <= 0.5), ratio, 4.0, "~"))
    return out


# conservation ---------------------------------------------------------------


def _packet(lattice, k0=1.0, width=1.0):
    x = lattice.axis_coords(0)
    g = np.exp(-(x**2) / (4 * width**2) + 1j * k0 * x)
    return SpinorField(lattice, np.stack([0.8 * g, 0.6j * g])).normalized()


def conservation_suite() -> list:
    lat = Lattice((128,), (20.0,))
    x = lat.axis_coords(0)
    ext = dyn.ExternalFields(lat, V=0.2 * np.cos(2 * np.pi * x / 20), B=[0.1, 0.0, 0.5])
    field = _packet(lat)
    series = dyn.evolve(field, ext, dyn.EvolverConfig(dt=0.01, save_every=1000), (0, 10.0))
    out = [_le("norm_drift_per_step", np.max(np.abs(np.diff(series.step_norms))), 1e-10)]
    e0 = dyn.energy(series[0], ext)
    e1 = dyn.energy(series[-1], ext)
    out.append(_le("energy_relative_drift", abs(e1 - e0) / abs(e0), 1e-6))

    rng = np.random.default_rng(1)
    a = SpinorField(lat, rng.normal(size=(2, 128)) + 1j * rng.normal(size=(2, 128)))
    b = SpinorField(lat, rng.normal(size=(2, 128)) + 1j * rng.normal(size=(2, 128)))
    herm = abs(inner_product(a, dyn.apply_hamiltonian(b, ext)) - inner_product(dyn.apply_hamiltonian(a, ext), b))
    out.append(_le("hamiltonian_hermitian", herm, 1e-10))

    small = Lattice((8,), (1.0,))
    strength = 0.7
    larmor_ext = dyn.ExternalFields(small, B=[0, 0, strength])
    k = larmor_ext.constants
    period = 2 * np.pi * k.m * k.c / (k.q * strength)
    up_x = SpinorField.uniform(small, 1 / np.sqrt(2), 1 / np.sqrt(2))
    run = dyn.evolve(up_x, larmor_ext, dyn.EvolverConfig(dt=period / 4000, save_every=40), (0, period))
    spins = np.array([small.integrate(born_extract(f, k.hbar).spin_density) for f in run.frames])
    rate = abs(dyn.precession_rate(run.times, spins))
    expected = k.q * strength / (k.m * k.c)
    out.append(_le("larmor_relative_error", abs(rate - expected) / expected, 1e-6))
    out.append(_le("larmor_continuity_residual", dyn.continuity_residual(run, larmor_ext), 1e-8))
    return out


# time reversal --------------------------------------------------------------


def reversal_discrepancy(kappa_e: float, duration: float = 2.0) -> float:
    lat = Lattice((64,), (10.0,))
    x = lat.axis_coords(0)
    g = np.exp(-(x**2) / 2 + 0.8j * x)
    field = SpinorField(lat, np.stack([g, 0.6 * np.exp(0.3j) * g * (1 + 0.2 * x)])).normalized()
    wave = 2 * np.pi * x / 10
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ext = dyn.ExternalFields(
            lat,
            V=0.5 * np.cos(wave),
            A=np.stack([0 * x, 0.3 * np.sin(wave), 0.2 * np.cos(wave)]),
            E=[1.0, 0.0, 0.0],
            kappa_m=0.2,
            kappa_e=kappa_e,
        )
    cfg = dyn.EvolverConfig(dt=0.01)
    forward = dyn.evolve(field, ext, cfg, (0, duration))[-1]
    back = dyn.evolve(dyn.time_reverse(forward), dyn.reverse_fields(ext), cfg, (0, duration))[-1]
    return fs_distance(dyn.time_reverse(back), field)


def timereversal_suite() -> list:
    return [
        _le("symmetric_without_electric_dipole", reversal_discrepancy(0.0), 1e-8),
        _ge("broken_with_electric_dipole", reversal_discrepancy(0.5), 1e-3),
    ]


# Born rule -----------------------------------------------------------------


def free_packet_equivariance(n_particles: int, seed: int = 0, times=(1.0, 2.0, 3.0)):
    """Chi-square reports of a free-packet ensemble against the analytic density at ``times``."""
    lat = Lattice((512,), (60.0,))
    x = lat.axis_coords(0)
    width, k0, x0 = 1.0, 1.0, -5.0
    g = np.exp(-((x - x0) ** 2) / (4 * width**2) + 1j * k0 * x)
    field = SpinorField(lat, np.stack([0.6 * g, 0.8 * g])).normalized()
    ext = dyn.ExternalFields.free(lat, derivative="spectral")
    step = 0.02
    series = dyn.evolve(field, ext, dyn.EvolverConfig(dt=0.01, scheme="split_step", save_every=2), (0, max(times)))
    ensemble = traj.sample_positions(field, n_particles, seed)
    moved = traj.run_ensemble(ensemble, series, ext, step)
    reports = []
    for t in times:
        n = int(round(t / step))
        spread = width * np.sqrt(1 + (t / (2 * width**2)) ** 2)
        centre = x0 + k0 * t

        def quantile(u, centre=centre, spread=spread):
            return stats.norm.ppf(u, centre, spread)

        reports.append(traj.chi2_equiprobable(moved.history.positions[n][:, 0], quantile, bins=50))
    return reports


def born_suite(n_particles: int = 20000, seed: int = 0) -> list:
    out = []
    for t, report in zip((1.0, 2.0, 3.0), free_packet_equivariance(n_particles, seed)):
        out.append(_ge(f"free_packet_chi2_p_t{t:g}", report.p_value, report.alpha))
    params = traj.SubQuantumParams(eta=1.0, dt_sub=0.1)
    rng = np.random.default_rng(seed)
    draws = traj.sample_subquantum_step(np.zeros((100000, 3)), 0.0, params, rng)
    var = np.var(draws, axis=0, ddof=1)
    se = params.variance * np.sqrt(2 / (draws.shape[0] - 1))
    out.append(_le("subquantum_variance_z_score", float(np.max(np.abs(var - params.variance)) / se), 3.0))
    return out


SUITES = {
    "algebra": algebra_suite,
    "geometry": geometry_suite,
    "identity": identity_suite,
    "conservation": conservation_suite,
    "timereversal": timereversal_suite,
    "born": born_suite,
}


def check_suites() -> dict:
    return dict(SUITES)


def run_suite(name: str) -> dict:
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    results = SUITES[name]()
    return {
        "suite": name,
        "passed": all(r.passed for r in results),
        "checks": [r.to_dict() for r in results],
    }


__all__ = ["CheckResult", "SUITES", "check_suites", "run_suite", "blade_product_table", "smooth_test_state"]
