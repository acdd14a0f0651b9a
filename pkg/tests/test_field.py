import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edspin import dynamics as dyn
from edspin import geometry
from edspin.errors import LatticeMismatch, NotNormalized
from edspin.field import (
    PolarChart,
    SpinorField,
    amplitudes_from_polar,
    born_extract,
    fs_distance,
    fs_distance_with_phase,
    fs_metric_polar,
    gauge_phase_shift,
    gauge_transform,
    inner_product,
    polar_from_amplitudes,
    spin_density_direct,
)
from edspin.lattice import Lattice, curl, divergence, gradient, laplacian, partial

from oracles import golden_section_min


def random_field(lat, rng):
    psi = rng.normal(size=(2,) + lat.shape) + 1j * rng.normal(size=(2,) + lat.shape)
    return SpinorField(lat, psi).normalized()


# lattice -----------------------------------------------------------------------


def test_lattice_geometry():
    lat = Lattice((4, 8), (2.0, 4.0))
    assert lat.spacing == (0.5, 0.5)
    assert lat.cell_weight == 0.25
    assert lat.axis_coords(0)[0] == -1.0
    assert lat.integrate(np.ones(lat.shape)) == pytest.approx(8.0)
    assert lat.positions().shape == (3, 4, 8)


@pytest.mark.parametrize("points,extents", [((2,), (1.0,)), ((4,), (0.0,)), ((4, 4, 4, 4), (1, 1, 1, 1)), ((4,), (1.0, 2.0))])
def test_lattice_rejects_bad_specs(points, extents):
    with pytest.raises(ValueError):
        Lattice(points, extents)


def test_central_stencils_are_second_order():
    errs = []
    for n in (32, 64):
        lat = Lattice((n,), (2 * np.pi,))
        x = lat.axis_coords(0)
        errs.append(np.max(np.abs(partial(np.sin(x), lat, 0) - np.cos(x))))
    assert errs[0] / errs[1] == pytest.approx(4, rel=0.05)


def test_spectral_stencils_exact_for_band_limited():
    lat = Lattice((32,), (2 * np.pi,))
    x = lat.axis_coords(0)
    assert np.allclose(partial(np.sin(3 * x), lat, 0, "spectral"), 3 * np.cos(3 * x), atol=1e-12)
    assert np.allclose(laplacian(np.sin(3 * x), lat, "spectral"), -9 * np.sin(3 * x), atol=1e-11)


def test_divergence_of_curl_vanishes(rng):
    lat = Lattice((8, 6, 5), (1.0, 1.0, 1.0))
    v = rng.normal(size=(3,) + lat.shape)
    assert np.max(np.abs(divergence(curl(v, lat), lat))) < 1e-10
    assert np.max(np.abs(curl(gradient(v[0], lat), lat))) < 1e-10


def test_lattice_directions_route_gradient():
    lat = Lattice((16,), (1.0,), (2,))
    z = lat.axis_coords(0)
    g = gradient(z**2, lat)
    assert np.all(g[0] == 0) and np.all(g[1] == 0) and np.any(g[2] != 0)
    assert np.allclose(lat.positions()[2], z)


# polar chart -----------------------------------------------------------------------


def test_polar_examples():
    lat = Lattice((3,), (3.0,))

    def chart(rho, Phi, theta, phi):
        full = lambda v: np.full(lat.shape, float(v))
        return PolarChart(lat, full(rho), full(Phi), full(theta), full(phi))

    f = amplitudes_from_polar(chart(1, 0, 0, 0))
    assert np.allclose(f.plus, 1) and np.allclose(f.minus, 0)
    f = amplitudes_from_polar(chart(1, 0, np.pi / 2, 0))
    assert np.allclose(f.psi, 1 / np.sqrt(2))

    up = SpinorField.uniform(lat, 1.0, 0.0)
    c = polar_from_amplitudes(up)
    assert np.all(c.theta == 0) and np.all(c.phi == 0) and np.all(c.Phi == 0) and np.all(c.singular)
    down = polar_from_amplitudes(SpinorField.uniform(lat, 0.0, 1.0))
    assert np.allclose(down.theta, np.pi)
    mixed = polar_from_amplitudes(SpinorField.uniform(lat, np.exp(-0.25j * np.pi) / np.sqrt(2), np.exp(0.25j * np.pi) / np.sqrt(2)))
    assert np.allclose(mixed.theta, np.pi / 2) and np.allclose(mixed.phi, np.pi / 2) and np.allclose(mixed.chi_bar, 0)


def test_chart_round_trip(rng):
    lat = Lattice((50,), (5.0,))
    chart = PolarChart(
        lat,
        rng.uniform(0.1, 2, 50),
        rng.uniform(-1.5, 1.5, 50),
        rng.uniform(0.01, np.pi - 0.01, 50),
        rng.uniform(-3, 3, 50),
        hbar=0.7,
    )
    f = amplitudes_from_polar(chart)
    back = polar_from_amplitudes(f, hbar=0.7)
    g = amplitudes_from_polar(back)
    assert np.max(np.abs(g.psi - f.psi)) < 1e-10
    assert np.allclose(back.rho, chart.rho) and np.allclose(back.theta, chart.theta)


def test_amplitudes_round_trip_through_chart(rng):
    lat = Lattice((40,), (4.0,))
    f = random_field(lat, rng)
    g = amplitudes_from_polar(polar_from_amplitudes(f))
    assert np.max(np.abs(g.psi - f.psi)) < 1e-10


def test_multivector_view_round_trip(rng):
    lat = Lattice((6, 5), (1.0, 1.0))
    f = random_field(lat, rng)
    g = SpinorField.from_multivector(lat, f.to_multivector())
    assert np.max(np.abs(g.psi - f.psi)) < 1e-14


# Born rule ------------------------------------------------------------------------


def test_born_examples():
    lat = Lattice((4,), (4.0,))
    up = born_extract(SpinorField.uniform(lat, 1.0, 0.0))
    assert np.allclose(up.rho, 1) and np.allclose(up.s.T, [0, 0, 1])
    down = born_extract(SpinorField.uniform(lat, 0.0, 1.0))
    assert np.allclose(down.s.T, [0, 0, -1])


def test_born_consistency(rng):
    lat = Lattice((30,), (3.0,))
    f = random_field(lat, rng)
    data = born_extract(f, hbar=2.0)
    assert np.max(np.abs(data.rho - f.density())) < 1e-12
    assert np.allclose(np.linalg.norm(data.s, axis=0), 1, atol=1e-9)
    assert np.allclose(data.spin_density, 0.5 * 2.0 * spin_density_direct(f), atol=1e-12)
    product = f.to_multivector() * f.to_multivector().reverse()
    assert np.max(np.abs(product.grade(2).coeffs)) < 1e-12
    assert np.max(np.abs(product.grade(3).coeffs)) < 1e-12


def test_born_floor_convention():
    lat = Lattice((3,), (3.0,))
    data = born_extract(SpinorField(lat, np.zeros((2, 3))))
    assert np.allclose(data.s.T, [0, 0, 1])


def test_normalization_sphere_in_real_coordinates(rng):
    lat = Lattice((10,), (2.0,))
    f = random_field(lat, rng)
    xi = np.stack([f.plus.real, f.plus.imag, f.minus.real, f.minus.imag])
    assert lat.integrate(np.sum(xi**2, axis=0)) == pytest.approx(f.norm(), abs=1e-14)


# inner product and distance ---------------------------------------------------------


def test_inner_product_properties(rng):
    lat = Lattice((12,), (3.0,))
    a, b = random_field(lat, rng), random_field(lat, rng)
    assert inner_product(a, a) == pytest.approx(1.0)
    assert inner_product(a, b) == pytest.approx(np.conj(inner_product(b, a)))
    up = SpinorField.uniform(lat, 1.0, 0.0)
    down = SpinorField.uniform(lat, 0.0, 1.0)
    assert inner_product(up, down) == 0
    with pytest.raises(LatticeMismatch):
        inner_product(a, random_field(Lattice((12,), (4.0,)), rng))


def test_inner_product_matches_geometry_contraction(rng):
    lat = Lattice((5,), (1.0,))
    a, b = rng.normal(size=(2, 5)) + 1j * rng.normal(size=(2, 5)), rng.normal(size=(2, 5)) + 1j * rng.normal(size=(2, 5))
    va = geometry.TangentVector.from_amplitudes(lat, a)
    vb = geometry.TangentVector.from_amplitudes(lat, b)
    contraction = geometry.metric_pair(va, vb) + 0.5j * geometry.omega_pair(va, vb)
    direct = inner_product(SpinorField(lat, a), SpinorField(lat, b))
    assert abs(contraction - direct) < 1e-10


def test_fs_distance_basics(rng):
    lat = Lattice((16,), (2.0,))
    a = random_field(lat, rng)
    assert fs_distance(a, a) == 0
    for sigma in rng.uniform(-5, 5, 20):
        b = random_field(lat, rng)
        shifted = b.with_psi(b.psi * np.exp(1j * sigma))
        assert fs_distance(a, a.with_psi(a.psi * np.exp(1j * sigma))) < 1e-12
        assert fs_distance(a, shifted) == pytest.approx(fs_distance(a, b), abs=1e-10)
    with pytest.raises(NotNormalized):
        fs_distance(a, a.with_psi(2 * a.psi))


def test_fs_minimiser_matches_golden_section(rng):
    lat = Lattice((16,), (2.0,))
    a = random_field(lat, rng)
    b = a.with_psi(a.psi * np.exp(0.4j) + 0.05 * (rng.normal(size=a.psi.shape) + 1j * rng.normal(size=a.psi.shape))).normalized()
    dist, sigma = fs_distance_with_phase(a, b)

    def embed(s):
        return float(lat.integrate(np.sum(np.abs(a.psi - b.psi * np.exp(1j * s)) ** 2, axis=0)))

    s_scan, d_scan = golden_section_min(embed, sigma - 1.0, sigma + 1.0)
    assert abs(s_scan - sigma) < 1e-6
    assert abs(d_scan - dist) < 1e-8


def test_polar_metric_matches_amplitude_metric(rng):
    lat = Lattice((24,), (3.0,))
    x = lat.axis_coords(0)
    base = PolarChart(lat, 0.3 + 0.1 * np.cos(2 * np.pi * x / 3), 0.2 * np.sin(x), 1.0 + 0.3 * np.cos(x), 0.5 * np.sin(2 * x))
    directions = [rng.normal(size=24) for _ in range(4)]
    directions[0] -= np.mean(directions[0])  # keep the norm fixed to first order
    d_rho, d_Phi, d_theta, d_phi = directions
    ratios = []
    for eps in (1e-3, 5e-4):
        moved = PolarChart(lat, base.rho + eps * d_rho, base.Phi + eps * d_Phi, base.theta + eps * d_theta, base.phi + eps * d_phi)
        a = amplitudes_from_polar(base)
        b = amplitudes_from_polar(moved)
        a_n, b_n = a.normalized(), b.normalized()
        ampl = fs_distance(a_n, b_n)
        polar = fs_metric_polar(base, eps * d_rho, eps * d_Phi, eps * d_theta, eps * d_phi) / a.norm()
        ratios.append(abs(ampl - polar) / polar)
    assert ratios[1] < ratios[0]
    assert ratios[1] < 5e-3


def test_gauge_minimiser_matches_scan():
    lat = Lattice((20,), (2.0,))
    x = lat.axis_coords(0)
    rho = np.full(20, 1 / 2.0)
    base = PolarChart(lat, rho, 0.3 * np.sin(np.pi * x), 0.9 + 0.2 * np.cos(np.pi * x), 0.4 * x)
    d_Phi, d_theta, d_phi = 0.01 * np.cos(np.pi * x), 0.02 * np.sin(np.pi * x), 0.01 * np.ones(20)
    from edspin.field import rotation_increment

    dzeta = rotation_increment(base, d_Phi, d_theta, d_phi)
    s = np.stack([np.sin(base.theta) * np.cos(base.phi), np.sin(base.theta) * np.sin(base.phi), np.cos(base.theta)])

    def cost(shift):
        return float(lat.integrate(rho * np.sum((dzeta + s * shift) ** 2, axis=0)))

    best, _ = golden_section_min(cost, -1.0, 1.0)
    assert gauge_phase_shift(base, d_Phi, d_theta, d_phi) == pytest.approx(best, abs=1e-8)


# gauge --------------------------------------------------------------------------------


def test_gauge_transform_examples(rng):
    lat = Lattice((32,), (4.0,))
    f = random_field(lat, rng)
    same, a = gauge_transform(f, np.zeros(32), 1.0)
    assert np.array_equal(same.psi, f.psi) and np.all(a == 0)
    shifted, a = gauge_transform(f, np.full(32, 0.8), 2.0, np.ones((3, 32)))
    assert np.allclose(a, 1.0) and np.allclose(shifted.psi, f.psi * np.exp(1.6j))


def test_drift_velocity_gauge_invariant():
    errs = []
    for n in (64, 128):
        lat = Lattice((n,), (2 * np.pi,))
        x = lat.axis_coords(0)
        g = np.exp(np.cos(x) + 1j * np.sin(2 * x))
        f = SpinorField(lat, np.stack([g, 0.5 * g * np.exp(1j * np.cos(x))])).normalized()
        A = np.stack([0.3 * np.sin(x), 0 * x, 0 * x])
        ext = dyn.ExternalFields(lat, A=A)
        v0 = dyn.drift_velocity(f, ext).velocity
        g2, A2 = gauge_transform(f, lambda p: 0.5 * np.sin(p[0]), 1.0, A)
        v1 = dyn.drift_velocity(g2, dyn.ExternalFields(lat, A=A2)).velocity
        errs.append(np.max(np.abs(v1 - v0)))
    assert errs[0] / errs[1] == pytest.approx(4, rel=0.1)


@given(st.floats(-10, 10))
@settings(max_examples=30, deadline=None)
def test_normalization_flow_keeps_born_data(sigma):
    lat = Lattice((6,), (1.0,))
    f = SpinorField(lat, np.stack([np.linspace(1, 2, 6) * (1 + 0.5j), np.linspace(0.5, 1, 6)])).normalized()
    point = geometry.PhaseSpacePoint.from_field(f)
    moved = geometry.normalization_flow(point, sigma).to_field()
    assert np.allclose(born_extract(moved).s, born_extract(f).s, atol=1e-12)
    assert fs_distance(moved, f) < 1e-12
