import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edspin import geometry as geo
from edspin.errors import GradientMissing, LatticeMismatch, NonHermitianKernel
from edspin.field import born_extract, fs_distance
from edspin.lattice import Lattice

LAT = Lattice((4,), (1.0,))


def random_amplitudes(rng, n=4):
    return rng.normal(size=(2, n)) + 1j * rng.normal(size=(2, n))


def tangent(rng, lat=LAT, hbar=1.0):
    return geo.TangentVector.from_amplitudes(lat, random_amplitudes(rng, lat.size), hbar)


# matrices ------------------------------------------------------------------------


def test_structural_identities():
    om = geo.omega_matrix(LAT)
    gm = geo.metric_matrix(LAT)
    jm = geo.complex_structure_matrix(LAT)
    assert np.array_equal(om, -om.T)
    assert np.array_equal(gm, gm.T)
    assert np.array_equal(jm @ jm, -np.eye(16))


@pytest.mark.parametrize("hbar", [1.0, 0.3, 2.5])
def test_complex_structure_from_metric_and_omega(hbar):
    block = -(1 / (2 * hbar)) * geo.metric_block_inverse(hbar) @ geo.OMEGA_BLOCK
    assert np.allclose(block, geo.complex_structure_block(), atol=1e-15)
    assert np.allclose(geo.metric_block(hbar) @ geo.metric_block_inverse(hbar), np.eye(4))


# pairings ------------------------------------------------------------------------


def test_omega_antisymmetric_and_canonical(rng):
    v = tangent(rng)
    assert geo.omega_pair(v, v) == pytest.approx(0, abs=1e-14)
    unit_rho = np.zeros((4, 4))
    unit_Phi = np.zeros((4, 4))
    unit_rho[0, 2] = 1
    unit_Phi[1, 2] = 1
    assert geo.omega_polar(unit_rho, unit_Phi, LAT) == pytest.approx(LAT.cell_weight)
    w = 0.1
    lat = Lattice((10,), (1.0,))
    rho, Phi = np.zeros((4, 10)), np.zeros((4, 10))
    rho[0, 3] = 1 / w
    Phi[1, 3] = 1
    assert geo.omega_polar(rho, Phi, lat) == pytest.approx(1.0)


def _polar_coordinates(psi, hbar):
    # (rho, Phi, phi, rho_s) per site
    out = []
    for kind in geo.CoordinateFunctional.KINDS:
        out.append([geo.CoordinateFunctional(LAT, kind, s, hbar)._value(psi) for s in range(LAT.size)])
    return np.array(out)


@pytest.mark.parametrize("hbar", [1.0, 0.7])
def test_omega_matches_polar_pushforward(rng, hbar):
    psi = random_amplitudes(rng)
    for _ in range(5):
        dv, du = random_amplitudes(rng), random_amplitudes(rng)
        h = 1e-6
        jac_v = (_polar_coordinates(psi + h * dv, hbar) - _polar_coordinates(psi - h * dv, hbar)) / (2 * h)
        jac_u = (_polar_coordinates(psi + h * du, hbar) - _polar_coordinates(psi - h * du, hbar)) / (2 * h)
        direct = geo.omega_pair(
            geo.TangentVector.from_amplitudes(LAT, dv, hbar), geo.TangentVector.from_amplitudes(LAT, du, hbar)
        )
        assert direct == pytest.approx(geo.omega_polar(jac_v, jac_u, LAT), abs=1e-9 * max(1, abs(direct)))


def test_metric_positive_and_simple_form(rng):
    for _ in range(50):
        v = tangent(rng)
        assert geo.metric_pair(v, v) > 0
    for _ in range(10):
        a, b = random_amplitudes(rng), random_amplitudes(rng)
        va, vb = geo.TangentVector.from_amplitudes(LAT, a), geo.TangentVector.from_amplitudes(LAT, b)
        expected = LAT.cell_weight * np.sum(np.conj(a) * b).real
        assert geo.metric_pair(va, vb) == pytest.approx(expected, abs=1e-12)


def test_metric_single_site_bump():
    lat = Lattice((3,), (3.0,))
    eps = 0.3 - 0.4j
    v = geo.TangentVector.from_amplitudes(lat, np.array([[0, eps, 0], [0, 0, 0]]))
    assert geo.metric_pair(v, v) == pytest.approx(abs(eps) ** 2)


def test_complex_structure_properties(rng):
    point = geo.random_point(LAT, rng)
    for _ in range(10):
        v, u = tangent(rng), tangent(rng)
        jv = geo.complex_structure(v)
        assert jv.is_consistent()
        assert np.allclose(jv.amplitudes, 1j * v.amplitudes)
        assert np.allclose(geo.complex_structure(jv).coords, -v.coords)
        assert geo.metric_pair(jv, geo.complex_structure(u)) == pytest.approx(geo.metric_pair(v, u), abs=1e-12)
        assert geo.omega_pair(v, u) == pytest.approx(2 * geo.metric_pair(jv, u), abs=1e-12)
    # a tangent, gauge-fixed vector stays tangent and gauge-fixed
    d = geo.sphere_tangent(point, random_amplitudes(rng))
    d -= 1j * (LAT.cell_weight * np.sum(np.conj(point.psi) * d).imag) * point.psi
    tgf = geo.TangentVector.from_amplitudes(LAT, d)
    assert tgf.is_tgf(point)
    assert geo.complex_structure(tgf).is_tgf(point)


def test_compatibility_carries_hbar(rng):
    hbar = 0.4
    v, u = tangent(rng, hbar=hbar), tangent(rng, hbar=hbar)
    assert geo.omega_pair(v, u) == pytest.approx(2 * hbar * geo.metric_pair(geo.complex_structure(v), u), abs=1e-12)


def test_tangent_flags(rng):
    point = geo.random_point(LAT, rng)
    radial = geo.TangentVector.from_amplitudes(LAT, point.psi)
    assert radial.density_rate(point) == pytest.approx(2.0)
    phase = geo.TangentVector.from_amplitudes(LAT, 1j * point.psi)
    assert phase.density_rate(point) == pytest.approx(0, abs=1e-14)
    assert abs(phase.gauge_rate(point)) > 1
    assert not radial.is_tgf(point) and not phase.is_tgf(point)


def test_lattice_mismatch(rng):
    other = geo.TangentVector.from_amplitudes(Lattice((4,), (2.0,)), random_amplitudes(rng))
    with pytest.raises(LatticeMismatch):
        geo.omega_pair(tangent(rng), other)
    with pytest.raises(LatticeMismatch):
        geo.GeneratorKernel(LAT, np.eye(4))


# brackets ------------------------------------------------------------------------


def test_bracket_examples(rng):
    point = geo.random_point(LAT, rng)
    kernel = geo.GeneratorKernel.random(LAT, rng)
    norm, energy = geo.NormFunctional(LAT), geo.BilinearFunctional(kernel)
    assert abs(geo.poisson_bracket(norm, energy, point)) < 1e-12
    for x in range(4):
        for y in range(4):
            rho = geo.CoordinateFunctional(LAT, "rho", x)
            Phi = geo.CoordinateFunctional(LAT, "Phi", y)
            expected = (x == y) / LAT.cell_weight
            assert geo.poisson_bracket(rho, Phi, point) == pytest.approx(expected, abs=1e-10)
            assert geo.poisson_bracket(rho, Phi, point, chart="polar") == pytest.approx(expected, abs=1e-12)


def test_bracket_antisymmetry_and_jacobi(rng):
    point = geo.random_point(LAT, rng)
    mats = [geo.GeneratorKernel.random(LAT, rng).matrix for _ in range(3)]

    def functional(matrix):
        return geo.BilinearFunctional(geo.GeneratorKernel(LAT, matrix))

    def commutator(a, b):
        return (a @ b - b @ a) / 1j

    f, g = functional(mats[0]), functional(mats[1])
    assert geo.poisson_bracket(f, g, point) == pytest.approx(-geo.poisson_bracket(g, f, point), abs=1e-12)
    # brackets of bilinears are bilinears of commutators
    assert geo.poisson_bracket(f, g, point) == pytest.approx(functional(commutator(mats[0], mats[1])).value(point), abs=1e-12)
    total = 0.0
    for a, b, c in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        total += geo.poisson_bracket(functional(mats[a]), functional(commutator(mats[b], mats[c])), point)
    assert abs(total) < 1e-9


def test_numeric_functional_matches_analytic(rng):
    point = geo.random_point(LAT, rng)
    kernel = geo.GeneratorKernel.random(LAT, rng)
    exact = geo.BilinearFunctional(kernel)
    numeric = geo.NumericFunctional(LAT, exact._value)
    assert np.allclose(numeric.wirtinger(point.psi), exact.wirtinger(point.psi), atol=1e-8)


def test_gradient_missing(rng):
    point = geo.random_point(LAT, rng)
    with pytest.raises(GradientMissing):
        geo.poisson_bracket(geo.QuarticFunctional(LAT), geo.NormFunctional(LAT), point, chart="polar")
    with pytest.raises(GradientMissing):
        geo.Functional(LAT).wirtinger(point.psi)


def test_non_hermitian_kernel():
    with pytest.raises(NonHermitianKernel):
        geo.GeneratorKernel(LAT, np.triu(np.ones((8, 8))))


# flows ---------------------------------------------------------------------------


def test_normalization_flow_examples(rng):
    point = geo.random_point(LAT, rng)
    assert np.array_equal(geo.normalization_flow(point, 0.0).psi, point.psi)
    flipped = geo.normalization_flow(point, np.pi)
    assert np.allclose(flipped.psi, -point.psi)
    a, b = born_extract(point.to_field()), born_extract(flipped.to_field())
    assert np.allclose(a.rho, b.rho) and np.allclose(a.s, b.s)
    assert fs_distance(point.to_field(), flipped.to_field()) < 1e-12


@given(st.floats(-20, 20), st.floats(0.2, 3.0))
@settings(max_examples=25, deadline=None)
def test_normalization_flow_shifts_phase(sigma, hbar):
    psi = np.array([[1 + 1j, 0.5, 0.2j, 1.0], [0.3, 0.3 - 0.1j, 1.0, 0.4j]])
    point = geo.PhaseSpacePoint(LAT, psi, hbar)
    moved = geo.normalization_flow(point, sigma)
    Phi = geo.CoordinateFunctional(LAT, "Phi", 0, hbar)
    shift = Phi._value(moved.psi) - Phi._value(psi)
    period = np.pi * hbar
    assert min(abs(shift - sigma) % period, period - abs(shift - sigma) % period) < 1e-9


def test_identity_kernel_flow_is_exact(rng):
    report = geo.hk_flow_test(geo.BilinearFunctional(geo.GeneratorKernel.identity(LAT)), steps=100, dlambda=0.05)
    assert report.omega_drift < 1e-12 and report.metric_drift < 1e-12
    assert report.verdict == "hamilton-killing"


def test_random_bilinear_flow_preserves_geometry(rng):
    kernel = geo.GeneratorKernel.random(LAT, rng)
    report = geo.hk_flow_test(geo.BilinearFunctional(kernel), steps=100, dlambda=0.05)
    assert report.fs_drift < 1e-10
    assert report.metric_drift < 1e-10 and report.omega_drift < 1e-10
    assert report.linearity_defect < 1e-10


def test_bilinear_rk4_errors_shrink_with_step(rng):
    kernel = geo.GeneratorKernel.random(LAT, rng, scale=3.0)
    drifts = [
        geo.hk_flow_test(geo.BilinearFunctional(kernel), steps=int(1 / h), dlambda=h, integrator="rk4").metric_drift
        for h in (0.1, 0.05)
    ]
    assert drifts[1] < drifts[0]


def test_quartic_flow_violates_killing_only():
    report = geo.hk_flow_test(geo.QuarticFunctional(LAT, 1.0), steps=100, dlambda=0.01)
    assert report.metric_drift >= 1e-3
    assert report.norm_drift <= 1e-8
    assert report.omega_drift < 1e-6
    assert report.verdict != "hamilton-killing"


def test_linear_generator_changes_norm(rng):
    gen = geo.LinearFunctional(LAT, random_amplitudes(rng))
    point = geo.random_point(LAT, rng)
    rate = geo.poisson_bracket(geo.NormFunctional(LAT), gen, point)
    assert abs(rate) > 1e-3
    assert geo.hk_flow_test(gen, steps=20, dlambda=0.01).norm_drift > 1e-6


def test_report_schema():
    report = geo.hk_flow_test(geo.BilinearFunctional(geo.GeneratorKernel.identity(LAT)), steps=2, dlambda=0.1)
    doc = report.to_dict()
    for key in ("generator_id", "steps", "dlambda", "omega_drift", "metric_drift", "norm_drift", "verdict"):
        assert key in doc
