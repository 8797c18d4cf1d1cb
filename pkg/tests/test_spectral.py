import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import free_fermion_qfi, hubbard_system
from fermiqfi.fock import build_number_basis
from fermiqfi.spectral import (
    QuadratureError,
    QuadratureWarning,
    Spectrum,
    SpectralResponse,
    TimeSeries,
    chi_slope,
    chi_t,
    diagonalize,
    endpoint_limit,
    qfi_exact,
    qfi_from_chi_t,
    qfi_from_chi_w,
    qfi_pure,
    response_peaks,
    thermal_state,
    thermal_variance,
    time_grid,
    xi_t,
)


def test_time_grid_rounds_up():
    g = time_grid(0.1, 1.05)
    assert len(g) == 12 and g.times[-1] == pytest.approx(1.1)
    with pytest.raises(ValueError):
        TimeSeries(0.1, [0.0, np.nan])
    with pytest.raises(ValueError):
        TimeSeries(0.0, [0.0])


def test_diagonalize_rejects_non_hermitian():
    with pytest.raises(ValueError):
        diagonalize(np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_thermal_state_normalized_and_ordered():
    _, H0, O, sim = hubbard_system(4, 4.0)
    rho = thermal_state(sim.spec0, 0.3)
    assert rho.weights.sum() == pytest.approx(1.0)
    assert np.all(np.diff(rho.weights) <= 1e-15)
    with pytest.raises(ValueError):
        thermal_state(sim.spec0, 0.0)


@pytest.mark.parametrize("U", [-4.0, 0.0, 4.0])
@pytest.mark.parametrize("T", [0.2, 0.5, 1.0])
def test_qfi_bounded_by_four_variance(U, T):
    _, _, O, sim = hubbard_system(4, U)
    rho = thermal_state(sim.spec0, T)
    f = qfi_exact(sim.spec0, rho, O)
    assert 0.0 <= f <= 4 * thermal_variance(sim.spec0, rho, O) + 1e-10


@pytest.mark.parametrize("op", ["plus", "minus"])
@pytest.mark.parametrize("T", [0.2, 0.4, 0.8])
@pytest.mark.parametrize("boundary", ["open", "periodic"])
def test_free_fermion_oracle(op, T, boundary):
    _, _, O, sim = hubbard_system(4, 0.0, op, boundary)
    rho = thermal_state(sim.spec0, T)
    assert qfi_exact(sim.spec0, rho, O) == pytest.approx(free_fermion_qfi(4, T, op, boundary), rel=1e-10)


def test_free_fermion_oracle_L6():
    _, _, O, sim = hubbard_system(6, 0.0)
    rho = thermal_state(sim.spec0, 0.4)
    assert qfi_exact(sim.spec0, rho, O) == pytest.approx(free_fermion_qfi(6, 0.4), rel=1e-10)


@pytest.mark.parametrize("U", [2.0, 6.0])
@pytest.mark.parametrize("T", [0.3, 0.7])
def test_particle_hole_exchanges_operators(U, T):
    _, _, Op, sp = hubbard_system(4, U, "plus")
    _, _, Om, sm = hubbard_system(4, -U, "minus")
    f_plus = qfi_exact(sp.spec0, thermal_state(sp.spec0, T), Op)
    f_minus = qfi_exact(sm.spec0, thermal_state(sm.spec0, T), Om)
    assert f_plus == pytest.approx(f_minus, rel=1e-10)


def test_low_temperature_limit_is_pure_state_qfi():
    _, _, O, sim = hubbard_system(4, 4.0)
    gap = sim.spec0.energies[1] - sim.spec0.energies[0]
    assert gap > 0.1
    T = gap / 60
    f = qfi_exact(sim.spec0, thermal_state(sim.spec0, T), O)
    assert f == pytest.approx(qfi_pure(sim.spec0.vectors[:, 0], O), rel=1e-9)


def test_high_temperature_qfi_vanishes():
    _, _, O, sim = hubbard_system(4, 4.0)
    f_hot = qfi_exact(sim.spec0, thermal_state(sim.spec0, 1e3), O)
    f_warm = qfi_exact(sim.spec0, thermal_state(sim.spec0, 1.0), O)
    assert f_hot < 1e-3 * f_warm


def test_qfi_pure_needs_normalized_state():
    basis = build_number_basis(2)
    with pytest.raises(ValueError):
        qfi_pure(np.ones(basis.dim), np.eye(basis.dim))


def two_level(delta=1.3, o=0.7):
    """Two states split by delta with off-diagonal operator element o."""
    H = np.diag([0.0, delta])
    O = np.array([[0.0, o], [o, 0.0]])
    return diagonalize(H), O


@pytest.mark.parametrize("T", [0.1, 0.5, 2.0])
def test_two_level_closed_form(T):
    delta, o = 1.3, 0.7
    spec, O = two_level(delta, o)
    rho = thermal_state(spec, T)
    # populations differ by tanh(delta / 2T), so F = 4 o^2 tanh^2
    expect = 4 * o ** 2 * np.tanh(delta / (2 * T)) ** 2
    assert qfi_exact(spec, rho, O) == pytest.approx(expect, rel=1e-12)
    peaks = response_peaks(spec, rho, O)
    assert qfi_from_chi_w(peaks, T) == pytest.approx(expect, rel=1e-12)


def test_response_peaks_antisymmetric():
    _, _, O, sim = hubbard_system(4, 2.0)
    peaks = response_peaks(sim.spec0, thermal_state(sim.spec0, 0.5), O)
    # chi''(omega) is odd: each (omega, w) pair has a partner (-omega, -w)
    order = np.lexsort((peaks.weight, peaks.omega))
    rev = np.lexsort((-peaks.weight, -peaks.omega))
    assert np.allclose(peaks.omega[order], -peaks.omega[rev])
    assert np.allclose(peaks.weight[order], -peaks.weight[rev])
    # and chi(t) >= 0 initially: chi'(0) > 0
    assert chi_slope(peaks) > 0


def test_chi_is_derivative_of_xi():
    _, _, O, sim = hubbard_system(4, 4.0)
    peaks = response_peaks(sim.spec0, thermal_state(sim.spec0, 0.4), O)
    g = time_grid(1e-3, 3.0)
    xi = xi_t(peaks, g).values
    chi = chi_t(peaks, g).values
    assert np.allclose(np.gradient(xi, g.dt)[1:-1], chi[1:-1], atol=1e-4 * np.abs(chi).max())
    assert xi[0] == 0 and chi[0] == 0


def test_endpoint_limit_recovers_even_polynomial():
    t = 0.1 * np.arange(8)
    f = 2.0 - 3.0 * t ** 2 + 0.5 * t ** 4
    f[0] = np.nan
    assert endpoint_limit(t, f) == pytest.approx(2.0, abs=1e-12)
    g = 1.0 + t - t ** 2
    assert endpoint_limit(t, g, even=False) == pytest.approx(1.0, abs=1e-12)


def test_time_domain_two_level():
    delta, o, T = 1.3, 0.7, 0.4
    spec, O = two_level(delta, o)
    rho = thermal_state(spec, T)
    peaks = response_peaks(spec, rho, O)
    chi = chi_t(peaks, time_grid(0.01, 30 / (np.pi * T)))
    assert qfi_from_chi_t(chi, T) == pytest.approx(4 * o ** 2 * np.tanh(delta / (2 * T)) ** 2, rel=1e-8)


def test_chi_t_cutoff_and_errors():
    spec, O = two_level()
    peaks = response_peaks(spec, thermal_state(spec, 0.5), O)
    chi = chi_t(peaks, time_grid(0.01, 5.0))
    with pytest.raises(ValueError):
        qfi_from_chi_t(chi, 0.5, t_cutoff=10.0)
    with pytest.raises(ValueError):
        qfi_from_chi_t(chi, -1.0)
    short = qfi_from_chi_t(chi, 0.5, t_cutoff=2.0)
    assert 0 < short


def test_quadrature_warning_on_coarse_grid():
    peaks = SpectralResponse(np.array([40.0, -40.0]), np.array([1.0, -1.0]))
    chi = chi_t(peaks, time_grid(0.05, 10.0))
    with pytest.warns(QuadratureWarning):
        qfi_from_chi_t(chi, 0.5, tol=1e-8)
    with pytest.raises(QuadratureError):
        qfi_from_chi_t(chi, 0.5, tol=1e-8, strict=True)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        qfi_from_chi_t(chi, 0.5, tol=10.0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(0.05, 5.0), st.floats(0.01, 2.0)), min_size=1, max_size=4),
       st.floats(0.2, 1.0))
def test_synthetic_peaks_time_domain_matches_tanh_sum(lines, T):
    # random positive-frequency lines with their odd partners
    om = np.array([w for w, _ in lines])
    a = np.array([v for _, v in lines])
    peaks = SpectralResponse(np.concatenate([om, -om]), np.concatenate([a, -a]))
    chi = chi_t(peaks, time_grid(0.005, 30 / (np.pi * T)))
    assert qfi_from_chi_t(chi, T) == pytest.approx(qfi_from_chi_w(peaks, T), rel=1e-6)


def test_degenerate_subspace_rotation_leaves_qfi_unchanged():
    # U = 0 with periodic boundary has large degenerate multiplets
    _, _, O, sim = hubbard_system(4, 0.0, "plus", "periodic")
    spec = sim.spec0
    rng = np.random.default_rng(11)
    V = spec.vectors.copy()
    e = spec.energies
    starts = np.flatnonzero(np.diff(np.concatenate([[-np.inf], e])) > 1e-9)
    bounds = list(starts) + [len(e)]
    mixed = 0
    for a, b in zip(bounds[:-1], bounds[1:]):
        if b - a > 1:
            q, _ = np.linalg.qr(rng.normal(size=(b - a, b - a)))
            V[:, a:b] = V[:, a:b] @ q
            mixed += 1
    assert mixed > 0
    rotated = Spectrum(e, V)
    for T in (0.2, 0.5):
        ref = qfi_exact(spec, thermal_state(spec, T), O)
        assert qfi_exact(rotated, thermal_state(rotated, T), O) == pytest.approx(ref, rel=1e-10)
