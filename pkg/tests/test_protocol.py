import numpy as np
import pytest
from scipy.linalg import expm

from conftest import hubbard_system
from fermiqfi.fock import SparseOperator
from fermiqfi.protocol import (
    DriveProfile,
    QuenchRun,
    default_t_max,
    kubo_convolve,
    ramp_quench_series,
    simulate_quench,
    xi_plain,
    xi_symmetrized,
)
from fermiqfi.spectral import chi_t, response_peaks, thermal_state, time_grid, xi_t


def test_default_t_max_rule():
    assert np.pi * 0.4 * default_t_max(0.4) == pytest.approx(14.0)


def test_response_starts_at_zero():
    _, H0, O, sim = hubbard_system(4, 4.0)
    run = sim.run(1e-2, 0.4, dt=0.02, t_max=2.0)
    assert abs(run.delta_o.values[0]) < 1e-12
    assert run.delta_o.times[-1] == pytest.approx(2.0)


def test_matches_direct_propagation():
    _, H0, O, sim = hubbard_system(2, 3.0)
    q, T = 0.2, 0.5
    run = simulate_quench(H0, O, q, T, dt=0.05, t_max=1.0)
    h0, o = H0.toarray(), O.toarray()
    e, v = np.linalg.eigh(h0)
    p = np.exp(-(e - e[0]) / T)
    rho = (v * (p / p.sum())) @ v.T
    eq = np.trace(rho @ o)
    for i, t in enumerate(run.delta_o.times[::5]):
        U = expm(-1j * (h0 - q * o) * t)
        val = np.trace(U @ rho @ U.conj().T @ o).real - eq
        assert run.delta_o.values[5 * i] == pytest.approx(val, abs=1e-12)


def test_energy_conserved_after_quench():
    _, H0, O, sim = hubbard_system(4, 4.0)
    q, T = 0.05, 0.4
    Hq = SparseOperator(H0.basis, H0.matrix - q * O.matrix, True)
    times = np.linspace(0.0, 10.0, 51)
    e = sim.observable_series(q, T, times, observable=Hq)
    assert np.ptp(e) < 1e-10 * max(1.0, abs(e[0]))


def test_symmetrized_response_matches_linear_response():
    _, H0, O, sim = hubbard_system(4, 4.0)
    T, tm = 0.4, 8.0
    exact = xi_t(response_peaks(sim.spec0, thermal_state(sim.spec0, T), O), time_grid(0.02, tm)).values
    errs = []
    qs = [1e-3, 2e-3, 4e-3]
    for q in qs:
        xs = xi_symmetrized(sim.run(q, T, 0.02, tm), sim.run(-q, T, 0.02, tm))
        errs.append(np.max(np.abs(xs.values - exact)))
    slope = np.polyfit(np.log(qs), np.log(errs), 1)[0]
    assert slope == pytest.approx(2.0, abs=0.1)
    assert errs[0] < 2e-4 * np.max(np.abs(exact))


def test_richardson_extrapolation_removes_q_squared_term():
    _, H0, O, sim = hubbard_system(4, 2.0, "minus")
    T, tm, q = 0.5, 6.0, 0.02
    exact = xi_t(response_peaks(sim.spec0, thermal_state(sim.spec0, T), O), time_grid(0.02, tm)).values
    x1 = xi_symmetrized(sim.run(q, T, 0.02, tm), sim.run(-q, T, 0.02, tm)).values
    x2 = xi_symmetrized(sim.run(2 * q, T, 0.02, tm), sim.run(-2 * q, T, 0.02, tm)).values
    rich = (4 * x1 - x2) / 3
    assert np.max(np.abs(rich - exact)) < 0.05 * np.max(np.abs(x1 - exact))


def test_symmetrization_cancels_even_orders_for_staggered_density():
    # O_- at U != 0 has no symmetry removing the q^2 term of the plain estimator
    _, H0, O, sim = hubbard_system(4, 2.0, "minus")
    T, tm, q = 0.5, 6.0, 0.02
    exact = xi_t(response_peaks(sim.spec0, thermal_state(sim.spec0, T), O), time_grid(0.02, tm)).values
    rp, rm = sim.run(q, T, 0.02, tm), sim.run(-q, T, 0.02, tm)
    e_plain = np.max(np.abs(xi_plain(rp).values - exact))
    e_sym = np.max(np.abs(xi_symmetrized(rp, rm).values - exact))
    assert e_sym < e_plain


def test_symmetrized_requires_matching_runs():
    _, H0, O, sim = hubbard_system(2, 1.0)
    a = sim.run(0.1, 0.5, 0.05, 1.0)
    with pytest.raises(ValueError):
        xi_symmetrized(a, sim.run(0.2, 0.5, 0.05, 1.0))
    with pytest.raises(ValueError):
        xi_symmetrized(a, sim.run(-0.1, 0.6, 0.05, 1.0))
    with pytest.raises(ValueError):
        xi_symmetrized(a, sim.run(-0.1, 0.5, 0.05, 2.0))
    with pytest.raises(ValueError):
        sim.run(0.0, 0.5)
    assert isinstance(a, QuenchRun)


def test_drive_profiles():
    assert DriveProfile.step(0.5)(np.array([-1.0, 0.0, 1.0])).tolist() == [0.0, 0.25, 0.5]
    ramp = DriveProfile.linear_ramp(2.0, 1.0)
    assert ramp(np.array([-1.0, 0.5, 3.0])).tolist() == [0.0, 1.0, 2.0]
    tab = DriveProfile.tabulated([0.0, 0.5, 1.0], 0.1)
    assert tab.q == 1.0 and tab(0.05) == pytest.approx(0.25)
    with pytest.raises(ValueError):
        DriveProfile("sine", 1.0)
    with pytest.raises(ValueError):
        DriveProfile.linear_ramp(1.0, 0.0)
    with pytest.raises(ValueError):
        DriveProfile.step(0.0)
    with pytest.raises(ValueError):
        DriveProfile.delta_pulse(1.0)(0.0)


def test_kubo_convolution_of_step_is_xi():
    _, H0, O, sim = hubbard_system(4, 4.0)
    peaks = response_peaks(sim.spec0, thermal_state(sim.spec0, 0.4), O)
    g = time_grid(0.005, 6.0)
    chi = chi_t(peaks, g)
    lr = kubo_convolve(chi, DriveProfile.step(1.0)).values
    assert np.allclose(lr, xi_t(peaks, g).values, atol=1e-4)
    pulse = kubo_convolve(chi, DriveProfile.delta_pulse(0.3)).values
    assert np.allclose(pulse, 0.3 * chi.values)


def test_ramp_propagation_reduces_to_step():
    _, H0, O, sim = hubbard_system(2, 3.0)
    T, q = 0.5, 0.1
    step = sim.run(q, T, 0.05, 2.0).delta_o.values
    ramp = ramp_quench_series(sim, DriveProfile.step(q), T, 0.05, 2.0, substeps=4).values
    assert np.allclose(step, ramp, atol=1e-12)


def test_ramp_propagation_follows_linear_response():
    _, H0, O, sim = hubbard_system(4, 4.0)
    T, q = 0.4, 1e-3
    drive = DriveProfile.linear_ramp(q, 1.0)
    got = ramp_quench_series(sim, drive, T, 0.02, 4.0)
    chi = chi_t(response_peaks(sim.spec0, thermal_state(sim.spec0, T), O), time_grid(0.02, 4.0))
    lr = kubo_convolve(chi, drive).values
    assert np.max(np.abs(got.values - lr)) < 1e-3 * np.max(np.abs(lr))
