"""Kernels that turn drive-induced dynamics into the QFI.

For a step quench the QFI is ``int_0^inf xi(t) kappa(t, T) dt`` with
``kappa = 4 pi T^2 / [sinh(pi t T) tanh(pi t T)]``.  Other drives use
``F_Q = 4T int Delta O(tau) kappa_f(tau, T) dtau`` where ``kappa_f`` follows
from deconvolving the drive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.ndimage import uniform_filter1d

from .protocol import DriveProfile
from .spectral import TimeSeries, endpoint_limit, integrate_series

MAX_DT = 0.1
SERIES_SWITCH = 1e-3
TABULATED_REG = 1e-12
NOISE_SMOOTH = 9
SIGNIFICANCE = 16.0


class ConfigError(ValueError):
    pass


class NonInvertibleDrive(ValueError):
    pass


def _inv_sinh_tanh(x):
    """``1 / (sinh x tanh x)`` with a series near 0."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = np.abs(x) < SERIES_SWITCH
    xs = x[small]
    out[small] = 1.0 / xs ** 2 + 1.0 / 6.0 - 7.0 * xs ** 2 / 120.0
    xl = x[~small]
    # cosh/sinh^2 written to stay finite for large x
    e = np.exp(-np.abs(xl))
    out[~small] = 2.0 * e * (1.0 + e * e) / (1.0 - e * e) ** 2
    return out


def kappa_step(t, T: float):
    """Step-quench kernel ``4 pi T^2 / [sinh(pi t T) tanh(pi t T)]``, t > 0."""
    if not T > 0:
        raise ValueError("temperature must be positive")
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr <= 0):
        raise ValueError("kappa_step is defined for t > 0 only")
    out = 4.0 * np.pi * T ** 2 * _inv_sinh_tanh(np.pi * T * t_arr)
    return float(out) if np.ndim(t) == 0 else out


def kappa_tail(t, T: float):
    """Large-t form ``8 pi T^2 exp(-pi t T)`` of the step kernel."""
    return 8.0 * np.pi * T ** 2 * np.exp(-np.pi * T * np.asarray(t, dtype=float))


def _check_grid(series: TimeSeries):
    if series.dt * 1.0 > MAX_DT + 1e-12:
        raise ConfigError(f"time step dt*J = {series.dt} is coarser than {MAX_DT}")
    if abs(series.t0) > 1e-12:
        raise ConfigError("series must start at t = 0")
    if len(series) < 6:
        raise ConfigError("need at least 6 samples")


def quench_integrand(xi: TimeSeries, T: float) -> np.ndarray:
    """``xi(t) kappa(t, T)`` with the finite t -> 0 limit filled in."""
    _check_grid(xi)
    t = xi.times
    g = np.empty_like(t)
    g[1:] = xi.values[1:] * kappa_step(t[1:], T)
    g[0] = endpoint_limit(t, g)
    return g


@dataclass(frozen=True)
class QuenchQFI:
    value: float
    t_cutoff: float
    tail_bound: float


def qfi_from_quench(xi: TimeSeries, T: float, t_cutoff: float | None = None) -> QuenchQFI:
    """``F_Q(t_cutoff) = int_0^tc xi(t) kappa(t, T) dt`` (composite Simpson).

    ``tail_bound`` is ``max|xi| * int_tc^inf kappa = 4 T max|xi| / sinh(pi T tc)``,
    with the maximum taken over the recorded window.
    """
    g = quench_integrand(xi, T)
    t = xi.times
    n = len(t) if t_cutoff is None else int(round(t_cutoff / xi.dt)) + 1
    if n > len(t):
        raise ValueError("xi does not reach t_cutoff")
    value = integrate_series(t[:n], g[:n])
    tc = t[n - 1]
    tail = 4.0 * T * np.max(np.abs(xi.values)) / np.sinh(np.pi * T * tc) if tc > 0 else np.inf
    return QuenchQFI(value, float(tc), float(tail))


def qfi_partial(xi: TimeSeries, T: float) -> TimeSeries:
    """Running ``F_Q(t_cutoff)`` for every grid point."""
    g = quench_integrand(xi, T)
    return TimeSeries(xi.dt, integrate_series(xi.times, g, cumulative=True))


@dataclass(frozen=True)
class ConvergenceFit:
    rate: float | None
    intercept: float | None
    residual: float | None
    npoints: int
    flagged: bool


def convergence_fit(partial: TimeSeries, T: float, f_inf: float | None = None,
                    window: tuple[float, float] = (3.0, 10.0), noise_floor: float = 1e-12) -> ConvergenceFit:
    """Least-squares decay rate of ``log|F_inf - F(t_cutoff)|`` over a window.

    The window is given in units of ``pi T t``.  Points below ``noise_floor``
    (relative to ``|F_inf|``) are dropped; fewer than 10 usable points flags
    the fit and omits the rate.
    """
    t = partial.times
    f = partial.values
    f_inf = f[-1] if f_inf is None else f_inf
    x = np.pi * T * t
    sel = (x >= window[0]) & (x <= window[1])
    resid = np.abs(f_inf - f[sel])
    ok = resid > noise_floor * max(abs(f_inf), 1.0)
    ts, rs = t[sel][ok], resid[ok]
    if len(ts) < 10:
        return ConvergenceFit(None, None, None, len(ts), True)
    coef, res, *_ = np.polyfit(ts, np.log(rs), 1, full=True)
    rms = float(np.sqrt(res[0] / len(ts))) if len(res) else 0.0
    return ConvergenceFit(float(-coef[0]), float(coef[1]), rms, len(ts), False)


# --- general drives -------------------------------------------------------


def _inv_sinh(t, T):
    e = np.exp(-np.pi * T * np.asarray(t, dtype=float))
    return 2.0 * e / (1.0 - e * e)


# derivatives of s(t) = 1/sinh(a t), a = pi T, in overflow-free form (e = exp(-a t))
def _inv_sinh_d1(t, T):
    a = np.pi * T
    e = np.exp(-a * np.asarray(t, dtype=float))
    return -2.0 * a * e * (1.0 + e * e) / (1.0 - e * e) ** 2


def _inv_sinh_d2(t, T):
    a = np.pi * T
    e = np.exp(-a * np.asarray(t, dtype=float))
    e2 = e * e
    return 2.0 * a * a * e * (1.0 + 6.0 * e2 + e2 * e2) / (1.0 - e2) ** 3


def _inv_sinh_d3(t, T):
    a = np.pi * T
    e = np.exp(-a * np.asarray(t, dtype=float))
    e2 = e * e
    return -2.0 * a ** 3 * e * (1.0 + e2) * (1.0 + 22.0 * e2 + e2 * e2) / (1.0 - e2) ** 4


def ramp_kernel(t, T: float, q: float, t0: float, horizon: float = 40.0, max_terms: int = 4000):
    """``kappa_f`` of a linear ramp of duration t0, for ``t > 0``.

    The ramp response is the step response averaged over a window t0, which
    inverts causally to ``kappa_f(t) = (t0/q) sum_n s''(t + n t0)`` with
    ``s = 1/sinh(pi t T)``.  Terms beyond ``max_terms`` are summed with the
    Euler-Maclaurin tail.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t <= 0):
        raise ValueError("ramp kernel is defined for t > 0 only")
    n_terms = int(min(max_terms, np.ceil(horizon / (np.pi * T * t0)) + 1))
    total = np.zeros_like(t)
    for n in range(n_terms):
        total += _inv_sinh_d2(t + n * t0, T)
    total *= t0
    a = t + n_terms * t0
    # sum_{n>=N} t0 g(a + ..) = int_a^inf g + t0 g(a)/2 - t0^2 g'(a)/12
    total += -_inv_sinh_d1(a, T) + 0.5 * t0 * _inv_sinh_d2(a, T) - t0 ** 2 / 12.0 * _inv_sinh_d3(a, T)
    return total / q


@dataclass(frozen=True, eq=False)
class KernelEval:
    """``kappa_f`` on a grid, used as ``F_Q = 4T int Delta O kappa_f``."""

    kernel: TimeSeries
    drive: DriveProfile
    T: float
    # kernel value at t = 0 is not finite; the integrator extrapolates
    even: bool = True


def check_invertible(drive: DriveProfile, n: int, dt: float, rel_threshold: float = 1e-8,
                     min_run: int = 3) -> None:
    """Reject drives whose spectrum vanishes on an interval of frequencies."""
    if drive.kind != "tabulated":
        return
    f = np.asarray(drive.samples, dtype=float)
    fp = np.diff(f, prepend=0.0) / dt
    spec = np.abs(np.fft.rfft(fp, 8 * max(n, len(f)))) * dt
    low = spec < rel_threshold * spec.max()
    run = 0
    freqs = 2 * np.pi * np.fft.rfftfreq(8 * max(n, len(f)), dt)
    for i, flag in enumerate(low):
        run = run + 1 if flag else 0
        if run >= min_run:
            j = i - run + 1
            raise NonInvertibleDrive(
                f"drive spectrum vanishes on omega in [{freqs[j]:.4g}, {freqs[i]:.4g}]"
            )


def kernel_for_drive(drive: DriveProfile, T: float, grid: TimeSeries) -> KernelEval:
    """``kappa_f(t, T)`` for the drive on ``grid`` (value at t = 0 unset, 0)."""
    t = grid.times
    k = np.zeros_like(t)
    tp = t[1:]
    if drive.kind == "step":
        k[1:] = kappa_step(tp, T) / (4.0 * T * drive.q)
    elif drive.kind == "delta_pulse":
        k[1:] = _inv_sinh(tp, T) / drive.q
    elif drive.kind == "linear_ramp":
        k[1:] = ramp_kernel(tp, T, drive.q, drive.t0)
    else:
        check_invertible(drive, len(t), grid.dt)
        k = _tabulated_kernel(drive, T, grid)
        return KernelEval(TimeSeries(grid.dt, k), drive, T, even=False)
    return KernelEval(TimeSeries(grid.dt, k), drive, T)


def _tabulated_kernel(drive: DriveProfile, T: float, grid: TimeSeries, pad: int = 8,
                      reg: float = TABULATED_REG) -> np.ndarray:
    """Discrete kernel of a sampled drive, the adjoint of exact deconvolution.

    The chi route ``4T int chi / sinh`` applied to the deconvolved record is
    linear in Delta O; its adjoint gives per-sample weights, stored divided by
    the Simpson weights so that ``qfi_from_drive`` reproduces it exactly.
    """
    n = len(grid)
    dt = grid.dt
    t = grid.times
    size = padded_size(n, pad)
    Hf = _drive_derivative_spectrum(drive, n, dt, size)
    # Tikhonov floor: sampled drives have near-zeros close to the Nyquist frequency
    fin = np.isfinite(Hf)
    hp = np.where(fin, np.abs(np.where(fin, Hf, 0)) ** 2, 0.0)
    gain = _wiener_gain(Hf, 1.0, reg * hp.max())
    # chi-side weights: Simpson weights times 1/sinh, endpoint extrapolated
    w = simpson_weights(t)
    v = np.zeros(n)
    v[1:] = w[1:] * _inv_sinh(t[1:], T)
    v[1:5] += w[0] * _endpoint_coefficients(t) * _inv_sinh(t[1:5], T)
    # adjoint of: chi = irfft(gain * rfft(taper * grad(dO) * dt))[:n] / dt
    y = np.fft.irfft(np.conj(gain) * np.fft.rfft(v, size), size)[:n] / dt
    y[0] = 0.0
    y *= _taper(n) * dt
    y[0] = 0.0
    raw = _gradient_matrix(n, dt).T @ y
    return raw / w


def simpson_weights(t: np.ndarray) -> np.ndarray:
    """Weights of ``integrate_series`` on the uniform grid t."""
    n = len(t)
    h = t[1] - t[0]
    m = n if n % 2 else n - 1
    w = np.zeros(n)
    w[:m:2] = 2.0
    w[1:m:2] = 4.0
    w[0] = w[m - 1] = 1.0
    w *= h / 3.0
    if n % 2 == 0:
        # scipy closes an even-length grid with a 3-point rule on the last interval
        w[-3:] += h * np.array([-1.0, 8.0, 5.0]) / 12.0
    return w


def _endpoint_coefficients(t: np.ndarray, npts: int = 4) -> np.ndarray:
    # endpoint_limit is linear in the samples
    return np.array([endpoint_limit(t, np.eye(npts + 1)[k]) for k in range(npts + 1)])[1:]


def _gradient_matrix(n: int, dt: float) -> sp.csr_matrix:
    """Sparse form of ``np.gradient(., dt, edge_order=2)``."""
    rows = [0, 0, 0]
    cols = [0, 1, 2]
    vals = [-1.5, 2.0, -0.5]
    for i in range(1, n - 1):
        rows += [i, i]
        cols += [i - 1, i + 1]
        vals += [-0.5, 0.5]
    rows += [n - 1, n - 1, n - 1]
    cols += [n - 3, n - 2, n - 1]
    vals += [0.5, -2.0, 1.5]
    return sp.csr_matrix((np.array(vals) / dt, (rows, cols)), shape=(n, n))


def qfi_from_drive(delta_o: TimeSeries, kern: KernelEval, t_cutoff: float | None = None) -> float:
    """``4 T int_0^tc Delta O(tau) kappa_f(tau, T) dtau``."""
    _check_grid(delta_o)
    if len(delta_o) > len(kern.kernel) or abs(delta_o.dt - kern.kernel.dt) > 1e-15:
        raise ValueError("Delta O and kernel grids differ")
    t = delta_o.times
    g = delta_o.values * kern.kernel.values[: len(t)]
    if kern.drive.kind == "tabulated":
        # the discrete kernel already folds in the endpoint and the full record
        if t_cutoff is not None or len(t) != len(kern.kernel):
            raise ValueError("a tabulated-drive kernel applies to its full grid only")
        return 4.0 * kern.T * integrate_series(t, g)
    g[0] = endpoint_limit(t, g, even=kern.even)
    n = len(t) if t_cutoff is None else int(round(t_cutoff / delta_o.dt)) + 1
    return 4.0 * kern.T * integrate_series(t[:n], g[:n])


# --- Wiener deconvolution -------------------------------------------------


@dataclass(frozen=True, eq=False)
class WienerConfig:
    """Power spectral densities on the ``rfft`` frequency grid of the padded signal."""

    s_chi: np.ndarray
    s_noise: np.ndarray

    def __post_init__(self):
        sc = np.asarray(self.s_chi, dtype=float)
        sn = np.asarray(self.s_noise, dtype=float)
        if np.any(sc < 0) or np.any(sn < 0):
            raise ValueError("spectral densities must be non-negative")
        if not np.any(sc > 0):
            raise ValueError("S_chi is identically zero")
        object.__setattr__(self, "s_chi", sc)
        object.__setattr__(self, "s_noise", sn)


def _drive_derivative_spectrum(drive: DriveProfile, n: int, dt: float, size: int) -> np.ndarray:
    """DFT of ``f'`` samples (times dt) so that ``Delta O' = f' * chi``."""
    if drive.kind in ("step", "delta_pulse"):
        if drive.kind == "delta_pulse":
            raise ValueError("a delta pulse needs no derivative; deconvolve Delta O directly")
        h = np.zeros(size)
        h[0] = drive.q
        return np.fft.rfft(h)
    t = dt * np.arange(n)
    f = np.asarray(drive(t), dtype=float)
    # The increment of f over [t_{j-1}, t_j] probes chi half a step after the
    # grid, psi_k = chi(t_k + dt/2); chi on the grid is the two-point average
    # of psi (transfer A below).  The jump f(0+) acts on chi directly.
    h = np.diff(f, prepend=0.0)
    h[0] = 0.0
    z = np.exp(-2j * np.pi * np.fft.rfftfreq(size))
    A = 0.5 * (1.0 + z)
    R = np.fft.rfft(h, size)  # increment j acts on psi_{i-j}
    H = np.full(len(z), np.inf, dtype=complex)
    ok = np.abs(A) > 1e-12
    H[ok] = f[0] + R[ok] / A[ok]
    return H


def _taper(n: int, frac: float = 0.1) -> np.ndarray:
    w = np.ones(n)
    m = max(int(frac * n), 1)
    w[n - m:] = 0.5 * (1 + np.cos(np.pi * np.arange(1, m + 1) / m))
    return w


def padded_size(n: int, pad: int = 8) -> int:
    return pad * n



def _flat_transfer(drive: DriveProfile) -> bool:
    return drive.kind in ("step", "delta_pulse")


def _prepared_spectrum(y: np.ndarray, drive: DriveProfile, dt: float, size: int) -> np.ndarray:
    """DFT of the signal that equals ``f' * chi`` (times dt) for the drive.

    For steps and pulses that signal is chi itself up to a constant; chi is
    odd in t, so the record is continued to negative times by its odd
    reflection, which keeps the (zero-phase) filter from biasing chi near 0.
    """
    n = len(y)
    if drive.kind == "delta_pulse":
        g = y * _taper(n)
    else:
        g = np.gradient(y, dt, edge_order=2) * dt * _taper(n)
        # causal responses start flat: d/dt Delta O = 0 at t = 0
        g[0] = 0.0
    if _flat_transfer(drive):
        ext = np.zeros(size)
        ext[:n] = g
        ext[0] = 0.0
        ext[size - n + 1:] = -g[:0:-1]
        return np.fft.rfft(ext)
    return np.fft.rfft(g, size)


def _transfer(drive: DriveProfile, n: int, dt: float, size: int) -> np.ndarray:
    if drive.kind == "delta_pulse":
        return np.full(size // 2 + 1, drive.q * 1.0, dtype=complex)
    return _drive_derivative_spectrum(drive, n, dt, size)


def _wiener_gain(Hf: np.ndarray, s_chi, s_noise) -> np.ndarray:
    """``conj(H) S_chi / (|H|^2 S_chi + S_n)``; zero where H is infinite."""
    gain = np.zeros_like(Hf)
    fin = np.isfinite(Hf)
    h = Hf[fin]
    sc = np.broadcast_to(s_chi, Hf.shape)[fin]
    sn = np.broadcast_to(s_noise, Hf.shape)[fin]
    den = np.abs(h) ** 2 * sc + sn
    gain[fin] = np.divide(np.conj(h) * sc, den, out=np.zeros_like(h), where=den > 0)
    return gain


def wiener_deconvolve(delta_o: TimeSeries, drive: DriveProfile, cfg: WienerConfig, pad: int = 8) -> TimeSeries:
    """Estimate chi from a (noisy) response to ``drive``.

    Works on ``d/dt Delta O = f' * chi`` so that steps and ramps have short
    kernels; the record is tapered at its far end and zero-padded ``pad``
    times.  With ``S_n = 0`` this is exact inversion of the drive.
    """
    n = len(delta_o)
    dt = delta_o.dt
    size = padded_size(n, pad)
    if cfg.s_chi.shape != (size // 2 + 1,) or cfg.s_noise.shape != (size // 2 + 1,):
        raise ValueError(f"spectral densities must have length {size // 2 + 1}")
    G = _prepared_spectrum(delta_o.values, drive, dt, size)
    Hf = _transfer(drive, n, dt, size)
    gain = _wiener_gain(Hf, cfg.s_chi, cfg.s_noise)
    chi = np.fft.irfft(gain * G, size)[:n]
    if drive.kind != "delta_pulse":
        chi = chi / dt
    chi[0] = 0.0
    return TimeSeries(dt, chi, delta_o.t0)


def estimate_spectra(shots: np.ndarray, drive: DriveProfile, dt: float, pad: int = 8) -> WienerConfig:
    """Spectral densities for the shot-averaged record from replicate shots.

    ``shots`` has shape (n_shots, n_times).  The noise PSD of the mean comes
    from the replicate scatter of the shot spectra; the signal PSD is the
    power of the mean minus that noise, divided by the drive power and set to
    zero where the excess is not significant.
    """
    shots = np.asarray(shots, dtype=float)
    if shots.ndim != 2:
        raise ValueError("shots must have shape (n_shots, n_times)")
    n_shots, n = shots.shape
    if n_shots < 2:
        raise ValueError("need at least two replicate shots")
    size = padded_size(n, pad)
    spectra = np.array([_prepared_spectrum(y, drive, dt, size) for y in shots])
    Hf = _transfer(drive, n, dt, size)
    mean = spectra.mean(axis=0)
    s_noise = np.sum(np.abs(spectra - mean) ** 2, axis=0) / (n_shots - 1) / n_shots
    s_noise = uniform_filter1d(s_noise, NOISE_SMOOTH, mode="nearest")
    power = np.abs(mean) ** 2
    sig = np.where(power > SIGNIFICANCE * s_noise, power - s_noise, 0.0)
    hp = np.abs(Hf) ** 2
    s_chi = np.divide(sig, hp, out=np.zeros_like(sig), where=hp > 0)
    if not np.any(s_chi > 0):
        s_chi = np.full_like(s_chi, 1e-300)
    return WienerConfig(s_chi, s_noise)
