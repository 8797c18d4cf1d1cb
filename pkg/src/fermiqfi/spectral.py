"""Spectra, canonical states and the exact QFI routes.

Three routes to the QFI of a thermal state are provided: the eigenbasis
formula, the tanh-weighted sum over response peaks, and the time-domain
integral of the Kubo response function against ``1/sinh(pi t T)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .fock import SparseOperator

PAIR_TOL = 1e-14
RHO_SUM_TOL = 1e-30


class QuadratureWarning(RuntimeWarning):
    pass


class QuadratureError(ArithmeticError):
    pass


@dataclass(frozen=True, eq=False)
class Spectrum:
    energies: np.ndarray
    vectors: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.energies)

    def matrix_elements(self, O: SparseOperator | np.ndarray) -> np.ndarray:
        """``<lam|O|lam'>`` in the eigenbasis."""
        V = self.vectors
        if isinstance(O, SparseOperator):
            if O.dim != self.dim:
                raise ValueError("operator and spectrum dimensions differ")
            if O.is_diagonal():
                return V.conj().T @ (O.diagonal()[:, None] * V)
            return V.conj().T @ (O.matrix @ V)
        O = np.asarray(O)
        return V.conj().T @ O @ V


@dataclass(frozen=True, eq=False)
class ThermalState:
    T: float
    weights: np.ndarray
    log_z: float


@dataclass(frozen=True, eq=False)
class SpectralResponse:
    """Delta peaks of chi''(omega): frequencies and signed weights."""

    omega: np.ndarray
    weight: np.ndarray

    def __len__(self):
        return len(self.omega)


@dataclass(frozen=True, eq=False)
class TimeSeries:
    dt: float
    values: np.ndarray
    t0: float = 0.0

    def __post_init__(self):
        vals = np.asarray(self.values)
        if not np.all(np.isfinite(vals)):
            raise ValueError("time series contains non-finite values")
        if not self.dt > 0:
            raise ValueError("time step must be positive")
        object.__setattr__(self, "values", vals)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self.values))

    def __len__(self):
        return len(self.values)


def time_grid(dt: float, t_max: float) -> TimeSeries:
    """Zero-valued series on ``[0, t_max]`` (rounded up to a whole step)."""
    n = int(np.ceil(t_max / dt - 1e-9)) + 1
    return TimeSeries(dt, np.zeros(n))


def diagonalize(H: SparseOperator | np.ndarray) -> Spectrum:
    """Full dense eigendecomposition of a hermitian operator."""
    if isinstance(H, SparseOperator):
        if not H.hermitian:
            raise ValueError("diagonalize needs a hermitian operator")
        mat = H.toarray()
    else:
        mat = np.asarray(H)
        if np.max(np.abs(mat - mat.conj().T), initial=0.0) > 1e-12:
            raise ValueError("diagonalize needs a hermitian operator")
    if np.isrealobj(mat) or np.max(np.abs(mat.imag), initial=0.0) == 0:
        mat = np.ascontiguousarray(mat.real)
    try:
        e, v = np.linalg.eigh(mat)
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError(f"eigensolver failed: {exc}") from exc
    return Spectrum(e, v)


def thermal_state(s: Spectrum, T: float) -> ThermalState:
    if not T > 0:
        raise ValueError("temperature must be positive")
    e0 = s.energies[0]
    boltz = np.exp(-(s.energies - e0) / T)
    z = boltz.sum()
    return ThermalState(T, boltz / z, float(np.log(z) - e0 / T))


def _abs2(s: Spectrum, O) -> np.ndarray:
    m = s.matrix_elements(O)
    return (m * m.conj()).real


def qfi_exact(s: Spectrum, rho: ThermalState, O) -> float:
    """``2 sum (p_l - p_l')^2 / (p_l + p_l') |O_ll'|^2``."""
    p = rho.weights
    num = (p[:, None] - p[None, :]) ** 2
    den = p[:, None] + p[None, :]
    ratio = np.divide(num, den, out=np.zeros_like(num), where=den > RHO_SUM_TOL)
    return float(2.0 * np.sum(ratio * _abs2(s, O)))


def thermal_variance(s: Spectrum, rho: ThermalState, O) -> float:
    m = s.matrix_elements(O)
    p = rho.weights
    mean = float(np.real(p @ np.diag(m)))
    second = float(np.real(np.einsum("l,lk,kl->", p, m, m)))
    return second - mean ** 2


def qfi_pure(state, O) -> float:
    """``4 Var(O)`` of a normalized pure state."""
    psi = np.asarray(state)
    if abs(np.linalg.norm(psi) - 1.0) > 1e-8:
        raise ValueError("state is not normalized")
    mat = O.matrix if isinstance(O, SparseOperator) else O
    o_psi = mat @ psi
    mean = np.vdot(psi, o_psi).real
    second = np.vdot(o_psi, o_psi).real
    return float(4.0 * (second - mean ** 2))


def response_peaks(s: Spectrum, rho: ThermalState, O) -> SpectralResponse:
    """Pairs with ``omega = e_l' - e_l`` and weight ``(p_l - p_l') |O_ll'|^2``."""
    a2 = _abs2(s, O)
    p = rho.weights
    dp = p[:, None] - p[None, :]
    keep = (a2 > PAIR_TOL) & (np.abs(dp) > PAIR_TOL)
    li, lj = np.nonzero(keep)
    omega = s.energies[lj] - s.energies[li]
    return SpectralResponse(omega, dp[li, lj] * a2[li, lj])


def chi_t(peaks: SpectralResponse, grid: TimeSeries) -> TimeSeries:
    """Real Kubo response ``chi(t) = sum_peaks weight * sin(omega t)``."""
    t = grid.times
    if t[0] < 0:
        raise ValueError("response grid must start at t >= 0")
    vals = np.zeros_like(t)
    for start in range(0, len(peaks), 4096):
        sl = slice(start, start + 4096)
        vals += np.sin(np.outer(t, peaks.omega[sl])) @ peaks.weight[sl]
    return TimeSeries(grid.dt, vals, grid.t0)


def xi_t(peaks: SpectralResponse, grid: TimeSeries) -> TimeSeries:
    """Linear step response ``int_0^t chi = sum weight (1 - cos omega t)/omega``."""
    t = grid.times
    vals = np.zeros_like(t)
    for start in range(0, len(peaks), 4096):
        sl = slice(start, start + 4096)
        w = peaks.omega[sl]
        vals += (1.0 - np.cos(np.outer(t, w))) @ (peaks.weight[sl] / w)
    return TimeSeries(grid.dt, vals, grid.t0)


def chi_slope(peaks: SpectralResponse) -> float:
    """``d chi / dt`` at ``t = 0+``."""
    return float(np.sum(peaks.weight * peaks.omega))


def qfi_from_chi_w(peaks: SpectralResponse, T: float) -> float:
    """``2 sum tanh(omega / 2T) * weight`` over the response peaks."""
    if not T > 0:
        raise ValueError("temperature must be positive")
    return float(2.0 * np.sum(np.tanh(peaks.omega / (2.0 * T)) * peaks.weight))


def endpoint_limit(t: np.ndarray, values: np.ndarray, even: bool = True, npts: int = 4) -> float:
    """Extrapolate ``values`` from ``t[1:npts+1]`` to ``t[0] = 0``.

    For integrands even in t the fit is a polynomial in ``t**2``.
    """
    x = t[1:npts + 1] ** 2 if even else t[1:npts + 1]
    y = values[1:npts + 1]
    coeffs = np.polyfit(x, y, len(x) - 1)
    return float(np.polyval(coeffs, 0.0))


def integrate_series(t: np.ndarray, f: np.ndarray, cumulative: bool = False):
    """Composite Simpson on a uniform grid starting at 0."""
    if cumulative:
        return integrate.cumulative_simpson(f, x=t, initial=0.0)
    return float(integrate.simpson(f, x=t))


def _cut(series: TimeSeries, t_cutoff: float | None) -> tuple[np.ndarray, np.ndarray]:
    t = series.times
    if abs(t[0]) > 1e-12:
        raise ValueError("series must start at t = 0")
    if t_cutoff is None:
        return t, series.values
    if t_cutoff > t[-1] + 1e-9 * series.dt:
        raise ValueError(f"series ends at t={t[-1]:.6g} before t_cutoff={t_cutoff:.6g}")
    n = int(round(t_cutoff / series.dt)) + 1
    return t[:n], series.values[:n]


def chi_integrand(chi: TimeSeries, T: float) -> np.ndarray:
    """``chi(t) / sinh(pi t T)`` with the finite limit at t = 0."""
    t = chi.times
    out = np.empty_like(t)
    out[1:] = chi.values[1:] / np.sinh(np.pi * T * t[1:])
    out[0] = endpoint_limit(t, out)
    return out


def qfi_from_chi_t(chi: TimeSeries, T: float, t_cutoff: float | None = None,
                   tol: float | None = None, strict: bool = False) -> float:
    """``4 T int_0^tc chi(t) / sinh(pi t T) dt`` by composite Simpson.

    The quadrature error is estimated by comparing against the same rule on
    every second sample; above ``tol`` a QuadratureWarning is issued (or a
    QuadratureError raised with ``strict``).
    """
    if not T > 0:
        raise ValueError("temperature must be positive")
    t, _ = _cut(chi, t_cutoff)
    g = chi_integrand(chi, T)[: len(t)]
    value = 4.0 * T * integrate_series(t, g)
    if tol is not None and len(t) >= 9:
        coarse = 4.0 * T * integrate_series(t[::2], g[::2])
        err = abs(value - coarse)
        if err > tol:
            msg = f"estimated quadrature error {err:.3g} exceeds tolerance {tol:.3g}"
            if strict:
                raise QuadratureError(msg)
            warnings.warn(msg, QuadratureWarning, stacklevel=2)
    return value
