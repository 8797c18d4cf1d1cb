"""Exact simulation of the thermal-state quench ``H0 -> H0 - q O``.

The post-quench Hamiltonian is diagonalized once; expectation values on the
whole time grid then reduce to two matrix products per observable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fock import SparseOperator
from .spectral import (
    Spectrum,
    SpectralResponse,
    ThermalState,
    TimeSeries,
    diagonalize,
    thermal_state,
)

DEFAULT_Q = 1e-3
DEFAULT_DT = 0.02
RHO_CUTOFF = 1e-16


def default_t_max(T: float, rule: float = 14.0) -> float:
    """Smallest t_max with ``pi T t_max >= rule``."""
    return rule / (np.pi * T)


@dataclass(frozen=True, eq=False)
class QuenchRun:
    q: float
    T: float
    delta_o: TimeSeries
    o_eq: float
    meta: dict = field(default_factory=dict)


def _density_in(spec_after: Spectrum, spec_before: Spectrum, rho: ThermalState) -> np.ndarray:
    keep = rho.weights > RHO_CUTOFF * rho.weights.max()
    W = spec_after.vectors.conj().T @ spec_before.vectors[:, keep]
    return (W * rho.weights[keep]) @ W.conj().T


def _expectation_series(energies: np.ndarray, A: np.ndarray, times: np.ndarray,
                        chunk: int = 256) -> np.ndarray:
    """``sum_ab A_ab exp(i (E_a - E_b) t)`` for real symmetric or hermitian A."""
    out = np.empty(len(times))
    for start in range(0, len(times), chunk):
        t = times[start:start + chunk]
        if np.isrealobj(A):
            c = np.cos(np.outer(t, energies))
            s = np.sin(np.outer(t, energies))
            out[start:start + chunk] = np.einsum("ta,ta->t", c @ A, c) + np.einsum("ta,ta->t", s @ A, s)
        else:
            ph = np.exp(1j * np.outer(t, energies))
            out[start:start + chunk] = np.einsum("ta,ta->t", ph.conj() @ A.T, ph).real
    return out


class QuenchSimulator:
    """Reusable pieces of a quench: spectra of H0 and of H0 - qO."""

    def __init__(self, H0: SparseOperator, O: SparseOperator, spec0: Spectrum | None = None):
        if H0.basis != O.basis:
            raise ValueError("H0 and O live on different bases")
        self.H0 = H0
        self.O = O
        self.spec0 = diagonalize(H0) if spec0 is None else spec0
        self._after: dict[float, Spectrum] = {}

    def spectrum_after(self, q: float) -> Spectrum:
        if q not in self._after:
            self._after[q] = diagonalize(SparseOperator(self.H0.basis, self.H0.matrix - q * self.O.matrix, True))
        return self._after[q]

    def observable_series(self, q: float, T: float, times: np.ndarray,
                          observable: SparseOperator | None = None) -> np.ndarray:
        """``Tr[rho_T(H0) e^{iHt} X e^{-iHt}]`` for ``H = H0 - q O``."""
        X = self.O if observable is None else observable
        after = self.spectrum_after(q)
        rho = thermal_state(self.spec0, T)
        R = _density_in(after, self.spec0, rho)
        Xe = after.matrix_elements(X)
        # Tr[R D X D^+] with D = diag(e^{iEt})
        return _expectation_series(after.energies, R.T * Xe, np.asarray(times))

    def equilibrium_value(self, T: float) -> float:
        rho = thermal_state(self.spec0, T)
        diag = np.real(np.einsum("il,ij,jl->l", self.spec0.vectors.conj(), self.O.toarray(), self.spec0.vectors)) \
            if not self.O.is_diagonal() else \
            np.einsum("il,i,il->l", self.spec0.vectors.conj(), self.O.diagonal(), self.spec0.vectors).real
        return float(rho.weights @ diag)

    def run(self, q: float, T: float, dt: float = DEFAULT_DT, t_max: float | None = None) -> QuenchRun:
        if q == 0:
            raise ValueError("quench amplitude q must be non-zero")
        if not T > 0:
            raise ValueError("temperature must be positive")
        t_max = default_t_max(T) if t_max is None else t_max
        n = int(np.ceil(t_max / dt - 1e-9)) + 1
        times = dt * np.arange(n)
        o_eq = self.equilibrium_value(T)
        vals = self.observable_series(q, T, times) - o_eq
        return QuenchRun(q, T, TimeSeries(dt, vals), o_eq, {"dim": self.H0.dim})


def simulate_quench(H0: SparseOperator, O: SparseOperator, q: float, T: float,
                    dt: float = DEFAULT_DT, t_max: float | None = None) -> QuenchRun:
    """Exact ``Delta O(t)`` after quenching a thermal state of H0 with ``-q O``."""
    return QuenchSimulator(H0, O).run(q, T, dt, t_max)


def xi_symmetrized(run_plus: QuenchRun, run_minus: QuenchRun) -> TimeSeries:
    """``[Delta O(t)|_q - Delta O(t)|_-q] / 2q``: drops even orders in q."""
    if not np.isclose(run_plus.q, -run_minus.q, rtol=1e-12, atol=0):
        raise ValueError("runs must use opposite quench amplitudes")
    if run_plus.T != run_minus.T:
        raise ValueError("runs must share the temperature")
    a, b = run_plus.delta_o, run_minus.delta_o
    if a.dt != b.dt or len(a) != len(b) or a.t0 != b.t0:
        raise ValueError("runs must share the time grid")
    return TimeSeries(a.dt, (a.values - b.values) / (2.0 * run_plus.q), a.t0)


def xi_plain(run: QuenchRun) -> TimeSeries:
    return TimeSeries(run.delta_o.dt, run.delta_o.values / run.q, run.delta_o.t0)


# --- Kubo linear response -------------------------------------------------


@dataclass(frozen=True)
class DriveProfile:
    """Causal drive ``f(t)`` coupling to O as ``H0 - f(t) O``.

    kind: ``step`` (q theta(t)), ``delta_pulse`` (q delta(t)), ``linear_ramp``
    (q min(t/t0, 1)) or ``tabulated`` (samples on the response grid).
    """

    kind: str
    q: float
    t0: float = 0.0
    samples: tuple[float, ...] | None = None
    dt: float | None = None

    def __post_init__(self):
        if self.kind not in ("step", "delta_pulse", "linear_ramp", "tabulated"):
            raise ValueError(f"unknown drive kind {self.kind!r}")
        if self.q == 0:
            raise ValueError("drive amplitude must be non-zero")
        if self.kind == "linear_ramp" and not self.t0 > 0:
            raise ValueError("linear ramp needs t0 > 0")
        if self.kind == "tabulated" and (self.samples is None or self.dt is None):
            raise ValueError("tabulated drive needs samples and dt")

    @classmethod
    def step(cls, q: float) -> "DriveProfile":
        return cls("step", q)

    @classmethod
    def delta_pulse(cls, q: float) -> "DriveProfile":
        return cls("delta_pulse", q)

    @classmethod
    def linear_ramp(cls, q: float, t0: float) -> "DriveProfile":
        return cls("linear_ramp", q, t0)

    @classmethod
    def tabulated(cls, values, dt: float) -> "DriveProfile":
        values = tuple(float(v) for v in values)
        q = max(values, key=abs) if any(values) else 0.0
        return cls("tabulated", q, samples=values, dt=dt)

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.kind == "step":
            return np.where(t > 0, self.q, np.where(t == 0, 0.5 * self.q, 0.0))
        if self.kind == "linear_ramp":
            return self.q * np.clip(t / self.t0, 0.0, 1.0)
        if self.kind == "tabulated":
            grid = self.dt * np.arange(len(self.samples))
            return np.interp(t, grid, self.samples, left=0.0, right=self.samples[-1])
        raise ValueError("delta pulse has no pointwise samples")


def kubo_convolve(chi: TimeSeries, f: DriveProfile) -> TimeSeries:
    """``Delta O(t) = int_0^t chi(t - tau) f(tau) dtau`` by the trapezoid rule."""
    if f.kind == "delta_pulse":
        return TimeSeries(chi.dt, f.q * chi.values, chi.t0)
    fs = np.array(f(chi.times), dtype=float)
    # chi(0) = 0 kills the tau = t endpoint; trapezoid weight 1/2 at tau = 0
    # (the step already samples theta(0) = 1/2)
    if f.kind != "step":
        fs[0] *= 0.5
    full = np.convolve(chi.values, fs)[: len(chi)] * chi.dt
    return TimeSeries(chi.dt, full, chi.t0)


def ramp_quench_series(sim: QuenchSimulator, drive: DriveProfile, T: float, dt: float,
                       t_max: float, substeps: int = 20) -> TimeSeries:
    """Exact ``Delta O(t)`` under a time-dependent drive (small systems).

    The drive is piecewise constant on ``dt / substeps`` slices (midpoint
    values); the propagator of each slice is built from a dense eigensolve.
    """
    H0 = sim.H0.toarray()
    O = sim.O.toarray()
    rho = thermal_state(sim.spec0, T)
    V0 = sim.spec0.vectors
    psi = V0.astype(complex)
    n = int(np.ceil(t_max / dt - 1e-9)) + 1
    h = dt / substeps
    o_eq = sim.equilibrium_value(T)
    out = np.empty(n)
    odiag = np.diag(O).real if sim.O.is_diagonal() else None

    def expect(states):
        if odiag is not None:
            return float(np.sum(rho.weights * np.sum(odiag[:, None] * np.abs(states) ** 2, axis=0)))
        return float(np.real(np.sum(rho.weights * np.einsum("il,ij,jl->l", states.conj(), O, states))))

    cache: dict[float, np.ndarray] = {}
    out[0] = expect(psi) - o_eq
    for i in range(1, n):
        for j in range(substeps):
            tm = (i - 1) * dt + (j + 0.5) * h
            fv = float(drive(tm))
            key = round(fv, 15)
            if key not in cache:
                e, v = np.linalg.eigh(H0 - fv * O)
                cache[key] = (v * np.exp(-1j * e * h)) @ v.conj().T
            psi = cache[key] @ psi
        out[i] = expect(psi) - o_eq
    return TimeSeries(dt, out)
