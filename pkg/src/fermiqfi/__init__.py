"""Quantum Fisher information of thermal Fermi-Hubbard chains.

Exact diagonalization in fixed-particle-number sectors, quench simulation,
kernel-based QFI extraction and k-producibility bounds for entanglement-depth
certification.
"""

__version__ = "0.1.0"

from .bounds import bound_fixedN, bound_generic, certify_depth
from .fock import SymmetrySector, build_sector_basis
from .kernel import kappa_step, kernel_for_drive, qfi_from_drive, qfi_from_quench, wiener_deconvolve
from .model import HubbardParams, build_hubbard, staggered_operator
from .protocol import DriveProfile, QuenchSimulator, simulate_quench, xi_symmetrized
from .spectral import diagonalize, qfi_exact, qfi_from_chi_t, qfi_from_chi_w, thermal_state

__all__ = [
    "SymmetrySector",
    "build_sector_basis",
    "HubbardParams",
    "build_hubbard",
    "staggered_operator",
    "diagonalize",
    "thermal_state",
    "qfi_exact",
    "qfi_from_chi_w",
    "qfi_from_chi_t",
    "DriveProfile",
    "QuenchSimulator",
    "simulate_quench",
    "xi_symmetrized",
    "kappa_step",
    "qfi_from_quench",
    "kernel_for_drive",
    "qfi_from_drive",
    "wiener_deconvolve",
    "bound_generic",
    "bound_fixedN",
    "certify_depth",
]
