"""Variational Monte Carlo engine for Rydberg dimer liquids on the ruby lattice.

Subpackages cover lattice geometry, the blockade-restricted Rydberg
Hamiltonian, a two-branch convolutional wavefunction, Metropolis sampling,
time-dependent variational evolution, spin-liquid diagnostics, Renyi-2
entropies, and an exact-diagonalization oracle for small systems.
"""

from .lattice import RubyLattice, build_lattice

__all__ = ["RubyLattice", "build_lattice"]
__version__ = "0.1.0"
