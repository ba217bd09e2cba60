"""Born-Oppenheimer Hamiltonian terms and the log-domain local energy.

The local energy of a state written as Psi = sign * exp(L) is

    E_loc = -(1/2) (lap L + |grad L|^2) + V

evaluated per walker, where grad and lap are taken over all 3N electron
coordinates in one forward pass of second-order duals. All electron sums
run through sorted-order reductions, so E_loc is exactly invariant under
electron relabeling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ad
from .ansatz import SignedLog
from .geometry import SystemSpec


@dataclass
class LocalEnergyBreakdown:
    """Per-walker energy terms in Hartree; nn is the scalar nuclear constant.

    Walkers sitting exactly on a node come back NaN (the quotient is
    undefined there); callers are expected to treat those as invalid.
    """

    kinetic: np.ndarray
    ee: np.ndarray
    en: np.ndarray
    nn: float

    @property
    def total(self) -> np.ndarray:
        return self.kinetic + self.ee + self.en + self.nn


def nuclear_repulsion(system: SystemSpec) -> float:
    if system.n_nuclei < 2:
        return 0.0
    iu, ju = np.triu_indices(system.n_nuclei, 1)
    r = np.linalg.norm(system.nuclei_positions[iu] - system.nuclei_positions[ju], axis=-1)
    z = system.charges.astype(np.float64)
    return float(np.sum(np.sort(z[iu] * z[ju] / r)))


def electron_potentials(system: SystemSpec, positions: np.ndarray):
    """(ee, en) per walker for plain positions (B, N, 3)."""
    positions = np.asarray(positions, dtype=np.float64)
    n = system.n_electrons
    # coincidences legitimately evaluate to +/- inf, not a warning
    with np.errstate(divide="ignore"):
        if n >= 2:
            iu, ju = np.triu_indices(n, 1)
            rij = np.linalg.norm(positions[:, iu] - positions[:, ju], axis=-1)  # (B, P)
            ee = ad.symsum(1.0 / rij, axis=-1)
        else:
            ee = np.zeros(positions.shape[0])
        d = np.linalg.norm(positions[:, :, None, :] - system.nuclei_positions[None, None],
                           axis=-1)  # (B, N, I)
        z = system.charges.astype(np.float64)
        per_electron = np.sum(z / d, axis=-1)  # fixed nucleus order per electron row
        en = -ad.symsum(per_electron, axis=-1)
    return ee, en


def harmonic_potential(positions: np.ndarray) -> np.ndarray:
    """(1/2) sum_i |r_i|^2, the isotropic-well test hook."""
    positions = np.asarray(positions, dtype=np.float64)
    per_electron = 0.5 * np.sum(positions ** 2, axis=-1)
    return ad.symsum(per_electron, axis=-1)


def local_energy(signed_log_fn, system: SystemSpec, positions: np.ndarray,
                 potential: str = "coulomb", chunk: int | None = 128) -> LocalEnergyBreakdown:
    """Per-walker local energy for any SignedLog-producing callable.

    signed_log_fn maps a positions batch (plain or dual) to a SignedLog;
    chunking bounds the memory of the 3N-lane dual pass.
    """
    positions = np.asarray(positions, dtype=np.float64)
    b = positions.shape[0]
    if potential == "coulomb":
        ee, en = electron_potentials(system, positions)
        nn = nuclear_repulsion(system)
    elif potential == "harmonic":
        ee, en = harmonic_potential(positions), np.zeros(b)
        nn = 0.0
    else:
        raise ValueError(f"unknown potential {potential!r}")

    kinetic = np.empty(b)
    step = b if chunk is None else max(1, chunk)
    # walkers exactly on a node or a coincidence produce non-finite lanes by
    # construction; they are flagged NaN below rather than warned about
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for lo in range(0, b, step):
            part = positions[lo:lo + step]
            sl = signed_log_fn(ad.seed_positions(part))
            logmag = sl.logmag
            if not isinstance(logmag, ad.Dual):
                raise TypeError("signed_log_fn must propagate dual positions")
            grad2 = ad.symsum(logmag.tan ** 2, axis=-1)
            lap = ad.symsum(logmag.curv, axis=-1)
            k = -0.5 * (lap + grad2)
            k = np.where(sl.sign == 0, np.nan, k)
            kinetic[lo:lo + step] = k
    return LocalEnergyBreakdown(kinetic=kinetic, ee=ee, en=en, nn=nn)


class HydrogenGroundState:
    """Exact 1s state around one proton: log|Psi| = -|r - c|.

    Its local energy is -1/2 Hartree identically, which makes it the
    sharpest end-to-end check of the dual-based kinetic evaluation.
    """

    def __init__(self, center=(0.0, 0.0, 0.0)):
        self.center = np.asarray(center, dtype=np.float64)

    def signed_log(self, positions):
        shape = ad.detach(positions).shape
        if shape[1:] != (1, 3):
            raise ValueError(f"one electron expected, got {shape}")
        delta = positions - self.center
        dist = ad.sqrt(ad.sum(ad.square(delta), axis=(1, 2)))
        return SignedLog(np.ones(shape[0], dtype=np.int64), -dist)


class HarmonicGroundState:
    """Exact isotropic-well ground state: log|Psi| = -(1/2) sum_i |r_i|^2.

    With the harmonic potential hook its local energy is 1.5 per electron.
    """

    def signed_log(self, positions):
        shape = ad.detach(positions).shape
        logmag = -0.5 * ad.sum(ad.square(positions), axis=(1, 2))
        return SignedLog(np.ones(shape[0], dtype=np.int64), logmag)
