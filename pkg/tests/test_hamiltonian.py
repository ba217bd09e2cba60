import numpy as np
import pytest

from sortlet_vmc.ansatz import SignedLog, SortletWavefunction
from sortlet_vmc.geometry import SystemSpec, load_system, transpose_electrons
from sortlet_vmc.hamiltonian import (
    HarmonicGroundState,
    HydrogenGroundState,
    electron_potentials,
    harmonic_potential,
    local_energy,
    nuclear_repulsion,
)

H = load_system("""
system:
  nuclei:
    - element: H
      xyz: [0.0, 0.0, 0.0]
""")

LI = load_system("""
system:
  nuclei:
    - element: Li
      xyz: [0.0, 0.0, 0.0]
""")


def test_nuclear_repulsion_hand_values():
    assert nuclear_repulsion(H) == 0.0
    h2 = SystemSpec(nuclei_positions=np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]),
                    charges=np.array([1, 1]), n_up=1, n_down=1)
    assert nuclear_repulsion(h2) == pytest.approx(0.5, rel=1e-15)
    lih = SystemSpec(nuclei_positions=np.array([[0.0, 0.0, 0.0], [3.0, 0.0, 0.0]]),
                     charges=np.array([3, 1]), n_up=2, n_down=2)
    assert nuclear_repulsion(lih) == pytest.approx(1.0, rel=1e-15)


def test_electron_potentials_hand_values():
    pos = np.array([[[1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 0.5]]])
    ee, en = electron_potentials(LI, pos)
    d01 = np.sqrt(5.0)
    d02 = np.sqrt(1.25)
    d12 = np.sqrt(4.25)
    assert ee[0] == pytest.approx(1 / d01 + 1 / d02 + 1 / d12, rel=1e-14)
    assert en[0] == pytest.approx(-3.0 * (1 / 1.0 + 1 / 2.0 + 1 / 0.5), rel=1e-14)


def test_harmonic_potential_hand_value():
    pos = np.array([[[1.0, 2.0, 2.0]]])
    assert harmonic_potential(pos)[0] == pytest.approx(4.5, rel=1e-15)


def test_hydrogen_ground_state_local_energy_is_exact():
    rng = np.random.default_rng(0)
    pos = rng.normal(size=(2000, 1, 3)) * 2.0
    exact = HydrogenGroundState()
    e = local_energy(exact.signed_log, H, pos)
    np.testing.assert_allclose(e.total, -0.5, atol=1e-11)
    assert np.max(np.abs(e.total + 0.5)) < 1e-11


def test_hydrogen_off_center_nucleus():
    center = np.array([0.5, -1.0, 2.0])
    sys = SystemSpec(nuclei_positions=center[None], charges=np.array([1]), n_up=1, n_down=0)
    rng = np.random.default_rng(1)
    pos = center + rng.normal(size=(500, 1, 3))
    e = local_energy(HydrogenGroundState(center).signed_log, sys, pos)
    np.testing.assert_allclose(e.total, -0.5, atol=1e-11)


def test_harmonic_ground_state_local_energy_is_exact():
    rng = np.random.default_rng(2)
    pos = rng.normal(size=(1000, 1, 3))
    e = local_energy(HarmonicGroundState().signed_log, H, pos, potential="harmonic")
    np.testing.assert_allclose(e.total, 1.5, atol=1e-12)


def test_harmonic_many_electron_scaling():
    sys = SystemSpec(nuclei_positions=np.zeros((1, 3)), charges=np.array([4]),
                     n_up=2, n_down=2)
    rng = np.random.default_rng(3)
    pos = rng.normal(size=(200, 4, 3))
    e = local_energy(HarmonicGroundState().signed_log, sys, pos, potential="harmonic")
    np.testing.assert_allclose(e.total, 6.0, atol=1e-12)  # 1.5 per electron


def test_local_energy_invariant_under_logmag_shift():
    wf = SortletWavefunction(LI, n_sortlets=2, hidden=8, layers=1, seed=0)
    rng = np.random.default_rng(4)
    pos = rng.normal(size=(6, 3, 3))

    def shifted(p):
        sl = wf.signed_log(wf.theta0, p)
        return SignedLog(sl.sign, sl.logmag + 7.25)

    base = local_energy(lambda p: wf.signed_log(wf.theta0, p), LI, pos)
    shift = local_energy(shifted, LI, pos)
    np.testing.assert_array_equal(base.total, shift.total)


def test_local_energy_exchange_invariant():
    wf = SortletWavefunction(LI, n_sortlets=2, hidden=8, layers=1, seed=1)
    rng = np.random.default_rng(5)
    pos = rng.normal(size=(6, 3, 3))
    swapped = np.stack([transpose_electrons(LI.configuration(p), 0, 1).positions
                        for p in pos])
    base = local_energy(lambda p: wf.signed_log(wf.theta0, p), LI, pos)
    other = local_energy(lambda p: wf.signed_log(wf.theta0, p), LI, swapped)
    np.testing.assert_array_equal(base.total, other.total)


def test_local_energy_chunking_is_bitwise():
    wf = SortletWavefunction(LI, n_sortlets=2, hidden=8, layers=1, seed=2)
    rng = np.random.default_rng(6)
    pos = rng.normal(size=(7, 3, 3))
    fn = lambda p: wf.signed_log(wf.theta0, p)
    a = local_energy(fn, LI, pos, chunk=None)
    b = local_energy(fn, LI, pos, chunk=2)
    np.testing.assert_array_equal(a.total, b.total)


def test_local_energy_nan_on_nodes():
    wf = SortletWavefunction(LI, n_sortlets=2, hidden=8, layers=1, seed=3)
    pos = np.zeros((1, 3, 3))
    pos[0, 1] = pos[0, 0]  # two same-spin electrons coincide -> scores tie
    e = local_energy(lambda p: wf.signed_log(wf.theta0, p), LI, pos)
    assert np.isnan(e.kinetic[0])


def test_unknown_potential_rejected():
    with pytest.raises(ValueError):
        local_energy(HydrogenGroundState().signed_log, H, np.zeros((1, 1, 3)) + 1.0,
                     potential="morse")
