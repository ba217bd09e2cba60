"""Metropolis walkers over |Psi|^2.

Each chain owns a Philox stream spawned from one seed, and every chain
consumes its stream in the same order whether the ensemble is stepped as
one batch or chain-by-chain; together with the batch-size-independent
evaluation paths this makes batched and serial runs bit-for-bit identical
(with the step size held fixed, since adaptation pools acceptance across
the whole ensemble).

Proposals move all electrons at once by a Gaussian step. A proposal whose
wavefunction value is exactly zero or non-finite is rejected outright, so
chains can never sit on a node.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ad
from .geometry import SystemSpec

ADAPT_TARGET = (0.45, 0.55)
ADAPT_FACTOR = 1.1


@dataclass
class WalkerEnsemble:
    """Chain state: positions (M, N, 3), cached signed-log values, one RNG
    per chain, and the (shared) proposal step size."""

    positions: np.ndarray
    logmag: np.ndarray
    sign: np.ndarray
    rngs: list
    sigma: float
    accepted: int = 0
    proposed: int = 0

    @property
    def n_walkers(self) -> int:
        return self.positions.shape[0]

    def rng_states(self) -> list:
        return [g.bit_generator.state for g in self.rngs]

    def set_rng_states(self, states: list):
        if len(states) != len(self.rngs):
            raise ValueError("state count does not match chain count")
        for g, s in zip(self.rngs, states):
            g.bit_generator.state = s


def chain_rngs(children) -> list:
    return [np.random.Generator(np.random.Philox(c)) for c in children]


def electron_homes(system: SystemSpec) -> np.ndarray:
    """Starting center for each electron: nuclei repeated by charge."""
    homes = np.repeat(np.arange(system.n_nuclei), system.charges)
    n = system.n_electrons
    return system.nuclei_positions[homes[np.arange(n) % len(homes)]]  # (N, 3)


def init_positions(system: SystemSpec, n_walkers: int, rngs: list) -> np.ndarray:
    """Drop each electron near its home nucleus plus a unit Gaussian; each
    chain draws from its own stream."""
    centers = electron_homes(system)
    n = system.n_electrons
    return np.stack([centers + rngs[m].normal(size=(n, 3)) for m in range(n_walkers)])


def init_ensemble(system: SystemSpec, signed_log_fn, n_walkers: int, seed: int,
                  sigma: float = 1.0, children=None) -> WalkerEnsemble:
    """Fresh walkers; retries any chain that lands exactly on a node."""
    if children is None:
        children = np.random.SeedSequence(seed).spawn(n_walkers)
    if len(children) != n_walkers:
        raise ValueError("need one seed stream per walker")
    rngs = chain_rngs(children)
    positions = init_positions(system, n_walkers, rngs)
    sl = signed_log_fn(positions)
    logmag = np.asarray(ad.detach(sl.logmag), dtype=np.float64)
    sign = np.asarray(sl.sign)
    for _ in range(100):
        dead = (sign == 0) | ~np.isfinite(logmag)
        if not np.any(dead):
            break
        centers = electron_homes(system)
        for m in np.flatnonzero(dead):
            positions[m] = centers + rngs[m].normal(size=(system.n_electrons, 3))
        sl = signed_log_fn(positions)
        logmag = np.asarray(ad.detach(sl.logmag), dtype=np.float64)
        sign = np.asarray(sl.sign)
    else:
        raise RuntimeError("could not find nonzero wavefunction values to start from")
    return WalkerEnsemble(positions=positions, logmag=logmag, sign=sign,
                          rngs=rngs, sigma=float(sigma))


def mh_step(ensemble: WalkerEnsemble, signed_log_fn) -> float:
    """One all-electron Metropolis step for every chain; returns the
    acceptance fraction of this step."""
    m, n, _ = ensemble.positions.shape
    noise = np.stack([ensemble.rngs[i].normal(size=(n, 3)) for i in range(m)])
    uniforms = np.array([ensemble.rngs[i].uniform() for i in range(m)])
    proposal = ensemble.positions + ensemble.sigma * noise
    sl = signed_log_fn(proposal)
    new_logmag = np.asarray(ad.detach(sl.logmag), dtype=np.float64)
    new_sign = np.asarray(sl.sign)
    with np.errstate(divide="ignore"):
        log_ratio = 2.0 * (new_logmag - ensemble.logmag)
        alive = (new_sign != 0) & np.isfinite(new_logmag)
        accept = alive & (np.log(uniforms) < log_ratio)
    ensemble.positions[accept] = proposal[accept]
    ensemble.logmag[accept] = new_logmag[accept]
    ensemble.sign[accept] = new_sign[accept]
    ensemble.accepted += int(np.sum(accept))
    ensemble.proposed += m
    return float(np.mean(accept))


def run_sweeps(ensemble: WalkerEnsemble, signed_log_fn, steps: int,
               adapt: bool = False) -> float:
    """Advance every chain `steps` times; optionally retune sigma after each
    step from the pooled acceptance. Returns the mean acceptance rate."""
    rates = np.empty(steps)
    for t in range(steps):
        rates[t] = mh_step(ensemble, signed_log_fn)
        if adapt:
            if rates[t] < ADAPT_TARGET[0]:
                ensemble.sigma /= ADAPT_FACTOR
            elif rates[t] > ADAPT_TARGET[1]:
                ensemble.sigma *= ADAPT_FACTOR
    return float(np.mean(rates)) if steps else 0.0


def toy_three_state_frequencies(weights, steps: int, seed: int = 0,
                                chains: int = 256) -> np.ndarray:
    """Empirical occupation of a 3-state chain driven by the same accept rule
    as mh_step (log-domain ratio of squared amplitudes).

    weights are |psi|^2 up to normalization. Proposals pick one of the other
    two states uniformly, which is symmetric, so detailed balance holds for
    the bare ratio; the long-run frequencies must match the normalized
    weights.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (3,) or np.any(w <= 0):
        raise ValueError("need three positive weights")
    logmag = 0.5 * np.log(w)  # treat weights as psi^2
    rng = np.random.default_rng(seed)
    state = rng.integers(0, 3, size=chains)
    counts = np.zeros(3, dtype=np.int64)
    per_chain = steps // chains
    for _ in range(per_chain):
        move = rng.integers(1, 3, size=chains)
        proposal = (state + move) % 3
        log_ratio = 2.0 * (logmag[proposal] - logmag[state])
        accept = np.log(rng.uniform(size=chains)) < log_ratio
        state = np.where(accept, proposal, state)
        counts += np.bincount(state, minlength=3)
    return counts / counts.sum()
