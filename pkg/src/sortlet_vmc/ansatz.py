"""Antisymmetric wavefunction built from sorted score gaps.

Each of the K heads turns its electron scores s into a signed product

    psi_k = sgn(sort permutation) * prod(adjacent ascending gaps) * wrap gap

with N factors for N electrons: the N-1 gaps between consecutive sorted
scores and the gap between the largest and smallest (a single electron
contributes its bare score). Swapping two electrons permutes the scores,
which leaves every gap untouched and flips the sort parity, so psi_k is
antisymmetric by construction; it vanishes exactly when two scores tie.
Sorting is the only N-coupled step, so one head costs O(N log N) against
the O(N^3) of a determinant.

The full state multiplies in a symmetric pair factor (electron-electron
cusps), per-head nucleus envelopes (decay and nuclear cusps), and mixes the
heads with learnable weights:

    Psi = exp(J) * sum_k w_k * psi_k * exp(-rate_k * sum_j min_I |r_j - R_I|)

Everything is evaluated in signed log form. Vanishing factors are masked
out before any log so derivative lanes stay finite; a masked head simply
contributes zero to the mixture.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ad, backbone
from .geometry import SystemSpec

# stand-in log-magnitude for an exact zero: finite (so no inf-inf traps),
# but exp() underflows to 0 and any realistic logmag dwarfs it
BIG_NEG = -1e300


@dataclass
class SignedLog:
    """A value v stored as (sign(v), log|v|); sign 0 encodes v == 0.

    sign is always a plain array; logmag keeps whatever engine produced it.
    """

    sign: np.ndarray
    logmag: object

    def value(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return self.sign * np.exp(ad.detach(self.logmag))


def sort_with_parity(values):
    """Merge-sort a 1-D sequence, returning (sorted array, permutation parity).

    Parity is (-1)**inversions, counted exactly during the merges; the cost
    is O(N log N) comparisons. Ties contribute no inversions.
    """
    a = [float(v) for v in values]
    n = len(a)
    buf = a[:]
    inversions = 0
    width = 1
    while width < n:
        src, dst = a, buf
        for lo in range(0, n, 2 * width):
            mid = min(lo + width, n)
            hi = min(lo + 2 * width, n)
            i, j, k = lo, mid, lo
            while i < mid and j < hi:
                if src[j] < src[i]:
                    dst[k] = src[j]
                    inversions += mid - i
                    j += 1
                else:
                    dst[k] = src[i]
                    i += 1
                k += 1
            dst[k:hi] = src[i:mid] if i < mid else src[j:hi]
        a, buf = buf, a
        width *= 2
    return np.array(a), (-1 if inversions % 2 else 1)


def _parity_small(values: np.ndarray) -> np.ndarray:
    # (..., N) -> (...,) via a broadcast inversion count; O(N^2) but N is tiny
    i, j = np.triu_indices(values.shape[-1], 1)
    inv = np.sum(values[..., i] > values[..., j], axis=-1)
    return np.where(inv % 2 == 0, 1, -1).astype(np.int64)


def _parity_cycles(order: np.ndarray) -> np.ndarray:
    # parity via cycle decomposition of the sorting permutation, O(N) each
    flat = order.reshape(-1, order.shape[-1])
    out = np.empty(flat.shape[0], dtype=np.int64)
    for row, perm in enumerate(flat):
        seen = np.zeros(len(perm), dtype=bool)
        transpositions = 0
        for start in range(len(perm)):
            if seen[start]:
                continue
            length = 0
            node = start
            while not seen[node]:
                seen[node] = True
                node = perm[node]
                length += 1
            transpositions += length - 1
        out[row] = -1 if transpositions % 2 else 1
    return out.reshape(order.shape[:-1])


def score_parity(values: np.ndarray) -> np.ndarray:
    """Parity of the permutation that sorts `values` along the last axis."""
    if values.shape[-1] <= 64:
        return _parity_small(values)
    return _parity_cycles(np.argsort(values, axis=-1, kind="stable"))


def sortlet_logs(scores) -> SignedLog:
    """Signed log of the sorted-gap product, batched over leading axes.

    scores: (..., N) in any engine. Heads whose scores tie anywhere come
    back with sign 0 and their derivative lanes severed.
    """
    vals = ad.detach(scores)
    n = vals.shape[-1]
    if n == 1:
        return _single_score_logs(scores)
    order = np.argsort(vals, axis=-1, kind="stable")
    ranked = ad.take_along(scores, order, axis=-1)
    lead = ranked[_all_but_last(vals.ndim, slice(1, None))]
    trail = ranked[_all_but_last(vals.ndim, slice(None, -1))]
    first = ranked[_all_but_last(vals.ndim, slice(0, 1))]
    last = ranked[_all_but_last(vals.ndim, slice(-1, None))]
    gaps = ad.concat([lead - trail, last - first], axis=-1)  # (..., N)
    gv = ad.detach(gaps)
    tied = np.any(gv == 0.0, axis=-1)
    safe = ad.where(gv == 0.0, 1.0, gaps)
    logmag = ad.sum(ad.log(safe), axis=-1)  # gather order is canonical already
    logmag = ad.where(tied, BIG_NEG, logmag)
    sign = np.where(tied, 0, score_parity(vals))
    return SignedLog(sign, logmag)


def _all_but_last(ndim: int, last) -> tuple:
    return tuple(slice(None) for _ in range(ndim - 1)) + (last,)


def _single_score_logs(scores) -> SignedLog:
    vals = ad.detach(scores)
    s = scores[_all_but_last(vals.ndim, 0)]
    sv = vals[..., 0]
    zero = sv == 0.0
    safe = ad.where(zero, 1.0, ad.absolute(s))
    logmag = ad.where(zero, BIG_NEG, ad.log(safe))
    return SignedLog(np.where(zero, 0, np.sign(sv)).astype(np.int64), logmag)


def vandermonde_logs(scores: np.ndarray, block: int = 1024) -> SignedLog:
    """Signed log of prod_{i<j}(s_j - s_i), the determinant baseline.

    Plain ndarrays only; pair work is O(N^2), blocked to bound memory.
    """
    scores = np.asarray(scores, dtype=np.float64)
    n = scores.shape[-1]
    sign = score_parity(scores).astype(np.float64)
    logmag = np.zeros(scores.shape[:-1])
    tied = np.zeros(scores.shape[:-1], dtype=bool)
    for lo in range(0, n, block):
        hi = min(lo + block, n)
        diff = scores[..., None, lo:hi] - scores[..., :, None]  # (..., N, hi-lo)
        i_idx = np.arange(n)[:, None]
        j_idx = np.arange(lo, hi)[None, :]
        upper = i_idx < j_idx
        mag = np.where(upper, np.abs(diff), 1.0)
        tied |= np.any(upper & (diff == 0.0), axis=(-2, -1))
        with np.errstate(divide="ignore"):
            logmag += np.sum(np.where(upper, np.log(mag), 0.0), axis=(-2, -1))
    return SignedLog(np.where(tied, 0, sign.astype(np.int64)),
                     np.where(tied, BIG_NEG, logmag))


def pair_log_factor(positions, spins: np.ndarray, beta_raw):
    """Symmetric log pair factor J(r).

    J = sum_{i<j par} -(1/4) b1/(b1^2 + r_ij) + sum_{i<j anti} -(1/2) b2/(b2^2 + r_ij)
    with b = softplus(raw) so the strengths stay positive unconstrained.
    """
    n = len(spins)
    if n < 2:
        # no pairs: J is identically zero, with zero parameter gradient
        return np.zeros(ad.detach(positions).shape[0])
    beta = ad.softplus(beta_raw)
    iu, ju = np.triu_indices(n, 1)
    delta = positions[(slice(None), iu)] - positions[(slice(None), ju)]  # (B, P, 3)
    dist = ad.sqrt(ad.sum(ad.square(delta), axis=-1))  # (B, P) exact: carries the cusp
    same = (spins[iu] == spins[ju]).astype(np.float64)  # (P,)
    b1, b2 = beta[0], beta[1]
    par = b1 / (ad.square(b1) + dist)
    anti = b2 / (ad.square(b2) + dist)
    terms = par * (-0.25 * same) + anti * (-0.5 * (1.0 - same))
    return ad.symsum(terms, axis=-1)


def envelope_distance_sum(system: SystemSpec, positions):
    """sum_j min_I |r_j - R_I|, shape (B,); exact distances for the cusp."""
    b, n = ad.detach(positions).shape[:2]
    pos = ad.reshape(positions, (b, n, 1, 3))
    delta = pos - system.nuclei_positions[None, None]  # (B, N, I, 3)
    dist = ad.sqrt(ad.sum(ad.square(delta), axis=-1))  # (B, N, I)
    nearest = dist[(slice(None), slice(None), 0)]
    for i in range(1, system.n_nuclei):
        nearest = ad.minimum(nearest, dist[(slice(None), slice(None), i)])
    return ad.symsum(nearest, axis=-1)


def mix_signed_logs(signs: np.ndarray, logmags, weights) -> SignedLog:
    """Signed log of sum_k w_k * sign_k * exp(logmag_k) over the last axis.

    The shift m is detached, which is exact (the result is m-independent).
    Mantissas are accumulated in |value| order, so negating every head
    (a global sign flip) negates the total bit-for-bit.
    """
    m = ad.amax(logmags, axis=-1, keepdims=True)
    mantissa = ad.exp(logmags - m) * signs.astype(np.float64) * weights
    total = ad.symsum_abs(mantissa, axis=-1)
    tv = ad.detach(total)
    dead = tv == 0.0
    safe = ad.where(dead, 1.0, ad.absolute(total))
    logmag = ad.where(dead, BIG_NEG, ad.log(safe) + m[..., 0])
    return SignedLog(np.sign(tv).astype(np.int64), logmag)


class SortletWavefunction:
    """System-bound ansatz: scores -> sorted-gap heads -> mixed signed log.

    Parameters travel as one flat vector; pass a plain ndarray (sampling),
    a reverse-mode Var of it (parameter gradients), or keep the vector
    plain and wrap positions with ad.seed_positions (local energy).
    """

    def __init__(self, system: SystemSpec, n_sortlets: int = backbone.DEFAULT_SORTLETS,
                 hidden: int = backbone.DEFAULT_HIDDEN, layers: int = backbone.DEFAULT_LAYERS,
                 seed: int = 0):
        self.system = system
        self.n_sortlets = n_sortlets
        self.hidden = hidden
        self.layers = layers
        self.store = backbone.build_param_store(system, n_sortlets, hidden, layers)
        self.theta0 = backbone.init_params(self.store, seed=seed)

    def signed_log(self, theta, positions) -> SignedLog:
        """Signed log of Psi for a batch: positions (B, N, 3) -> (B,)."""
        shape = ad.detach(positions).shape
        if len(shape) != 3 or shape[1:] != (self.system.n_electrons, 3):
            raise ValueError(f"positions must be (B, {self.system.n_electrons}, 3), got {shape}")
        params = self.store.unpack(theta)
        s = backbone.scores(self.system, params, positions, self.hidden, self.layers)
        core = (sortlet_logs(s) if self.system.n_electrons > 1 else _single_score_logs(s))
        rate = ad.softplus(params["env.rate"])  # (K,)
        reach = envelope_distance_sum(self.system, positions)  # (B,)
        env = ad.einsum("b,k->bk", reach, rate) * (-1.0)
        mixed = mix_signed_logs(core.sign, core.logmag + env, params["mix.w"])
        j = pair_log_factor(positions, self.system.spins, params["pair.beta"])
        return SignedLog(mixed.sign, mixed.logmag + j)

    def log_density(self, theta: np.ndarray, positions: np.ndarray) -> np.ndarray:
        """log Psi^2 up to sign handling; nodes come back as BIG_NEG."""
        sl = self.signed_log(theta, positions)
        return 2.0 * np.where(sl.sign == 0, BIG_NEG, ad.detach(sl.logmag))
