"""Entanglement-based key generation where Bob keeps the whole stream and
Alice unambiguously learns a random fraction of it.

Each pair is ``(|0>_B |phi0>_A + |1>_B |phi1>_A) / sqrt(2)`` with Bob's qubit
first. Bob reads his qubit in the computational basis; Alice measures in the
``phi0`` or ``phi1`` pair basis at random and keeps a bit only on a
``*_perp`` outcome, which rules out one of Bob's values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

from .statevec import (
    PAULIS,
    MeasurementBasis,
    Statevector,
    apply_single_qubit,
    distribution,
    helstrom_measurement,
    measure,
    phi_states,
)

DEFAULT_THRESHOLD = 0.05

ALICE_BASES = ("phi0", "phi1")
# conclusive outcome in basis phi0 means Bob holds 1, in phi1 it means 0
CONCLUSIVE_BIT = {"phi0": 1, "phi1": 0}


@dataclass(frozen=True)
class PairSource:
    theta: float
    noise: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.theta <= np.pi / 2:
            raise ValueError("theta must lie in [0, pi/2]")
        if not 0.0 <= self.noise <= 1.0:
            raise ValueError("noise must lie in [0, 1]")

    def pauli_weights(self) -> dict[str, float]:
        # with probability `noise` a uniformly random Pauli hits Alice's qubit
        w = {p: self.noise / 4 for p in PAULIS}
        w["I"] += 1.0 - self.noise
        return w


@dataclass
class KeyMaterial:
    """Output of one key-generation run.

    Positions are 0-based: ``bob_bits[t]`` is ``r_t`` and ``alice_known`` maps
    a position to the bit Alice learned there.
    """

    length: int
    bob_bits: np.ndarray
    alice_known: dict[int, int]
    theta: float
    error_rate: float
    aborted: bool
    sampled_conclusive: int = 0
    bob_guess_hits: Optional[float] = None
    extras: dict = field(default_factory=dict)

    @property
    def known_fraction(self) -> float:
        return len(self.alice_known) / self.length

    def r(self, t: int) -> int:
        return int(self.bob_bits[t])


def make_entangled_pair(source: PairSource, rng: Optional[np.random.Generator] = None) -> Statevector:
    """Prepare one shared pair; with noise, a random Pauli may hit Alice's qubit."""
    phi0, phi1 = phi_states(source.theta)
    amps = np.concatenate([phi0, phi1]) / np.sqrt(2.0)
    pair = Statevector(2, amps)
    if source.noise == 0.0:
        return pair
    if rng is None:
        raise ValueError("a noisy source needs an rng")
    if rng.random() < source.noise:
        pauli = "IXYZ"[int(rng.integers(4))]
        pair = apply_single_qubit(pair, PAULIS[pauli], qubit=1)
    return pair


def _alice_branches(source: PairSource):
    """Yield ``(probability, bob_bit, alice_state)`` over noise and Bob's collapse."""
    phi0, phi1 = phi_states(source.theta)
    clean = Statevector(2, np.concatenate([phi0, phi1]) / np.sqrt(2.0))
    for pauli, weight in source.pauli_weights().items():
        if weight == 0.0:
            continue
        pair = apply_single_qubit(clean, PAULIS[pauli], qubit=1)
        bob = distribution(pair, MeasurementBasis.z(0))
        for b in (0, 1):
            if bob[b] < 1e-15:
                continue
            alice = pair.amplitudes.reshape(2, 2)[b] / np.sqrt(bob[b])
            yield weight * bob[b], b, Statevector(1, alice)


def outcome_table(source: PairSource) -> np.ndarray:
    """Exact joint law ``P[basis, bob_bit, conclusive]`` for one pair.

    Each slice is conditional on Alice's basis choice, so ``table[k].sum() == 1``.
    """
    return _outcome_table(source).copy()


@lru_cache(maxsize=256)
def _outcome_table(source: PairSource) -> np.ndarray:
    table = np.zeros((2, 2, 2))
    for prob, b, alice in _alice_branches(source):
        for k, name in enumerate(ALICE_BASES):
            dist = distribution(alice, MeasurementBasis.pair(source.theta, name))
            table[k, b, 0] += prob * dist[name]
            table[k, b, 1] += prob * dist[name + "_perp"]
    return table


def sample_pairs(num_pairs: int, source: PairSource, rng: np.random.Generator):
    """Draw Alice's basis index, Bob's bit and the conclusive flag for many pairs.

    Returns three ``uint8`` arrays of length ``num_pairs``.
    """
    cells = _joint_cdf(source)
    idx = cells.searchsorted(rng.random(num_pairs), side="right").astype(np.uint8)
    np.minimum(idx, 7, out=idx)
    return idx >> 2, (idx >> 1) & 1, idx & 1


@lru_cache(maxsize=256)
def _joint_cdf(source: PairSource) -> np.ndarray:
    # Alice picks her basis with probability 1/2, so the 8 cells (basis, bob, conclusive)
    # carry half of each conditional slice
    cdf = np.cumsum(_outcome_table(source).reshape(-1) / 2.0)
    cdf.setflags(write=False)
    return cdf


def alice_bits_from(basis: np.ndarray, conclusive: np.ndarray) -> np.ndarray:
    """Alice's inferred bit per pair (meaningful only where ``conclusive``)."""
    # basis index 0 is phi0 (conclusive means 1), index 1 is phi1 (conclusive means 0)
    return basis ^ np.uint8(1)


def run_keygen(
    l: int,
    source: PairSource,
    rng: np.random.Generator,
    bob_guesser: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    threshold: float = DEFAULT_THRESHOLD,
) -> KeyMaterial:
    """Generate ``2l`` pairs, sacrifice ``l`` for error estimation, keep ``l``.

    ``bob_guesser`` receives Bob's ``2l`` bits and returns his guess of which
    positions Alice found conclusive; its hit rate is stored on the result.
    """
    if l < 1:
        raise ValueError("l must be at least 1")
    basis, bob, conclusive = sample_pairs(2 * l, source, rng)
    alice = alice_bits_from(basis, conclusive)

    hits = None
    if bob_guesser is not None:
        guess = np.asarray(bob_guesser(bob.copy()), dtype=np.uint8)
        hits = float(np.mean(guess == conclusive))

    perm = rng.permutation(2 * l)
    sampled, kept = perm[:l], np.sort(perm[l:])
    checked = sampled[conclusive[sampled] == 1]
    n_checked = len(checked)
    errors = int(np.count_nonzero(alice[checked] != bob[checked]))
    error_rate = errors / n_checked if n_checked else 0.0

    hits_at = conclusive[kept].nonzero()[0]
    known = dict(zip(hits_at.tolist(), alice[kept[hits_at]].tolist()))
    return KeyMaterial(
        length=l,
        bob_bits=bob[kept].copy(),
        alice_known=known,
        theta=source.theta,
        error_rate=error_rate,
        aborted=error_rate > threshold,
        sampled_conclusive=n_checked,
        bob_guess_hits=hits,
    )


def conclusive_rate(theta: float) -> float:
    if not 0.0 <= theta <= np.pi / 2:
        raise ValueError("theta must lie in [0, pi/2]")
    return float(np.sin(theta) ** 2 / 2)


@dataclass(frozen=True)
class AdvantageEstimate:
    estimate: float
    sigma: float
    correlation: float
    correlation_sigma: float
    degenerate: bool
    trials: int


def bob_conclusiveness_advantage(trials: int, theta: float, rng: np.random.Generator) -> AdvantageEstimate:
    """Balanced accuracy of Bob's best predictor of Alice's conclusive flag.

    Bob's view of a pair is his own bit, so his predictor is a frequency table
    fitted on half of the pairs: flag a bit value as "conclusive" when its
    empirical conclusive rate exceeds the overall rate. The other half scores
    it. Balanced accuracy is 1/2 for any predictor that carries no
    information, whatever the base rate.
    """
    if trials < 1000:
        raise ValueError("need at least 1000 trials")
    _, bob, conclusive = sample_pairs(trials, PairSource(theta), rng)
    half = trials // 2
    train_b, train_c = bob[:half], conclusive[:half]
    test_b, test_c = bob[half:], conclusive[half:]

    corr, corr_sigma = _correlation(bob, conclusive)
    prior = train_c.mean()
    if prior == 0.0 or prior == 1.0:
        return AdvantageEstimate(0.5, 0.0, corr, corr_sigma, True, trials)

    table = np.zeros(2, dtype=np.uint8)
    for b in (0, 1):
        sel = train_b == b
        if sel.any() and train_c[sel].mean() > prior:
            table[b] = 1
    pred = table[test_b]
    pos, neg = test_c == 1, test_c == 0
    tpr = pred[pos].mean() if pos.any() else 0.5
    tnr = (1 - pred[neg]).mean() if neg.any() else 0.5
    est = 0.5 * (tpr + tnr)
    # worst-case binomial spread of each rate
    sigma = 0.5 * np.sqrt(0.25 / max(pos.sum(), 1) + 0.25 / max(neg.sum(), 1))
    return AdvantageEstimate(float(est), float(sigma), corr, corr_sigma, False, trials)


def _correlation(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    a = a.astype(float)
    b = b.astype(float)
    if a.std() == 0 or b.std() == 0:
        return 0.0, 0.0
    return float(np.corrcoef(a, b)[0, 1]), 1.0 / np.sqrt(len(a))


def alice_helstrom_guess(trials: int, source: PairSource, rng: np.random.Generator) -> float:
    """Fraction of pairs where Alice's optimal two-state measurement names ``r_t``.

    Alice skips the pair bases and measures the Helstrom projectors for
    ``{|phi0>, |phi1>}``, guessing ``r_t = 0`` on the first outcome.
    """
    guess0, guess1 = helstrom_measurement(*phi_states(source.theta))
    basis = MeasurementBasis.single_qubit([guess0, guess1], (0, 1))
    probs = np.zeros((2, 2))
    for prob, b, alice in _alice_branches(source):
        dist = distribution(alice, basis)
        probs[b, 0] += prob * dist[0]
        probs[b, 1] += prob * dist[1]
    flat = probs.reshape(-1).cumsum()
    draws = (rng.random(trials)[:, None] >= flat[None, :3]).sum(axis=1)
    bob_bits, guesses = draws // 2, draws % 2
    return float(np.mean(bob_bits == guesses))


def alice_helstrom_guess_sequential(trials: int, source: PairSource, rng: np.random.Generator) -> float:
    """Same experiment as :func:`alice_helstrom_guess`, one collapse at a time."""
    guess0, guess1 = helstrom_measurement(*phi_states(source.theta))
    basis = MeasurementBasis.single_qubit([guess0, guess1], (0, 1), qubit=1)
    hits = 0
    for _ in range(trials):
        pair = make_entangled_pair(source, rng)
        b, pair = measure(pair, MeasurementBasis.z(0), rng)
        g, _ = measure(pair, basis, rng)
        hits += int(b == g)
    return hits / trials
