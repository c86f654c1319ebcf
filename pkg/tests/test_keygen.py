import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from qpsi.keygen import (
    PairSource,
    alice_helstrom_guess,
    alice_helstrom_guess_sequential,
    bob_conclusiveness_advantage,
    conclusive_rate,
    make_entangled_pair,
    outcome_table,
    run_keygen,
    sample_pairs,
)
from qpsi.statevec import MeasurementBasis, helstrom_guess_probability, measure

from helpers import within_sigmas


def test_pair_at_zero_angle_factorizes():
    pair = make_entangled_pair(PairSource(0.0))
    h = 1 / np.sqrt(2)
    assert np.allclose(pair.amplitudes, [h, 0, h, 0], atol=1e-12)


def test_pair_at_right_angle():
    pair = make_entangled_pair(PairSource(np.pi / 2))
    assert np.allclose(pair.amplitudes, [0.5, 0.5, 0.5, -0.5], atol=1e-12)


@pytest.mark.parametrize("theta", [0.1, np.pi / 4, 1.3])
def test_pair_amplitudes(theta):
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    expected = np.array([c, s, c, -s]) / np.sqrt(2)
    assert np.allclose(make_entangled_pair(PairSource(theta)).amplitudes, expected, atol=1e-12)


def test_noisy_pair_needs_rng():
    with pytest.raises(ValueError):
        make_entangled_pair(PairSource(0.5, noise=0.3))


def test_full_noise_leaves_alice_maximally_mixed(rng):
    # tomography of Alice's qubit: Bloch components from Z, X and Y readouts
    source = PairSource(np.pi / 4, noise=1.0)
    h = 1 / np.sqrt(2)
    bases = {
        "z": MeasurementBasis.z(1),
        "x": MeasurementBasis.pm(1),
        "y": MeasurementBasis.single_qubit([[h, 1j * h], [h, -1j * h]], ("+", "-"), qubit=1),
    }
    trials = 20_000
    for name, basis in bases.items():
        first = basis.labels[0]
        hits = sum(measure(make_entangled_pair(source, rng), basis, rng)[0] == first for _ in range(trials))
        assert within_sigmas(hits, trials, 0.5), name


@pytest.mark.parametrize("theta, expected", [(0.0, 0.0), (np.pi / 4, 0.25), (np.pi / 2, 0.5)])
def test_conclusive_rate_values(theta, expected):
    assert conclusive_rate(theta) == pytest.approx(expected, abs=1e-12)


def test_conclusive_rate_rejects_out_of_range():
    with pytest.raises(ValueError):
        conclusive_rate(-0.1)


@pytest.mark.parametrize("theta", [0.2, np.pi / 4, 1.1])
def test_outcome_table_closed_form(theta):
    # Bob's bit is uniform; Alice's perp outcome fires only when her state is
    # the one orthogonal to her basis vector, with weight sin^2(theta)
    t = outcome_table(PairSource(theta))
    s2 = np.sin(theta) ** 2
    # basis phi0: conclusive only for bob=1
    assert t[0, 0, 1] == pytest.approx(0.0, abs=1e-12)
    assert t[0, 1, 1] == pytest.approx(s2 / 2, abs=1e-12)
    assert t[1, 1, 1] == pytest.approx(0.0, abs=1e-12)
    assert t[1, 0, 1] == pytest.approx(s2 / 2, abs=1e-12)
    assert np.allclose(t.sum(axis=(1, 2)), 1.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, np.pi / 2), st.integers(1, 200), st.integers(0, 2**32 - 1))
def test_noiseless_keygen_is_correct(theta, l, seed):
    key = run_keygen(l, PairSource(theta), np.random.default_rng(seed))
    assert key.error_rate == 0.0 and not key.aborted
    assert len(key.bob_bits) == l
    for t, bit in key.alice_known.items():
        assert 0 <= t < l
        assert bit == key.r(t)


def test_known_fraction_at_pi_over_four(rng):
    l = 10_000
    key = run_keygen(l, PairSource(np.pi / 4), rng)
    assert within_sigmas(len(key.alice_known), l, 0.25)


@pytest.mark.parametrize("theta", [0.0, np.pi / 8, np.pi / 4])
def test_conclusive_rate_empirical(theta, rng):
    trials = 100_000
    _, _, conclusive = sample_pairs(trials, PairSource(theta), rng)
    assert within_sigmas(int(conclusive.sum()), trials, conclusive_rate(theta))


def test_half_noise_aborts(rng):
    # error rate among conclusive bits: (p/2) / ((1-p) sin^2 + p) = 1/3 at p=1/2, theta=pi/4
    p, s2 = 0.5, np.sin(np.pi / 4) ** 2
    expected = (p / 2) / ((1 - p) * s2 + p)
    assert expected == pytest.approx(1 / 3)
    aborted = [run_keygen(200, PairSource(np.pi / 4, noise=0.5), rng, threshold=0.05).aborted for _ in range(200)]
    assert all(aborted)
    key = run_keygen(50_000, PairSource(np.pi / 4, noise=0.5), rng)
    assert abs(key.error_rate - expected) < 4 * np.sqrt(expected * (1 - expected) / key.sampled_conclusive)


def test_bob_advantage_bounded(rng):
    est = bob_conclusiveness_advantage(100_000, np.pi / 4, rng)
    assert not est.degenerate
    assert est.estimate <= 0.5 + 4 * est.sigma


def test_bob_advantage_degenerate_at_zero(rng):
    est = bob_conclusiveness_advantage(1000, 0.0, rng)
    assert est.degenerate and est.estimate == 0.5


def test_bob_advantage_needs_trials(rng):
    with pytest.raises(ValueError):
        bob_conclusiveness_advantage(999, 0.5, rng)


def test_bob_bit_uncorrelated_with_conclusive_flag(rng):
    est = bob_conclusiveness_advantage(100_000, np.pi / 4, rng)
    assert abs(est.correlation) <= 4 * est.correlation_sigma


def test_bob_guesser_hook_scores_hits(rng):
    key = run_keygen(5_000, PairSource(np.pi / 4), rng, bob_guesser=lambda bits: bits)
    # guessing "conclusive" exactly when his bit is 1 is right on half the pairs
    assert abs(key.bob_guess_hits - 0.5) < 4 * np.sqrt(0.25 / 10_000)


def test_alice_marginal_ignores_bob_measurement(rng):
    # Alice measures her qubit of fresh pairs in a random pair basis either
    # directly or after Bob has read his qubit; both outcome laws must agree
    theta = np.pi / 4
    source = PairSource(theta)
    bases = [MeasurementBasis.pair(theta, w, qubit=1) for w in ("phi0", "phi1")]
    trials = 20_000
    labels = ["phi0", "phi0_perp", "phi1", "phi1_perp"]

    def sample(bob_first):
        counts = dict.fromkeys(labels, 0)
        for _ in range(trials):
            pair = make_entangled_pair(source)
            if bob_first:
                _, pair = measure(pair, MeasurementBasis.z(0), rng)
            label, _ = measure(pair, bases[int(rng.integers(2))], rng)
            counts[label] += 1
        return [counts[k] for k in labels]

    table = np.array([sample(False), sample(True)])
    _, pvalue, _, _ = stats.chi2_contingency(table, correction=False)
    assert pvalue > 2 * stats.norm.sf(4)


@pytest.mark.parametrize("theta", [np.pi / 8, np.pi / 4])
def test_helstrom_cap_vectorized(theta, rng):
    trials = 200_000
    cap = helstrom_guess_probability(theta)
    got = alice_helstrom_guess(trials, PairSource(theta), rng)
    sd = np.sqrt(cap * (1 - cap) / trials)
    assert abs(got - cap) <= 4 * sd


def test_helstrom_cap_sequential(rng):
    theta, trials = np.pi / 4, 20_000
    cap = helstrom_guess_probability(theta)
    got = alice_helstrom_guess_sequential(trials, PairSource(theta), rng)
    assert got <= cap + 4 * np.sqrt(cap * (1 - cap) / trials)
    assert abs(got - cap) <= 4 * np.sqrt(cap * (1 - cap) / trials)
