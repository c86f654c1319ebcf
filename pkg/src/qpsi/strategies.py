"""Player behaviours: the suggested (cooperate, abort) play and its deviations.

A :class:`StrategyProfile` is turned into a :class:`HookSet` by
:func:`deviation_hooks`; the protocol calls each hook at the matching
decision point. Honest hooks return their inputs untouched and never draw
from the rng.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Callable, NamedTuple, Optional

import numpy as np

from .statevec import (
    MeasurementBasis,
    Statevector,
    basis_state,
    measure,
)

ALICE_VARIANTS = ("honest", "extra_elements", "no_checks", "wrong_qt", "wrong_announce")
BOB_VARIANTS = ("honest", "wrong_pj", "measure_resend", "entangle_measure")


@dataclass(frozen=True)
class AliceStrategy:
    variant: str = "honest"
    count: int = 0
    rate: float = 1.0

    def __post_init__(self) -> None:
        if self.variant not in ALICE_VARIANTS:
            raise ValueError(f"unknown Alice strategy {self.variant!r}")
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError("rate must lie in [0, 1]")
        if self.variant == "extra_elements" and self.count < 1:
            raise ValueError("extra_elements needs count >= 1")

    @property
    def is_honest(self) -> bool:
        return self.variant == "honest"

    def describe(self) -> str:
        if self.variant == "extra_elements":
            return f"extra_elements:count={self.count}"
        if self.variant in ("wrong_qt", "wrong_announce"):
            return f"{self.variant}:rate={self.rate:g}"
        return self.variant


@dataclass(frozen=True)
class BobStrategy:
    variant: str = "honest"
    rate: float = 1.0
    basis: str = "computational"
    eta: float = 1.0

    def __post_init__(self) -> None:
        if self.variant not in BOB_VARIANTS:
            raise ValueError(f"unknown Bob strategy {self.variant!r}")
        if self.variant == "wrong_pj" and not 0.0 < self.rate <= 1.0:
            raise ValueError("wrong_pj rate must lie in (0, 1]")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError("eta must lie in [0, 1]")
        if self.basis not in ("computational", "pm"):
            raise ValueError("measure_resend basis must be 'computational' or 'pm'")

    @property
    def is_honest(self) -> bool:
        return self.variant == "honest"

    @property
    def attacks_channel(self) -> bool:
        return self.variant in ("measure_resend", "entangle_measure")

    def describe(self) -> str:
        if self.variant == "wrong_pj":
            return f"wrong_pj:rate={self.rate:g}"
        if self.variant == "measure_resend":
            return f"measure_resend:basis={self.basis}"
        if self.variant == "entangle_measure":
            return f"entangle_measure:eta={self.eta:g}"
        return self.variant


@dataclass(frozen=True)
class StrategyProfile:
    alice: AliceStrategy = field(default_factory=AliceStrategy)
    bob: BobStrategy = field(default_factory=BobStrategy)

    @property
    def deviator(self) -> Optional[str]:
        if not self.alice.is_honest and not self.bob.is_honest:
            return "both"
        if not self.alice.is_honest:
            return "alice"
        if not self.bob.is_honest:
            return "bob"
        return None

    def describe(self) -> str:
        return f"alice={self.alice.describe()} bob={self.bob.describe()}"


def parse_strategy(descriptor: str, party: str):
    """Parse ``"name:key=value,key=value"`` into a strategy for ``party``.

    >>> parse_strategy("entangle_measure:eta=0.9", "bob")
    BobStrategy(variant='entangle_measure', rate=1.0, basis='computational', eta=0.9)
    """
    cls = {"alice": AliceStrategy, "bob": BobStrategy}[party]
    name, _, rest = descriptor.strip().partition(":")
    kwargs: dict = {"variant": name.strip()}
    types = {f.name: f.type for f in fields(cls)}
    for item in filter(None, (s.strip() for s in rest.split(","))):
        key, eq, value = item.partition("=")
        key = key.strip()
        if not eq or key not in types or key == "variant":
            raise ValueError(f"bad parameter {item!r} in strategy {descriptor!r}")
        kind = types[key]
        if kind in ("int", int):
            kwargs[key] = int(value)
        elif kind in ("float", float):
            kwargs[key] = float(value)
        else:
            kwargs[key] = value.strip()
    return cls(**kwargs)


# --- channel attacks ---------------------------------------------------------

def apply_measure_resend(register: Statevector, basis, rng: np.random.Generator):
    """Measure a register in transit and forward the collapsed state.

    ``basis`` is ``"computational"``, ``"pm"`` (a ``pm_pair`` basis around a
    uniformly guessed nonzero index) or an explicit :class:`MeasurementBasis`.
    Returns the forwarded state and the nonzero index Bob saw, if any.
    """
    if basis == "computational":
        basis = MeasurementBasis.computational()
    elif basis == "pm":
        basis = MeasurementBasis.pm_pair(int(rng.integers(1, register.dim)))
    label, collapsed = measure(register, basis, rng)
    if basis.kind == "computational":
        return collapsed, (label or None)
    if label == "corrupt":
        return collapsed, collapsed.support()[0]
    return collapsed, None


def orthogonal_partner(register: Statevector) -> Statevector:
    """The state orthogonal to ``register`` inside its two-level working subspace.

    A superposition over ``{a, b}`` maps within that span; a basis state
    ``|k>`` pairs with ``|10...0>`` when ``k == 0`` and with ``|0>`` otherwise.
    """
    support = register.support()
    M = register.num_qubits
    if len(support) == 1:
        k = support[0]
        return basis_state(1 << (M - 1) if k == 0 else 0, M)
    if len(support) != 2:
        raise ValueError(f"register has no two-level working subspace (support {support})")
    a, b = support
    alpha, beta = register.amplitudes[a], register.amplitudes[b]
    amps = np.zeros(register.dim, dtype=np.complex128)
    amps[a] = -np.conj(beta)
    amps[b] = np.conj(alpha)
    return Statevector(M, amps)


def apply_entangle_measure(register: Statevector, eta: float, rng: np.random.Generator):
    """Couple a register to Bob's ancilla and forward it.

    The ancilla branches ``E00`` (register intact, weight ``eta``) and ``E01``
    (register replaced by its orthogonal partner, weight ``1 - eta``) are
    orthogonal, so the branch is sampled outright.
    """
    if not 0.0 <= eta <= 1.0:
        raise ValueError("eta must lie in [0, 1]")
    if eta == 1.0 or rng.random() < eta:
        return register, "E00"
    return orthogonal_partner(register), "E01"


# --- hook set ----------------------------------------------------------------

class Extraction(NamedTuple):
    position: int
    element: int
    bit: int
    fake: bool = False
    corrupt: bool = False


def _identity(x, *args, **kwargs):
    return x


def _keep_composition(actuals, checks, fakes, universe, rng):
    return actuals, checks, fakes


def _pass_channel(state, rng):
    return state, None


def _honest_disclose(extractions, known, rng):
    return [(e.position, e.bit, e) for e in extractions if not e.fake]


def _honest_announce(elements, outside_x, rng):
    return elements, None


@dataclass(frozen=True)
class HookSet:
    """Callables the protocol runs at each decision point.

    compose(actuals, check_kinds, fakes, universe, rng) -> (actuals, check_kinds, fakes)
    channel(state, rng) -> (state, leak)
    disclose(extractions, alice_known, rng) -> [(t, reported q_t, extraction)]
    declare(bits, rng) -> bits
    announce(elements, outside_x, rng) -> (elements, substituted element or None)
    """

    compose: Callable = _keep_composition
    channel: Callable = _pass_channel
    disclose: Callable = _honest_disclose
    declare: Callable = _identity
    announce: Callable = _honest_announce
    bob_keeps_true_set: bool = False


def _fakes(universe: list[int], count: int, rng: np.random.Generator) -> list[int]:
    if count > len(universe):
        raise ValueError("not enough elements outside X for the fake registers")
    return [universe[i] for i in rng.permutation(len(universe))[:count].tolist()]


def deviation_hooks(profile: StrategyProfile) -> HookSet:
    a, b = profile.alice, profile.bob
    hooks: dict = {}

    if a.variant == "extra_elements":
        def compose(actuals, checks, fakes, universe, rng):
            return actuals, checks, fakes + _fakes(universe, a.count, rng)
        hooks["compose"] = compose
    elif a.variant == "no_checks":
        def compose(actuals, checks, fakes, universe, rng):
            return actuals, [], fakes + _fakes(universe, len(checks), rng)

        def disclose(extractions, known, rng):
            # only as many disclosures as real elements fit; which ones is random
            n_real = sum(not e.fake for e in extractions)
            picks = sorted(rng.choice(len(extractions), size=n_real, replace=False))
            return [(extractions[i].position, extractions[i].bit, extractions[i]) for i in picks]
        hooks["compose"] = compose
        hooks["disclose"] = disclose
    elif a.variant == "wrong_qt":
        def disclose(extractions, known, rng):
            out = []
            for e in extractions:
                if e.fake:
                    continue
                q = e.bit
                # lie only where the element is already known to be in Y
                if e.position in known and q ^ known[e.position] == 1 and rng.random() < a.rate:
                    q ^= 1
                out.append((e.position, q, e))
            return out
        hooks["disclose"] = disclose
    elif a.variant == "wrong_announce":
        def announce(elements, outside_x, rng):
            if rng.random() >= a.rate:
                return elements, None
            e = int(rng.choice(outside_x))
            if elements:
                slot = int(rng.integers(len(elements)))
                return elements[:slot] + [e] + elements[slot + 1:], e
            return [e], e
        hooks["announce"] = announce

    if b.variant == "wrong_pj":
        def declare(bits, rng):
            return [1 if d == 0 and rng.random() < b.rate else d for d in bits]
        hooks["declare"] = declare
        hooks["bob_keeps_true_set"] = True
    elif b.variant == "measure_resend":
        def channel(state, rng):
            return apply_measure_resend(state, b.basis, rng)
        hooks["channel"] = channel
    elif b.variant == "entangle_measure":
        def channel(state, rng):
            return apply_entangle_measure(state, b.eta, rng)
        hooks["channel"] = channel

    return HookSet(**hooks)
