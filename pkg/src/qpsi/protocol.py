"""Two-party quantum set intersection, run step by step.

Step numbers in transcripts follow the main protocol's numbering:

==  ==========================================================
3   key generation (2l shared pairs)
9   Alice sends the 2n registers
10  Bob's register-count check
11  Bob's oracles, registers returned
13  Alice's check-register test
16  Alice's +/- readout of the actual registers
18  Alice discloses (t, q_t) per actual register
19  Bob declares p = q_t xor r_t
20  Alice cross-checks declarations at positions she knows
21  Alice announces elements declared in Y
22  Bob's membership check
==  ==========================================================

Positions ``t`` are 0-based wire positions; register ``t`` meets oracle ``O_t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Optional

import numpy as np

from .keygen import DEFAULT_THRESHOLD, KeyMaterial, PairSource, run_keygen
from .statevec import (
    BitTable,
    CorruptRegisterError,
    MeasurementBasis,
    Statevector,
    apply_oracle,
    apply_reduction,
    basis_state,
    measure,
    qubits_for,
    reduce_to_plus_minus,
    sample_label,
    superposition_register,
)
from .strategies import BobStrategy, Extraction, HookSet, StrategyProfile, deviation_hooks
from .transcript import Transcript

CHECK_KINDS = ("zero", "one", "plus", "minus")
COMPUTATIONAL_CHECKS = ("zero", "one")


class ProtocolAbort(Exception):
    def __init__(self, step: int, actor: str, reason: str, payload: Optional[dict] = None):
        super().__init__(f"step {step}: {actor} aborts ({reason})")
        self.step = step
        self.actor = actor
        self.reason = reason
        self.payload = payload or {}


@dataclass(frozen=True)
class PartyInput:
    elements: frozenset
    N: int
    declared_cardinality: Optional[int] = None

    def __post_init__(self) -> None:
        elems = frozenset(int(x) for x in self.elements)
        bad = [x for x in elems if not 1 <= x < self.N]
        if bad:
            raise ValueError(f"elements {sorted(bad)} outside Z_{self.N}^*")
        object.__setattr__(self, "elements", elems)
        if self.declared_cardinality is None:
            object.__setattr__(self, "declared_cardinality", len(elems))

    @property
    def size(self) -> int:
        return len(self.elements)

    @cached_property
    def M(self) -> int:
        return qubits_for(self.N)

    @cached_property
    def outside(self) -> list[int]:
        """Elements of ``Z_N^*`` not in this set, ascending."""
        return [x for x in range(1, self.N) if x not in self.elements]


class Slot(NamedTuple):
    role: str  # "actual" or "check"
    state: Statevector
    element: int = 0
    kind: str = ""
    fake: bool = False


@dataclass
class RegisterBatch:
    """Registers in wire order plus Alice's private record of each.

    ``wire_positions[t]`` is the preparation index that ended up at wire
    position ``t``.
    """

    slots: list[Slot]
    wire_positions: list[int]
    alice_records: dict[int, Slot] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.slots)

    def with_states(self, states: list[Statevector]) -> "RegisterBatch":
        slots = [
            Slot(s.role, st, s.element, s.kind, s.fake) for s, st in zip(self.slots, states)
        ]
        return RegisterBatch(slots, self.wire_positions, self.alice_records)

    def positions(self, role: str) -> list[int]:
        return [t for t, rec in sorted(self.alice_records.items()) if rec.role == role]


@dataclass(frozen=True)
class Outcome:
    f_A: Optional[frozenset]
    f_B: Optional[frozenset]


# --- database ----------------------------------------------------------------

def build_database(Y: PartyInput) -> BitTable:
    entries = np.zeros(Y.N, dtype=np.uint8)
    for y in Y.elements:
        if not 1 <= y < Y.N:
            raise ValueError(f"element {y} outside Z_{Y.N}^*")
        entries[y] = 1
    return BitTable(Y.N, entries)


def mask_database(p: BitTable, r_t: int) -> BitTable:
    if r_t not in (0, 1):
        raise ValueError("r_t must be a bit")
    q = p.entries ^ np.uint8(r_t)
    q[0] = 0
    return BitTable(p.modulus, q)


# --- Alice: registers ---------------------------------------------------------

def check_register(kind: str, M: int) -> Statevector:
    top = 1 << (M - 1)
    if kind == "zero":
        return basis_state(0, M)
    if kind == "one":
        return basis_state(top, M)
    if kind == "plus":
        return superposition_register(top, M, +1)
    if kind == "minus":
        return superposition_register(top, M, -1)
    raise ValueError(f"unknown check kind {kind!r}")


def prepare_batch(
    X: PartyInput, rng: np.random.Generator, hooks: Optional[HookSet] = None
) -> RegisterBatch:
    """n actual registers, n random check registers, shuffled onto the wire."""
    hooks = hooks or HookSet()
    M = X.M
    actuals = sorted(X.elements)
    checks = [CHECK_KINDS[k] for k in rng.integers(0, 4, size=len(actuals)).tolist()]
    actuals, checks, fakes = hooks.compose(actuals, checks, [], X.outside, rng)

    prepared = [Slot("actual", superposition_register(x, M), element=x) for x in actuals]
    prepared += [Slot("actual", superposition_register(x, M), element=x, fake=True) for x in fakes]
    prepared += [Slot("check", check_register(k, M), kind=k) for k in checks]

    order = rng.permutation(len(prepared)).tolist()
    slots = [prepared[i] for i in order]
    return RegisterBatch(slots, order, dict(enumerate(slots)))


# --- Bob: oracles -------------------------------------------------------------

def bob_receive_and_oracle(
    batch: RegisterBatch,
    tables,
    declared_n: int,
    rng: np.random.Generator,
    hooks: Optional[HookSet] = None,
) -> tuple[RegisterBatch, list]:
    """Apply ``O_t`` to the register at wire position ``t`` and return the batch.

    ``tables`` is a sequence of masked databases or a callable ``t -> BitTable``.
    Returns the batch and whatever a channel attack leaked per position.
    """
    hooks = hooks or HookSet()
    if len(batch) > 2 * declared_n:
        raise ProtocolAbort(10, "bob", "too many registers", {"received": len(batch)})
    table_for = tables if callable(tables) else tables.__getitem__
    states, leaks = [], []
    for t, slot in enumerate(batch.slots):
        state, leak = hooks.channel(slot.state, rng)
        states.append(apply_oracle(state, table_for(t)))
        leaks.append(leak)
    return batch.with_states(states), leaks


# --- Alice: checks and extraction ---------------------------------------------

@dataclass
class CheckReport:
    mismatches: list[int] = field(default_factory=list)
    pm_outcomes: dict[int, str] = field(default_factory=dict)
    computational_checks: int = 0

    @property
    def ok(self) -> bool:
        return not self.mismatches


def alice_check_phase(batch: RegisterBatch, rng: np.random.Generator) -> CheckReport:
    """Measure every check register in its own basis.

    Computational checks must read back the index sent (a sign picked up from
    the oracle is a global phase). Plus/minus outcomes are logged only, since
    an honest oracle may flip them.
    """
    report = CheckReport()
    for t, rec in sorted(batch.alice_records.items()):
        if rec.role != "check":
            continue
        state = batch.slots[t].state
        M = state.num_qubits
        if rec.kind in COMPUTATIONAL_CHECKS:
            report.computational_checks += 1
            seen = sample_label(state, MeasurementBasis.computational(), rng)
            expected = 0 if rec.kind == "zero" else 1 << (M - 1)
            if seen != expected:
                report.mismatches.append(t)
        else:
            label = sample_label(state, MeasurementBasis.pm_pair(1 << (M - 1)), rng)
            report.pm_outcomes[t] = label
    if not report.ok:
        raise ProtocolAbort(13, "alice", "check register mismatch", {"report": report})
    return report


def alice_extract(batch: RegisterBatch, rng: np.random.Generator) -> list[Extraction]:
    """Reduce each actual register to ``|+->|0...0>`` and read qubit 0."""
    out = []
    pm = MeasurementBasis.pm(0)
    for t, rec in sorted(batch.alice_records.items()):
        if rec.role != "actual":
            continue
        state = batch.slots[t].state
        corrupt = False
        try:
            reduced = reduce_to_plus_minus(state, rec.element)
        except CorruptRegisterError:
            # Alice cannot see the support; she runs the same gates regardless
            corrupt = True
            reduced = apply_reduction(state, rec.element)
        label = sample_label(reduced, pm, rng)
        out.append(Extraction(t, rec.element, 0 if label == "+" else 1, rec.fake, corrupt))
    return out


# --- declarations and announcements -------------------------------------------

def bob_declare(
    pairs: list[tuple[int, int]],
    key: KeyMaterial,
    rng: np.random.Generator,
    hooks: Optional[HookSet] = None,
) -> list[int]:
    hooks = hooks or HookSet()
    for t, _ in pairs:
        if not 0 <= t < key.length:
            raise ValueError(f"position {t} outside the key stream")
    honest = [q ^ key.r(t) for t, q in pairs]
    return hooks.declare(honest, rng)


def alice_verify_declarations(
    declared: list[int], pairs: list[tuple[int, int]], alice_known: dict[int, int]
) -> None:
    bad = [
        t for (t, q), d in zip(pairs, declared)
        if t in alice_known and q ^ alice_known[t] != d
    ]
    if bad:
        raise ProtocolAbort(20, "alice", "declaration contradicts known key bit", {"positions": bad})


def alice_announce(
    declared: list[int],
    disclosed_elements: list[int],
    X: PartyInput,
    rng: np.random.Generator,
    hooks: Optional[HookSet] = None,
) -> tuple[list[int], Optional[int]]:
    """Elements whose declaration is 1, plus the substituted element if Alice lied."""
    hooks = hooks or HookSet()
    announced = [x for x, d in zip(disclosed_elements, declared) if d == 1]
    return hooks.announce(announced, X.outside, rng)


def bob_verify_membership(announced: list[int], Y: PartyInput) -> frozenset:
    outside = [e for e in announced if e not in Y.elements]
    if outside:
        raise ProtocolAbort(22, "bob", "announced element not in Y", {"elements": outside})
    return frozenset(announced)


# --- full run -----------------------------------------------------------------

def log2_ceil(x: int) -> int:
    return max(0, math.ceil(math.log2(x))) if x > 1 else 0


def run_protocol(
    X: PartyInput,
    Y: PartyInput,
    theta: float,
    l: int,
    profile: Optional[StrategyProfile] = None,
    rng: Optional[np.random.Generator] = None,
    *,
    noise: float = 0.0,
    threshold: float = DEFAULT_THRESHOLD,
    run_id: int = 0,
    hooks: Optional[HookSet] = None,
) -> tuple[Transcript, Outcome]:
    """Run key generation and the full dialogue once.

    Any abort leaves both parties with ``None`` (no output). Otherwise Bob
    holds the announced set and Alice holds the members of ``X`` she could
    settle, or ``None`` if some element of ``X`` stayed undecided.
    """
    if X.N != Y.N:
        raise ValueError("parties disagree on N")
    N, n = X.N, X.size
    if not N > 2 * max(n, Y.size):
        raise ValueError(f"need N > 2*max(n, m), got N={N}, n={n}, m={Y.size}")
    if l < 2 * n:
        raise ValueError(f"need l >= 2n, got l={l}, n={n}")
    rng = rng if rng is not None else np.random.default_rng()
    profile = profile or StrategyProfile()
    hooks = hooks or deviation_hooks(profile)
    M = X.M
    tr = Transcript(run_id=run_id)
    try:
        outcome = _run(X, Y, theta, l, noise, threshold, hooks, rng, tr, M)
    except ProtocolAbort as exc:
        payload = {k: v for k, v in exc.payload.items() if k != "report"}
        tr.log_abort(exc.step, exc.actor, exc.reason, payload)
        outcome = Outcome(None, None)
    return tr, outcome


def _run(X, Y, theta, l, noise, threshold, hooks, rng, tr: Transcript, M: int) -> Outcome:
    N = X.N
    key = run_keygen(l, PairSource(theta, noise), rng, threshold=threshold)
    tr.log(3, "bob", "pairs", {"pairs": 2 * l, "known": len(key.alice_known),
                               "error_rate": key.error_rate}, qubits=2 * l)
    if key.aborted:
        raise ProtocolAbort(3, "alice", "key error rate above threshold",
                            {"error_rate": key.error_rate})

    p = build_database(Y)
    flipped = mask_database(p, 1)
    tables = [p, flipped]
    r_bits = key.bob_bits.tolist()

    batch = prepare_batch(X, rng, hooks)
    tr.log(9, "alice", "registers", {"count": len(batch)},
           qubits=len(batch), physical=len(batch) * M)
    batch, leaks = bob_receive_and_oracle(
        batch, lambda t: tables[r_bits[t]], X.declared_cardinality, rng, hooks
    )
    # measure-resend leaks element indices, the ancilla attack leaks branch labels
    payload = {"count": len(batch), "leaked": [int(x) for x in leaks if isinstance(x, (int, np.integer))]}
    branches = [x for x in leaks if isinstance(x, str)]
    if branches:
        payload["ancilla"] = branches
    tr.log(11, "bob", "registers", payload,
           qubits=len(batch), physical=len(batch) * M)

    try:
        report = alice_check_phase(batch, rng)
    except ProtocolAbort as exc:
        report = exc.payload["report"]
        tr.log(13, "alice", "checks", _check_payload(report))
        raise
    tr.log(13, "alice", "checks", _check_payload(report))

    extractions = alice_extract(batch, rng)
    corrupt = [e.position for e in extractions if e.corrupt]
    tr.log(16, "alice", "extract", {
        "bits": [[e.position, e.bit] for e in extractions],
        "corrupt": corrupt,
    })

    disclosed = hooks.disclose(extractions, key.alice_known, rng)
    pairs = [(t, q) for t, q, _ in disclosed]
    tr.log(18, "alice", "disclose", {"pairs": [list(pq) for pq in pairs]},
           bits=len(pairs) * (log2_ceil(l) + 1))

    declared = bob_declare(pairs, key, rng, hooks)
    tr.log(19, "bob", "declare", {"bits": list(declared)}, bits=len(declared))

    alice_verify_declarations(declared, pairs, key.alice_known)

    elements = [e.element for _, _, e in disclosed]
    announced, substituted = alice_announce(declared, elements, X, rng, hooks)
    payload = {"elements": announced}
    if substituted is not None:
        payload["substituted"] = substituted
    tr.log(21, "alice", "announce", payload, bits=len(announced) * log2_ceil(N))

    if hooks.bob_keeps_true_set:
        # Bob's own lies explain the strays; he keeps what he knows is in Y
        f_B = frozenset(e for e in announced if e in Y.elements)
    else:
        f_B = bob_verify_membership(announced, Y)
    tr.log(22, "bob", "accept", {"size": len(f_B)})

    return Outcome(_alice_output(X, extractions, disclosed, declared, key), f_B)


def _check_payload(report: CheckReport) -> dict:
    return {
        "computational": report.computational_checks,
        "mismatches": report.mismatches,
        "pm_outcomes": {str(t): lab for t, lab in report.pm_outcomes.items()},
    }


def _alice_output(X, extractions, disclosed, declared, key) -> Optional[frozenset]:
    """Members of X settled by Bob's declaration or by a key bit Alice holds."""
    verdict: dict[int, int] = {}
    for (t, _, e), d in zip(disclosed, declared):
        if not e.fake:
            verdict[e.element] = d
    for e in extractions:
        if not e.fake and e.position in key.alice_known:
            verdict[e.element] = e.bit ^ key.alice_known[e.position]
    if set(verdict) != set(X.elements):
        return None
    return frozenset(x for x, member in verdict.items() if member)


# --- set-membership replay ----------------------------------------------------

@dataclass
class DecoyStats:
    outcomes: dict[str, int]
    decoys: int
    oracle_flips: int

    @property
    def flip_rate(self) -> float:
        return self.outcomes["-"] / self.decoys if self.decoys else 0.0


def run_membership_qosmdp(
    k: int,
    Y: PartyInput,
    l: int,
    rng: np.random.Generator,
    bob_attack: Optional[BobStrategy] = None,
    run_id: int = 0,
) -> tuple[Transcript, int, DecoyStats]:
    """Single-element membership test with ``l - 1`` decoy registers.

    Alice sends ``(|0>+|k>)/sqrt(2)`` among decoys ``(|0>+|j_i>)/sqrt(2)``;
    Bob applies ``O_t`` at wire position ``t`` with his own random ``r_t``.
    Alice reads every decoy in its ``pm_pair(j_i)`` basis and records the
    outcomes instead of aborting, then reads the real register and Bob
    returns ``q_t xor r_t``.
    """
    N = Y.N
    if not 1 <= k < N:
        raise ValueError(f"k={k} outside Z_{N}^*")
    if l < 2:
        raise ValueError("need l >= 2")
    M = qubits_for(N)
    hooks = deviation_hooks(StrategyProfile(bob=bob_attack)) if bob_attack else HookSet()
    tr = Transcript(run_id=run_id)

    p = build_database(Y)
    r = rng.integers(0, 2, size=l).astype(np.uint8)
    tables = [p, mask_database(p, 1)]

    elements = [k] + [int(j) for j in rng.integers(1, N, size=l - 1)]
    order = [int(i) for i in rng.permutation(l)]
    wire = [elements[i] for i in order]
    real_t = order.index(0)

    tr.log(1, "alice", "registers", {"count": l}, qubits=l, physical=l * M)
    returned = []
    for t, j in enumerate(wire):
        state, _ = hooks.channel(superposition_register(j, M), rng)
        returned.append(apply_oracle(state, tables[r[t]]))
    tr.log(2, "bob", "registers", {"count": l}, qubits=l, physical=l * M)

    outcomes = {"+": 0, "-": 0, "corrupt": 0}
    oracle_flips = 0
    for t, j in enumerate(wire):
        if t == real_t:
            continue
        oracle_flips += int(tables[r[t]][j])
        label = sample_label(returned[t], MeasurementBasis.pm_pair(j), rng)
        outcomes[label] += 1
    stats = DecoyStats(outcomes, l - 1, oracle_flips)
    tr.log(3, "alice", "decoys", {
        "outcomes": outcomes,
        "would_abort": outcomes["-"] + outcomes["corrupt"] > 0,
    })

    state = returned[real_t]
    try:
        state = reduce_to_plus_minus(state, k)
    except CorruptRegisterError:
        state = apply_reduction(state, k)
    label = sample_label(state, MeasurementBasis.pm(0), rng)
    q = 0 if label == "+" else 1
    tr.log(4, "alice", "disclose", {"t": real_t, "q": q}, bits=log2_ceil(l) + 1)

    member = q ^ int(r[real_t])
    tr.log(5, "bob", "membership", {"member": member})
    return tr, member, stats
