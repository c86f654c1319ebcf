"""Pure-state simulator for the M-qubit registers used by both protocols.

Qubits are numbered from 0 and qubit 0 is the most significant bit of the
basis index, so ``|k_0 k_1 ... k_{M-1}>`` has index ``sum k_i 2^(M-1-i)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Hashable, Sequence

import numpy as np

NORM_TOL = 1e-9
ALGEBRA_TOL = 1e-12
MAX_QUBITS = 12

SQRT_HALF = 1.0 / np.sqrt(2.0)


class CorruptRegisterError(ValueError):
    """A register has amplitude outside the subspace an operation assumes."""


@dataclass(frozen=True, eq=False)
class Statevector:
    num_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self) -> None:
        if not 1 <= self.num_qubits <= MAX_QUBITS:
            raise ValueError(f"num_qubits must be in [1, {MAX_QUBITS}], got {self.num_qubits}")
        amps = np.array(self.amplitudes, dtype=np.complex128)
        if amps.shape != (1 << self.num_qubits,):
            raise ValueError(
                f"expected {1 << self.num_qubits} amplitudes, got shape {amps.shape}"
            )
        norm2 = float(np.vdot(amps, amps).real)
        if abs(norm2 - 1.0) > NORM_TOL:
            raise ValueError(f"state is not normalized (|psi|^2 = {norm2})")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @property
    def dim(self) -> int:
        return 1 << self.num_qubits

    def support(self, tol: float = ALGEBRA_TOL) -> list[int]:
        return [int(i) for i in np.flatnonzero(np.abs(self.amplitudes) > tol)]

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def allclose(self, other: "Statevector", atol: float = ALGEBRA_TOL) -> bool:
        return self.num_qubits == other.num_qubits and bool(
            np.allclose(self.amplitudes, other.amplitudes, atol=atol, rtol=0.0)
        )

    @classmethod
    def _wrap(cls, num_qubits: int, amps: np.ndarray) -> "Statevector":
        """Skip validation for amplitudes produced by a norm-preserving map."""
        obj = object.__new__(cls)
        amps.setflags(write=False)
        object.__setattr__(obj, "num_qubits", num_qubits)
        object.__setattr__(obj, "amplitudes", amps)
        return obj

    def __repr__(self) -> str:
        terms = [f"{a:.4g}|{i}>" for i, a in enumerate(self.amplitudes) if abs(a) > 1e-12]
        return f"Statevector(M={self.num_qubits}, {' + '.join(terms)})"


# states are immutable, so the constructors below hand out shared instances
@lru_cache(maxsize=8192)
def basis_state(index: int, num_qubits: int) -> Statevector:
    if not 1 <= num_qubits <= MAX_QUBITS or not 0 <= index < (1 << num_qubits):
        raise ValueError(f"index {index} does not fit {num_qubits} qubits")
    amps = np.zeros(1 << num_qubits, dtype=np.complex128)
    amps[index] = 1.0
    return Statevector._wrap(num_qubits, amps)


@lru_cache(maxsize=8192)
def superposition_register(j: int, num_qubits: int, sign: int = 1) -> Statevector:
    """Return ``(|0> + sign |j>) / sqrt(2)`` on ``num_qubits`` qubits."""
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    if not 1 <= num_qubits <= MAX_QUBITS or not 1 <= j < (1 << num_qubits):
        raise ValueError(f"element {j} is not a nonzero {num_qubits}-bit index")
    amps = np.zeros(1 << num_qubits, dtype=np.complex128)
    amps[0] = SQRT_HALF
    amps[j] = sign * SQRT_HALF
    return Statevector._wrap(num_qubits, amps)


def qubits_for(modulus: int) -> int:
    """Smallest M with 2^M >= modulus."""
    if modulus < 2:
        raise ValueError("modulus must be at least 2")
    return max(1, (modulus - 1).bit_length())


@dataclass(frozen=True, eq=False)
class BitTable:
    """A 0/1 table over ``Z_N`` with the convention ``entry[0] == 0``."""

    modulus: int
    entries: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        bits = np.asarray(self.entries, dtype=np.uint8)
        if bits.shape != (self.modulus,):
            raise ValueError(f"expected {self.modulus} entries, got shape {bits.shape}")
        if np.any(bits > 1):
            raise ValueError("entries must be bits")
        if bits[0] != 0:
            raise ValueError("entry at index 0 must be 0")
        bits = bits.copy()
        bits.setflags(write=False)
        object.__setattr__(self, "entries", bits)
        object.__setattr__(self, "_signs", {})

    def __getitem__(self, j: int) -> int:
        return int(self.entries[j])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BitTable):
            return NotImplemented
        return self.modulus == other.modulus and bool(np.array_equal(self.entries, other.entries))

    def signs(self, dim: int) -> np.ndarray:
        """Diagonal of the phase oracle, padded with +1 beyond the modulus."""
        out = self._signs.get(dim)
        if out is None:
            out = np.ones(dim)
            out[: self.modulus] = 1.0 - 2.0 * self.entries
            out.setflags(write=False)
            self._signs[dim] = out
        return out


def apply_oracle(state: Statevector, table: BitTable) -> Statevector:
    """Multiply the amplitude of ``|j>`` by ``(-1)^table[j]``."""
    amps = state.amplitudes
    dim = len(amps)
    if dim < table.modulus:
        raise ValueError(f"register of dimension {dim} cannot hold a table over Z_{table.modulus}")
    return Statevector._wrap(state.num_qubits, amps * table.signs(dim))


@lru_cache(maxsize=None)
def _swap_perm(num_qubits: int, a: int, b: int) -> np.ndarray:
    idx = np.arange(1 << num_qubits)
    sa, sb = num_qubits - 1 - a, num_qubits - 1 - b
    bit_a = (idx >> sa) & 1
    bit_b = (idx >> sb) & 1
    differ = bit_a != bit_b
    return np.where(differ, idx ^ ((1 << sa) | (1 << sb)), idx)


@lru_cache(maxsize=None)
def _cnot_perm(num_qubits: int, control: int, target: int) -> np.ndarray:
    idx = np.arange(1 << num_qubits)
    sc, st = num_qubits - 1 - control, num_qubits - 1 - target
    return np.where((idx >> sc) & 1, idx ^ (1 << st), idx)


def _check_qubits(state: Statevector, *qubits: int) -> None:
    for q in qubits:
        if not 0 <= q < state.num_qubits:
            raise ValueError(f"qubit {q} out of range for {state.num_qubits}-qubit register")
    if len(set(qubits)) != len(qubits):
        raise ValueError("gate qubits must be distinct")


def swap(state: Statevector, a: int, b: int) -> Statevector:
    _check_qubits(state, a, b)
    # permutation matrices are involutions here, so gather == scatter
    return Statevector._wrap(state.num_qubits, state.amplitudes[_swap_perm(state.num_qubits, a, b)])


def cnot(state: Statevector, control: int, target: int) -> Statevector:
    _check_qubits(state, control, target)
    perm = _cnot_perm(state.num_qubits, control, target)
    return Statevector._wrap(state.num_qubits, state.amplitudes[perm])


def reduction_circuit(j: int, num_qubits: int) -> list[tuple[str, int, int]]:
    """Gate list mapping ``|j>`` to ``|10...0>`` while fixing ``|0>``.

    SWAP the leading 1-bit of ``j`` onto qubit 0, then clear every other
    1-bit with a CNOT controlled on qubit 0.
    """
    if not 1 <= j < (1 << num_qubits):
        raise ValueError(f"element {j} is not a nonzero {num_qubits}-bit index")
    ones = [i for i in range(num_qubits) if (j >> (num_qubits - 1 - i)) & 1]
    gates: list[tuple[str, int, int]] = []
    if ones[0] != 0:
        gates.append(("swap", 0, ones[0]))
    gates.extend(("cnot", 0, i) for i in ones[1:])
    return gates


def run_circuit(state: Statevector, gates: Sequence[tuple[str, int, int]]) -> Statevector:
    for name, a, b in gates:
        state = swap(state, a, b) if name == "swap" else cnot(state, a, b)
    return state


def reduce_to_plus_minus(state: Statevector, j: int) -> Statevector:
    """Map a state on span{|0>, |j>} onto span{|0...0>, |10...0>}.

    Raises
    ------
    CorruptRegisterError
        If the state has weight outside ``{0, j}``.
    """
    if j == 0:
        raise ValueError("j must be nonzero")
    amps = state.amplitudes
    inside = int(abs(amps[0]) > ALGEBRA_TOL) + int(j < len(amps) and abs(amps[j]) > ALGEBRA_TOL)
    if np.count_nonzero(np.abs(amps) > ALGEBRA_TOL) > inside:
        stray = [k for k in state.support() if k not in (0, j)]
        raise CorruptRegisterError(f"register has support on {stray} outside {{0, {j}}}")
    return apply_reduction(state, j)


@lru_cache(maxsize=None)
def _reduction_perm(j: int, num_qubits: int) -> np.ndarray:
    idx = np.arange(1 << num_qubits)
    for name, a, b in reduction_circuit(j, num_qubits):
        step = _swap_perm(num_qubits, a, b) if name == "swap" else _cnot_perm(num_qubits, a, b)
        idx = idx[step]
    idx.setflags(write=False)
    return idx


def apply_reduction(state: Statevector, j: int) -> Statevector:
    """The reduction circuit for ``j`` as one fused permutation, with no support check."""
    return Statevector._wrap(state.num_qubits, state.amplitudes[_reduction_perm(j, state.num_qubits)])


# --- measurement -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MeasurementBasis:
    """A projective measurement on a register.

    ``kind`` is one of

    * ``"computational"``: all ``2^M`` basis states, labels are indices;
    * ``"pm_pair"``: ``(|0> +- |j>)/sqrt(2)`` completed by the remaining
      computational states; labels ``"+"``, ``"-"`` and ``"corrupt"``;
    * ``"qubit"``: an orthonormal basis of one qubit (``vectors``), the rest
      of the register left unmeasured.
    """

    kind: str
    j: int = 0
    qubit: int = 0
    vectors: tuple = ()
    labels: tuple = ()

    def __post_init__(self) -> None:
        if self.kind not in ("computational", "pm_pair", "qubit"):
            raise ValueError(f"unknown basis kind {self.kind!r}")
        if self.kind == "qubit":
            vecs = np.array(self.vectors, dtype=np.complex128)
            if vecs.shape != (2, 2) or not np.allclose(vecs.conj() @ vecs.T, np.eye(2), atol=1e-12):
                raise ValueError("qubit basis needs two orthonormal 2-vectors")
            if len(self.labels) != 2:
                raise ValueError("qubit basis needs two labels")
            object.__setattr__(self, "vectors", vecs)
            object.__setattr__(self, "_duals", tuple(complex(c) for c in vecs.conj().reshape(-1)))

    @classmethod
    @lru_cache(maxsize=None)
    def computational(cls) -> "MeasurementBasis":
        return cls("computational")

    @classmethod
    @lru_cache(maxsize=None)
    def pm_pair(cls, j: int) -> "MeasurementBasis":
        if j < 1:
            raise ValueError("pm_pair needs j >= 1")
        return cls("pm_pair", j=j)

    @classmethod
    def single_qubit(cls, vectors, labels: Sequence[Hashable], qubit: int = 0) -> "MeasurementBasis":
        return cls("qubit", qubit=qubit, vectors=tuple(map(tuple, vectors)), labels=tuple(labels))

    @classmethod
    @lru_cache(maxsize=None)
    def z(cls, qubit: int = 0) -> "MeasurementBasis":
        return cls.single_qubit([[1, 0], [0, 1]], (0, 1), qubit)

    @classmethod
    @lru_cache(maxsize=None)
    def pm(cls, qubit: int = 0) -> "MeasurementBasis":
        h = SQRT_HALF
        return cls.single_qubit([[h, h], [h, -h]], ("+", "-"), qubit)

    @classmethod
    def pair(cls, theta: float, which: str, qubit: int = 0) -> "MeasurementBasis":
        """``{|phi_w>, |phi_w_perp>}`` with ``|phi_0/1> = cos(t/2)|0> +- sin(t/2)|1>``."""
        c, s = np.cos(theta / 2), np.sin(theta / 2)
        if which == "phi0":
            vecs = [[c, s], [s, -c]]
        elif which == "phi1":
            vecs = [[c, -s], [s, c]]
        else:
            raise ValueError("which must be 'phi0' or 'phi1'")
        return cls.single_qubit(vecs, (which, which + "_perp"), qubit)

    def _check(self, state: Statevector) -> None:
        if self.kind == "pm_pair" and self.j >= state.dim:
            raise ValueError(f"pm_pair({self.j}) does not fit a {state.num_qubits}-qubit register")
        if self.kind == "qubit" and not 0 <= self.qubit < state.num_qubits:
            raise ValueError(f"qubit {self.qubit} out of range")


def _project_qubit(state: Statevector, qubit: int, vec: np.ndarray) -> np.ndarray:
    """Amplitudes of the rest of the register after projecting ``qubit`` on ``vec``."""
    psi = state.amplitudes.reshape(1 << qubit, 2, -1)
    return np.einsum("i,aib->ab", vec.conj(), psi)


def distribution(state: Statevector, basis: MeasurementBasis) -> dict:
    """Born-rule probabilities for every outcome label of ``basis``."""
    basis._check(state)
    amps = state.amplitudes
    if basis.kind == "computational":
        return {i: float(p) for i, p in enumerate(state.probabilities())}
    if basis.kind == "pm_pair":
        a0, aj = amps[0], amps[basis.j]
        plus = abs(a0 + aj) ** 2 / 2
        minus = abs(a0 - aj) ** 2 / 2
        return {"+": plus, "-": minus, "corrupt": max(0.0, 1.0 - plus - minus)}
    out = {}
    for label, vec in zip(basis.labels, basis.vectors):
        rest = _project_qubit(state, basis.qubit, vec)
        out[label] = float(np.vdot(rest, rest).real)
    return out


def measure(state: Statevector, basis: MeasurementBasis, rng: np.random.Generator):
    """Sample an outcome and return ``(label, collapsed state)``."""
    basis._check(state)
    M, amps = state.num_qubits, state.amplitudes
    if basis.kind == "computational":
        cum = state.probabilities().cumsum()
        k = min(int(cum.searchsorted(rng.random() * cum[-1], side="right")), len(cum) - 1)
        return k, basis_state(k, M)

    if basis.kind == "pm_pair":
        dist = distribution(state, basis)
        x = rng.random()
        if x < dist["+"]:
            return "+", superposition_register(basis.j, M, +1)
        if x < dist["+"] + dist["-"]:
            return "-", superposition_register(basis.j, M, -1)
        rest = state.probabilities().copy()
        rest[[0, basis.j]] = 0.0
        cum = np.cumsum(rest)
        k = min(int(np.searchsorted(cum, rng.random() * cum[-1], side="right")), len(cum) - 1)
        while rest[k] == 0.0:  # guard against landing on a zero-width bin
            k -= 1
        return "corrupt", basis_state(k, M)

    pick, rest = _collapse_qubit(amps, basis, rng.random())
    vec = basis.vectors[pick]
    collapsed = np.empty((rest.shape[0], 2, rest.shape[1]), dtype=np.complex128)
    collapsed[:, 0, :] = vec[0] * rest
    collapsed[:, 1, :] = vec[1] * rest
    return basis.labels[pick], Statevector._wrap(M, collapsed.reshape(-1))


def _qubit_part(amps: np.ndarray, basis: MeasurementBasis, which: int) -> np.ndarray:
    d = basis._duals
    if basis.qubit == 0:
        half = len(amps) >> 1
        return (d[2 * which] * amps[:half] + d[2 * which + 1] * amps[half:]).reshape(1, -1)
    psi = amps.reshape(1 << basis.qubit, 2, -1)
    return d[2 * which] * psi[:, 0, :] + d[2 * which + 1] * psi[:, 1, :]


def _collapse_qubit(amps: np.ndarray, basis: MeasurementBasis, x: float):
    part0 = _qubit_part(amps, basis, 0)
    p0 = float(np.vdot(part0, part0).real)
    if x < p0:
        return 0, part0 / math.sqrt(p0)
    part1 = _qubit_part(amps, basis, 1)
    return 1, part1 / math.sqrt(max(1.0 - p0, 1e-300))


def sample_label(state: Statevector, basis: MeasurementBasis, rng: np.random.Generator):
    """Outcome label of a measurement whose post-measurement state is discarded.

    Draws from the same distribution as :func:`measure` without building the
    collapsed register.
    """
    basis._check(state)
    amps = state.amplitudes
    if basis.kind == "computational":
        cum = state.probabilities().cumsum()
        return min(int(cum.searchsorted(rng.random() * cum[-1], side="right")), len(cum) - 1)
    if basis.kind == "pm_pair":
        a0, aj = amps[0], amps[basis.j]
        plus = abs(a0 + aj) ** 2 / 2
        minus = abs(a0 - aj) ** 2 / 2
        x = rng.random()
        return "+" if x < plus else "-" if x < plus + minus else "corrupt"
    part0 = _qubit_part(amps, basis, 0)
    p0 = float(np.vdot(part0, part0).real)
    return basis.labels[0] if rng.random() < p0 else basis.labels[1]


def apply_single_qubit(state: Statevector, gate: np.ndarray, qubit: int) -> Statevector:
    _check_qubits(state, qubit)
    psi = state.amplitudes.reshape(1 << qubit, 2, -1)
    out = np.einsum("ij,ajb->aib", np.asarray(gate, dtype=np.complex128), psi)
    return Statevector(state.num_qubits, out.reshape(-1))


PAULIS = {
    "I": np.eye(2, dtype=np.complex128),
    "X": np.array([[0, 1], [1, 0]], dtype=np.complex128),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=np.complex128),
    "Z": np.array([[1, 0], [0, -1]], dtype=np.complex128),
}


# --- two-state discrimination ------------------------------------------------

def helstrom_guess_probability(theta: float) -> float:
    """Optimal probability of telling ``|phi_0>`` from ``|phi_1>`` (equal priors)."""
    if not 0.0 <= theta <= np.pi / 2:
        raise ValueError("theta must lie in [0, pi/2]")
    return 0.5 + 0.5 * float(np.sin(theta))


def phi_states(theta: float) -> tuple[np.ndarray, np.ndarray]:
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array([c, s], dtype=np.complex128), np.array([c, -s], dtype=np.complex128)


def helstrom_measurement(psi0: np.ndarray, psi1: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Projectors' eigenvectors ``(guess-0 vector, guess-1 vector)`` for equal priors.

    The guess-0 vector spans the positive eigenspace of ``|psi0><psi0| - |psi1><psi1|``.
    """
    gamma = np.outer(psi0, psi0.conj()) - np.outer(psi1, psi1.conj())
    evals, evecs = np.linalg.eigh(gamma)
    return evecs[:, 1], evecs[:, 0]
