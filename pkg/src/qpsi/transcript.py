"""Event log of a protocol run and its JSON-lines serialization."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, NamedTuple, Optional

ACTORS = ("alice", "bob", "channel")


class Event(NamedTuple):
    step: int
    actor: str
    kind: str
    payload: dict
    qubit_units: int
    classical_bits: int


class TranscriptClosed(RuntimeError):
    pass


@dataclass
class Transcript:
    """Ordered events with running communication counters.

    Each event stores the counters as they stand after it, so both columns
    are non-decreasing. ``qubit_units`` counts register transfers (one per
    shared pair or M-qubit register); ``physical_qubits`` counts qubits.
    """

    run_id: int = 0
    events: list[Event] = field(default_factory=list)
    qubits_sent: int = 0
    classical_bits_sent: int = 0
    physical_qubits: int = 0
    abort: Optional[tuple[int, str]] = None

    def log(
        self,
        step: int,
        actor: str,
        kind: str,
        payload: Optional[dict] = None,
        qubits: int = 0,
        bits: int = 0,
        physical: int = 0,
    ) -> Event:
        if self.abort is not None:
            raise TranscriptClosed(f"run {self.run_id} already aborted at step {self.abort[0]}")
        if actor not in ACTORS:
            raise ValueError(f"unknown actor {actor!r}")
        if qubits < 0 or bits < 0:
            raise ValueError("counters only grow")
        self.qubits_sent += qubits
        self.classical_bits_sent += bits
        self.physical_qubits += physical if physical else qubits
        ev = Event(step, actor, kind, payload or {}, self.qubits_sent, self.classical_bits_sent)
        self.events.append(ev)
        return ev

    def log_abort(self, step: int, actor: str, reason: str, payload: Optional[dict] = None) -> Event:
        ev = self.log(step, actor, "abort", {"reason": reason, **(payload or {})})
        self.abort = (step, reason)
        return ev

    @property
    def aborted(self) -> bool:
        return self.abort is not None

    def find(self, kind: str) -> list[Event]:
        return [e for e in self.events if e.kind == kind]

    def to_records(self) -> list[dict]:
        return [
            {
                "run_id": self.run_id,
                "step": e.step,
                "actor": e.actor,
                "kind": e.kind,
                "payload": e.payload,
                "qubit_units": e.qubit_units,
                "classical_bits": e.classical_bits,
            }
            for e in self.events
        ]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.to_records())


def append_transcripts(path: Path, transcripts: Iterable[Transcript]) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        for tr in transcripts:
            fh.write(tr.to_jsonl())


def read_transcripts(path: Path) -> dict[int, Transcript]:
    """Rebuild transcripts from a JSON-lines file written by :func:`append_transcripts`."""
    runs: dict[int, Transcript] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec: dict[str, Any] = json.loads(line)
            tr = runs.setdefault(rec["run_id"], Transcript(run_id=rec["run_id"]))
            if tr.abort is not None:
                raise ValueError(f"line {lineno}: event after abort in run {tr.run_id}")
            ev = Event(
                rec["step"], rec["actor"], rec["kind"], rec["payload"],
                rec["qubit_units"], rec["classical_bits"],
            )
            if ev.qubit_units < tr.qubits_sent or ev.classical_bits < tr.classical_bits_sent:
                raise ValueError(f"line {lineno}: counters decrease")
            tr.events.append(ev)
            tr.qubits_sent, tr.classical_bits_sent = ev.qubit_units, ev.classical_bits
            if ev.kind == "abort":
                tr.abort = (ev.step, ev.payload.get("reason", ""))
    return runs
