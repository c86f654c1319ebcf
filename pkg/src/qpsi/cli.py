"""Command-line front end.

Every invocation reads one flat JSON config, writes everything it produces
into one output directory, and is byte-for-byte reproducible for a fixed
seed. Flags given on the command line override the config file.

Exit codes: 0 ok, 2 bad config, 3 file-system trouble.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import warnings
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import game
from .keygen import conclusive_rate
from .protocol import PartyInput, run_membership_qosmdp, run_protocol
from .statevec import helstrom_guess_probability
from .strategies import BobStrategy, StrategyProfile, parse_strategy

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 2, 3
THETA_MAX = math.pi / 4

DEFAULT_TRIALS = {"run": 1, "nash": 10_000, "bounds": 1, "membership": 1000}


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    N: int = 64
    n: int = 5
    m: int = 5
    u: object = 0  # an int, or a list of ints to loop over
    l: Optional[int] = None
    theta: float = THETA_MAX
    noise: float = 0.0
    threshold: float = 0.05
    trials: Optional[int] = None
    seed: int = 0
    workers: int = 1
    u_tn: float = 1.0
    u_tt: float = 0.5
    u_nn: float = 0.0
    u_nt: float = -0.5
    alice: str = "honest"
    bob: str = "honest"
    out: Optional[str] = None
    X: Optional[list] = None
    Y: Optional[list] = None
    k: Optional[int] = None
    sweep_N: Optional[list] = None
    deviations: Optional[list] = None

    @property
    def u_values(self) -> list[int]:
        return list(self.u) if isinstance(self.u, list) else [self.u]

    @property
    def table(self) -> game.UtilityTable:
        return game.UtilityTable(self.u_tn, self.u_tt, self.u_nn, self.u_nt)

    def params(self, N: Optional[int] = None, u: Optional[int] = None) -> game.GameParams:
        return game.GameParams(
            N=N or self.N, n=self.n, m=self.m, u=self.u if u is None else u,
            theta=self.theta, l=self.l, noise=self.noise, threshold=self.threshold,
        )

    def snapshot(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


_INT_KEYS = {"N", "n", "m", "l", "trials", "seed", "workers", "k"}
_FLOAT_KEYS = {"theta", "noise", "threshold", "u_tn", "u_tt", "u_nn", "u_nt"}


def load_config(path: Optional[Path]) -> dict:
    if path is None:
        return {}
    text = Path(path).read_text(encoding="utf-8")  # OSError surfaces as exit 3
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a flat JSON object")
    return raw


def build_config(raw: dict, command: str, overrides: dict) -> Config:
    known = {f.name for f in fields(Config)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    values = {**raw, **{k: v for k, v in overrides.items() if v is not None}}
    for key, value in values.items():
        if key in _INT_KEYS and not (isinstance(value, int) and not isinstance(value, bool)):
            raise ConfigError(f"{key} must be an integer, got {value!r}")
        if key in _FLOAT_KEYS and not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number, got {value!r}")
    if values.get("X") is not None or values.get("Y") is not None:
        values = _derive_sizes(values)
    cfg = Config(**values)
    if cfg.l is None:
        cfg.l = 2 * cfg.n
    if cfg.trials is None:
        cfg.trials = DEFAULT_TRIALS[command]
    validate(cfg, command)
    return cfg


def _derive_sizes(values: dict) -> dict:
    X, Y = values.get("X"), values.get("Y")
    if X is None:
        # Bob's database alone is enough for the membership replay
        Y = set(Y)
        if "m" in values and values["m"] != len(Y):
            raise ConfigError(f"m={values['m']} disagrees with the given Y (m={len(Y)})")
        return {**values, "m": len(Y), "Y": sorted(Y)}
    if Y is None:
        raise ConfigError("X needs a matching Y")
    X, Y = set(X), set(Y)
    derived = {"n": len(X), "m": len(Y), "u": len(X & Y)}
    for key, val in derived.items():
        if key in values and values[key] != val:
            raise ConfigError(f"{key}={values[key]} disagrees with the given sets ({key}={val})")
    return {**values, **derived, "X": sorted(X), "Y": sorted(Y)}


def validate(cfg: Config, command: str) -> None:
    def need(cond: bool, msg: str) -> None:
        if not cond:
            raise ConfigError(msg)

    need(cfg.n >= 1 and cfg.m >= 1, "n and m must be at least 1")
    if command == "membership":
        # a single secret element: only Bob's set size and l >= 2 matter
        need(cfg.N > 2 * cfg.m, f"need N > 2m, got N={cfg.N}, m={cfg.m}")
    else:
        need(cfg.N > 2 * max(cfg.n, cfg.m), f"need N > 2*max(n, m), got N={cfg.N}, n={cfg.n}, m={cfg.m}")
        need(cfg.l >= 2 * cfg.n, f"need l >= 2n, got l={cfg.l}, n={cfg.n}")
    need(0.0 <= cfg.theta <= THETA_MAX + 1e-12, f"need theta in [0, pi/4], got {cfg.theta}")
    need(0.0 <= cfg.noise <= 1.0, "noise must lie in [0, 1]")
    need(0.0 <= cfg.threshold <= 1.0, "threshold must lie in [0, 1]")
    need(cfg.workers >= 1, "workers must be at least 1")
    need(cfg.seed >= 0, "seed must be non-negative")
    need(cfg.trials >= 1, f"trials must be positive, got {cfg.trials}")
    if command == "nash":
        need(cfg.trials >= 1000, f"nash needs trials >= 1000, got {cfg.trials}")
    us = cfg.u_values
    need(len(us) > 0 and all(isinstance(u, int) for u in us), "u must be an integer or a list of integers")
    for u in us:
        need(0 <= u <= min(cfg.n, cfg.m), f"u={u} outside [0, min(n, m)]")
        need(cfg.n + cfg.m - u <= cfg.N - 1, "sets do not fit in Z_N^*")
    try:
        cfg.table
        parse_strategy(cfg.alice, "alice")
        parse_strategy(cfg.bob, "bob")
        for dev in cfg.deviations or []:
            parse_deviation(dev)
        if cfg.X is not None:
            PartyInput(cfg.X, cfg.N)
        if cfg.Y is not None:
            PartyInput(cfg.Y, cfg.N)
    except (ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from None
    for N in cfg.sweep_N or []:
        need(isinstance(N, int) and N > 2 * max(cfg.n, cfg.m),
             f"sweep value N={N} violates N > 2*max(n, m)")
    if command == "membership":
        need(cfg.k is not None, "membership needs k, the element to test")
        need(1 <= cfg.k < cfg.N, f"k={cfg.k} outside Z_N^*")
        need(cfg.l >= 2, "membership needs l >= 2")
        bob = parse_strategy(cfg.bob, "bob")
        need(bob.is_honest or bob.attacks_channel,
             "membership replays only channel attacks (measure_resend, entangle_measure)")


def parse_deviation(text: str) -> StrategyProfile:
    """``"alice=wrong_announce:rate=1"`` or ``"bob=wrong_pj"``."""
    party, eq, desc = text.partition("=")
    if not eq or party not in ("alice", "bob"):
        raise ValueError(f"deviation {text!r} must look like 'alice=<strategy>' or 'bob=<strategy>'")
    strategy = parse_strategy(desc, party)
    if strategy.is_honest:
        raise ValueError(f"deviation {text!r} is the honest strategy")
    return StrategyProfile(**{party: strategy})


# --- commands -------------------------------------------------------------------

def _write(out: Path, name: str, text: str) -> None:
    (out / name).write_text(text, encoding="utf-8")


def _inputs(cfg: Config, rng: np.random.Generator):
    if cfg.X is not None:
        return PartyInput(cfg.X, cfg.N), PartyInput(cfg.Y, cfg.N)
    u = cfg.u_values[int(rng.integers(len(cfg.u_values)))] if len(cfg.u_values) > 1 else cfg.u_values[0]
    return game.sample_inputs(cfg.N, cfg.n, cfg.m, u, rng)


def cmd_run(cfg: Config, out: Path) -> int:
    if cfg.Y is not None and cfg.X is None:
        raise ConfigError("run needs X whenever Y is given")
    rng = np.random.default_rng(cfg.seed)
    profile = StrategyProfile(parse_strategy(cfg.alice, "alice"), parse_strategy(cfg.bob, "bob"))
    chunks, summaries = [], []
    for run_id in range(cfg.trials):
        X, Y = _inputs(cfg, rng)
        tr, outcome = run_protocol(
            X, Y, cfg.theta, cfg.l, profile, rng,
            noise=cfg.noise, threshold=cfg.threshold, run_id=run_id,
        )
        la, lb = game.classify(outcome, X.elements & Y.elements)
        chunks.append(tr.to_jsonl())
        summaries.append({
            "run_id": run_id,
            "X": sorted(X.elements),
            "Y": sorted(Y.elements),
            "f_A": None if outcome.f_A is None else sorted(outcome.f_A),
            "f_B": None if outcome.f_B is None else sorted(outcome.f_B),
            "labels": [str(la), str(lb)],
            "abort_step": tr.abort[0] if tr.abort else None,
            "qubit_units": tr.qubits_sent,
            "classical_bits": tr.classical_bits_sent,
        })
    _write(out, "transcripts.jsonl", "".join(chunks))
    _write(out, "summary.jsonl", "".join(json.dumps(s, sort_keys=True) + "\n" for s in summaries))

    for s in summaries[:20]:
        abort = f"abort at step {s['abort_step']}" if s["abort_step"] is not None else "completed"
        print(f"run {s['run_id']}: {abort}; f_A={s['f_A']} f_B={s['f_B']} labels={'/'.join(s['labels'])}; "
              f"qubit units = {s['qubit_units']}, classical bits = {s['classical_bits']}")
    if len(summaries) > 20:
        print(f"... {len(summaries) - 20} more runs in summary.jsonl")
    if profile.deviator is None:
        print(f"expected for honest play: qubit units = 4n+2l = {game.quantum_cost(cfg.n, cfg.l)}")
    return EXIT_OK


def cmd_nash(cfg: Config, out: Path) -> int:
    rng = np.random.default_rng(cfg.seed)
    catalog = [parse_deviation(d) for d in cfg.deviations] if cfg.deviations else None
    rows, fairness, sweep = [], [], []
    for N in cfg.sweep_N or [cfg.N]:
        for u in cfg.u_values:
            params = cfg.params(N, u)
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                report = game.strict_nash_report(params, cfg.table, cfg.trials, rng, cfg.workers, catalog)
            for w in caught:
                print(f"warning: {w.message}")
            rows.extend(report.all_rows())
            fairness.extend(
                {"N": N, "u": u, **asdict(f)}
                for f in game.fairness_correctness_report(params, cfg.table, cfg.trials, rng, report=report)
            )
            eq1 = _eq1_or_none(N, cfg.n, cfg.m, u, cfg.table)
            for r in report.rows:
                if "wrong_announce" in r.profile:
                    sweep.append({"N": N, "u": u, "profile": r.profile, "verdict": r.verdict,
                                  "eq1_lhs": eq1 and eq1.lhs, "eq1_holds": eq1 and eq1.holds})
    _write(out, "report.jsonl", game.rows_to_jsonl(rows))
    _write(out, "report.csv", game.rows_to_csv(rows))
    _write(out, "fairness.jsonl", "".join(json.dumps(f, sort_keys=True) + "\n" for f in fairness))
    if cfg.sweep_N:
        _write(out, "sweep.jsonl", "".join(json.dumps(s, sort_keys=True) + "\n" for s in sweep))

    for r in rows:
        print(f"N={r.N} u={r.u} {r.profile}: E[U_A]={r.eu_a:.4f}+-{r.se_a:.4f} "
              f"E[U_B]={r.eu_b:.4f}+-{r.se_b:.4f} {r.verdict}"
              + ("" if r.counts_as_deviation or r.verdict == "baseline" else " (not a deviation)"))
    for s in sweep:
        print(f"wrong_announce at N={s['N']} u={s['u']}: verdict {s['verdict']}, "
              f"closed form {'holds' if s['eq1_holds'] else 'fails'}")
    return EXIT_OK


def _eq1_or_none(N, n, m, u, table):
    try:
        return game.eq1_bound(N, n, m, u, table)
    except ValueError:
        return None


def bounds_table(cfg: Config) -> dict:
    deltas = (0.05, 0.1, 0.2)
    sizes = (20, 100, 1000)
    serfling = []
    for delta in deltas:
        for n in sizes:
            for k in (n // 4, n // 2, 3 * n // 4):
                serfling.append({
                    "delta": delta, "n": n, "k": k,
                    "bound": game.serfling_bound(delta, n, k),
                    "half_sample_form": game.serfling_half_sample_bound(delta, n) if 2 * k == n else None,
                })
    eq1 = []
    for u in cfg.u_values:
        res = _eq1_or_none(cfg.N, cfg.n, cfg.m, u, cfg.table)
        if res is not None:
            eq1.append({"u": u, "pr_c2": str(res.pr_c2), "lhs": res.lhs, "rhs": res.rhs, "holds": res.holds})
    return {
        "theta": cfg.theta,
        "helstrom_guess_probability": helstrom_guess_probability(cfg.theta),
        "conclusive_rate": conclusive_rate(cfg.theta),
        "serfling": serfling,
        "eq1": eq1,
        "complexity": [
            {"n": cfg.n, "l": cfg.l, "u": u, "N": cfg.N,
             "register_units": game.quantum_cost(cfg.n, cfg.l),
             "classical_bits": game.classical_cost(cfg.n, cfg.l, u, cfg.N)}
            for u in cfg.u_values
        ],
    }


def cmd_bounds(cfg: Config, out: Path) -> int:
    table = bounds_table(cfg)
    _write(out, "bounds.json", json.dumps(table, indent=2, sort_keys=True) + "\n")
    print(f"theta = {cfg.theta:.6f}")
    print(f"optimal guess of one key bit: {table['helstrom_guess_probability']:.5f}")
    print(f"conclusive rate: {table['conclusive_rate']:.5f}")
    print("serfling bound (b - a = 1):")
    for row in table["serfling"]:
        extra = f"   k = n/2 form {row['half_sample_form']:.5f}" if row["half_sample_form"] is not None else ""
        print(f"  delta={row['delta']:<5} n={row['n']:<5} k={row['k']:<4} {row['bound']:.5f}{extra}")
    for row in table["eq1"]:
        print(f"announce-an-outsider payoff at u={row['u']}: {row['lhs']:.5f} vs U_TT {row['rhs']:.5f} "
              f"({'cooperation preferred' if row['holds'] else 'deviation preferred'})")
    for row in table["complexity"]:
        print(f"n={row['n']}, l={row['l']}, u={row['u']}, N={row['N']}: "
              f"{row['register_units']} register-units, {row['classical_bits']} classical bits")
    return EXIT_OK


def cmd_membership(cfg: Config, out: Path) -> int:
    rng = np.random.default_rng(cfg.seed)
    bob = parse_strategy(cfg.bob, "bob")
    attack: Optional[BobStrategy] = None if bob.is_honest else bob
    chunks, records = [], []
    totals = {"+": 0, "-": 0, "corrupt": 0}
    flips = decoys = 0
    for run_id in range(cfg.trials):
        Y = PartyInput(cfg.Y, cfg.N) if cfg.Y is not None else _inputs(cfg, rng)[1]
        tr, member, stats = run_membership_qosmdp(cfg.k, Y, cfg.l, rng, attack, run_id)
        chunks.append(tr.to_jsonl())
        for key, v in stats.outcomes.items():
            totals[key] += v
        flips += stats.oracle_flips
        decoys += stats.decoys
        records.append({"run_id": run_id, "member": member, "truth": int(cfg.k in Y.elements),
                        "decoy_outcomes": stats.outcomes, "oracle_flips": stats.oracle_flips})
    summary = {"trials": cfg.trials, "decoys": decoys, "decoy_outcomes": totals,
               "oracle_flips": flips, "flip_rate": totals["-"] / decoys if decoys else 0.0,
               "correct": sum(r["member"] == r["truth"] for r in records)}
    _write(out, "transcripts.jsonl", "".join(chunks))
    _write(out, "membership.jsonl", "".join(json.dumps(r, sort_keys=True) + "\n" for r in records))
    _write(out, "membership_summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"{cfg.trials} membership runs for k={cfg.k}: {summary['correct']} correct answers")
    print(f"decoy outcomes {totals}, '-' rate {summary['flip_rate']:.4f}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "nash": cmd_nash, "bounds": cmd_bounds, "membership": cmd_membership}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qpsi", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat JSON config file")
    common.add_argument("--seed", type=int, help="seed for every random draw")
    common.add_argument("--trials", type=int, help="number of runs (per profile for nash)")
    common.add_argument("--out", type=Path, help="output directory, created if missing")
    common.add_argument("--workers", type=int, help="worker processes for Monte-Carlo chunks")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="run the protocol and save transcripts")
    sub.add_parser("nash", parents=[common], help="equilibrium, fairness and correctness report")
    sub.add_parser("bounds", parents=[common], help="closed-form bounds for the config")
    sub.add_parser("membership", parents=[common], help="replay the single-element membership test")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = load_config(args.config)
        overrides = {"seed": args.seed, "trials": args.trials, "workers": args.workers,
                     "out": None if args.out is None else str(args.out)}
        cfg = build_config(raw, args.command, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    out = Path(cfg.out or f"qpsi-{args.command}")
    try:
        out.mkdir(parents=True, exist_ok=True)
        _write(out, "config.json", cfg.snapshot())
        return COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
