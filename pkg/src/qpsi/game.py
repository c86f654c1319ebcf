"""Outcome classification, utilities and Monte-Carlo equilibrium checks.

Each party's result is labelled ``T`` when it holds exactly ``X & Y`` and
``N`` otherwise. A party holding some set that is not the intersection is
also flagged ``wrong``; that flag feeds the correctness numbers.

Monte-Carlo estimates run in fixed chunks of :data:`CHUNK` trials. Every
chunk gets its own seed spawned from one draw of the caller's rng, so the
totals do not depend on how many workers run the chunks.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional, Sequence, Union

import numpy as np
from scipy import stats

from .protocol import Outcome, PartyInput, log2_ceil, run_protocol
from .strategies import StrategyProfile, parse_strategy

CHUNK = 250
SIGMAS = 4.0
# two-sided tail beyond 4 sigma, used as the significance level of the chi-square test
FOUR_SIGMA_P = 2 * stats.norm.sf(SIGMAS)


# --- utilities ------------------------------------------------------------------

@dataclass(frozen=True)
class UtilityTable:
    """Payoffs of one party, keyed by (own label, other party's label)."""

    tn: float = 1.0
    tt: float = 0.5
    nn: float = 0.0
    nt: float = -0.5

    def __post_init__(self) -> None:
        if not self.tn > self.tt > self.nn > self.nt:
            raise ValueError(
                f"utilities must satisfy TN > TT > NN > NT, got "
                f"{self.tn}, {self.tt}, {self.nn}, {self.nt}"
            )

    def of(self, own: str, other: str) -> float:
        return {
            ("T", "N"): self.tn,
            ("T", "T"): self.tt,
            ("N", "N"): self.nn,
            ("N", "T"): self.nt,
        }[(own, other)]


@dataclass(frozen=True)
class OutcomeLabel:
    label: str
    wrong: bool = False

    def __str__(self) -> str:
        return self.label + ("!" if self.wrong else "")


def _label(result: Optional[frozenset], truth: frozenset) -> OutcomeLabel:
    if result is None:
        return OutcomeLabel("N")
    if result == truth:
        return OutcomeLabel("T")
    return OutcomeLabel("N", wrong=True)


def classify(outcome: Outcome, truth: Iterable[int]) -> tuple[OutcomeLabel, OutcomeLabel]:
    """Label Alice's and Bob's results against the true intersection.

    >>> classify(Outcome(frozenset({2}), frozenset({2, 9})), {2})
    (OutcomeLabel(label='T', wrong=False), OutcomeLabel(label='N', wrong=True))
    """
    truth = frozenset(truth)
    return _label(outcome.f_A, truth), _label(outcome.f_B, truth)


# --- input sampling -------------------------------------------------------------

@dataclass(frozen=True)
class GameParams:
    """Everything a batch of protocol runs needs besides strategies.

    ``u`` is the intersection size; a sequence means it is drawn uniformly
    from those values for every trial.
    """

    N: int
    n: int
    m: int
    u: Union[int, tuple] = 0
    theta: float = math.pi / 4
    l: Optional[int] = None
    noise: float = 0.0
    threshold: float = 0.05

    def __post_init__(self) -> None:
        if isinstance(self.u, (list, tuple)):
            object.__setattr__(self, "u", tuple(int(x) for x in self.u))
        if self.l is None:
            object.__setattr__(self, "l", 2 * self.n)
        if self.n < 1 or self.m < 1:
            raise ValueError("n and m must be at least 1")
        if not self.N > 2 * max(self.n, self.m):
            raise ValueError(f"need N > 2*max(n, m), got N={self.N}, n={self.n}, m={self.m}")
        if self.l < 2 * self.n:
            raise ValueError(f"need l >= 2n, got l={self.l}, n={self.n}")
        for u in self.u_values:
            if not 0 <= u <= min(self.n, self.m):
                raise ValueError(f"u={u} outside [0, min(n, m)]")

    @property
    def u_values(self) -> tuple:
        return self.u if isinstance(self.u, tuple) else (self.u,)

    @property
    def nash_precondition(self) -> bool:
        return self.m + self.n < (self.N - 1) / 2


def sample_inputs(N: int, n: int, m: int, u: int, rng: np.random.Generator):
    """Uniform ``X`` of size n and ``Y`` of size m in ``Z_N^*`` sharing exactly u elements."""
    if not 0 <= u <= min(n, m):
        raise ValueError(f"u={u} outside [0, min(n, m)]")
    if n + m - u > N - 1:
        raise ValueError("sets do not fit in Z_N^*")
    picks = (rng.permutation(N - 1)[: n + m - u] + 1).tolist()
    common, only_x, only_y = picks[:u], picks[u:n], picks[n:]
    return PartyInput(common + only_x, N), PartyInput(common + only_y, N)


# --- Monte-Carlo tallies ----------------------------------------------------------

@dataclass
class Tally:
    """Per-trial counts; ``merge`` is associative so chunks fold in any grouping."""

    trials: int = 0
    labels: Counter = field(default_factory=Counter)
    wrong_a: int = 0
    wrong_b: int = 0
    aborts: Counter = field(default_factory=Counter)
    substituted: int = 0
    substituted_in_c2: int = 0

    def merge(self, other: "Tally") -> "Tally":
        return Tally(
            self.trials + other.trials,
            self.labels + other.labels,
            self.wrong_a + other.wrong_a,
            self.wrong_b + other.wrong_b,
            self.aborts + other.aborts,
            self.substituted + other.substituted,
            self.substituted_in_c2 + other.substituted_in_c2,
        )

    def utility_stats(self, table: UtilityTable, party: str) -> tuple[float, float]:
        """Mean utility and its standard error."""
        values, weights = [], []
        for (la, lb), count in self.labels.items():
            values.append(table.of(la, lb) if party == "alice" else table.of(lb, la))
            weights.append(count)
        v = np.array(values, dtype=float)
        w = np.array(weights, dtype=float)
        mean = float(np.dot(v, w) / self.trials)
        var = float(np.dot(w, (v - mean) ** 2) / max(self.trials - 1, 1))
        return mean, math.sqrt(var / self.trials)

    def true_fraction(self, party: str) -> float:
        idx = 0 if party == "alice" else 1
        return sum(c for k, c in self.labels.items() if k[idx] == "T") / self.trials


def _run_chunk(args) -> Tally:
    profile, params, trials, seed = args
    rng = np.random.default_rng(seed)
    tally = Tally()
    us = params.u_values
    for _ in range(trials):
        u = us[int(rng.integers(len(us)))] if len(us) > 1 else us[0]
        X, Y = sample_inputs(params.N, params.n, params.m, u, rng)
        tr, outcome = run_protocol(
            X, Y, params.theta, params.l, profile, rng,
            noise=params.noise, threshold=params.threshold,
        )
        la, lb = classify(outcome, X.elements & Y.elements)
        tally.trials += 1
        tally.labels[(la.label, lb.label)] += 1
        tally.wrong_a += la.wrong
        tally.wrong_b += lb.wrong
        if tr.abort is not None:
            tally.aborts[tr.abort[0]] += 1
        for ev in tr.find("announce"):
            e = ev.payload.get("substituted")
            if e is not None:
                tally.substituted += 1
                tally.substituted_in_c2 += e in Y.elements
    return tally


def run_trials(
    profile: StrategyProfile,
    params: GameParams,
    trials: int,
    rng: np.random.Generator,
    workers: int = 1,
) -> Tally:
    if trials < 1:
        raise ValueError("trials must be positive")
    root = np.random.SeedSequence(int(rng.integers(2**63)))
    sizes = [CHUNK] * (trials // CHUNK) + ([trials % CHUNK] if trials % CHUNK else [])
    jobs = [(profile, params, size, seed) for size, seed in zip(sizes, root.spawn(len(sizes)))]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_chunk, jobs))
    else:
        parts = [_run_chunk(job) for job in jobs]
    total = Tally()
    for part in parts:
        total = total.merge(part)
    return total


# --- report rows ----------------------------------------------------------------

def verdict(dev_mean: float, dev_se: float, hon_mean: float, hon_se: float) -> str:
    """``holds`` when the honest value beats the deviation by more than 4 sigma.

    With zero spread on both sides any strict gap is decisive.
    """
    sigma = math.hypot(dev_se, hon_se)
    gap = hon_mean - dev_mean
    if sigma == 0.0:
        return "holds" if gap > 0 else "fails"
    if gap > SIGMAS * sigma:
        return "holds"
    if -gap > SIGMAS * sigma:
        return "fails"
    return "inconclusive"


@dataclass
class ProfileRow:
    profile: str
    deviator: Optional[str]
    u: str
    trials: int
    N: int
    eu_a: float
    se_a: float
    eu_b: float
    se_b: float
    verdict: str = ""
    counts_as_deviation: bool = True
    wrong_freq_a: float = 0.0
    wrong_freq_b: float = 0.0
    true_freq_a: float = 0.0
    true_freq_b: float = 0.0
    abort_steps: dict = field(default_factory=dict)
    substituted: int = 0
    substituted_in_c2: int = 0

    @property
    def ci_a(self) -> tuple[float, float]:
        return (self.eu_a - SIGMAS * self.se_a, self.eu_a + SIGMAS * self.se_a)

    @property
    def ci_b(self) -> tuple[float, float]:
        return (self.eu_b - SIGMAS * self.se_b, self.eu_b + SIGMAS * self.se_b)

    @property
    def wrong_freq(self) -> float:
        return self.wrong_freq_a + self.wrong_freq_b

    def deviator_utility(self) -> tuple[float, float]:
        if self.deviator == "bob":
            return self.eu_b, self.se_b
        return self.eu_a, self.se_a

    def to_record(self) -> dict:
        rec = {k: getattr(self, k) for k in self.__dataclass_fields__}
        rec["abort_steps"] = {str(k): v for k, v in sorted(self.abort_steps.items())}
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "ProfileRow":
        rec = dict(rec)
        rec["abort_steps"] = {int(k): v for k, v in rec["abort_steps"].items()}
        return cls(**rec)


def _u_label(params: GameParams) -> str:
    return ",".join(str(u) for u in params.u_values)


def expected_utilities(
    profile: StrategyProfile,
    params: GameParams,
    table: UtilityTable,
    trials: int,
    rng: np.random.Generator,
    workers: int = 1,
    bob_table: Optional[UtilityTable] = None,
) -> ProfileRow:
    """Average both parties' utilities over ``trials`` runs on fresh inputs."""
    if trials < 1000:
        raise ValueError("expected_utilities needs at least 1000 trials")
    tally = run_trials(profile, params, trials, rng, workers)
    return _row(profile, params, tally, table, bob_table or table)


def _row(profile, params, tally: Tally, table_a, table_b) -> ProfileRow:
    eu_a, se_a = tally.utility_stats(table_a, "alice")
    eu_b, se_b = tally.utility_stats(table_b, "bob")
    return ProfileRow(
        profile=profile.describe(),
        deviator=profile.deviator,
        u=_u_label(params),
        trials=tally.trials,
        N=params.N,
        eu_a=eu_a, se_a=se_a, eu_b=eu_b, se_b=se_b,
        wrong_freq_a=tally.wrong_a / tally.trials,
        wrong_freq_b=tally.wrong_b / tally.trials,
        true_freq_a=tally.true_fraction("alice"),
        true_freq_b=tally.true_fraction("bob"),
        abort_steps=dict(sorted(tally.aborts.items())),
        substituted=tally.substituted,
        substituted_in_c2=tally.substituted_in_c2,
    )


# Lying about q_t only where Alice already holds r_t still hands both parties
# the intersection, so it is reported but not held to the strict inequality.
NON_DEVIATIONS = ("wrong_qt",)


def deviation_catalog() -> list[StrategyProfile]:
    """Every unilateral deviation the strategies module implements."""
    alice = [
        "extra_elements:count=1",
        "no_checks",
        "wrong_qt:rate=1",
        "wrong_announce:rate=1",
    ]
    bob = [
        "wrong_pj:rate=1",
        "measure_resend:basis=computational",
        "measure_resend:basis=pm",
        "entangle_measure:eta=0.9",
    ]
    return [StrategyProfile(alice=parse_strategy(a, "alice")) for a in alice] + [
        StrategyProfile(bob=parse_strategy(b, "bob")) for b in bob
    ]


@dataclass
class EquilibriumReport:
    params: GameParams
    honest: ProfileRow
    rows: list[ProfileRow]

    @property
    def all_hold(self) -> bool:
        return all(r.verdict == "holds" for r in self.rows if r.counts_as_deviation)

    def failing(self) -> list[ProfileRow]:
        return [r for r in self.rows if r.counts_as_deviation and r.verdict != "holds"]

    def all_rows(self) -> list[ProfileRow]:
        return [self.honest] + self.rows


def strict_nash_report(
    params: GameParams,
    table: UtilityTable,
    trials: int,
    rng: np.random.Generator,
    workers: int = 1,
    catalog: Optional[Sequence[StrategyProfile]] = None,
    bob_table: Optional[UtilityTable] = None,
) -> EquilibriumReport:
    """Honest play against each unilateral deviation, judged on the deviator's utility."""
    if not params.nash_precondition:
        warnings.warn(
            f"m + n < (N - 1)/2 does not hold for N={params.N}, n={params.n}, m={params.m}; "
            "deviations may pay off",
            RuntimeWarning,
            stacklevel=2,
        )
    bob_table = bob_table or table
    honest = expected_utilities(StrategyProfile(), params, table, trials, rng, workers, bob_table)
    honest.verdict = "baseline"
    honest.counts_as_deviation = False
    rows = []
    for profile in catalog if catalog is not None else deviation_catalog():
        if profile.deviator not in ("alice", "bob"):
            raise ValueError("catalog entries must be unilateral deviations")
        row = expected_utilities(profile, params, table, trials, rng, workers, bob_table)
        dev_mean, dev_se = row.deviator_utility()
        hon_mean, hon_se = (honest.eu_b, honest.se_b) if row.deviator == "bob" else (honest.eu_a, honest.se_a)
        row.verdict = verdict(dev_mean, dev_se, hon_mean, hon_se)
        row.counts_as_deviation = not (
            row.deviator == "alice" and profile.alice.variant in NON_DEVIATIONS
        )
        rows.append(row)
    return EquilibriumReport(params, honest, rows)


@dataclass(frozen=True)
class FairnessRow:
    profile: str
    deviator: str
    counts_as_deviation: bool
    true_prob_deviation: float
    true_prob_honest: float
    sigma: float
    fairness: str
    wrong_freq_a: float
    wrong_freq_b: float
    eu_deviator: float
    u_tt: float


def fairness_correctness_report(
    params: GameParams,
    table: UtilityTable,
    trials: int,
    rng: np.random.Generator,
    workers: int = 1,
    report: Optional[EquilibriumReport] = None,
) -> list[FairnessRow]:
    """Chance the deviator ends with the intersection, against honest play.

    The utility form (deviator's E[U] next to U_TT) is reported alongside
    without being judged. Pass an existing ``report`` to reuse its runs.
    """
    report = report or strict_nash_report(params, table, trials, rng, workers)
    out = []
    for row in report.rows:
        if row.deviator == "bob":
            dev, hon = row.true_freq_b, report.honest.true_freq_b
        else:
            dev, hon = row.true_freq_a, report.honest.true_freq_a
        se = math.hypot(
            math.sqrt(dev * (1 - dev) / row.trials),
            math.sqrt(hon * (1 - hon) / report.honest.trials),
        )
        out.append(FairnessRow(
            profile=row.profile,
            deviator=row.deviator,
            counts_as_deviation=row.counts_as_deviation,
            true_prob_deviation=dev,
            true_prob_honest=hon,
            sigma=se,
            fairness=verdict(dev, 0.0, hon, se),
            wrong_freq_a=row.wrong_freq_a,
            wrong_freq_b=row.wrong_freq_b,
            eu_deviator=row.deviator_utility()[0],
            u_tt=table.tt,
        ))
    return out


# --- closed forms ---------------------------------------------------------------

@dataclass(frozen=True)
class Eq1Result:
    lhs: float
    rhs: float
    holds: bool
    pr_c2: Fraction


def eq1_bound(N: int, n: int, m: int, u: int, table: UtilityTable) -> Eq1Result:
    """Alice's expected payoff for announcing a random outsider, against U_TT.

    The outsider comes uniformly from the ``N - 1 - n`` elements outside X;
    ``m - u`` of them are in Y, which keeps Bob from aborting.
    """
    if not 0 <= u <= min(n, m):
        raise ValueError(f"u={u} outside [0, min(n, m)]")
    if not n + m < N - 1:
        raise ValueError(f"need n + m < N - 1, got N={N}, n={n}, m={m}")
    pr_c2 = Fraction(m - u, N - 1 - n)
    lhs = pr_c2 * Fraction(table.tn) + (1 - pr_c2) * Fraction(table.nn)
    rhs = Fraction(table.tt)
    return Eq1Result(float(lhs), float(rhs), lhs < rhs, pr_c2)


def serfling_bound(delta: float, n: int, k: int, a: float = 0.0, b: float = 1.0) -> float:
    """Tail bound for the mean of ``k`` draws without replacement from ``n`` values in [a, b]."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    if not b > a:
        raise ValueError("need b > a")
    return math.exp(-2 * delta**2 * k * n / ((n - k + 1) * (b - a)))


def serfling_half_sample_bound(delta: float, n: int, a: float = 0.0, b: float = 1.0) -> float:
    """Large-n form of :func:`serfling_bound` at ``k = n/2``."""
    if not delta > 0 or n < 1 or not b > a:
        raise ValueError("need delta > 0, n >= 1 and b > a")
    return math.exp(-2 * delta**2 * n / (b - a))


def quantum_cost(n: int, l: int) -> int:
    """Register transfers: 2l shared pairs plus 2n registers each way."""
    return 4 * n + 2 * l


def classical_cost(n: int, l: int, u: int, N: int) -> int:
    """Bits for the (t, q_t) disclosures, Bob's n declarations and u announced elements."""
    return n * (log2_ceil(l) + 2) + u * log2_ceil(N)


def chi_square_indistinguishable(
    counts_a: dict, counts_b: dict, p_threshold: float = FOUR_SIGMA_P
) -> tuple[float, float, bool]:
    """Contingency test on two outcome histograms; categories empty in both are dropped."""
    keys = [k for k in sorted(set(counts_a) | set(counts_b), key=str)
            if counts_a.get(k, 0) + counts_b.get(k, 0) > 0]
    if len(keys) < 2:
        return 0.0, 1.0, True
    obs = np.array([[counts_a.get(k, 0) for k in keys], [counts_b.get(k, 0) for k in keys]])
    stat, p, _, _ = stats.chi2_contingency(obs, correction=False)
    return float(stat), float(p), bool(p > p_threshold)


# --- persistence ----------------------------------------------------------------

CSV_COLUMNS = [
    "profile", "E[U_A]", "CI_A", "E[U_B]", "CI_B", "verdict", "wrong_freq",
    "abort_step_histogram", "u", "N", "deviator", "trials",
]


def _fmt_ci(ci: tuple[float, float]) -> str:
    return f"[{ci[0]!r}, {ci[1]!r}]"


def rows_to_csv(rows: Sequence[ProfileRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in rows:
        writer.writerow([
            r.profile, repr(r.eu_a), _fmt_ci(r.ci_a), repr(r.eu_b), _fmt_ci(r.ci_b),
            r.verdict, repr(r.wrong_freq),
            json.dumps({str(k): v for k, v in sorted(r.abort_steps.items())}, sort_keys=True),
            r.u, r.N, r.deviator or "", r.trials,
        ])
    return buf.getvalue()


def csv_to_table(text: str) -> list[dict]:
    """Parse a CSV written by :func:`rows_to_csv` back into typed columns."""
    out = []
    for rec in csv.DictReader(io.StringIO(text)):
        out.append({
            "profile": rec["profile"],
            "E[U_A]": float(rec["E[U_A]"]),
            "CI_A": tuple(json.loads(rec["CI_A"])),
            "E[U_B]": float(rec["E[U_B]"]),
            "CI_B": tuple(json.loads(rec["CI_B"])),
            "verdict": rec["verdict"],
            "wrong_freq": float(rec["wrong_freq"]),
            "abort_step_histogram": {int(k): v for k, v in json.loads(rec["abort_step_histogram"]).items()},
            "u": rec["u"],
            "N": int(rec["N"]),
            "deviator": rec["deviator"] or None,
            "trials": int(rec["trials"]),
        })
    return out


def rows_to_jsonl(rows: Sequence[ProfileRow]) -> str:
    return "".join(json.dumps(r.to_record(), sort_keys=True) + "\n" for r in rows)


def rows_from_jsonl(text: str) -> list[ProfileRow]:
    return [ProfileRow.from_record(json.loads(line)) for line in text.splitlines() if line.strip()]
