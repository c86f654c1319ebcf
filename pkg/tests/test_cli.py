import json
import shutil

import pytest

from qpsi import game
from qpsi.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, main
from qpsi.transcript import read_transcripts


def write_config(tmp_path, **values):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(values))
    return path


def run_cli(*args):
    return main([str(a) for a in args])


def snapshot(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}


@pytest.mark.parametrize("command", ["run", "nash", "bounds", "membership"])
def test_same_seed_same_bytes(tmp_path, command):
    extra = {"k": 3, "Y": [3, 5, 9]} if command == "membership" else {}
    if command == "nash":
        extra = {"deviations": ["alice=extra_elements:count=1", "bob=wrong_pj"]}
    cfg = write_config(tmp_path, N=16, n=3, m=3, u=1, **extra)
    out = tmp_path / "out"
    trials = 1000 if command == "nash" else 20
    assert run_cli(command, "--config", cfg, "--seed", 42, "--trials", trials, "--out", out) == EXIT_OK
    first = snapshot(out)
    shutil.rmtree(out)
    assert run_cli(command, "--config", cfg, "--seed", 42, "--trials", trials, "--out", out) == EXIT_OK
    assert snapshot(out) == first
    assert "config.json" in first


def test_l_below_two_n(tmp_path, capsys):
    cfg = write_config(tmp_path, N=16, n=4, m=4, l=7)
    assert run_cli("run", "--config", cfg, "--out", tmp_path / "o") == EXIT_CONFIG
    assert "l >= 2n" in capsys.readouterr().err


@pytest.mark.parametrize(
    "values",
    [
        {"N": 8, "n": 4, "m": 4},
        {"theta": 1.0},
        {"u_tn": 0.1},
        {"colour": "blue"},
        {"n": "five"},
        {"bob": "teleport"},
        {"u": 9},
    ],
    ids=["small-N", "theta", "utility-order", "unknown-key", "type", "strategy", "u-range"],
)
def test_config_errors(tmp_path, values):
    cfg = write_config(tmp_path, **values)
    assert run_cli("run", "--config", cfg, "--out", tmp_path / "o") == EXIT_CONFIG


def test_nash_zero_trials(tmp_path):
    cfg = write_config(tmp_path, N=16, n=2, m=2)
    assert run_cli("nash", "--config", cfg, "--trials", 0, "--out", tmp_path / "o") == EXIT_CONFIG


def test_malformed_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{N: 3")
    assert run_cli("run", "--config", path, "--out", tmp_path / "o") == EXIT_CONFIG


def test_missing_config_file(tmp_path):
    assert run_cli("run", "--config", tmp_path / "nope.json") == EXIT_IO


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert run_cli("bounds", "--out", blocker / "sub") == EXIT_IO


def test_honest_run_summary(tmp_path, capsys):
    cfg = write_config(tmp_path, N=16, n=4, m=4, u=2, l=16)
    out = tmp_path / "o"
    assert run_cli("run", "--config", cfg, "--trials", 5, "--out", out) == EXIT_OK
    text = capsys.readouterr().out
    assert "qubit units = 4n+2l = 48" in text
    summaries = [json.loads(line) for line in (out / "summary.jsonl").read_text().splitlines()]
    assert all(s["qubit_units"] == 48 and s["classical_bits"] == 32 for s in summaries)
    assert all(s["labels"] == ["T", "T"] for s in summaries)
    runs = read_transcripts(out / "transcripts.jsonl")
    assert (out / "transcripts.jsonl").read_text() == "".join(runs[i].to_jsonl() for i in range(5))


def test_bounds_output(tmp_path, capsys):
    cfg = write_config(tmp_path, N=16, n=4, m=4, u=2, l=16)
    out = tmp_path / "o"
    assert run_cli("bounds", "--config", cfg, "--out", out) == EXIT_OK
    text = capsys.readouterr().out
    assert "0.85355" in text and "0.25000" in text
    assert "48 register-units, 32 classical bits" in text
    table = json.loads((out / "bounds.json").read_text())
    for row in table["serfling"]:
        if row["half_sample_form"] is not None:
            assert row["half_sample_form"] == pytest.approx(
                game.serfling_half_sample_bound(row["delta"], row["n"]), abs=1e-15
            )


def test_nash_files_round_trip(tmp_path):
    cfg = write_config(tmp_path, N=16, n=2, m=2, u=[0, 1], deviations=["alice=wrong_announce:rate=1"])
    out = tmp_path / "o"
    assert run_cli("nash", "--config", cfg, "--trials", 1000, "--out", out) == EXIT_OK
    rows = game.rows_from_jsonl((out / "report.jsonl").read_text())
    assert len(rows) == 4
    assert game.rows_to_jsonl(rows) == (out / "report.jsonl").read_text()
    assert game.rows_to_csv(rows) == (out / "report.csv").read_text()
    table = game.csv_to_table((out / "report.csv").read_text())
    assert [t["verdict"] for t in table] == [r.verdict for r in rows]
    assert json.loads((out / "config.json").read_text())["u"] == [0, 1]


def test_nash_sweep_flips(tmp_path, capsys):
    # n=2, m=6, u=0: 2(m-u)=12 against N-1-n, so N=13 sits past the boundary and N=31 well inside
    cfg = write_config(tmp_path, N=31, n=2, m=6, sweep_N=[13, 31], deviations=["alice=wrong_announce:rate=1"])
    out = tmp_path / "o"
    assert run_cli("nash", "--config", cfg, "--trials", 4000, "--out", out) == EXIT_OK
    sweep = [json.loads(line) for line in (out / "sweep.jsonl").read_text().splitlines()]
    assert [(s["N"], s["verdict"], s["eq1_holds"]) for s in sweep] == [(13, "fails", False), (31, "holds", True)]


def test_membership_outputs(tmp_path):
    cfg = write_config(tmp_path, N=16, k=9, Y=[3, 9, 12], l=8)
    out = tmp_path / "o"
    assert run_cli("membership", "--config", cfg, "--trials", 50, "--out", out) == EXIT_OK
    summary = json.loads((out / "membership_summary.json").read_text())
    assert summary["correct"] == 50
    assert len(read_transcripts(out / "transcripts.jsonl")) == 50


def test_membership_needs_k(tmp_path):
    cfg = write_config(tmp_path, N=16, Y=[3, 9])
    assert run_cli("membership", "--config", cfg, "--out", tmp_path / "o") == EXIT_CONFIG


def test_membership_rejects_non_channel_attack(tmp_path):
    cfg = write_config(tmp_path, N=16, k=3, Y=[3, 9], bob="wrong_pj")
    assert run_cli("membership", "--config", cfg, "--out", tmp_path / "o") == EXIT_CONFIG


def test_flags_override_config(tmp_path):
    cfg = write_config(tmp_path, N=16, n=2, m=2, seed=1, trials=3)
    out = tmp_path / "o"
    assert run_cli("run", "--config", cfg, "--seed", 7, "--trials", 2, "--out", out) == EXIT_OK
    snap = json.loads((out / "config.json").read_text())
    assert (snap["seed"], snap["trials"]) == (7, 2)
