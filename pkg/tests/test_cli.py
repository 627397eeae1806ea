"""Tests for the graphflow command line: exit codes, CSV layout and determinism."""

import json
import re

import pytest

from graphflow_engine.cli import (
    EXIT_CONFIG,
    EXIT_INVARIANT,
    EXIT_OK,
    build_parser,
    config_hash,
    main,
)
from graphflow_engine.suites import barbell_graph


def _star_graph() -> dict:
    return {
        "vertices": ["o"],
        "edges": [
            {"id": "e1", "length": "inf", "from": "o", "to": "inf"},
            {"id": "e2", "length": "inf", "from": "o", "to": "inf"},
            {"id": "e3", "length": "inf", "from": "inf", "to": "o"},
        ],
        "alpha": [
            {"vertex": "o", "edge": "e1", "value": 0.3},
            {"vertex": "o", "edge": "e2", "value": 0.3},
            {"vertex": "o", "edge": "e3", "value": 0.4},
        ],
    }


def _write(path, payload) -> str:
    path.write_text(json.dumps(payload))
    return str(path)


def _graph_experiment(tmp_path) -> str:
    return _write(
        tmp_path / "graph_run.json",
        {
            "graph": _star_graph(),
            "delta": 0.125,
            "noise": {"seed": 0, "horizon": [0, 1]},
            "seeds": {"first": 0, "count": 3},
            "queries": [
                {"s": 0, "t": 0.5, "x": {"vertex": "o"}},
                {"s": "1/4", "t": 1, "x": {"edge": "e1", "r": 0.5}},
            ],
        },
    )


def test_config_hash_matches_git_blob_ids() -> None:
    assert config_hash(b"") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391"
    assert config_hash(b"hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a"


def test_parser_shorthands_select_their_suite() -> None:
    parser = build_parser()

    assert parser.parse_args(["sbm-verify"]).suite == "sbm"
    assert parser.parse_args(["graph-verify", "--n", "10"]).n == 10
    assert parser.parse_args(["verify"]).suite == "all"
    with pytest.raises(SystemExit):
        parser.parse_args(["verify", "--suite", "bogus"])


def test_validate_accepts_a_good_graph(tmp_path, capsys) -> None:
    path = _write(tmp_path / "graph.json", _star_graph())

    assert main(["validate", path]) == EXIT_OK

    report = json.loads(capsys.readouterr().out)
    assert report["graph"]["valid"] is True
    assert report["graph"]["L"] == "inf"


def test_validate_rejects_missing_alpha(tmp_path) -> None:
    spec = _star_graph()
    spec["alpha"] = spec["alpha"][:2]
    path = _write(tmp_path / "graph.json", spec)

    assert main(["validate", path]) == EXIT_CONFIG


def test_validate_reports_alpha_sum(tmp_path, capsys) -> None:
    spec = _star_graph()
    spec["alpha"][2]["value"] = 0.3
    path = _write(tmp_path / "graph.json", spec)

    assert main(["validate", path]) == EXIT_INVARIANT

    report = json.loads(capsys.readouterr().out)
    assert "alpha sum = 0.9 at o" in report["graph"]["violations"]


def test_validate_checks_labeler_moments(tmp_path, capsys) -> None:
    experiment = {
        "graph": _star_graph(),
        "labelers": {
            "o": {"mode": "kernel", "m_plus": [{"point": [1, 0], "weight": 1}], "m_minus": []}
        },
    }
    path = _write(tmp_path / "experiment.json", experiment)

    assert main(["validate", path]) == EXIT_INVARIANT

    report = json.loads(capsys.readouterr().out)
    assert report["labelers"]["o"]


def test_missing_config_file_is_a_config_error(tmp_path) -> None:
    assert main(["validate", str(tmp_path / "absent.json")]) == EXIT_CONFIG


def test_noise_audit_lists_every_cell(tmp_path) -> None:
    config = _write(tmp_path / "noise.json", {"seed": 3, "n_max": 6, "horizon": [0, 1]})
    out = tmp_path / "audit.csv"

    assert main(["noise-audit", config, "--level", "2", "--output", str(out)]) == EXIT_OK

    lines = out.read_text().splitlines()
    assert lines[0] == "s,t,channel,increment"
    assert [line.split(",")[:3] for line in lines[1:5]] == [
        ["0.0", "0.25", "W"],
        ["0.25", "0.5", "W"],
        ["0.5", "0.75", "W"],
        ["0.75", "1.0", "W"],
    ]
    assert lines[-1].startswith("# seed=3 level=2 config_hash=")


def test_noise_audit_rejects_levels_beyond_n_max(tmp_path) -> None:
    config = _write(tmp_path / "noise.json", {"seed": 3, "n_max": 2, "horizon": [0, 1]})

    assert main(["noise-audit", config, "--level", "5"]) == EXIT_CONFIG


def test_simulate_graph_is_byte_identical_across_runs(tmp_path) -> None:
    config = _graph_experiment(tmp_path)
    first, second = tmp_path / "a.csv", tmp_path / "b.csv"

    assert main(["simulate-graph", config, "--output", str(first)]) == EXIT_OK
    assert main(["simulate-graph", config, "--output", str(second)]) == EXIT_OK

    assert first.read_bytes() == second.read_bytes()
    lines = first.read_text().splitlines()
    assert lines[0] == "seed,s,t,atom_edge_or_vertex,atom_coord,weight"
    digest = config_hash((tmp_path / "graph_run.json").read_bytes())
    assert lines[-1] == f"# seed=0 n=3 delta=0.125 config_hash={digest}"
    assert {line.split(",")[0] for line in lines[1:-1]} == {"0", "1", "2"}


def test_simulate_graph_weights_sum_to_one(tmp_path) -> None:
    config = _graph_experiment(tmp_path)
    out = tmp_path / "k.csv"

    main(["simulate-graph", config, "--output", str(out)])

    totals: dict[tuple[str, str, str], float] = {}
    for line in out.read_text().splitlines()[1:-1]:
        seed, s, t, _, _, weight = line.split(",")
        num, _, den = weight.partition("/")
        totals[(seed, s, t)] = totals.get((seed, s, t), 0.0) + int(num) / int(den or 1)
    assert len(totals) == 6
    assert all(total == pytest.approx(1.0) for total in totals.values())


def test_simulate_graph_rejects_a_coarse_lattice(tmp_path) -> None:
    config = _write(
        tmp_path / "coarse.json",
        {
            "graph": barbell_graph().to_spec(),
            "delta": 0.5,
            "queries": [{"s": 0, "t": 1, "x": {"vertex": "a"}}],
        },
    )

    assert main(["simulate-graph", config]) == EXIT_CONFIG


def test_simulate_sbm_groups_starts(tmp_path) -> None:
    config = _write(
        tmp_path / "sbm.json",
        {
            "beta": 0.5,
            "delta": 0.125,
            "noise": {"horizon": [0, 1]},
            "seeds": {"first": 0, "count": 2},
            "queries": [{"s": 0, "t": 1, "starts": [-0.25, 0, 0.25]}],
        },
    )
    out = tmp_path / "sbm.csv"

    assert main(["simulate-sbm", config, "--output", str(out)]) == EXIT_OK

    lines = out.read_text().splitlines()
    assert lines[0] == "seed,beta,s,x,t,Y,L,coalesced_with"
    assert len(lines) == 1 + 6 + 1
    assert re.match(r"# seed=0 n=2 delta=0\.125 config_hash=[0-9a-f]{40}$", lines[-1])


def test_simulate_sbm_requires_beta(tmp_path) -> None:
    config = _write(
        tmp_path / "sbm.json",
        {"delta": 0.125, "queries": [{"s": 0, "t": 1, "x": 0}]},
    )

    assert main(["simulate-sbm", config]) == EXIT_CONFIG


def test_simulate_star_emits_atoms(tmp_path) -> None:
    config = _write(
        tmp_path / "star.json",
        {
            "star": {"alpha": [0.3, 0.3, 0.4], "n_plus": 2, "mode": "wiener"},
            "delta": 0.125,
            "seeds": {"first": 4, "count": 2},
            "queries": [
                {"s": 0, "t": 1, "x": "center"},
                {"s": 0, "t": 1, "x": {"edge": 3, "r": 0.5}},
            ],
        },
    )
    out = tmp_path / "star.csv"

    assert main(["simulate-star", config, "--output", str(out)]) == EXIT_OK

    lines = out.read_text().splitlines()
    assert lines[0] == "seed,s,x_edge,x_r,t,atom_edge,atom_r,weight"
    assert {line.split(",")[0] for line in lines[1:-1]} == {"4", "5"}
    assert lines[-1].startswith("# seed=4 n=2 delta=0.125 ")


def test_verify_noise_suite_writes_a_json_report(tmp_path) -> None:
    out = tmp_path / "report.json"

    code = main(["verify", "--suite", "noise", "--n", "100", "--output", str(out)])

    report = json.loads(out.read_text())
    assert code in (0, 1)
    assert report["suite"] == "noise"
    assert report["request_id"] == "noise-0"
    assert [r["test_id"] for r in report["reports"]] == [
        "noise_variance",
        "noise_variance.control",
        "keyed_uniform",
    ]
    assert (code == 0) == report["passed"]


def test_simulate_graph_exits_3_on_a_broken_invariant(tmp_path) -> None:
    spec = _star_graph()
    spec["alpha"][2]["value"] = 0.3
    config = _write(
        tmp_path / "bad_alpha.json",
        {"graph": spec, "delta": 0.125, "queries": [{"s": 0, "t": 1, "x": {"vertex": "o"}}]},
    )

    assert main(["simulate-graph", config]) == EXIT_INVARIANT


def test_verify_persists_the_suite_state(tmp_path) -> None:
    state_file = tmp_path / "state" / "noise.json"

    code = main(["verify", "--suite", "noise", "--n", "50", "--state-file", str(state_file)])

    saved = json.loads(state_file.read_text())
    assert saved["version"] >= 1
    assert saved["value"]["passed"] == (code == 0)
    assert len(saved["value"]["reports"]) == 3
