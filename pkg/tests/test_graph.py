"""Tests for metric graphs, star charts and glued test functions."""

import json
import math
from fractions import Fraction

import pytest

from graphflow_engine.core import ConfigError, LatticeError
from graphflow_engine.graph import (
    GraphPoint,
    MetricGraph,
    StarCoordinate,
    check_test_function,
    cutoff,
    evaluate,
    from_star,
    load_graph,
    make_glued_family,
    point,
    point_from_spec,
    star_chart,
    to_star,
    validate,
    vertex_point,
)
from graphflow_engine.suites import barbell_graph


def _spec() -> dict:
    return {
        "vertices": ["a", "b"],
        "edges": [
            {"id": "in_a", "length": "inf", "from": "inf", "to": "a"},
            {"id": "bridge", "length": 2, "from": "a", "to": "b"},
            {"id": "out_b", "length": "inf", "from": "b", "to": "inf"},
        ],
        "alpha": [
            {"vertex": "a", "edge": "in_a", "value": 0.5},
            {"vertex": "a", "edge": "bridge", "value": 0.5},
            {"vertex": "b", "edge": "bridge", "value": "1/3"},
            {"vertex": "b", "edge": "out_b", "value": "2/3"},
        ],
    }


def test_from_spec_parses_lengths_and_exact_alphas() -> None:
    graph = MetricGraph.from_spec(_spec())

    assert graph.vertices == ("a", "b")
    assert math.isinf(graph.edge("in_a").length)
    assert graph.edge("bridge").length == 2.0
    assert graph.alpha[("b", "out_b")] == Fraction(2, 3)
    assert graph.min_length == 2.0
    assert validate(graph).valid
    assert MetricGraph.from_spec(graph.to_spec()) == graph


def test_missing_alpha_entry_is_named() -> None:
    spec = _spec()
    spec["alpha"] = spec["alpha"][:-1]

    with pytest.raises(ConfigError, match="missing alpha entry for vertex 'b', edge 'out_b'"):
        MetricGraph.from_spec(spec)


def test_load_graph_reports_invalid_json(tmp_path) -> None:
    good = tmp_path / "graph.json"
    good.write_text(json.dumps(_spec()))
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")

    assert load_graph(good).vertices == ("a", "b")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_graph(bad)


def test_validate_reports_alpha_sum_and_connectivity() -> None:
    spec = _spec()
    spec["alpha"][0]["value"] = 0.4
    report = validate(MetricGraph.from_spec(spec))

    assert not report.valid
    assert "alpha sum = 0.9 at a" in report.violations

    split = {
        "vertices": ["a", "b"],
        "edges": [
            {"id": "ea", "length": "inf", "from": "a", "to": "inf"},
            {"id": "eb", "length": "inf", "from": "b", "to": "inf"},
        ],
        "alpha": [
            {"vertex": "a", "edge": "ea", "value": 1},
            {"vertex": "b", "edge": "eb", "value": 1},
        ],
    }
    assert "graph is not connected" in validate(MetricGraph.from_spec(split)).violations


def test_validate_reports_edge_shape_problems() -> None:
    spec = {
        "vertices": ["a"],
        "edges": [
            {"id": "e", "length": 1, "from": "a", "to": "inf"},
            {"id": "f", "length": "inf", "from": "inf", "to": "a"},
        ],
        "alpha": [
            {"vertex": "a", "edge": "e", "value": 0.5},
            {"vertex": "a", "edge": "f", "value": 0.5},
        ],
    }

    report = validate(MetricGraph.from_spec(spec))

    assert "edge e: infinity endpoint on a finite edge" in report.violations
    assert report.to_dict()["valid"] is False


def test_star_chart_lists_outgoing_edges_first() -> None:
    graph = barbell_graph()

    chart = star_chart(graph, "a")

    assert [(ce.edge_id, ce.sign) for ce in chart.edges] == [
        ("out_a", 1),
        ("bridge", 1),
        ("in_a", -1),
    ]
    assert chart.alpha_plus == Fraction(7, 10)
    assert chart.beta == pytest.approx(0.4)
    assert [(ce.edge_id, ce.sign) for ce in star_chart(graph, "b").edges] == [
        ("out_b", 1),
        ("bridge", -1),
    ]


def test_star_coordinates_round_trip() -> None:
    graph = barbell_graph()
    chart_a = star_chart(graph, "a")
    chart_b = star_chart(graph, "b")

    inbound = GraphPoint(edge="in_a", r=-0.5)
    assert to_star(chart_a, inbound) == StarCoordinate(edge="in_a", signed=-0.5)
    assert from_star(chart_a, to_star(chart_a, inbound)) == inbound

    near_b = GraphPoint(edge="bridge", r=1.5)
    assert to_star(chart_b, near_b) == StarCoordinate(edge="bridge", signed=-0.5)
    assert from_star(chart_b, StarCoordinate(edge="bridge", signed=-0.5)) == near_b
    assert from_star(chart_a, StarCoordinate(edge=None, signed=0.0)) == vertex_point("a")


def test_from_star_rejects_points_outside_the_chart() -> None:
    chart = star_chart(barbell_graph(), "a")

    with pytest.raises(LatticeError):
        from_star(chart, StarCoordinate(edge="bridge", signed=2.0))
    with pytest.raises(LatticeError):
        from_star(chart, StarCoordinate(edge="bridge", signed=-0.5))
    with pytest.raises(LatticeError):
        to_star(chart, vertex_point("b"))


def test_points_at_edge_ends_are_vertices() -> None:
    graph = barbell_graph()

    assert point(graph, "bridge", 2.0) == vertex_point("b")
    assert point(graph, "in_a", 0.0) == vertex_point("a")
    assert point(graph, "bridge", 0.5) == GraphPoint(edge="bridge", r=0.5)
    with pytest.raises(LatticeError):
        point(graph, "bridge", 3.0)
    assert point_from_spec(graph, {"edge": "out_a", "r": 1.25}) == GraphPoint(edge="out_a", r=1.25)
    with pytest.raises(ConfigError):
        point_from_spec(graph, {"vertex": "z"})


def test_cutoff_is_flat_then_vanishes() -> None:
    assert cutoff(0.25) == (1.0, 0.0, 0.0)
    assert cutoff(1.5) == (0.0, 0.0, 0.0)
    value, slope, _ = cutoff(0.75)
    assert value == pytest.approx(0.5)
    assert slope < 0.0


def test_glued_family_is_admissible() -> None:
    graph = barbell_graph()

    family = make_glued_family(graph, 20)

    assert family[0].name == "constant"
    assert any(f.name.startswith("glued:a:") for f in family)
    assert any(f.name == "bump:bridge" for f in family)
    for f in family:
        assert check_test_function(graph, f) == []
    assert len(make_glued_family(graph, 6)) == 6


def test_evaluate_at_vertices_and_edges() -> None:
    graph = barbell_graph()
    bump = next(f for f in make_glued_family(graph, 20) if f.name == "bump:bridge")

    assert evaluate(bump, vertex_point("a")) == (0.0, 0.0, 0.0)
    value, slope, curvature = evaluate(bump, GraphPoint(edge="bridge", r=1.0))
    assert value == 0.0
    assert slope == 0.0
    assert curvature == 2.0


def test_small_glued_families_still_separate_edges() -> None:
    graph = barbell_graph()

    family = make_glued_family(graph, 2)

    assert [f.name for f in family] == ["constant"] + [f"bump:{e.id}" for e in graph.edges]
    assert make_glued_family(graph, 6)[5].name.startswith("glued:a:")
