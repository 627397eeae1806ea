"""Tests for global flows of kernels: K0, K^n, K, charts, restriction and barrier flows."""

import math
from fractions import Fraction

import pytest

from graphflow_engine.core import ConfigError, LatticeError
from graphflow_engine.graph import Edge, GraphPoint, MetricGraph, star_chart, vertex_point
from graphflow_engine.graphflow import (
    AtomMeasure,
    GlobalFlowConfig,
    assemble,
    barrier_flow,
    chart_identity,
    compose,
    dyadic_mesh,
    graph_point,
    k,
    k0,
    kn,
    restrict_to_star,
    rho,
    star_point,
    tau,
    vertex_star_spec,
)
from graphflow_engine.noise import NoiseField
from graphflow_engine.starflow import StarPoint
from graphflow_engine.suites import (
    barbell_config,
    barbell_graph,
    barbell_starts,
    walsh_kernel_labeler,
    walsh_spec,
)
from graphflow_engine.verify import star_config

DELTA = 2**-3
STAR_STARTS = (vertex_point("o"), GraphPoint(edge="e1", r=0.5), GraphPoint(edge="e3", r=-0.25))


def _chain_config(seed: int) -> GlobalFlowConfig:
    inf = math.inf
    graph = MetricGraph(
        vertices=("a", "b"),
        edges=(
            Edge("in_a", inf, "inf", "a"),
            Edge("mid", 1.0, "a", "b"),
            Edge("out_b", inf, "b", "inf"),
        ),
        alpha={
            ("a", "in_a"): Fraction(2, 5),
            ("a", "mid"): Fraction(3, 5),
            ("b", "mid"): Fraction(1, 2),
            ("b", "out_b"): Fraction(1, 2),
        },
    )
    noise = NoiseField(seed=seed, n_max=6, horizon=(0, 1))
    return GlobalFlowConfig(graph=graph, labelers={}, noise=noise, delta=DELTA)


def test_atom_measure_merges_and_sorts() -> None:
    p, q = GraphPoint(edge="e1", r=0.5), vertex_point("o")

    measure = AtomMeasure.merged([(p, Fraction(1, 4)), (q, Fraction(1, 2)), (p, Fraction(1, 4))])

    assert measure.atoms == ((q, Fraction(1, 2)), (p, Fraction(1, 2)))
    assert measure.mass == 1
    assert measure.rows() == [("o", 0.0, "1/2"), ("e1", 0.5, "1/2")]


def test_dyadic_mesh() -> None:
    assert dyadic_mesh(Fraction(0), Fraction(1, 2), 2) == [0, Fraction(1, 4), Fraction(1, 2)]
    mesh = dyadic_mesh(Fraction(1, 8), Fraction(3, 4), 1)
    assert mesh == [Fraction(1, 8), Fraction(1, 2), Fraction(3, 4)]
    assert dyadic_mesh(Fraction(1, 2), Fraction(1, 2), 3) == [Fraction(1, 2)]


def test_config_rejects_coarse_lattices() -> None:
    noise = NoiseField(seed=0, n_max=4, horizon=(0, 1))
    with pytest.raises(ConfigError, match="exceeds L/8"):
        GlobalFlowConfig(graph=barbell_graph(), labelers={}, noise=noise, delta=0.5)
    with pytest.raises(ConfigError, match="below the lattice level"):
        GlobalFlowConfig(graph=barbell_graph(), labelers={}, noise=noise, delta=DELTA)


def test_config_from_spec() -> None:
    spec = {
        "graph": barbell_graph().to_spec(),
        "noise": {"seed": 4, "n_max": 6, "horizon": [0, 1]},
        "delta": DELTA,
        "labelers": {"a": {"mode": "wiener"}},
    }

    config = GlobalFlowConfig.from_spec(spec)

    assert config.level == 6
    assert config.star("a").labeler.mode == "wiener"
    assert config.star("b").labeler.mode == "mapping"
    assert config.gate_length == 2.0 - DELTA
    with pytest.raises(ConfigError):
        GlobalFlowConfig.from_spec({"graph": barbell_graph().to_spec(), "delta": DELTA})


def test_vertex_star_spec_follows_the_chart() -> None:
    spec = vertex_star_spec(barbell_graph(), "a")

    assert spec.edge_names == ("out_a", "bridge", "in_a")
    assert spec.n_plus == 2
    assert spec.alpha == (Fraction(3, 10), Fraction(2, 5), Fraction(3, 10))


def test_star_points_round_trip_through_the_chart() -> None:
    chart = star_chart(barbell_graph(), "a")

    for p in (vertex_point("a"), GraphPoint(edge="bridge", r=1.0), GraphPoint(edge="in_a", r=-0.5)):
        assert graph_point(chart, star_point(chart, p)) == p
    assert star_point(chart, GraphPoint(edge="in_a", r=-0.5)) == StarPoint(edge=3, radius=0.5)


@pytest.mark.parametrize("seed", range(4))
def test_kernels_are_probability_measures(seed: int) -> None:
    config = barbell_config(seed=seed, delta=DELTA)

    for x in (vertex_point("a"), GraphPoint(edge="bridge", r=1.0), GraphPoint(edge="in_a", r=-0.5)):
        assert k0(config, 0, Fraction(1, 4), x).mass == 1
        assert kn(config, 0, 1, x, 3).mass == 1
        measure, level = assemble(config, 0, 1, x)
        assert measure.mass == 1
        assert level is None or 0 <= level <= config.level


def test_k_is_the_identity_over_an_empty_interval() -> None:
    config = barbell_config(seed=0, delta=DELTA)
    x = GraphPoint(edge="bridge", r=0.5)

    assert k(config, Fraction(1, 2), Fraction(1, 2), x) == AtomMeasure.dirac(x)
    assert k0(config, Fraction(1, 2), Fraction(1, 2), x) == AtomMeasure.dirac(x)


@pytest.mark.parametrize("seed", range(3))
def test_flow_property_on_a_star(seed: int) -> None:
    config = star_config(walsh_spec(), walsh_kernel_labeler(), seed=seed, delta=DELTA)

    for x in STAR_STARTS:
        direct = k(config, 0, 1, x)
        composed = compose(config, k(config, 0, Fraction(1, 2), x), Fraction(1, 2), 1)
        assert composed == direct


@pytest.mark.parametrize("seed", range(3))
def test_flow_property_on_the_barbell(seed: int) -> None:
    config = barbell_config(seed=seed, delta=DELTA)

    for x in (vertex_point("a"), GraphPoint(edge="bridge", r=1.0)):
        direct = k(config, Fraction(1, 4), 1, x)
        composed = compose(config, k(config, Fraction(1, 4), Fraction(1, 2), x), Fraction(1, 2), 1)
        assert composed == direct


def test_tau_of_an_edge_point() -> None:
    config = barbell_config(seed=2, delta=DELTA)

    hit = tau(config, 0, GraphPoint(edge="bridge", r=1.0))

    assert math.isinf(hit) or 0 < hit <= 1
    assert tau(config, Fraction(1, 4), vertex_point("a")) == Fraction(1, 4)


@pytest.mark.parametrize("seed", range(3))
def test_restriction_rebuilds_the_star_kernel(seed: int) -> None:
    config = barbell_config(seed=seed, delta=DELTA)
    star = config.star("a")

    for s, p, t in [
        (Fraction(0), StarPoint.center(), Fraction(1, 2)),
        (Fraction(1, 4), StarPoint(edge=3, radius=0.5), Fraction(1)),
    ]:
        assert restrict_to_star(config, "a", s, p, t) == star.kernel(s, p, t)


@pytest.mark.parametrize("seed", range(3))
def test_chart_identity_before_the_exit_time(seed: int) -> None:
    config = barbell_config(seed=seed, delta=DELTA)
    x = vertex_point("a")

    exit_time = rho(config, 0, x, "a")
    for t in (Fraction(1, 8), Fraction(1, 2)):
        if t < exit_time:
            assert chart_identity(config, 0, x, "a", t).holds


@pytest.mark.parametrize("seed", range(6))
def test_barrier_flow_matches_k_on_a_chain(seed: int) -> None:
    config = _chain_config(seed)

    for x in (vertex_point("a"), GraphPoint(edge="mid", r=0.5), GraphPoint(edge="in_a", r=-0.25)):
        measure, level = assemble(config, 0, 1, x)
        if level is None:
            continue
        assert measure.support() == (barrier_flow(config, 0, x, 1),)


def test_barrier_flow_needs_a_chain() -> None:
    config = barbell_config(seed=0, delta=DELTA)

    with pytest.raises(ConfigError, match="barrier flows need at most 2"):
        barrier_flow(config, 0, vertex_point("a"), 1)


@pytest.mark.parametrize("seed", range(4))
def test_kn_is_constant_from_the_resolving_level_up(seed: int) -> None:
    config = barbell_config(seed=seed, delta=DELTA)
    s, t = Fraction(0), Fraction(1)

    n = config.min_level(s, t)
    if n is None:
        pytest.skip("no level resolves [0, 1] for this seed")
    for x in (vertex_point("a"), GraphPoint(edge="bridge", r=1.0)):
        base = kn(config, s, t, x, n)
        for m in range(n + 1, config.level + 1):
            assert kn(config, s, t, x, m) == base
        assert k(config, s, t, x) == base


@pytest.mark.parametrize("seed", range(3))
def test_rho_is_a_grid_time_after_the_first_vertex_hit(seed: int) -> None:
    config = barbell_config(seed=seed, delta=DELTA)
    x = GraphPoint(edge="bridge", r=1.0)

    exit_time = rho(config, 0, x, "a")

    assert exit_time >= tau(config, 0, x)
    if not math.isinf(exit_time):
        assert 0 < exit_time <= 1
        assert (exit_time / config.time_step).denominator == 1


def test_rho_is_infinite_far_out_on_an_edge_of_the_star() -> None:
    config = barbell_config(seed=0, delta=DELTA)

    # 64 steps of 1/8 cannot cover a distance of 20
    assert rho(config, 0, GraphPoint(edge="out_a", r=20.0), "a") == math.inf
    with pytest.raises(LatticeError):
        rho(config, 0, GraphPoint(edge="out_b", r=1.0), "a")


@pytest.mark.parametrize("seed", range(3))
def test_flow_property_with_one_channel_per_edge(seed: int) -> None:
    graph = barbell_graph()
    noise = NoiseField.for_edges(
        seed=seed,
        n_max=6,
        horizon=(0, 1),
        edge_ids=[e.id for e in graph.edges],
        channels="per-edge",
    )
    config = GlobalFlowConfig(graph=graph, labelers={}, noise=noise, delta=DELTA)

    assert len(config.noise.channels) == 4
    for x in barbell_starts():
        direct = k(config, Fraction(1, 4), 1, x)
        half = k(config, Fraction(1, 4), Fraction(1, 2), x)
        assert direct.mass == 1
        assert compose(config, half, Fraction(1, 2), 1) == direct
