"""
Oriented metric graphs, star-neighborhood charts and glued test functions.

A graph is a finite set of vertices joined by edges of length L_i in (0, inf].
Every edge i carries an orientation: coordinates run from its start vertex g_i
to its end vertex d_i, so J_i = [0, L_i] for finite edges, [0, inf) for an
edge leaving a vertex toward infinity, and (-inf, 0] for an edge arriving at a
vertex from infinity. Each vertex v carries transmission parameters alpha^i_v
over its incident edges summing to one.

The chart at v maps the neighborhood G_v (v plus its incident edges) onto a
star: outgoing edges get positive signed coordinates, incoming edges negative.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Mapping

import networkx as nx

from .core import ConfigError, LatticeError

logger = logging.getLogger(__name__)

INFINITY = "inf"
ALPHA_TOLERANCE = 1e-12


def _as_fraction(value: Any) -> Fraction:
    """Exact rational from JSON text: decimals keep their decimal meaning, "a/b" strings parse."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise ConfigError(f"alpha must be a number, got {value!r}")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        return Fraction(repr(value))
    if isinstance(value, str):
        try:
            return Fraction(value)
        except ValueError as exc:
            raise ConfigError(f"alpha {value!r} is not a rational number") from exc
    raise ConfigError(f"alpha must be a number, got {value!r}")


def _as_length(value: Any) -> float:
    if value == INFINITY or value == "infinity":
        return math.inf
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"edge length must be a number or 'inf', got {value!r}")
    return float(value)


@dataclass(frozen=True)
class Edge:
    """One oriented edge; start/end are vertex ids or INFINITY."""

    id: str
    length: float
    start: str
    end: str

    @property
    def lo(self) -> float:
        """Lower end of the coordinate interval J_i."""
        return -math.inf if self.start == INFINITY else 0.0

    @property
    def hi(self) -> float:
        """Upper end of J_i."""
        if self.start == INFINITY:
            return 0.0
        return self.length

    def vertex_at(self, coordinate: float) -> str | None:
        """Vertex sitting at a coordinate of this edge, if any."""
        if coordinate == self.lo and self.start != INFINITY:
            return self.start
        if coordinate == self.hi and self.end != INFINITY:
            return self.end
        return None


@dataclass(frozen=True)
class MetricGraph:
    """Vertices, oriented edges and transmission parameters alpha[(vertex, edge)]."""

    vertices: tuple[str, ...]
    edges: tuple[Edge, ...]
    alpha: Mapping[tuple[str, str], Fraction]
    _edge_index: dict[str, Edge] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self) -> None:
        self._edge_index.update({edge.id: edge for edge in self.edges})

    def edge(self, edge_id: str) -> Edge:
        try:
            return self._edge_index[edge_id]
        except KeyError as exc:
            raise ConfigError(f"unknown edge {edge_id!r}") from exc

    def incident(self, vertex: str) -> tuple[Edge, ...]:
        """Edges with vertex as start or end, in graph order."""
        return tuple(e for e in self.edges if vertex in (e.start, e.end))

    @property
    def min_length(self) -> float:
        """The constant L = min_i L_i (inf when every edge is infinite)."""
        return min((e.length for e in self.edges), default=math.inf)

    def to_networkx(self) -> nx.MultiGraph:
        g = nx.MultiGraph()
        g.add_nodes_from(self.vertices)
        for e in self.edges:
            if e.start != INFINITY and e.end != INFINITY:
                g.add_edge(e.start, e.end, key=e.id, length=e.length)
        return g

    @classmethod
    def from_spec(cls, spec: Mapping[str, Any]) -> MetricGraph:
        """Parse the JSON graph format.

        Keys: vertices, edges {id, length, from, to}, alpha {vertex, edge, value}.
        """
        try:
            vertices = tuple(str(v) for v in spec["vertices"])
            edges = tuple(
                Edge(
                    id=str(item["id"]),
                    length=_as_length(item["length"]),
                    start=str(item["from"]),
                    end=str(item["to"]),
                )
                for item in spec["edges"]
            )
            alpha = {
                (str(item["vertex"]), str(item["edge"])): _as_fraction(item["value"])
                for item in spec["alpha"]
            }
        except KeyError as exc:
            raise ConfigError(f"graph spec is missing key {exc.args[0]!r}") from exc
        except TypeError as exc:
            raise ConfigError(f"graph spec has the wrong shape: {exc}") from exc

        for e in edges:
            for v in (e.start, e.end):
                if v != INFINITY and v in vertices and (v, e.id) not in alpha:
                    raise ConfigError(f"missing alpha entry for vertex {v!r}, edge {e.id!r}")
        return cls(vertices=vertices, edges=edges, alpha=alpha)

    def to_spec(self) -> dict[str, Any]:
        return {
            "vertices": list(self.vertices),
            "edges": [
                {
                    "id": e.id,
                    "length": INFINITY if math.isinf(e.length) else e.length,
                    "from": e.start,
                    "to": e.end,
                }
                for e in self.edges
            ],
            "alpha": [
                {"vertex": v, "edge": i, "value": str(a)}
                for (v, i), a in sorted(self.alpha.items())
            ],
        }


def load_graph(path: str | Path) -> MetricGraph:
    """Read a graph specification file."""
    try:
        spec = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return MetricGraph.from_spec(spec)


@dataclass(frozen=True)
class ValidationReport:
    """Invariant violations of a graph; empty means valid."""

    violations: tuple[str, ...]
    min_length: float

    @property
    def valid(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict[str, Any]:
        return {
            "valid": self.valid,
            "violations": list(self.violations),
            "L": INFINITY if math.isinf(self.min_length) else self.min_length,
        }


def validate(graph: MetricGraph) -> ValidationReport:
    """List every invariant violation, naming the offending vertex or edge."""
    problems: list[str] = []
    known = set(graph.vertices)

    if not graph.vertices:
        problems.append("graph has no vertices")
    if INFINITY in known:
        problems.append(f"vertex id {INFINITY!r} is reserved")

    seen: set[str] = set()
    for e in graph.edges:
        if e.id in seen:
            problems.append(f"duplicate edge id {e.id}")
        seen.add(e.id)
        if not e.length > 0:
            problems.append(f"edge {e.id}: length {e.length} is not positive")
        for v in (e.start, e.end):
            if v != INFINITY and v not in known:
                problems.append(f"edge {e.id}: unknown vertex {v}")
        ends_at_infinity = (e.start == INFINITY) + (e.end == INFINITY)
        if ends_at_infinity == 2:
            problems.append(f"edge {e.id}: both endpoints are infinity")
        if ends_at_infinity and not math.isinf(e.length):
            problems.append(f"edge {e.id}: infinity endpoint on a finite edge")
        if not ends_at_infinity and math.isinf(e.length):
            problems.append(f"edge {e.id}: infinite length between two vertices")
        if e.start == e.end and e.start != INFINITY:
            problems.append(f"edge {e.id}: loop at {e.start} is not supported")

    for v in graph.vertices:
        incident = graph.incident(v)
        if not incident:
            problems.append(f"vertex {v}: no incident edges")
            continue
        total = Fraction(0)
        for e in incident:
            a = graph.alpha.get((v, e.id))
            if a is None:
                problems.append(f"vertex {v}: missing alpha for edge {e.id}")
                continue
            if not 0 <= a <= 1:
                problems.append(f"vertex {v}: alpha {float(a)} on edge {e.id} outside [0, 1]")
            total += a
        if abs(total - 1) > ALPHA_TOLERANCE:
            problems.append(f"alpha sum = {float(total):g} at {v}")

    for (v, i) in graph.alpha:
        if v in known and i in seen and v not in (graph.edge(i).start, graph.edge(i).end):
            problems.append(f"vertex {v}: alpha given for non-incident edge {i}")

    if graph.vertices and known.isdisjoint({INFINITY}) and not _has_dangling_edges(graph):
        if not nx.is_connected(graph.to_networkx()):
            problems.append("graph is not connected")

    report = ValidationReport(violations=tuple(problems), min_length=graph.min_length)
    if problems:
        logger.info("graph validation found %d violations", len(problems))
    return report


def _has_dangling_edges(graph: MetricGraph) -> bool:
    """True when an edge names an unknown vertex, which makes the connectivity check meaningless."""
    known = set(graph.vertices) | {INFINITY}
    return any(e.start not in known or e.end not in known for e in graph.edges)


@dataclass(frozen=True)
class GraphPoint:
    """Either a vertex point (vertex set) or an interior point (edge, r)."""

    vertex: str | None = None
    edge: str | None = None
    r: float = 0.0

    @property
    def is_vertex(self) -> bool:
        return self.vertex is not None

    def sort_key(self) -> tuple[int, str, float]:
        if self.vertex is not None:
            return (0, self.vertex, 0.0)
        return (1, self.edge or "", self.r)

    def to_dict(self) -> dict[str, Any]:
        if self.vertex is not None:
            return {"vertex": self.vertex}
        return {"edge": self.edge, "r": self.r}


def vertex_point(v: str) -> GraphPoint:
    return GraphPoint(vertex=v)


def point(graph: MetricGraph, edge_id: str, r: float) -> GraphPoint:
    """Point at coordinate r of an edge; endpoints come back as vertex points."""
    e = graph.edge(edge_id)
    if not e.lo <= r <= e.hi:
        raise LatticeError(f"coordinate {r} outside J of edge {edge_id}")
    v = e.vertex_at(r)
    if v is not None:
        return GraphPoint(vertex=v)
    return GraphPoint(edge=edge_id, r=float(r))


def point_from_spec(graph: MetricGraph, spec: Mapping[str, Any]) -> GraphPoint:
    """Parse {"vertex": v} or {"edge": i, "r": r}."""
    if "vertex" in spec:
        v = str(spec["vertex"])
        if v not in graph.vertices:
            raise ConfigError(f"unknown vertex {v!r}")
        return vertex_point(v)
    try:
        return point(graph, str(spec["edge"]), float(spec["r"]))
    except KeyError as exc:
        raise ConfigError(f"point spec is missing key {exc.args[0]!r}") from exc


@dataclass(frozen=True)
class ChartEdge:
    """One edge seen from the chart center."""

    edge_id: str
    sign: int
    alpha: Fraction
    anchor: float  # coordinate of the center on this edge
    length: float


@dataclass(frozen=True)
class StarChart:
    """Star chart at a vertex: outgoing edges first (sign +1), then incoming (sign -1)."""

    center: str
    edges: tuple[ChartEdge, ...]

    @property
    def alpha_plus(self) -> Fraction:
        return sum((e.alpha for e in self.edges if e.sign > 0), Fraction(0))

    @property
    def beta(self) -> float:
        return float(2 * self.alpha_plus - 1)

    def chart_edge(self, edge_id: str) -> ChartEdge:
        for e in self.edges:
            if e.edge_id == edge_id:
                return e
        raise LatticeError(f"edge {edge_id} is not incident to {self.center}")

    def contains(self, p: GraphPoint) -> bool:
        if p.vertex is not None:
            return p.vertex == self.center
        return any(e.edge_id == p.edge for e in self.edges)


@dataclass(frozen=True)
class StarCoordinate:
    """Signed star coordinate; the center has edge None and value 0."""

    edge: str | None
    signed: float


def star_chart(graph: MetricGraph, v: str) -> StarChart:
    """Chart at v with outgoing edges positive and alpha+ / beta derived."""
    if v not in graph.vertices:
        raise ConfigError(f"unknown vertex {v!r}")
    outgoing: list[ChartEdge] = []
    incoming: list[ChartEdge] = []
    for e in graph.incident(v):
        a = graph.alpha.get((v, e.id), Fraction(0))
        if e.start == v:
            outgoing.append(ChartEdge(e.id, +1, a, e.lo, e.length))
        else:
            incoming.append(ChartEdge(e.id, -1, a, e.hi, e.length))
    return StarChart(center=v, edges=tuple(outgoing + incoming))


def to_star(chart: StarChart, p: GraphPoint) -> StarCoordinate:
    """Signed coordinate of p in the star; |result| = d(p, center)."""
    if p.vertex is not None:
        if p.vertex != chart.center:
            raise LatticeError(f"vertex {p.vertex} is not in the neighborhood of {chart.center}")
        return StarCoordinate(edge=None, signed=0.0)
    if p.edge is None:
        raise LatticeError("graph point has neither vertex nor edge")
    ce = chart.chart_edge(p.edge)
    return StarCoordinate(edge=ce.edge_id, signed=p.r - ce.anchor)


def from_star(chart: StarChart, y: StarCoordinate) -> GraphPoint:
    """Inverse of to_star on its domain of validity: 0 <= |signed| < edge length, sign matching."""
    if y.signed == 0.0 or y.edge is None:
        if y.signed != 0.0:
            raise LatticeError("nonzero star coordinate without an edge")
        return GraphPoint(vertex=chart.center)
    ce = chart.chart_edge(y.edge)
    if (y.signed > 0) != (ce.sign > 0):
        raise LatticeError(f"signed coordinate {y.signed} has the wrong sign for edge {y.edge}")
    if abs(y.signed) >= ce.length:
        raise LatticeError(f"star coordinate {y.signed} leaves the neighborhood of {chart.center}")
    return GraphPoint(edge=ce.edge_id, r=ce.anchor + y.signed)


# -- test functions --------------------------------------------------------


def _smoothstep(x: float) -> tuple[float, float, float]:
    """Quintic smoothstep S and its first two derivatives on [0, 1]."""
    return (
        x * x * x * (10.0 - 15.0 * x + 6.0 * x * x),
        30.0 * x * x * (1.0 - x) * (1.0 - x),
        60.0 * x * (1.0 - x) * (1.0 - 2.0 * x),
    )


def cutoff(u: float) -> tuple[float, float, float]:
    """C2 cutoff chi(u): 1 on [0, 1/2], 0 on [1, inf); returns (chi, chi', chi'')."""
    if u <= 0.5:
        return 1.0, 0.0, 0.0
    if u >= 1.0:
        return 0.0, 0.0, 0.0
    s, ds, dds = _smoothstep(2.0 * u - 1.0)
    return 1.0 - s, -2.0 * ds, -4.0 * dds


@dataclass(frozen=True)
class BumpTerm:
    """(c0 + c1 w + c2 w^2) chi(|w| / radius) with w = r - center."""

    center: float
    coefficients: tuple[float, float, float]
    radius: float

    def evaluate(self, r: float) -> tuple[float, float, float]:
        w = r - self.center
        c0, c1, c2 = self.coefficients
        p = c0 + c1 * w + c2 * w * w
        dp = c1 + 2.0 * c2 * w
        ddp = 2.0 * c2
        chi, dchi, ddchi = cutoff(abs(w) / self.radius)
        if dchi == 0.0 and ddchi == 0.0:
            return p * chi, dp * chi, ddp * chi
        sign = 1.0 if w >= 0 else -1.0
        g1 = sign * dchi / self.radius
        g2 = ddchi / (self.radius * self.radius)
        return p * chi, dp * chi + p * g1, ddp * chi + 2.0 * dp * g1 + p * g2


@dataclass(frozen=True)
class EdgeFunction:
    """f o e_i = base + sum of bump terms."""

    base: float = 0.0
    terms: tuple[BumpTerm, ...] = ()

    def evaluate(self, r: float) -> tuple[float, float, float]:
        value, d1, d2 = self.base, 0.0, 0.0
        for term in self.terms:
            v, dv, ddv = term.evaluate(r)
            value += v
            d1 += dv
            d2 += ddv
        return value, d1, d2


@dataclass(frozen=True)
class TestFunction:
    """A function on the graph given edgewise, with its vertex values."""

    __test__ = False  # not a pytest class

    name: str
    pieces: Mapping[str, EdgeFunction]
    vertex_values: Mapping[str, float]


def evaluate(f: TestFunction, p: GraphPoint) -> tuple[float, float, float]:
    """(f(p), f'(p), f''(p)); derivatives vanish at vertices by convention."""
    if p.vertex is not None:
        return f.vertex_values[p.vertex], 0.0, 0.0
    assert p.edge is not None
    return f.pieces[p.edge].evaluate(p.r)


def gluing_residual(graph: MetricGraph, f: TestFunction, v: str) -> float:
    chart = star_chart(graph, v)
    total_plus = 0.0
    total_minus = 0.0
    for ce in chart.edges:
        _, d1, _ = f.pieces[ce.edge_id].evaluate(ce.anchor)
        if ce.sign > 0:
            total_plus += float(ce.alpha) * d1
        else:
            total_minus += float(ce.alpha) * d1
    return abs(total_plus - total_minus)


def check_test_function(
    graph: MetricGraph, f: TestFunction, tol: float = ALPHA_TOLERANCE
) -> list[str]:
    """Continuity and gluing violations of f; empty means admissible."""
    problems: list[str] = []
    for v in graph.vertices:
        chart = star_chart(graph, v)
        for ce in chart.edges:
            value, _, _ = f.pieces[ce.edge_id].evaluate(ce.anchor)
            if abs(value - f.vertex_values[v]) > tol:
                problems.append(f"{f.name}: discontinuous at {v} along {ce.edge_id}")
        residual = gluing_residual(graph, f, v)
        if residual > tol:
            problems.append(f"{f.name}: gluing residual {residual:g} at {v}")
    return problems


def _pairs(items: list[ChartEdge]) -> Iterable[tuple[ChartEdge, ChartEdge]]:
    for a in range(len(items)):
        for b in range(a + 1, len(items)):
            yield items[a], items[b]


def make_glued_family(graph: MetricGraph, count: int, radius: float = 4.0) -> list[TestFunction]:
    """
    Admissible test functions: the constant 1, one quadratic bump inside each
    edge, then for each vertex and pair of incident edges a function linear
    near the vertex with outward slopes (alpha_j, -alpha_i). The family never
    stops short of the bumps, so it always separates edges.
    """
    zero_vertices = {v: 0.0 for v in graph.vertices}
    family: list[TestFunction] = [
        TestFunction(
            name="constant",
            pieces={e.id: EdgeFunction(base=1.0) for e in graph.edges},
            vertex_values={v: 1.0 for v in graph.vertices},
        )
    ]

    def edge_radius(e: Edge) -> float:
        return min(radius, e.length / 2.0)

    for e in graph.edges:
        rad = edge_radius(e)
        if math.isinf(e.length):
            center = 2.0 * rad if e.start != INFINITY else -2.0 * rad
        else:
            center = e.length / 2.0
        pieces = {other.id: EdgeFunction() for other in graph.edges}
        pieces[e.id] = EdgeFunction(terms=(BumpTerm(center, (0.0, 0.0, 1.0), rad),))
        family.append(
            TestFunction(name=f"bump:{e.id}", pieces=pieces, vertex_values=dict(zero_vertices))
        )

    for v in graph.vertices:
        chart = star_chart(graph, v)
        for ci, cj in _pairs(list(chart.edges)):
            slopes = {ci.edge_id: float(cj.alpha), cj.edge_id: -float(ci.alpha)}
            pieces = {e.id: EdgeFunction() for e in graph.edges}
            for ce in (ci, cj):
                # outward slope D becomes sign * D in the edge coordinate
                d_r = ce.sign * slopes[ce.edge_id]
                term = BumpTerm(
                    center=ce.anchor,
                    coefficients=(0.0, d_r, 0.0),
                    radius=edge_radius(graph.edge(ce.edge_id)),
                )
                pieces[ce.edge_id] = EdgeFunction(terms=(term,))
            family.append(
                TestFunction(
                    name=f"glued:{v}:{ci.edge_id}:{cj.edge_id}",
                    pieces=pieces,
                    vertex_values=dict(zero_vertices),
                )
            )

    return family[: max(count, 1 + len(graph.edges))]
