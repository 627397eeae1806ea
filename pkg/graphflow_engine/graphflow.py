"""
Global flows of kernels on oriented metric graphs.

K0 on one interval: outside the oscillation event the identity; before the
first vertex hit a translation along the edge; after it, the star kernel of
the hit vertex pulled back through its chart. K^n concatenates K0 over the
level-n dyadic mesh and K uses the least level whose windows all stay in the
event. Every kernel is a finite atom measure with exact rational weights.

The lattice gate reserves one cell of the shortest edge: the event holds when
every driving walk oscillates by less than L - delta, since a zero-site step
moves one cell regardless of the noise.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Iterable, Mapping

from .core import ConfigError, InvariantViolation, LatticeError
from .graph import (
    INFINITY,
    GraphPoint,
    MetricGraph,
    StarChart,
    StarCoordinate,
    from_star,
    point,
    star_chart,
    to_star,
    validate,
)
from .noise import NoiseField, lattice_level
from .sbmflow import ZERO_NAMESPACE, LatticeDriver, SkewParams, driver, grid_cells, lattice_index
from .starflow import (
    ExcursionLabeler,
    StarAtom,
    StarFlow,
    StarGraphSpec,
    StarKernelValue,
    StarPoint,
)

logger = logging.getLogger(__name__)

Kernel = Callable[["GlobalFlowConfig", Fraction, Fraction, GraphPoint], "AtomMeasure"]


@dataclass(frozen=True)
class AtomMeasure:
    """Finitely supported probability measure on the graph; atoms sorted and merged."""

    atoms: tuple[tuple[GraphPoint, Fraction], ...]

    @classmethod
    def dirac(cls, p: GraphPoint) -> AtomMeasure:
        return cls(atoms=((p, Fraction(1)),))

    @classmethod
    def merged(cls, items: Iterable[tuple[GraphPoint, Fraction]]) -> AtomMeasure:
        acc: dict[GraphPoint, Fraction] = {}
        for p, w in items:
            if w:
                acc[p] = acc.get(p, Fraction(0)) + w
        return cls(atoms=tuple(sorted(acc.items(), key=lambda kv: kv[0].sort_key())))

    @property
    def mass(self) -> Fraction:
        return sum((w for _, w in self.atoms), Fraction(0))

    def support(self) -> tuple[GraphPoint, ...]:
        return tuple(p for p, _ in self.atoms)

    def rows(self) -> list[tuple[str, float, str]]:
        """(edge or vertex id, coordinate, weight) per atom, for CSV output."""
        out = []
        for p, w in self.atoms:
            if p.vertex is not None:
                out.append((p.vertex, 0.0, str(w)))
            else:
                out.append((p.edge or "", p.r, str(w)))
        return out

    def to_dict(self) -> dict[str, Any]:
        return {"atoms": [{**p.to_dict(), "weight": str(w)} for p, w in self.atoms]}


def vertex_star_spec(graph: MetricGraph, v: str) -> StarGraphSpec:
    """The star seen from v: outgoing edges on the positive side, alpha from the graph."""
    chart = star_chart(graph, v)
    return StarGraphSpec(
        alpha=tuple(ce.alpha for ce in chart.edges),
        n_plus=sum(1 for ce in chart.edges if ce.sign > 0),
        edge_names=tuple(ce.edge_id for ce in chart.edges),
    )


@dataclass(frozen=True)
class GlobalFlowConfig:
    """Graph, one labeler per vertex, the noise field and the lattice step."""

    graph: MetricGraph
    labelers: Mapping[str, ExcursionLabeler]
    noise: NoiseField
    delta: float
    _stars: dict[str, StarFlow] = field(default_factory=dict, compare=False, repr=False)
    _charts: dict[str, StarChart] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self) -> None:
        report = validate(self.graph)
        if not report.valid:
            raise ConfigError("; ".join(report.violations))
        level = lattice_level(self.delta)
        if level > self.noise.n_max:
            raise ConfigError(f"noise n_max={self.noise.n_max} is below the lattice level {level}")
        L = self.graph.min_length
        if not math.isinf(L) and self.delta > L / 8:
            raise ConfigError(f"delta {self.delta} exceeds L/8 = {L / 8}")
        for e in self.graph.edges:
            if not math.isinf(e.length) and Fraction(e.length) % Fraction(self.delta):
                raise ConfigError(f"edge {e.id} length {e.length} is not a multiple of delta")
        for v in self.graph.vertices:
            chart = star_chart(self.graph, v)
            spec = vertex_star_spec(self.graph, v)
            labeler = self.labelers.get(v) or ExcursionLabeler.mapping(spec)
            self._charts[v] = chart
            self._stars[v] = StarFlow(
                spec=spec,
                labeler=labeler,
                noise=self.noise,
                delta=self.delta,
                channels=tuple(self.noise.channel_of(ce.edge_id) for ce in chart.edges),
                namespace_suffix=f":{v}",
            )
        logger.debug(
            "graph flow over %d vertices, L=%s, delta=%s", len(self.graph.vertices), L, self.delta
        )

    @classmethod
    def from_spec(
        cls, spec: Mapping[str, Any], graph: MetricGraph | None = None
    ) -> GlobalFlowConfig:
        """Parse {graph, labelers, noise, delta}; a given graph overrides spec["graph"]."""
        try:
            if graph is None:
                graph = MetricGraph.from_spec(spec["graph"])
            noise = NoiseField.from_spec(spec["noise"], edge_ids=[e.id for e in graph.edges])
            delta = float(spec["delta"])
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"graph flow config is missing {exc}") from exc
        labelers = {
            v: ExcursionLabeler.from_spec(item, vertex_star_spec(graph, v))
            for v, item in dict(spec.get("labelers", {})).items()
        }
        return cls(graph=graph, labelers=labelers, noise=noise, delta=delta)

    def with_noise(self, noise: NoiseField) -> GlobalFlowConfig:
        return GlobalFlowConfig(self.graph, self.labelers, noise, self.delta)

    @property
    def level(self) -> int:
        return lattice_level(self.delta)

    @property
    def time_step(self) -> Fraction:
        return Fraction(1, 2**self.level)

    @property
    def gate_length(self) -> float:
        L = self.graph.min_length
        return L if math.isinf(L) else L - self.delta

    def chart(self, v: str) -> StarChart:
        try:
            return self._charts[v]
        except KeyError as exc:
            raise ConfigError(f"unknown vertex {v!r}") from exc

    def star(self, v: str) -> StarFlow:
        self.chart(v)
        return self._stars[v]

    def cells(self, s: float | Fraction, t: float | Fraction) -> tuple[int, int]:
        return grid_cells(SkewParams(beta=0.0, delta=self.delta), self.noise, s, t)

    def walker(self, edge_id: str) -> LatticeDriver:
        return driver(self.noise, self.noise.channel_of(edge_id), self.level, ZERO_NAMESPACE)

    def event(self, s: Fraction, t: Fraction) -> bool:
        return self.noise.event_A(s, t, self.gate_length, delta=self.delta)

    def min_level(self, s: Fraction, t: Fraction) -> int | None:
        return self.noise.min_level(s, t, self.gate_length, delta=self.delta, max_level=self.level)


# -- chart conversions -------------------------------------------------------


def star_point(chart: StarChart, p: GraphPoint) -> StarPoint:
    """i_v(p) as a point of the numbered star."""
    y = to_star(chart, p)
    if y.edge is None:
        return StarPoint.center()
    index = next(i for i, ce in enumerate(chart.edges, start=1) if ce.edge_id == y.edge)
    return StarPoint(edge=index, radius=abs(y.signed))


def graph_point(chart: StarChart, p: StarPoint) -> GraphPoint:
    """i_v^-1 of a star point inside the chart."""
    if p.edge is None or p.radius == 0.0:
        return GraphPoint(vertex=chart.center)
    ce = chart.edges[p.edge - 1]
    return from_star(chart, StarCoordinate(edge=ce.edge_id, signed=ce.sign * p.radius))


def pull_back(chart: StarChart, value: StarKernelValue) -> AtomMeasure:
    try:
        return AtomMeasure.merged(
            (graph_point(chart, StarPoint(a.edge, a.radius)), a.weight) for a in value.atoms
        )
    except LatticeError as exc:
        raise InvariantViolation(f"star kernel at {chart.center} leaves its chart: {exc}") from exc


def push_forward(chart: StarChart, measure: AtomMeasure) -> StarKernelValue:
    merged: dict[tuple[int | None, float], Fraction] = {}
    for p, w in measure.atoms:
        sp = star_point(chart, p)
        merged[(sp.edge, sp.radius)] = merged.get((sp.edge, sp.radius), Fraction(0)) + w
    return _star_value(merged)


def _star_value(merged: Mapping[tuple[int | None, float], Fraction]) -> StarKernelValue:
    return StarKernelValue(
        atoms=tuple(
            StarAtom(edge, radius, w)
            for (edge, radius), w in sorted(
                merged.items(), key=lambda kv: (kv[0][0] or 0, kv[0][1])
            )
            if w
        )
    )


# -- first vertex hits ---------------------------------------------------------


def _edge_index(config: GlobalFlowConfig, p: GraphPoint) -> int:
    if p.edge is None:
        raise LatticeError("vertex points have no edge coordinate")
    return lattice_index(p.r, config.delta)


def first_vertex_hit(
    config: GlobalFlowConfig, s: float | Fraction, x: GraphPoint, t: float | Fraction
) -> tuple[int, str] | None:
    """(cell, vertex) of the first endpoint reached by the translated edge coordinate."""
    k_s, k_t = config.cells(s, t)
    if x.vertex is not None:
        return k_s, x.vertex
    e = config.graph.edge(x.edge or "")
    drv = config.walker(e.id)
    j = _edge_index(config, x)
    hits: list[tuple[int, str]] = []
    if e.start != INFINITY:
        h = drv.first_hit(k_s, j, k_t)
        if h is not None:
            hits.append((h, e.start))
    if e.end != INFINITY:
        h = drv.first_hit(k_s, j - lattice_index(e.hi, config.delta), k_t)
        if h is not None:
            hits.append((h, e.end))
    return min(hits) if hits else None


def _translate(config: GlobalFlowConfig, s: Fraction, x: GraphPoint, t: Fraction) -> GraphPoint:
    k_s, k_t = config.cells(s, t)
    drv = config.walker(x.edge or "")
    j = _edge_index(config, x) + drv.walk(k_t) - drv.walk(k_s)
    return point(config.graph, x.edge or "", j * config.delta)


def tau(config: GlobalFlowConfig, s: float | Fraction, x: GraphPoint) -> Fraction | float:
    """First grid time at which x, translated along its edge, reaches a vertex; inf if never."""
    if x.is_vertex:
        logger.warning("tau requested at vertex %s; returning s", x.vertex)
        return Fraction(s)
    _, t_max = config.noise.horizon
    hit = first_vertex_hit(config, s, x, Fraction(int(t_max)))
    if hit is None:
        return math.inf
    return hit[0] * config.time_step


# -- K0, K^n and K -------------------------------------------------------------


def k0(
    config: GlobalFlowConfig, s: float | Fraction, t: float | Fraction, x: GraphPoint
) -> AtomMeasure:
    s_f, t_f = Fraction(s), Fraction(t)
    config.cells(s_f, t_f)
    if s_f == t_f or not config.event(s_f, t_f):
        return AtomMeasure.dirac(x)
    hit = first_vertex_hit(config, s_f, x, t_f)
    if hit is None:
        return AtomMeasure.dirac(_translate(config, s_f, x, t_f))
    _, v = hit
    chart = config.chart(v)
    value = config.star(v).kernel(s_f, star_point(chart, x), t_f)
    measure = pull_back(chart, value)
    if measure.mass != 1:
        raise InvariantViolation(f"K0 mass {measure.mass} != 1")
    return measure


def dyadic_mesh(s: Fraction, t: Fraction, n: int) -> list[Fraction]:
    """{s} together with the level-n dyadics in (s, t] and t."""
    mesh = [s]
    scale = 2**n
    q = math.floor(s * scale) + 1
    while Fraction(q, scale) < t:
        mesh.append(Fraction(q, scale))
        q += 1
    if t > s:
        mesh.append(t)
    return mesh


def compose(
    config: GlobalFlowConfig,
    measure: AtomMeasure,
    s: float | Fraction,
    t: float | Fraction,
    kernel: Kernel | None = None,
) -> AtomMeasure:
    """measure K_{s,t} for any kernel (k by default); coincident atoms merge."""
    step = kernel or _k_kernel
    return AtomMeasure.merged(
        (q, w * v)
        for p, w in measure.atoms
        for q, v in step(config, Fraction(s), Fraction(t), p).atoms
    )


def kn(
    config: GlobalFlowConfig, s: float | Fraction, t: float | Fraction, x: GraphPoint, n: int
) -> AtomMeasure:
    """K0 concatenated over the level-n mesh; n is capped at the lattice level."""
    mesh = dyadic_mesh(Fraction(s), Fraction(t), min(n, config.level))
    measure = AtomMeasure.dirac(x)
    for a, b in zip(mesh, mesh[1:]):
        measure = compose(config, measure, a, b, kernel=k0)
    return measure


def assemble(
    config: GlobalFlowConfig, s: float | Fraction, t: float | Fraction, x: GraphPoint
) -> tuple[AtomMeasure, int | None]:
    """K_{s,t}(x) and the level it was built at; None marks the identity fallback."""
    s_f, t_f = Fraction(s), Fraction(t)
    config.cells(s_f, t_f)
    n = config.min_level(s_f, t_f)
    if n is None:
        logger.warning("no level resolves [%s, %s]; using the identity", s, t)
        return AtomMeasure.dirac(x), None
    return kn(config, s_f, t_f, x, n), n


def k(
    config: GlobalFlowConfig, s: float | Fraction, t: float | Fraction, x: GraphPoint
) -> AtomMeasure:
    return assemble(config, s, t, x)[0]


def _k_kernel(config: GlobalFlowConfig, s: Fraction, t: Fraction, x: GraphPoint) -> AtomMeasure:
    return k(config, s, t, x)


# -- charts and restriction ----------------------------------------------------


def rho(config: GlobalFlowConfig, s: float | Fraction, x: GraphPoint, v: str) -> Fraction | float:
    """First grid time at which K_{s,.}(x) puts mass outside G_v; inf if it never does."""
    chart = config.chart(v)
    if not chart.contains(x):
        raise LatticeError(f"{x} is not in the neighborhood of {v}")
    _, t_max = config.noise.horizon
    step = config.time_step
    u = Fraction(s)
    measure = AtomMeasure.dirac(x)
    while u < t_max:
        measure = compose(config, measure, u, u + step, kernel=k0)
        u += step
        if not all(chart.contains(p) for p in measure.support()):
            return u
    return math.inf


@dataclass(frozen=True)
class ChartComparison:
    """i_v * K_{s,t}(x) next to the star kernel at v."""

    pushed: StarKernelValue | None
    star: StarKernelValue
    inside: bool

    @property
    def holds(self) -> bool:
        return self.inside and self.pushed == self.star


def chart_identity(
    config: GlobalFlowConfig, s: float | Fraction, x: GraphPoint, v: str, t: float | Fraction
) -> ChartComparison:
    chart = config.chart(v)
    measure = k(config, s, t, x)
    star = config.star(v).kernel(Fraction(s), star_point(chart, x), Fraction(t))
    inside = all(chart.contains(p) for p in measure.support())
    pushed = push_forward(chart, measure) if inside else None
    return ChartComparison(pushed=pushed, star=star, inside=inside)


def _star_translate(
    config: GlobalFlowConfig, v: str, a: Fraction, p: StarPoint, b: Fraction
) -> StarPoint:
    star = config.star(v)
    k_a, k_b = config.cells(a, b)
    drv = driver(config.noise, star.channel(p.edge), config.level, star.zero_namespace)
    signed = lattice_index(p.signed(star.spec), config.delta) + drv.walk(k_b) - drv.walk(k_a)
    if p.edge is None or signed * star.spec.sign(p.edge) <= 0:
        raise InvariantViolation(f"free translation at {v} crossed the center")
    return StarPoint(p.edge, abs(signed) * config.delta)


def _restricted_k0(
    config: GlobalFlowConfig, v: str, a: Fraction, p: StarPoint, b: Fraction
) -> StarKernelValue:
    chart = config.chart(v)
    if a == b or not config.event(a, b):
        return StarKernelValue(atoms=(StarAtom(p.edge, p.radius, Fraction(1)),))
    inside = p.edge is None or p.radius < chart.edges[p.edge - 1].length
    if inside:
        x = graph_point(chart, p)
        hit = first_vertex_hit(config, a, x, b)
        if hit is None or hit[1] == v:
            return push_forward(chart, k0(config, a, b, x))
    q = _star_translate(config, v, a, p, b)
    return StarKernelValue(atoms=(StarAtom(q.edge, q.radius, Fraction(1)),))


def restrict_to_star(
    config: GlobalFlowConfig, v: str, s: float | Fraction, x: StarPoint, t: float | Fraction
) -> StarKernelValue:
    """The star kernel at v rebuilt from the global K0 pieces, over the mesh K uses."""
    s_f, t_f = Fraction(s), Fraction(t)
    config.cells(s_f, t_f)
    n = config.min_level(s_f, t_f)
    mesh = dyadic_mesh(s_f, t_f, config.level if n is None else n)
    value = StarKernelValue(atoms=(StarAtom(x.edge, x.radius, Fraction(1)),))
    for a, b in zip(mesh, mesh[1:]):
        merged: dict[tuple[int | None, float], Fraction] = {}
        for q, w in value.points():
            for atom in _restricted_k0(config, v, a, q, b).atoms:
                key = (atom.edge, atom.radius)
                merged[key] = merged.get(key, Fraction(0)) + w * atom.weight
        value = _star_value(merged)
    return value


# -- skew walk with barriers ------------------------------------------------------


def _chain_sides(config: GlobalFlowConfig, v: str) -> dict[int, str]:
    chart = config.chart(v)
    if len(chart.edges) > 2:
        raise ConfigError(f"vertex {v} has {len(chart.edges)} edges; barrier flows need at most 2")
    sides: dict[int, str] = {}
    for ce in chart.edges:
        if ce.sign in sides:
            raise ConfigError(f"vertex {v} has two edges on the same side")
        sides[ce.sign] = ce.edge_id
    return sides


def barrier_flow(
    config: GlobalFlowConfig, s: float | Fraction, x: GraphPoint, t: float | Fraction
) -> GraphPoint:
    """
    Single trajectory on a chain: translate until a vertex is hit, follow that
    vertex's skew walk until the next vertex, and so on.
    """
    sides = {v: _chain_sides(config, v) for v in config.graph.vertices}
    k, k_t = config.cells(s, t)
    current = x
    while k < k_t:
        if current.vertex is not None:
            v = current.vertex
            chart = config.chart(v)
            star = config.star(v)
            zero = driver(config.noise, star.channel(1), config.level, star.zero_namespace)
            side = 1 if zero.steps_up(k, star.params.p_up) else -1
            ce = chart.chart_edge(sides[v][side])
            current = point(config.graph, ce.edge_id, ce.anchor + side * config.delta)
            k += 1
            continue
        hit = first_vertex_hit(config, k * config.time_step, current, k_t * config.time_step)
        if hit is None:
            return _translate(config, k * config.time_step, current, k_t * config.time_step)
        k, v = hit
        current = GraphPoint(vertex=v)
    return current
