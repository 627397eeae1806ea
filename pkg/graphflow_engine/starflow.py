"""
Flows on star graphs: the Walsh flow of mappings, flows of kernels driven by
simplex mixtures (m+, m-), and the Wiener solution.

Edges are numbered 1..n; edges 1..n+ form the positive side and carry positive
signed coordinates, the rest the negative side. The radial motion is the
lattice skew walk of sbmflow with beta = 2 alpha+ - 1. After the first zero,
an excursion away from the center is labelled by a keyed uniform read at its
anchor dyadic_select(last zero, next zero); the next zero is capped at the end
of the noise horizon. Labels therefore depend on the excursion, not on which
trajectory asks, and trajectories that meet share all later labels.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Iterable, Mapping, Sequence

from .core import ConfigError, InvariantViolation
from .noise import SHARED_CHANNEL, NoiseField
from .sbmflow import (
    ZERO_NAMESPACE,
    SkewParams,
    driver,
    dyadic_select,
    grid_cells,
    snap_to_lattice,
    trace,
)

logger = logging.getLogger(__name__)

MODES = ("mapping", "kernel", "wiener")


def _fraction(value: Any) -> Fraction:
    if isinstance(value, float):
        return Fraction(repr(value))
    return Fraction(value)


@dataclass(frozen=True)
class StarGraphSpec:
    """n edges with parameters alpha; edges 1..n_plus are the positive side."""

    alpha: tuple[Fraction, ...]
    n_plus: int
    edge_names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.alpha:
            raise ConfigError("a star needs at least one edge")
        if not 0 <= self.n_plus <= len(self.alpha):
            raise ConfigError(f"n_plus {self.n_plus} outside [0, {len(self.alpha)}]")
        if any(a < 0 for a in self.alpha):
            raise ConfigError(f"negative alpha in {self.alpha}")
        if sum(self.alpha, Fraction(0)) != 1:
            raise ConfigError(f"alpha sum = {float(sum(self.alpha, Fraction(0))):g}")
        if self.edge_names and len(self.edge_names) != len(self.alpha):
            raise ConfigError("edge_names must name every edge")

    @classmethod
    def from_spec(cls, spec: Mapping[str, Any]) -> StarGraphSpec:
        try:
            alpha = tuple(_fraction(a) for a in spec["alpha"])
            n_plus = int(spec["n_plus"])
            n_minus = int(spec.get("n_minus", len(alpha) - n_plus))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"star spec is malformed: {exc}") from exc
        if n_plus + n_minus != len(alpha):
            raise ConfigError(
                f"n_plus + n_minus = {n_plus + n_minus} but {len(alpha)} alphas given"
            )
        return cls(alpha=alpha, n_plus=n_plus)

    @property
    def n(self) -> int:
        return len(self.alpha)

    @property
    def n_minus(self) -> int:
        return self.n - self.n_plus

    @property
    def alpha_plus(self) -> Fraction:
        return sum(self.alpha[: self.n_plus], Fraction(0))

    @property
    def alpha_minus(self) -> Fraction:
        return 1 - self.alpha_plus

    @property
    def beta(self) -> float:
        return float(2 * self.alpha_plus - 1)

    def side_edges(self, side: int) -> tuple[int, ...]:
        if side > 0:
            return tuple(range(1, self.n_plus + 1))
        return tuple(range(self.n_plus + 1, self.n + 1))

    def sign(self, edge: int) -> int:
        if not 1 <= edge <= self.n:
            raise ConfigError(f"edge {edge} outside 1..{self.n}")
        return 1 if edge <= self.n_plus else -1

    def side_weights(self, side: int) -> tuple[Fraction, ...]:
        """alpha^i / alpha+- over the edges of one side."""
        total = self.alpha_plus if side > 0 else self.alpha_minus
        edges = self.side_edges(side)
        if total == 0:
            return tuple(Fraction(0) for _ in edges)
        return tuple(self.alpha[i - 1] / total for i in edges)


@dataclass(frozen=True)
class StarPoint:
    """Edge index (None at the center) and distance from the center."""

    edge: int | None
    radius: float

    @classmethod
    def center(cls) -> StarPoint:
        return cls(edge=None, radius=0.0)

    def signed(self, spec: StarGraphSpec) -> float:
        if self.edge is None:
            return 0.0
        return spec.sign(self.edge) * self.radius


@dataclass(frozen=True)
class StarAtom:
    edge: int | None
    radius: float
    weight: Fraction

    def to_dict(self) -> dict[str, Any]:
        return {"edge": self.edge, "radius": self.radius, "weight": str(self.weight)}


@dataclass(frozen=True)
class StarKernelValue:
    """Atoms sharing one radius; weights are exact and sum to one."""

    atoms: tuple[StarAtom, ...]

    @property
    def mass(self) -> Fraction:
        return sum((a.weight for a in self.atoms), Fraction(0))

    @property
    def radius(self) -> float:
        return self.atoms[0].radius

    def points(self) -> list[tuple[StarPoint, Fraction]]:
        return [(StarPoint(a.edge, a.radius), a.weight) for a in self.atoms]

    def to_dict(self) -> dict[str, Any]:
        return {"atoms": [a.to_dict() for a in self.atoms]}


def _dirac(point: StarPoint) -> StarKernelValue:
    return StarKernelValue(atoms=(StarAtom(point.edge, point.radius, Fraction(1)),))


@dataclass(frozen=True)
class MixtureAtom:
    """Point of a simplex with its mixture weight."""

    point: tuple[Fraction, ...]
    weight: Fraction


@dataclass(frozen=True)
class ExcursionLabeler:
    """How excursions choose edges: mapping (gamma), kernel (m+, m-) or wiener."""

    mode: str
    m_plus: tuple[MixtureAtom, ...] = ()
    m_minus: tuple[MixtureAtom, ...] = ()

    @classmethod
    def mapping(cls, spec: StarGraphSpec) -> ExcursionLabeler:
        """Point masses on simplex vertices with weights alpha^i / alpha+-."""

        def vertices(side: int) -> tuple[MixtureAtom, ...]:
            size = len(spec.side_edges(side))
            return tuple(
                MixtureAtom(tuple(Fraction(int(i == j)) for j in range(size)), w)
                for i, w in enumerate(spec.side_weights(side))
                if w > 0
            )

        return cls(mode="mapping", m_plus=vertices(+1), m_minus=vertices(-1))

    @classmethod
    def wiener(cls, spec: StarGraphSpec) -> ExcursionLabeler:
        """Point mass at the mean of each simplex."""

        def mean(side: int) -> tuple[MixtureAtom, ...]:
            if not spec.side_edges(side):
                return ()
            return (MixtureAtom(spec.side_weights(side), Fraction(1)),)

        return cls(mode="wiener", m_plus=mean(+1), m_minus=mean(-1))

    @classmethod
    def kernel(
        cls, m_plus: Sequence[MixtureAtom], m_minus: Sequence[MixtureAtom]
    ) -> ExcursionLabeler:
        return cls(mode="kernel", m_plus=tuple(m_plus), m_minus=tuple(m_minus))

    @classmethod
    def from_spec(cls, spec: Mapping[str, Any], star: StarGraphSpec) -> ExcursionLabeler:
        mode = spec.get("mode", "mapping")
        if mode == "mapping":
            return cls.mapping(star)
        if mode == "wiener":
            return cls.wiener(star)
        if mode != "kernel":
            raise ConfigError(f"unknown labeler mode {mode!r}")

        def mixture(items: Iterable[Mapping[str, Any]]) -> tuple[MixtureAtom, ...]:
            try:
                return tuple(
                    MixtureAtom(
                        tuple(_fraction(u) for u in item["point"]), _fraction(item["weight"])
                    )
                    for item in items
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"mixture entry is malformed: {exc}") from exc

        return cls.kernel(mixture(spec.get("m_plus", [])), mixture(spec.get("m_minus", [])))

    def side(self, side: int) -> tuple[MixtureAtom, ...]:
        return self.m_plus if side > 0 else self.m_minus


def validate_labeler(labeler: ExcursionLabeler, spec: StarGraphSpec) -> list[str]:
    """Exact check of the simplex moment conditions; empty means valid."""
    problems: list[str] = []
    if labeler.mode not in MODES:
        return [f"unknown mode {labeler.mode!r}"]
    for side, name in ((+1, "m_plus"), (-1, "m_minus")):
        edges = spec.side_edges(side)
        total = spec.alpha_plus if side > 0 else spec.alpha_minus
        atoms = labeler.side(side)
        for atom in atoms:
            if len(atom.point) != len(edges):
                problems.append(
                    f"{name}: point {atom.point} has {len(atom.point)} coordinates,"
                    f" expected {len(edges)}"
                )
                continue
            if any(u < 0 for u in atom.point) or sum(atom.point, Fraction(0)) != 1:
                coords = tuple(map(str, atom.point))
                problems.append(f"{name}: point {coords} is not in the simplex")
            if atom.weight < 0:
                problems.append(f"{name}: negative weight {atom.weight}")
        if not edges or total == 0:
            continue
        if sum((a.weight for a in atoms), Fraction(0)) != 1:
            problems.append(f"{name}: mixture weights do not sum to 1")
            continue
        if any(len(a.point) != len(edges) for a in atoms):
            continue
        for j, target in enumerate(spec.side_weights(side)):
            moment = sum((a.weight * a.point[j] for a in atoms), Fraction(0))
            if moment != target:
                problems.append(
                    f"{name}: moment of coordinate {j + 1} is {moment}, expected {target}"
                )
    return problems


def _select(atoms: Sequence[MixtureAtom], u: float) -> MixtureAtom:
    cumulative = Fraction(0)
    for atom in atoms:
        cumulative += atom.weight
        if u < float(cumulative):
            return atom
    return atoms[-1]


@dataclass(frozen=True)
class _Located:
    """Radial state at t: signed lattice value, pre-zero flag, edge when known, anchor."""

    value: int
    before_zero: bool
    edge: int | None
    anchor: Fraction | None


@dataclass(frozen=True)
class StarFlow:
    """
    Flow on one star. channels gives the noise channel of every edge (1..n);
    when empty every edge uses the shared channel. namespace_suffix separates
    the keyed streams of distinct stars driven by one noise field.
    """

    spec: StarGraphSpec
    labeler: ExcursionLabeler
    noise: NoiseField
    delta: float
    channels: tuple[str, ...] = ()
    namespace_suffix: str = ""

    def __post_init__(self) -> None:
        problems = validate_labeler(self.labeler, self.spec)
        if problems:
            raise ConfigError("; ".join(problems))
        if self.channels and len(self.channels) != self.spec.n:
            raise ConfigError("channels must name one channel per edge")
        if self.per_edge and self.labeler.mode != "mapping":
            raise ConfigError("per-edge channels need a mapping-mode labeler")

    @property
    def params(self) -> SkewParams:
        return SkewParams(beta=self.spec.beta, delta=self.delta)

    @property
    def per_edge(self) -> bool:
        return len(set(self.channels)) > 1

    @property
    def zero_namespace(self) -> str:
        return ZERO_NAMESPACE + self.namespace_suffix

    @property
    def label_namespace(self) -> str:
        return ("gamma" if self.labeler.mode == "mapping" else "U") + self.namespace_suffix

    def channel(self, edge: int | None) -> str:
        if not self.channels:
            return SHARED_CHANNEL
        return self.channels[(edge or 1) - 1]

    def _start(self, x: StarPoint) -> int:
        if x.edge is None:
            return 0
        return snap_to_lattice(x.signed(self.spec), self.delta)

    def _label(self, side: int, anchor: Fraction) -> MixtureAtom:
        u = self.noise.keyed_uniform(self.label_namespace, anchor)
        return _select(self.labeler.side(side), u)

    def _edge_of(self, side: int, atom: MixtureAtom) -> int:
        edges = self.spec.side_edges(side)
        for j, u in enumerate(atom.point):
            if u == 1:
                return edges[j]
        raise InvariantViolation("mapping labels must be simplex vertices")

    def _locate(self, s: float | Fraction, x: StarPoint, t: float | Fraction) -> _Located:
        params = self.params
        k_s, k_t = grid_cells(params, self.noise, s, t)
        y0 = self._start(x)
        if self.per_edge:
            return self._locate_per_edge(k_s, k_t, y0, x.edge)
        drv = driver(self.noise, self.channel(None), params.level, self.zero_namespace)
        tr = trace(drv, k_s, y0, k_t, params.p_up)
        value = tr.value(k_t)
        if not tr.zeros or value == 0:
            return _Located(value, not tr.zeros, x.edge, None)
        step = params.time_step
        g = tr.zeros[-1]
        e = drv.first_hit(k_t, value, drv.k_hi)
        end = drv.k_hi if e is None else e
        return _Located(value, False, None, dyadic_select(g * step, end * step))

    def _locate_per_edge(self, k_s: int, k_t: int, y0: int, edge: int | None) -> _Located:
        params = self.params
        step = params.time_step
        k, y = k_s, y0
        current = edge
        touched = False
        while k < k_t:
            if y == 0:
                touched = True
                drv = driver(self.noise, self.channel(current), params.level, self.zero_namespace)
                side = 1 if drv.steps_up(k, params.p_up) else -1
                # the end of an excursion depends on its edge, so its first cell is the anchor
                label = self._label(side, dyadic_select(k * step, (k + 2) * step))
                current = self._edge_of(side, label)
                y = side
                k += 1
                continue
            drv = driver(self.noise, self.channel(current), params.level, self.zero_namespace)
            hit = drv.first_hit(k, y, k_t)
            if hit is None:
                y += drv.walk(k_t) - drv.walk(k)
                k = k_t
                break
            k, y = hit, 0
        return _Located(y, not touched, current if y != 0 else None, None)

    def radial_value(self, s: float | Fraction, x: StarPoint, t: float | Fraction) -> float:
        """Signed radial position Y_{s,t} of the start x."""
        return self._locate(s, x, t).value * self.delta

    def kernel(self, s: float | Fraction, x: StarPoint, t: float | Fraction) -> StarKernelValue:
        """K_{s,t}(x) as a finite atom measure."""
        loc = self._locate(s, x, t)
        radius = abs(loc.value) * self.delta
        if loc.value == 0:
            return _dirac(StarPoint.center())
        if loc.before_zero:
            return _dirac(StarPoint(x.edge, radius))
        side = 1 if loc.value > 0 else -1
        if self.per_edge:
            return _dirac(StarPoint(loc.edge, radius))
        assert loc.anchor is not None
        if self.labeler.mode == "wiener":
            weights = self.spec.side_weights(side)
        else:
            weights = self._label(side, loc.anchor).point
        atoms = tuple(
            StarAtom(edge, radius, w)
            for edge, w in zip(self.spec.side_edges(side), weights)
            if w > 0
        )
        value = StarKernelValue(atoms=atoms)
        if value.mass != 1:
            raise InvariantViolation(f"kernel mass {value.mass} != 1")
        return value

    def phi(self, s: float | Fraction, x: StarPoint, t: float | Fraction) -> StarPoint:
        """phi_{s,t}(x) of the Walsh flow."""
        if self.labeler.mode != "mapping":
            raise ConfigError(f"phi needs a mapping-mode labeler, got {self.labeler.mode}")
        (point, _), = self.kernel(s, x, t).points()
        return point

    def compose(
        self, measure: StarKernelValue, t: float | Fraction, u: float | Fraction
    ) -> StarKernelValue:
        """measure K_{t,u}, atoms with equal position merged."""
        merged: dict[tuple[int | None, float], Fraction] = {}
        for point, w in measure.points():
            for atom in self.kernel(t, point, u).atoms:
                key = (atom.edge, atom.radius)
                merged[key] = merged.get(key, Fraction(0)) + w * atom.weight
        return StarKernelValue(
            atoms=tuple(
                StarAtom(edge, radius, w)
                for (edge, radius), w in sorted(
                    merged.items(), key=lambda kv: (kv[0][0] or 0, kv[0][1])
                )
            )
        )


def phi(
    spec: StarGraphSpec,
    noise: NoiseField,
    s: float | Fraction,
    x: StarPoint,
    t: float | Fraction,
    *,
    delta: float,
) -> StarPoint:
    return StarFlow(spec, ExcursionLabeler.mapping(spec), noise, delta).phi(s, x, t)


def kernel(
    spec: StarGraphSpec,
    labeler: ExcursionLabeler,
    noise: NoiseField,
    s: float | Fraction,
    x: StarPoint,
    t: float | Fraction,
    *,
    delta: float,
) -> StarKernelValue:
    return StarFlow(spec, labeler, noise, delta).kernel(s, x, t)


def half_case_kernel(
    spec: StarGraphSpec,
    noise: NoiseField,
    s: float | Fraction,
    x: StarPoint,
    t: float | Fraction,
    *,
    delta: float,
    channel: str = SHARED_CHANNEL,
) -> StarKernelValue:
    """Wiener weights over the plain radial walk x + W (needs alpha+ = 1/2)."""
    if spec.alpha_plus != Fraction(1, 2):
        raise ConfigError(f"half case needs alpha+ = 1/2, got {spec.alpha_plus}")
    params = SkewParams(beta=0.0, delta=delta)
    k_s, k_t = grid_cells(params, noise, s, t)
    drv = driver(noise, channel, params.level)
    y0 = 0 if x.edge is None else snap_to_lattice(x.signed(spec), delta)
    value = y0 + drv.walk(k_t) - drv.walk(k_s)
    radius = abs(value) * delta
    if value == 0:
        return _dirac(StarPoint.center())
    touched = y0 == 0 or drv.first_hit(k_s, y0, k_t) is not None
    if not touched:
        return _dirac(StarPoint(x.edge, radius))
    side = 1 if value > 0 else -1
    return StarKernelValue(
        atoms=tuple(
            StarAtom(edge, radius, w)
            for edge, w in zip(spec.side_edges(side), spec.side_weights(side))
            if w > 0
        )
    )
