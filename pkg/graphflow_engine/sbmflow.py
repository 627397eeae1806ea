"""
Coalescing flow of skew Brownian motions at lattice resolution.

The lattice skew walk with step delta = 2^-m and time step delta^2:
off zero it moves by the driving sign of the cell (noise level 2m); at zero it
moves up iff keyed_uniform("sbm-zero", cell time) < (1 + beta) / 2. Every
trajectory at zero in a cell makes the same decision, so the walks started from
different points form a monotone coalescing flow. Positions are kept as integer
multiples of delta.

Local time counts zero visits: L = LOCAL_TIME_SCALE * delta * visits.
"""

from __future__ import annotations

import bisect
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Sequence

import numpy as np

from .core import ConfigError, HorizonError, LatticeError
from .noise import NoiseField, lattice_level

logger = logging.getLogger(__name__)

ZERO_NAMESPACE = "sbm-zero"
# symmetric walk: E|Y_n| - |Y_0| = delta * E[zero visits] exactly
LOCAL_TIME_SCALE = 1.0
DEFAULT_N_CAP = 64
_SEED_BATCH = 1024


@dataclass(frozen=True)
class SkewParams:
    """Skewness beta and lattice step delta = 2^-m; the time step is delta^2."""

    beta: float
    delta: float

    def __post_init__(self) -> None:
        if not -1.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta {self.beta} outside [-1, 1]")
        lattice_level(self.delta)

    @property
    def level(self) -> int:
        return lattice_level(self.delta)

    @property
    def time_step(self) -> Fraction:
        return Fraction(1, 2**self.level)

    @property
    def p_up(self) -> float:
        return (1.0 + self.beta) / 2.0


def lattice_index(x: float | Fraction, delta: float) -> int:
    """x / delta, which must be an integer."""
    q = Fraction(x) / Fraction(delta)
    if q.denominator != 1:
        raise LatticeError(f"start {x} is not on the lattice {delta} Z")
    return q.numerator


def snap_to_lattice(x: float | Fraction, delta: float) -> int:
    """Nearest lattice index to x, ties toward 0."""
    q = Fraction(x) / Fraction(delta)
    if q >= 0:
        return math.ceil(q - Fraction(1, 2))
    return math.floor(q + Fraction(1, 2))


def dyadic_select(u: float | Fraction, v: float | Fraction) -> Fraction:
    """Smallest element of D_n in (u, v) for the least n with D_n meeting (u, v)."""
    lo, hi = Fraction(u), Fraction(v)
    if lo >= hi:
        raise ConfigError(f"dyadic_select needs u < v, got ({u}, {v})")
    n = 0
    while True:
        scale = 2**n
        candidate = Fraction(math.floor(lo * scale) + 1, scale)
        if candidate < hi:
            return candidate
        n += 1


class LatticeDriver:
    """Driving walk and zero-site uniforms of one channel over the whole horizon."""

    def __init__(self, noise: NoiseField, channel: str, level: int, zero_namespace: str):
        self.level = level
        self.k_lo, self.k_hi = noise.cell_range(level)
        self.prefix = noise.walk_prefix(channel, level)
        self.uniforms = noise.grid_uniforms(zero_namespace, level, self.k_lo, self.k_hi)

    def walk(self, k: int) -> int:
        return int(self.prefix[k - self.k_lo])

    def step_sign(self, k: int) -> int:
        return self.walk(k + 1) - self.walk(k)

    def steps_up(self, k: int, p_up: float) -> bool:
        return bool(self.uniforms[k - self.k_lo] < p_up)

    def first_hit(self, k: int, y: int, k_end: int) -> int | None:
        """First k' in (k, k_end] where y + walk(k') - walk(k) == 0."""
        if abs(y) > k_end - k:
            return None
        target = self.walk(k) - y
        lo = k + 1
        width = 64
        while lo <= k_end:
            hi = min(k_end, lo + width - 1)
            window = self.prefix[lo - self.k_lo : hi - self.k_lo + 1]
            hits = np.flatnonzero(window == target)
            if hits.size:
                return lo + int(hits[0])
            lo = hi + 1
            width *= 4
        return None


def driver(
    noise: NoiseField, channel: str, level: int, zero_namespace: str = ZERO_NAMESPACE
) -> LatticeDriver:
    return noise.memo(
        ("driver", channel, level, zero_namespace),
        lambda: LatticeDriver(noise, channel, level, zero_namespace),
    )


@dataclass
class Trace:
    """Piecewise description of one walk on cells [k0, k1]: segment starts and zero visits."""

    k0: int
    k1: int
    segments: list[tuple[int, int]]
    zeros: list[int]
    drv: LatticeDriver

    def value(self, k: int) -> int:
        if not self.k0 <= k <= self.k1:
            raise HorizonError(f"cell {k} outside traced range [{self.k0}, {self.k1}]")
        i = bisect.bisect_right(self.segments, (k, math.inf)) - 1
        ks, ys = self.segments[i]
        return ys + self.drv.walk(k) - self.drv.walk(ks)

    def values(self) -> np.ndarray:
        out = np.empty(self.k1 - self.k0 + 1, dtype=np.int64)
        bounds = [ks for ks, _ in self.segments[1:]] + [self.k1 + 1]
        for (ks, ys), ke in zip(self.segments, bounds):
            seg = self.drv.prefix[ks - self.drv.k_lo : ke - self.drv.k_lo]
            out[ks - self.k0 : ke - self.k0] = ys + seg - seg[0]
        return out

    def zero_visits(self, k: int) -> int:
        """Number of zero visits at cells in [k0, k)."""
        return bisect.bisect_left(self.zeros, k)


def trace(drv: LatticeDriver, k0: int, y0: int, k1: int, p_up: float) -> Trace:
    """Run the skew walk from (k0, y0) to k1 jumping between zero visits."""
    segments = [(k0, y0)]
    zeros: list[int] = []
    k, y = k0, y0
    while k < k1:
        if y == 0:
            zeros.append(k)
            y = 1 if drv.steps_up(k, p_up) else -1
            k += 1
            segments.append((k, y))
            continue
        hit = drv.first_hit(k, y, k1)
        if hit is None:
            break
        k, y = hit, 0
        segments.append((k, 0))
    return Trace(k0=k0, k1=k1, segments=segments, zeros=zeros, drv=drv)


@dataclass(frozen=True)
class SkewPath:
    """(Y, L) on the grid of [s, t]; values are integer multiples of delta."""

    params: SkewParams
    s: Fraction
    t: Fraction
    values: np.ndarray
    visits: np.ndarray  # zero visits in [s, u) for each grid u

    @property
    def times(self) -> np.ndarray:
        step = float(self.params.time_step)
        return float(self.s) + step * np.arange(self.values.size)

    @property
    def Y(self) -> np.ndarray:
        return self.values.astype(np.float64) * self.params.delta

    @property
    def L(self) -> np.ndarray:
        return LOCAL_TIME_SCALE * self.params.delta * self.visits.astype(np.float64)

    @property
    def end(self) -> float:
        return float(self.values[-1]) * self.params.delta


def grid_cells(
    params: SkewParams, noise: NoiseField, s: float | Fraction, t: float | Fraction
) -> tuple[int, int]:
    """Absolute lattice cell indices of s and t."""
    if Fraction(t) < Fraction(s):
        raise HorizonError(f"need s <= t, got s={s}, t={t}")
    level = params.level
    if level > noise.n_max:
        raise ConfigError(f"noise n_max={noise.n_max} is below the lattice level {level}")
    return noise.grid_index(s, level), noise.grid_index(t, level)


def trace_from(
    params: SkewParams,
    noise: NoiseField,
    channel: str,
    s: float | Fraction,
    x: float | Fraction,
    t: float | Fraction,
    zero_namespace: str = ZERO_NAMESPACE,
) -> Trace:
    k_s, k_t = grid_cells(params, noise, s, t)
    drv = driver(noise, channel, params.level, zero_namespace)
    return trace(drv, k_s, lattice_index(x, params.delta), k_t, params.p_up)


def evolve(
    params: SkewParams,
    noise: NoiseField,
    channel: str,
    s: float | Fraction,
    x: float | Fraction,
    t: float | Fraction,
    *,
    zero_namespace: str = ZERO_NAMESPACE,
) -> SkewPath:
    """The lattice skew walk from x at time s, observed on every grid time up to t."""
    tr = trace_from(params, noise, channel, s, x, t, zero_namespace)
    ks = np.arange(tr.k0, tr.k1 + 1)
    visits = np.searchsorted(np.asarray(tr.zeros, dtype=np.int64), ks, side="left")
    return SkewPath(params=params, s=Fraction(s), t=Fraction(t), values=tr.values(), visits=visits)


@dataclass(frozen=True)
class EnsembleEnd:
    """Endpoints of independent walks, one per seed."""

    seeds: tuple[int, ...]
    values: np.ndarray  # lattice units at t
    local_times: np.ndarray
    steps_up_at_t: np.ndarray  # zero-site decision of the cell starting at t

    def positive_with_ties(self) -> np.ndarray:
        """Y > 0, counting Y = 0 as positive when the decision at t steps up."""
        return (self.values > 0) | ((self.values == 0) & self.steps_up_at_t)


def ensemble_endpoints(
    params: SkewParams,
    base: NoiseField,
    seeds: Sequence[int],
    channel: str,
    s: float | Fraction,
    x: float | Fraction,
    t: float | Fraction,
    *,
    zero_namespace: str = ZERO_NAMESPACE,
) -> EnsembleEnd:
    """evolve(...) end values for many seeds, batched across seeds."""
    k_s, k_t = grid_cells(params, base, s, t)
    x0 = lattice_index(x, params.delta)
    level = params.level
    cells = k_t - k_s
    values: list[np.ndarray] = []
    visits: list[np.ndarray] = []
    ups: list[np.ndarray] = []
    for start in range(0, len(seeds), _SEED_BATCH):
        batch = seeds[start : start + _SEED_BATCH]
        # cells x seeds, so each step reads one contiguous row
        signs = np.empty((cells, len(batch)), dtype=np.int8)
        upsign = np.empty((cells + 1, len(batch)), dtype=np.int8)
        for col, seed in enumerate(batch):
            noise = base.with_seed(seed)
            if cells:
                signs[:, col] = noise.signs(channel, level, k_s, k_t)
            unif = noise.grid_uniforms(zero_namespace, level, k_s, k_t + 1)
            upsign[:, col] = np.where(unif < params.p_up, 1, -1)
        y = np.full(len(batch), x0, dtype=np.int64)
        count = np.zeros(len(batch), dtype=np.int64)
        for j in range(cells):
            at0 = y == 0
            y += np.where(at0, upsign[j], signs[j])
            count += at0
        values.append(y)
        visits.append(count)
        ups.append(upsign[cells] > 0)
    logger.debug("ensemble of %d seeds over %d cells", len(seeds), cells)
    return EnsembleEnd(
        seeds=tuple(seeds),
        values=np.concatenate(values),
        local_times=LOCAL_TIME_SCALE * params.delta * np.concatenate(visits).astype(np.float64),
        steps_up_at_t=np.concatenate(ups),
    )


@dataclass(frozen=True)
class FlowSample:
    """Walks from several starts driven by the same streams; row j belongs to starts[j]."""

    params: SkewParams
    channel: str
    s: Fraction
    t: Fraction
    starts: tuple[int, ...]
    values: np.ndarray
    visits: np.ndarray
    repairs: int = 0
    _rows: dict[int, int] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self) -> None:
        self._rows.update({x: j for j, x in enumerate(self.starts)})

    def row(self, x: float | Fraction) -> int:
        idx = lattice_index(x, self.params.delta)
        try:
            return self._rows[idx]
        except KeyError as exc:
            raise ConfigError(f"{x} is not a start of this flow sample") from exc

    def column(self, u: float | Fraction) -> int:
        j = (Fraction(u) - self.s) / self.params.time_step
        if j.denominator != 1 or not 0 <= j <= self.values.shape[1] - 1:
            raise HorizonError(f"time {u} is not a grid time of [{self.s}, {self.t}]")
        return j.numerator

    def index_value(self, idx: int, u: float | Fraction) -> int:
        return int(self.values[self._rows[idx], self.column(u)])

    def value(self, x: float | Fraction, u: float | Fraction) -> float:
        return float(self.values[self.row(x), self.column(u)]) * self.params.delta

    def local_time(self, x: float | Fraction, u: float | Fraction) -> float:
        visits = float(self.visits[self.row(x), self.column(u)])
        return LOCAL_TIME_SCALE * self.params.delta * visits

    def partition(self, u: float | Fraction) -> list[list[float]]:
        """Starts grouped by their common value at u."""
        col = self.values[:, self.column(u)]
        groups: dict[int, list[float]] = {}
        for x, v in zip(self.starts, col):
            groups.setdefault(int(v), []).append(x * self.params.delta)
        return [groups[k] for k in sorted(groups)]


def flow(
    params: SkewParams,
    noise: NoiseField,
    channel: str,
    s: float | Fraction,
    starts: Iterable[float | Fraction],
    t: float | Fraction,
    *,
    zero_namespace: str = ZERO_NAMESPACE,
) -> FlowSample:
    """All starts driven together; a step that would swap two walks coalesces them."""
    k_s, k_t = grid_cells(params, noise, s, t)
    idx = sorted({lattice_index(x, params.delta) for x in starts})
    if not idx:
        raise ConfigError("flow needs at least one start")
    drv = driver(noise, channel, params.level, zero_namespace)
    n = k_t - k_s
    values = np.empty((len(idx), n + 1), dtype=np.int64)
    visits = np.zeros((len(idx), n + 1), dtype=np.int64)
    y = np.array(idx, dtype=np.int64)
    count = np.zeros(len(idx), dtype=np.int64)
    values[:, 0] = y
    repairs = 0
    for j in range(n):
        k = k_s + j
        r = drv.step_sign(k)
        at0 = y == 0
        if at0.any():
            d = 1 if drv.steps_up(k, params.p_up) else -1
            new = np.where(at0, d, y + r)
            swapped = (y == d) & (r == -d)
            if swapped.any():
                repairs += int(swapped.sum())
                new[swapped] = d
        else:
            new = y + r
        count += at0
        y = new
        values[:, j + 1] = y
        visits[:, j + 1] = count
    if repairs:
        logger.debug("flow from %s: %d order repairs", s, repairs)
    return FlowSample(
        params=params,
        channel=channel,
        s=Fraction(s),
        t=Fraction(t),
        starts=tuple(idx),
        values=values,
        visits=visits,
        repairs=repairs,
    )


def coalescence_time(sample: FlowSample, x: float | Fraction, y: float | Fraction) -> float:
    """First grid time at which the walks from x and y agree; inf if they never do."""
    a = sample.values[sample.row(x)]
    b = sample.values[sample.row(y)]
    hits = np.flatnonzero(a == b)
    if not hits.size:
        return math.inf
    return float(sample.s + hits[0] * sample.params.time_step)


def _class_floor(q: Fraction, parity: int) -> int:
    j = math.floor(q)
    return j if (j - parity) % 2 == 0 else j - 1


def _class_ceil(q: Fraction, parity: int) -> int:
    j = math.ceil(q)
    return j if (j - parity) % 2 == 0 else j + 1


@dataclass(frozen=True)
class Anchor:
    """Anchor (n, v, y) for Y_{s,t}(x) and whether Y_{v,t}(y) reproduces it."""

    n: int
    v: Fraction
    y: float
    coalescence: float
    value: float
    identity_holds: bool

    def to_dict(self) -> dict[str, object]:
        return {
            "n": self.n,
            "v": float(self.v),
            "y": self.y,
            "coalescence": self.coalescence,
            "value": self.value,
            "identity_holds": self.identity_holds,
        }


def flow_anchor(
    params: SkewParams,
    noise: NoiseField,
    channel: str,
    s: float | Fraction,
    x: float | Fraction,
    t: float | Fraction,
    n_cap: int = DEFAULT_N_CAP,
) -> Anchor | None:
    """
    Least n whose walks from x -+ 1/n meet by t, the dyadic time v before they
    meet and the dyadic point y between them at v. Starts x -+ 1/n are rounded
    outward onto the space-time parity class of the rounded x.
    """
    s_f, t_f = Fraction(s), Fraction(t)
    if t_f <= s_f:
        raise HorizonError(f"anchor needs t > s, got s={s}, t={t}")
    delta = Fraction(params.delta)
    center = snap_to_lattice(x, params.delta)
    parity = center % 2
    brackets = [
        (
            _class_floor((Fraction(x) - Fraction(1, n)) / delta, parity),
            _class_ceil((Fraction(x) + Fraction(1, n)) / delta, parity),
        )
        for n in range(1, n_cap + 1)
    ]
    starts = {center} | {lo for lo, _ in brackets} | {hi for _, hi in brackets}
    sample = flow(params, noise, channel, s_f, [j * delta for j in starts], t_f)
    target = sample.index_value(center, t_f)

    for n, (lo, hi) in enumerate(brackets, start=1):
        if sample.index_value(lo, t_f) != sample.index_value(hi, t_f):
            continue
        meet = coalescence_time(sample, lo * delta, hi * delta)
        step = params.time_step
        v = dyadic_select(s_f, Fraction(meet))
        v = s_f + math.floor((v - s_f) / step) * step
        a, b = sample.index_value(lo, v), sample.index_value(hi, v)
        y_idx = a
        if a < b:
            q = dyadic_select(a * delta, b * delta) / delta
            cls = a % 2
            y_idx = min(max(_class_floor(q, cls), a), b)
        replay = trace_from(params, noise, channel, v, y_idx * delta, t_f)
        anchor = Anchor(
            n=n,
            v=v,
            y=float(y_idx * delta),
            coalescence=meet,
            value=float(target * delta),
            identity_holds=replay.value(replay.k1) == target,
        )
        if not anchor.identity_holds:
            logger.warning("anchor identity failed at s=%s x=%s t=%s", s, x, t)
        return anchor

    logger.debug("no anchor for s=%s x=%s t=%s within n_cap=%d", s, x, t, n_cap)
    return None


StoppingRule = Callable[[SkewParams, NoiseField, str], Fraction | None]


def fixed_rule(t: float | Fraction) -> StoppingRule:
    """Deterministic stopping time t."""

    def rule(params: SkewParams, noise: NoiseField, channel: str) -> Fraction:
        return Fraction(t)

    return rule


def hitting_rule(after: StoppingRule, x: float | Fraction, level: float = 0.0) -> StoppingRule:
    """
    First grid time >= after() at which the walk started there from x sits at
    level; None when that does not happen inside the horizon.
    """

    def rule(params: SkewParams, noise: NoiseField, channel: str) -> Fraction | None:
        start = after(params, noise, channel)
        if start is None:
            return None
        _, t_max = noise.horizon
        tr = trace_from(params, noise, channel, start, x, t_max)
        target = lattice_index(level, params.delta)
        for k in range(tr.k0, tr.k1 + 1):
            if tr.value(k) == target:
                return Fraction(k, 2**params.level)
        return None

    return rule


@dataclass(frozen=True)
class StrongFlowReport:
    """Mismatches of Y_{S,T+u} against Y_{T,T+u} o Y_{S,T}."""

    S: Fraction | None
    T: Fraction | None
    u: Fraction
    mismatches: tuple[tuple[float, float, float], ...]
    skipped: bool = False  # a stopping time missed, or T + u is past the horizon

    @property
    def passed(self) -> bool:
        return not self.mismatches


def strong_flow_check(
    params: SkewParams,
    noise: NoiseField,
    channel: str,
    S: StoppingRule,
    T: StoppingRule,
    u: float | Fraction,
    starts: Sequence[float | Fraction],
) -> StrongFlowReport:
    """Compare direct and composed flows at T + u for every start."""
    s_time = S(params, noise, channel)
    t_time = T(params, noise, channel)
    _, t_max = noise.horizon
    if s_time is None or t_time is None or t_time + Fraction(u) > t_max:
        logger.debug("strong flow check skipped: S=%s T=%s u=%s", s_time, t_time, u)
        return StrongFlowReport(S=s_time, T=t_time, u=Fraction(u), mismatches=(), skipped=True)
    if t_time < s_time:
        raise HorizonError(f"stopping times out of order: S={s_time} > T={t_time}")
    end = t_time + Fraction(u)
    direct = flow(params, noise, channel, s_time, starts, end)
    first = flow(params, noise, channel, s_time, starts, t_time)
    mid = [first.value(x, t_time) for x in starts]
    second = flow(params, noise, channel, t_time, mid, end)
    mismatches = []
    for x, m in zip(starts, mid):
        a = direct.value(x, end)
        b = second.value(m, end)
        if a != b:
            mismatches.append((float(x), a, b))
    return StrongFlowReport(S=s_time, T=t_time, u=Fraction(u), mismatches=tuple(mismatches))
