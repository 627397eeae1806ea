"""
Seeded white-noise fields on dyadic grids.

All randomness is a pure function of (master seed, stream, key):

- Gaussian channels. On every unit interval [k, k+1) one generator keyed by
  (seed, channel, k) yields a stream of normals read coarse to fine: entry 0
  drives the unit increment, entries [2^(l-1), 2^l) drive the Levy midpoint
  refinement of level l. Coarse levels are a prefix of the stream, so they
  never depend on how fine a level was requested. Increments are stored as
  integer multiples of QUANTUM, so a coarse increment is the exact sum of
  its children and additivity holds bit-for-bit once converted to float.
- Keyed uniforms. keyed_uniform(namespace, key) for a dyadic rational key
  reduces the key to lowest terms, splits it into its unit k and odd
  numerator o at level j, and reads one generator keyed by
  (seed, namespace, k) at position 0 for integers and 2^(j-1) + (o-1)/2
  otherwise. A whole grid is one bulk draw and a gather; isolated deep keys
  jump straight to their position with the bit generator's advance. The
  value depends on the key only, never on n_max or on the query order.

Stream names are hashed to 64-bit codes with sha256, so distinct namespaces
and channels never share a generator.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
from scipy import ndimage

from .core import ConfigError, HorizonError

logger = logging.getLogger(__name__)

QUANTUM_BITS = 40
QUANTUM = 2.0**-QUANTUM_BITS
SHARED_CHANNEL = "W"
MAX_KEY_LEVEL = 48
DENSE_KEY_LEVEL = 20
_MIN_DRAW = 64

_MASK64 = (1 << 64) - 1


def _stream_code(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "big")


def _zigzag(value: int) -> int:
    return (value << 1) & _MASK64 if value >= 0 else ((-value << 1) - 1) & _MASK64


def _key_position(r: int, level: int) -> int:
    """Stream position of the key r / 2^level inside its unit, 0 <= r < 2^level."""
    if r == 0:
        return 0
    low = r & -r
    j = level - (low.bit_length() - 1)
    return (1 << (j - 1)) + (r // low - 1) // 2


def _key_positions(r: np.ndarray, level: int) -> np.ndarray:
    """Vectorized _key_position."""
    if level == 0:
        return np.zeros(r.shape, dtype=np.int64)
    safe = np.where(r == 0, 1, r)
    low = safe & -safe
    j = level - np.log2(low).astype(np.int64)
    pos = np.left_shift(1, j - 1) + (safe // low - 1) // 2
    return np.where(r == 0, 0, pos).astype(np.int64)


def lattice_level(delta: float) -> int:
    """Noise level 2m of the lattice cells for delta = 2^-m."""
    if not 0 < delta <= 1:
        raise ConfigError(f"lattice step {delta} is not a power of two 2^-m with m >= 0")
    m = -math.log2(delta)
    if m != int(m):
        raise ConfigError(f"lattice step {delta} is not a power of two 2^-m with m >= 0")
    return 2 * int(m)


@dataclass(frozen=True)
class DyadicGrid:
    """D_n = {k 2^-n}; floor(s) = s_n and next(s) = s_n + 2^-n."""

    level: int

    @property
    def step(self) -> Fraction:
        return Fraction(1, 2**self.level)

    def floor(self, s: float | Fraction) -> Fraction:
        return Fraction(math.floor(Fraction(s) * 2**self.level), 2**self.level)

    def next(self, s: float | Fraction) -> Fraction:
        return self.floor(s) + self.step

    def contains(self, s: float | Fraction) -> bool:
        return (Fraction(s) * 2**self.level).denominator == 1

    def points(self, lo: float | Fraction, hi: float | Fraction) -> list[Fraction]:
        """Grid points in [lo, hi]."""
        first = math.ceil(Fraction(lo) * 2**self.level)
        last = math.floor(Fraction(hi) * 2**self.level)
        return [Fraction(k, 2**self.level) for k in range(first, last + 1)]


@dataclass(frozen=True)
class NoiseField:
    """
    Gaussian channels and keyed uniform streams for one master seed.

    channel_map sends edge ids to channel ids; edges missing from the map use
    the shared channel "W". The horizon must have integer endpoints.
    """

    seed: int
    n_max: int
    horizon: tuple[float, float] = (0.0, 1.0)
    channel_map: Mapping[str, str] = field(default_factory=dict)
    salts: tuple[tuple[str, str, int], ...] = ()
    _cache: dict[Any, Any] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self) -> None:
        t_min, t_max = self.horizon
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")
        if self.n_max < 0:
            raise ConfigError(f"n_max must be non-negative, got {self.n_max}")
        if not (float(t_min).is_integer() and float(t_max).is_integer() and t_min < t_max):
            raise ConfigError(f"horizon {self.horizon} must be integers t_min < t_max")

    @classmethod
    def for_edges(
        cls,
        *,
        seed: int,
        n_max: int,
        horizon: tuple[float, float],
        edge_ids: Iterable[str],
        channels: str = "shared",
    ) -> NoiseField:
        """Field with the shared regime (all edges on W) or one channel per edge."""
        if channels == "shared":
            mapping: dict[str, str] = {}
        elif channels == "per-edge":
            mapping = {e: f"{SHARED_CHANNEL}:{e}" for e in edge_ids}
        else:
            raise ConfigError(f"channels must be 'shared' or 'per-edge', got {channels!r}")
        return cls(seed=seed, n_max=n_max, horizon=horizon, channel_map=mapping)

    @classmethod
    def from_spec(cls, spec: Mapping[str, Any], edge_ids: Iterable[str] = ()) -> NoiseField:
        try:
            return cls.for_edges(
                seed=int(spec["seed"]),
                n_max=int(spec["n_max"]),
                horizon=(float(spec["horizon"][0]), float(spec["horizon"][1])),
                edge_ids=edge_ids,
                channels=str(spec.get("channels", "shared")),
            )
        except (KeyError, IndexError, TypeError) as exc:
            raise ConfigError(f"noise spec is malformed: {exc}") from exc

    def memo(self, key: Any, factory: Any) -> Any:
        """Cache a value derived from this field's streams (lattice drivers, walks)."""
        cached = self._cache.get(key)
        if cached is None:
            cached = factory()
            self._cache[key] = cached
        return cached

    def with_seed(self, seed: int) -> NoiseField:
        return replace(self, seed=seed, _cache={})

    def with_salt(self, prefix: str, salt: int = 1, kind: str = "uniform") -> NoiseField:
        """Re-key the streams of one kind ("uniform" or "gauss") whose name starts with prefix."""
        if kind not in ("uniform", "gauss"):
            raise ConfigError(f"unknown stream kind {kind!r}")
        return replace(self, salts=self.salts + ((kind, prefix, salt),), _cache={})

    # -- channels and codes -------------------------------------------------

    def channel_of(self, edge_id: str) -> str:
        return self.channel_map.get(edge_id, SHARED_CHANNEL)

    @property
    def channels(self) -> tuple[str, ...]:
        return tuple(sorted(set(self.channel_map.values()))) or (SHARED_CHANNEL,)

    def _code(self, kind: str, name: str) -> int:
        tag = f"{kind}/{name}"
        for salt_kind, prefix, salt in self.salts:
            if salt_kind == kind and name.startswith(prefix):
                tag += f"#{salt}"
        return _stream_code(tag)

    def _rng(self, kind: str, name: str, unit: int) -> np.random.Generator:
        seq = np.random.SeedSequence([self.seed, self._code(kind, name), _zigzag(unit)])
        return np.random.default_rng(seq)

    def _unit_draws(self, kind: str, name: str, unit: int, size: int) -> np.ndarray:
        """First size entries of the unit's stream; longer reads extend the same stream."""
        key = ("draws", kind, name, unit)
        cached = self._cache.get(key)
        if cached is None or cached.size < size:
            total = max(_MIN_DRAW, 1 << max(size - 1, 0).bit_length())
            rng = self._rng(kind, name, unit)
            cached = rng.standard_normal(total) if kind == "gauss" else rng.random(total)
            self._cache[key] = cached
        return cached

    # -- grid bookkeeping ----------------------------------------------------

    def cell_range(self, level: int) -> tuple[int, int]:
        """Absolute indices [k_lo, k_hi) of the level cells covering the horizon."""
        t_min, t_max = self.horizon
        return int(t_min) << level, int(t_max) << level

    def grid_index(self, t: float | Fraction, level: int) -> int:
        """Absolute grid index of t at a level; t must be on the grid and inside the horizon."""
        scaled = Fraction(t) * 2**level
        if scaled.denominator != 1:
            raise HorizonError(f"time {t} is finer than level {level}")
        k = scaled.numerator
        k_lo, k_hi = self.cell_range(level)
        if not k_lo <= k <= k_hi:
            raise HorizonError(f"time {t} outside horizon {self.horizon}")
        return k

    def _check_level(self, level: int) -> None:
        if not 0 <= level <= self.n_max:
            raise HorizonError(f"level {level} outside [0, n_max={self.n_max}]")

    # -- Gaussian channels ----------------------------------------------------

    def _unit_quanta(self, channel: str, unit: int, level: int) -> np.ndarray:
        """Level increments on [unit, unit+1) as integer multiples of QUANTUM."""
        key = ("quanta", channel, unit, level)
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        z = self._unit_draws("gauss", channel, unit, 1 << level)
        if level == 0:
            out = np.array([int(np.rint(z[0] / QUANTUM))], dtype=np.int64)
        else:
            parent = self._unit_quanta(channel, unit, level - 1)
            # bridge midpoint: left half has mean P/2 and sd sqrt(h)/2 for parent length h
            sd = math.sqrt(2.0 ** -(level - 1)) / 2.0
            fresh = z[parent.size : 2 * parent.size]
            left = np.rint(parent / 2.0 + (sd / QUANTUM) * fresh).astype(np.int64)
            out = np.empty(2 * parent.size, dtype=np.int64)
            out[0::2] = left
            out[1::2] = parent - left
        self._cache[key] = out
        return out

    def level_quanta(self, channel: str, level: int) -> np.ndarray:
        """Increments of every level cell in the horizon, in QUANTUM units."""
        self._check_level(level)
        key = ("level", channel, level)
        cached = self._cache.get(key)
        if cached is None:
            t_min, t_max = self.horizon
            cached = np.concatenate(
                [self._unit_quanta(channel, u, level) for u in range(int(t_min), int(t_max))]
            )
            self._cache[key] = cached
        return cached

    def _prefix(self, channel: str, level: int) -> np.ndarray:
        key = ("prefix", channel, level)
        cached = self._cache.get(key)
        if cached is None:
            quanta = self.level_quanta(channel, level)
            cached = np.concatenate([[0], np.cumsum(quanta, dtype=np.int64)])
            self._cache[key] = cached
        return cached

    def increment(self, channel: str, s: float | Fraction, t: float | Fraction) -> float:
        """W_{s,t} on a channel; exact sums of the finest increments."""
        if t < s:
            raise HorizonError(f"increment needs s <= t, got s={s}, t={t}")
        k_lo, _ = self.cell_range(self.n_max)
        i_s = self.grid_index(s, self.n_max) - k_lo
        i_t = self.grid_index(t, self.n_max) - k_lo
        prefix = self._prefix(channel, self.n_max)
        return float(int(prefix[i_t]) - int(prefix[i_s])) * QUANTUM

    def path(self, channel: str, s: float | Fraction, t: float | Fraction) -> np.ndarray:
        """W_{s,u} for u on the finest grid of [s, t]."""
        k_lo, _ = self.cell_range(self.n_max)
        i_s = self.grid_index(s, self.n_max) - k_lo
        i_t = self.grid_index(t, self.n_max) - k_lo
        prefix = self._prefix(channel, self.n_max)
        return (prefix[i_s : i_t + 1] - prefix[i_s]).astype(np.float64) * QUANTUM

    # -- lattice driving signs -----------------------------------------------

    def signs(self, channel: str, level: int, k0: int, k1: int) -> np.ndarray:
        """Signs (+1 for a non-negative increment) of level cells k0..k1-1."""
        k_lo, k_hi = self.cell_range(level)
        if not k_lo <= k0 <= k1 <= k_hi:
            raise HorizonError(f"cells [{k0}, {k1}) outside horizon at level {level}")
        quanta = self.level_quanta(channel, level)[k0 - k_lo : k1 - k_lo]
        return np.where(quanta >= 0, 1, -1).astype(np.int64)

    def walk_prefix(self, channel: str, level: int) -> np.ndarray:
        """Cumulative sum of the level signs from t_min, with a leading 0."""
        key = ("walk", channel, level)
        cached = self._cache.get(key)
        if cached is None:
            k_lo, k_hi = self.cell_range(level)
            cached = np.concatenate([[0], np.cumsum(self.signs(channel, level, k_lo, k_hi))])
            self._cache[key] = cached
        return cached

    def rademacher(self, channel: str, s: float | Fraction, t: float | Fraction) -> int:
        """Sign of the increment over the dyadic cell [s, t]."""
        width = Fraction(t) - Fraction(s)
        if width <= 0 or width.numerator != 1 or width.denominator & (width.denominator - 1):
            raise HorizonError(f"[{s}, {t}] is not a dyadic cell")
        level = width.denominator.bit_length() - 1
        k = self.grid_index(s, level)
        return int(self.signs(channel, level, k, k + 1)[0])

    # -- keyed uniforms ------------------------------------------------------

    def keyed_uniform(self, namespace: str, key: float | Fraction) -> float:
        """Uniform in [0, 1) keyed by a dyadic rational."""
        frac = Fraction(key)
        den = frac.denominator
        if den & (den - 1):
            raise ConfigError(f"key {key} is not a dyadic rational")
        level = den.bit_length() - 1
        if level > MAX_KEY_LEVEL:
            raise ConfigError(f"key {key} is finer than level {MAX_KEY_LEVEL}")
        unit = frac.numerator // den
        pos = _key_position(frac.numerator - unit * den, level)
        if level <= DENSE_KEY_LEVEL:
            return float(self._unit_draws("uniform", namespace, unit, pos + 1)[pos])
        rng = self._rng("uniform", namespace, unit)
        rng.bit_generator.advance(pos)
        return float(rng.random())

    def grid_uniforms(self, namespace: str, level: int, k0: int, k1: int) -> np.ndarray:
        """keyed_uniform(namespace, k / 2^level) for k in [k0, k1), vectorized."""
        if level > DENSE_KEY_LEVEL:
            return np.array(
                [self.keyed_uniform(namespace, Fraction(k, 1 << level)) for k in range(k0, k1)],
                dtype=np.float64,
            )
        idx = np.arange(k0, k1, dtype=np.int64)
        units = idx >> level
        pos = _key_positions(idx - (units << level), level)
        out = np.empty(idx.shape, dtype=np.float64)
        for unit in np.unique(units):
            mask = units == unit
            wanted = pos[mask]
            draws = self._unit_draws("uniform", namespace, int(unit), int(wanted.max()) + 1)
            out[mask] = draws[wanted]
        return out

    # -- oscillation events ----------------------------------------------------

    def _event_paths(
        self,
        s: float | Fraction,
        t: float | Fraction,
        channels: Sequence[str] | None,
        delta: float | None,
    ) -> tuple[list[np.ndarray], float, int]:
        """Integer paths on [s, t] per channel, the unit they are measured in, and their level."""
        names = list(channels) if channels is not None else list(self.channels)
        if delta is None:
            level, unit = self.n_max, QUANTUM
            k_lo, _ = self.cell_range(level)
            prefixes = [self._prefix(c, level) for c in names]
        else:
            level, unit = lattice_level(delta), delta
            k_lo, _ = self.cell_range(level)
            prefixes = [self.walk_prefix(c, level) for c in names]
        i_s = self.grid_index(s, level) - k_lo
        i_t = self.grid_index(t, level) - k_lo
        return [p[i_s : i_t + 1] for p in prefixes], unit, level

    def event_A(
        self,
        s: float | Fraction,
        t: float | Fraction,
        L: float,
        *,
        channels: Sequence[str] | None = None,
        delta: float | None = None,
    ) -> bool:
        """Every channel oscillates by less than L on [s, t]."""
        if t == s or math.isinf(L):
            return True
        paths, unit, _ = self._event_paths(s, t, channels, delta)
        return all(float(int(p.max()) - int(p.min())) * unit < L for p in paths)

    def omega_n(
        self,
        s: float | Fraction,
        t: float | Fraction,
        L: float,
        n: int,
        *,
        channels: Sequence[str] | None = None,
        delta: float | None = None,
    ) -> bool:
        """Every window of width at most 2^-n inside [s, t] oscillates by less than L."""
        if t == s or math.isinf(L):
            return True
        paths, unit, level = self._event_paths(s, t, channels, delta)
        gap = max(1, 1 << max(level - n, 0))
        for p in paths:
            size = gap + 1
            if size >= p.size:
                osc = int(p.max()) - int(p.min())
            else:
                hi = ndimage.maximum_filter1d(p, size=size, mode="nearest")
                lo = ndimage.minimum_filter1d(p, size=size, mode="nearest")
                osc = int((hi - lo).max())
            if float(osc) * unit >= L:
                return False
        return True

    def min_level(
        self,
        s: float | Fraction,
        t: float | Fraction,
        L: float,
        *,
        channels: Sequence[str] | None = None,
        delta: float | None = None,
        max_level: int | None = None,
    ) -> int | None:
        """n_{s,t}: the least n with omega_n, or None when no level up to max_level works."""
        top = max_level
        if top is None:
            top = lattice_level(delta) if delta is not None else self.n_max
        for n in range(top + 1):
            if self.omega_n(s, t, L, n, channels=channels, delta=delta):
                return n
        return None


def increment(field_: NoiseField, channel: str, s: float | Fraction, t: float | Fraction) -> float:
    return field_.increment(channel, s, t)


def event_A(
    field_: NoiseField, s: float | Fraction, t: float | Fraction, L: float, **kw: Any
) -> bool:
    return field_.event_A(s, t, L, **kw)


def omega_n(
    field_: NoiseField, s: float | Fraction, t: float | Fraction, L: float, n: int, **kw: Any
) -> bool:
    return field_.omega_n(s, t, L, n, **kw)


def rademacher(field_: NoiseField, channel: str, s: float | Fraction, t: float | Fraction) -> int:
    return field_.rademacher(channel, s, t)


def keyed_uniform(field_: NoiseField, namespace: str, key: float | Fraction) -> float:
    return field_.keyed_uniform(namespace, key)
