"""
Verification harness: exact per-realization checks and Monte Carlo tests.

Every test returns a TestReport. Exact tests list counterexamples; statistical
tests state their null hypothesis, the acceptance band and a p-value. A test's
seeds are the consecutive integers [seed, seed + n).

Statistical verdicts use 3-sigma bands. Below NORMAL_MIN samples the binomial
verdict comes from the exact binomial p-value instead of the normal band.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Any, Mapping, Sequence

import numpy as np
from scipy import stats

from .core import ConfigError
from .engine import map_seeds
from .graph import BumpTerm, Edge, EdgeFunction, GraphPoint, MetricGraph, TestFunction, evaluate
from .graphflow import (
    AtomMeasure,
    GlobalFlowConfig,
    chart_identity,
    compose,
    graph_point,
    k,
    k0,
    restrict_to_star,
    rho,
)
from .noise import SHARED_CHANNEL, NoiseField, lattice_level
from .sbmflow import (
    DEFAULT_N_CAP,
    ZERO_NAMESPACE,
    SkewParams,
    driver,
    ensemble_endpoints,
    fixed_rule,
    flow_anchor,
    hitting_rule,
    strong_flow_check,
    trace_from,
)
from .starflow import ExcursionLabeler, StarFlow, StarGraphSpec, StarPoint

logger = logging.getLogger(__name__)

SIGMAS = 3.0
THREE_SIGMA_ALPHA = float(2.0 * stats.norm.sf(SIGMAS))
NORMAL_MIN = 10_000
STATUSES = ("pass", "fail", "skipped", "hypothesis-not-met")


@dataclass(frozen=True)
class TestReport:
    """Outcome of one check."""

    __test__ = False  # not a pytest class

    test_id: str
    mode: str
    sample_size: int
    status: str
    statistic: float | None = None
    threshold: float | None = None
    null: str = ""
    band: tuple[float, float] | None = None
    p_value: float | None = None
    seeds: tuple[int, int] = (0, 0)
    counterexamples: tuple[Mapping[str, Any], ...] = ()
    details: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.status not in STATUSES:
            raise ValueError(f"unknown status {self.status!r}")

    @property
    def passed(self) -> bool | None:
        if self.status in ("skipped", "hypothesis-not-met"):
            return None
        return self.status == "pass"

    def to_dict(self) -> dict[str, Any]:
        return {
            "test_id": self.test_id,
            "mode": self.mode,
            "sample_size": self.sample_size,
            "status": self.status,
            "statistic": self.statistic,
            "threshold": self.threshold,
            "null": self.null,
            "band": list(self.band) if self.band is not None else None,
            "p_value": self.p_value,
            "seeds": list(self.seeds),
            "counterexamples": [dict(c) for c in self.counterexamples],
            "details": dict(self.details),
        }


def _status(ok: bool) -> str:
    return "pass" if ok else "fail"


def _seeds(seed: int, n: int) -> list[int]:
    if n < 1:
        raise ConfigError(f"sample size must be positive, got {n}")
    return list(range(seed, seed + n))


def _binomial(count: int, n: int, p: float) -> tuple[bool, tuple[float, float], float]:
    """3-sigma verdict on count ~ Binomial(n, p), with the exact p-value."""
    sigma = math.sqrt(p * (1.0 - p) / n)
    band = (p - SIGMAS * sigma, p + SIGMAS * sigma)
    p_value = float(stats.binomtest(count, n, p).pvalue)
    if n >= NORMAL_MIN:
        return band[0] <= count / n <= band[1], band, p_value
    return p_value >= THREE_SIGMA_ALPHA, band, p_value


def negative_control(report: TestReport, test_id: str) -> TestReport:
    """A control passes when the check it wraps fails."""
    if report.passed is None:
        return replace(report, test_id=test_id)
    return replace(
        report,
        test_id=test_id,
        status=_status(report.passed is False),
        p_value=None,
        details={**report.details, "control_of": report.test_id, "inner_status": report.status},
    )


def _noise(seed: int, delta: float, horizon: float | Fraction) -> NoiseField:
    end = float(math.ceil(horizon))
    return NoiseField(seed=seed, n_max=lattice_level(delta), horizon=(0.0, end))


# -- flows ---------------------------------------------------------------------


def flow_property_suite(
    config: GlobalFlowConfig,
    triples: Sequence[tuple[Fraction, Fraction, Fraction]],
    starts: Sequence[GraphPoint],
    *,
    n: int,
    seed: int = 0,
    corrupt_namespace: str | None = None,
) -> TestReport:
    """mu K_{s,u} == mu K_{s,t} K_{t,u} atom for atom; corrupt_namespace re-keys the second leg."""

    def check(sd: int) -> dict[str, Any] | None:
        cfg = config.with_noise(config.noise.with_seed(sd))
        later = cfg
        if corrupt_namespace is not None:
            later = cfg.with_noise(cfg.noise.with_salt(corrupt_namespace))
        for s, t, u in triples:
            for x in starts:
                direct = k(cfg, s, u, x)
                composed = compose(later, k(cfg, s, t, x), t, u)
                if direct != composed:
                    return {
                        "seed": sd,
                        "s": str(s),
                        "t": str(t),
                        "u": str(u),
                        "x": x.to_dict(),
                        "direct": direct.to_dict(),
                        "composed": composed.to_dict(),
                    }
        return None

    found = [c for c in map_seeds(check, _seeds(seed, n)) if c is not None]
    return TestReport(
        test_id="flow_property",
        mode="exact",
        sample_size=n,
        status=_status(not found),
        statistic=float(len(found)),
        threshold=0.0,
        null="direct and composed kernels agree on every realization",
        seeds=(seed, n),
        counterexamples=tuple(found[:1]),
        details={"triples": len(triples), "starts": len(starts), "corrupted": corrupt_namespace},
    )


def sign_law_test(
    beta: float,
    t: float | Fraction,
    n: int,
    *,
    delta: float = 2.0**-5,
    seed: int = 0,
    claimed_beta: float | None = None,
) -> TestReport:
    """P(Y_t > 0) from 0 equals (1 + beta) / 2; ties at 0 break by the zero-site decision at t."""
    params = SkewParams(beta=beta, delta=delta)
    claim = beta if claimed_beta is None else claimed_beta
    p = (1.0 + claim) / 2.0
    noise = _noise(seed, delta, t)
    ends = ensemble_endpoints(params, noise, _seeds(seed, n), SHARED_CHANNEL, 0, 0, t)
    count = int(ends.positive_with_ties().sum())
    null = f"P(Y_t > 0) = {p:g}"
    if p in (0.0, 1.0):
        ok = count == round(n * p)
        return TestReport(
            test_id="sign_law",
            mode="exact",
            sample_size=n,
            status=_status(ok),
            statistic=count / n,
            threshold=p,
            null=null,
            seeds=(seed, n),
            details={"beta": beta},
        )
    ok, band, p_value = _binomial(count, n, p)
    logger.debug("sign law beta=%g: %d / %d positive", beta, count, n)
    return TestReport(
        test_id="sign_law",
        mode="statistical",
        sample_size=n,
        status=_status(ok),
        statistic=count / n,
        threshold=p,
        null=null,
        band=band,
        p_value=p_value,
        seeds=(seed, n),
        details={"beta": beta, "claimed_beta": claim},
    )


def local_time_test(
    n: int,
    *,
    delta: float = 2.0**-5,
    t: float = 1.0,
    seed: int = 0,
    tolerance: float = 0.05,
    scale: float = 1.0,
) -> TestReport:
    """E L_{0,t} of the symmetric walk from 0 within tolerance of sqrt(2 t / pi)."""
    params = SkewParams(beta=0.0, delta=delta)
    noise = _noise(seed, delta, t)
    ends = ensemble_endpoints(params, noise, _seeds(seed, n), SHARED_CHANNEL, 0, 0, t)
    mean = float(ends.local_times.mean()) * scale
    target = math.sqrt(2.0 * t / math.pi)
    band = (target * (1.0 - tolerance), target * (1.0 + tolerance))
    return TestReport(
        test_id="local_time",
        mode="statistical",
        sample_size=n,
        status=_status(band[0] <= mean <= band[1]),
        statistic=mean,
        threshold=target,
        null=f"E L_0,t = sqrt(2t/pi) within {tolerance:.0%}",
        band=band,
        seeds=(seed, n),
        details={"stderr": float(ends.local_times.std(ddof=1) / math.sqrt(n)) if n > 1 else None},
    )


def _walsh(
    spec: StarGraphSpec,
    labeler: ExcursionLabeler | None,
    seed: int,
    delta: float,
    t: float | Fraction,
) -> StarFlow:
    return StarFlow(
        spec=spec,
        labeler=labeler or ExcursionLabeler.mapping(spec),
        noise=_noise(seed, delta, t),
        delta=delta,
    )


def edge_label_test(
    spec: StarGraphSpec,
    edge: int,
    n: int,
    *,
    delta: float = 2.0**-4,
    t: float = 1.0,
    seed: int = 0,
    claimed: float | None = None,
) -> TestReport:
    """Given the side of phi_{0,t}(0), the edge frequency matches alpha^edge / alpha_side."""
    side = spec.sign(edge)
    weights = dict(zip(spec.side_edges(side), spec.side_weights(side)))
    p = float(weights[edge]) if claimed is None else claimed

    def outcome(sd: int) -> int | None:
        end = _walsh(spec, None, sd, delta, t).phi(0, StarPoint.center(), t)
        return end.edge

    edges = map_seeds(outcome, _seeds(seed, n))
    on_side = [e for e in edges if e is not None and spec.sign(e) == side]
    if not on_side:
        return TestReport(
            test_id="edge_label", mode="statistical", sample_size=0, status="skipped",
            seeds=(seed, n), details={"reason": "no endpoint on the tested side"},
        )
    count = sum(1 for e in on_side if e == edge)
    ok, band, p_value = _binomial(count, len(on_side), p)
    return TestReport(
        test_id="edge_label",
        mode="statistical",
        sample_size=len(on_side),
        status=_status(ok),
        statistic=count / len(on_side),
        threshold=p,
        null=f"P(edge {edge} | side {side:+d}) = {p:g}",
        band=band,
        p_value=p_value,
        seeds=(seed, n),
        details={"edge": edge},
    )


def radial_side_test(
    spec: StarGraphSpec,
    labeler: ExcursionLabeler,
    times: Sequence[Fraction],
    n: int,
    *,
    delta: float = 2.0**-4,
    seed: int = 0,
) -> TestReport:
    """Every atom of K_{0,t}(0) sits at distance |Y_t| on the side of sign(Y_t)."""
    horizon = max(times)

    def check(sd: int) -> dict[str, Any] | None:
        star = _walsh(spec, labeler, sd, delta, horizon)
        for t in times:
            y = star.radial_value(0, StarPoint.center(), t)
            value = star.kernel(0, StarPoint.center(), t)
            for atom in value.atoms:
                side_ok = (atom.edge is None) if y == 0 else (
                    atom.edge is not None and spec.sign(atom.edge) * y > 0
                )
                if atom.radius != abs(y) or not side_ok:
                    return {"seed": sd, "t": str(t), "Y": y, "atom": atom.to_dict()}
        return None

    found = [c for c in map_seeds(check, _seeds(seed, n)) if c is not None]
    return TestReport(
        test_id="radial_side",
        mode="exact",
        sample_size=n * len(times),
        status=_status(not found),
        statistic=float(len(found)),
        threshold=0.0,
        null="atoms at radius |Y| on the side of sign(Y)",
        seeds=(seed, n),
        counterexamples=tuple(found[:5]),
        details={"mode": labeler.mode},
    )


# -- SDE residual ----------------------------------------------------------------


def _integrate(measure: AtomMeasure, f: TestFunction) -> tuple[float, float]:
    value = 0.0
    second = 0.0
    for p, w in measure.atoms:
        v, _, d2 = evaluate(f, p)
        value += float(w) * v
        second += float(w) * d2
    return value, second


def _martingale_path(
    config: GlobalFlowConfig, f: TestFunction, x: GraphPoint, s: Fraction, t: Fraction, channel: str
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """M_t, the per-cell dM, the increments dW of channel and the K f' weight on that channel."""
    step = config.time_step
    k_s, k_t = config.cells(s, t)
    level = config.level
    walk = driver(config.noise, channel, level, ZERO_NAMESPACE)
    measure = AtomMeasure.dirac(x)
    value, second = _integrate(measure, f)
    start = value
    drift = 0.0
    dm = np.empty(k_t - k_s)
    dw = np.empty(k_t - k_s)
    weight = np.empty(k_t - k_s)
    u = s
    for j, cell in enumerate(range(k_s, k_t)):
        coef = 0.0
        for p, w in measure.atoms:
            if p.edge is not None and config.noise.channel_of(p.edge) == channel:
                coef += float(w) * evaluate(f, p)[1]
        nxt = compose(config, measure, u, u + step, kernel=k0)
        new_value, new_second = _integrate(nxt, f)
        dm[j] = new_value - value - 0.5 * float(step) * second
        dw[j] = walk.step_sign(cell) * config.delta
        weight[j] = coef
        drift += 0.5 * float(step) * second
        measure, value, second, u = nxt, new_value, new_second, u + step
    return value - start - drift, dm, dw, weight


def freidlin_sheu_test(
    config: GlobalFlowConfig,
    f: TestFunction,
    x: GraphPoint,
    horizon: float | Fraction,
    n: int,
    *,
    seed: int = 0,
    s: float | Fraction = 0,
) -> TestReport:
    """
    M_t = K_{s,t} f(x) - f(x) - 1/2 int K_{s,u} f''(x) du has mean 0, and the
    least-squares slope of dM on dW recovers the average K f' weight.

    Both verdicts are Student t tests at the 3-sigma level.
    """
    s_f, t_f = Fraction(s), Fraction(horizon)
    channel = config.noise.channels[0]

    def run(sd: int) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
        cfg = config.with_noise(config.noise.with_seed(sd))
        return _martingale_path(cfg, f, x, s_f, t_f, channel)

    results = map_seeds(run, _seeds(seed, n))
    ends = np.array([r[0] for r in results])
    dm = np.concatenate([r[1] for r in results])
    dw = np.concatenate([r[2] for r in results])
    weight = np.concatenate([r[3] for r in results])

    mean = float(ends.mean())
    sd_end = float(ends.std(ddof=1)) if n > 1 else 0.0
    half = 0.0
    if sd_end == 0.0:
        mean_ok, mean_p = abs(mean) < 1e-9, None
    else:
        half = float(stats.t.ppf(1.0 - THREE_SIGMA_ALPHA / 2.0, n - 1)) * sd_end / math.sqrt(n)
        mean_p = float(stats.ttest_1samp(ends, 0.0).pvalue)
        mean_ok = mean_p >= THREE_SIGMA_ALPHA

    expected = float(weight.mean()) if weight.size else 0.0
    slope, slope_err, slope_p = expected, 0.0, None
    if dm.size < 3 or np.ptp(dw) == 0.0:
        slope_ok = bool(np.allclose(dm, 0.0, atol=1e-12))
    else:
        fit = stats.linregress(dw, dm)
        slope, slope_err = float(fit.slope), float(fit.stderr)
        # linear stretches give a float-exact fit
        if math.isclose(slope, expected, rel_tol=1e-9, abs_tol=1e-12):
            slope_ok = True
        elif slope_err == 0.0:
            slope_ok = False
        else:
            score = (slope - expected) / slope_err
            slope_p = float(2.0 * stats.t.sf(abs(score), dm.size - 2))
            slope_ok = slope_p >= THREE_SIGMA_ALPHA
    exact = sd_end == 0.0 and slope_err == 0.0
    p_values = [p for p in (mean_p, slope_p) if p is not None]
    return TestReport(
        test_id="freidlin_sheu",
        mode="exact" if exact else "statistical",
        sample_size=n,
        status=_status(mean_ok and slope_ok),
        statistic=mean,
        threshold=half,
        null="E M_t = 0 and slope of dM on dW = mean K f'",
        band=(-half, half) if n > 1 else None,
        p_value=min(p_values) if p_values else None,
        seeds=(seed, n),
        details={
            "function": f.name,
            "slope": slope,
            "expected_slope": expected,
            "slope_stderr": slope_err,
            "slope_p_value": slope_p,
            "mean_p_value": mean_p,
            "slope_ok": slope_ok,
            "mean_ok": mean_ok,
        },
    )


# -- common zeros and conditional independence -------------------------------------


def zeros_condition(beta1: float, beta2: float) -> bool:
    """|beta2 - beta1| >= 2 beta1 beta2 with beta1 != beta2."""
    return beta1 != beta2 and abs(beta2 - beta1) >= 2.0 * beta1 * beta2


def _common_zero_rate(
    beta1: float, beta2: float, delta: float, seeds: Sequence[int], horizon: float, epsilon: float
) -> float:
    """Share of seeds whose walks from 0 meet at zero at a grid time in [epsilon, horizon]."""
    level = lattice_level(delta)
    cells = int(horizon) << level
    first = math.ceil(epsilon * (1 << level))
    p1, p2 = (1.0 + beta1) / 2.0, (1.0 + beta2) / 2.0
    hits = 0
    batch = 1024
    for start in range(0, len(seeds), batch):
        chunk = seeds[start : start + batch]
        signs = np.empty((cells, len(chunk)), dtype=np.int8)
        up1 = np.empty((cells, len(chunk)), dtype=np.int8)
        up2 = np.empty((cells, len(chunk)), dtype=np.int8)
        for col, sd in enumerate(chunk):
            noise = _noise(sd, delta, horizon)
            signs[:, col] = noise.signs(SHARED_CHANNEL, level, 0, cells)
            unif = noise.grid_uniforms(ZERO_NAMESPACE, level, 0, cells)
            up1[:, col] = np.where(unif < p1, 1, -1)
            up2[:, col] = np.where(unif < p2, 1, -1)
        x = np.zeros(len(chunk), dtype=np.int64)
        y = np.zeros(len(chunk), dtype=np.int64)
        met = np.zeros(len(chunk), dtype=bool)
        for j in range(cells):
            if j >= first:
                met |= (x == 0) & (y == 0)
            x += np.where(x == 0, up1[j], signs[j])
            y += np.where(y == 0, up2[j], signs[j])
        met |= (x == 0) & (y == 0)
        hits += int(met.sum())
    return hits / len(seeds)


def disjoint_zeros_test(
    beta1: float,
    beta2: float,
    n: int,
    *,
    deltas: Sequence[float] = (2.0**-5, 2.0**-6, 2.0**-7),
    horizon: float = 1.0,
    epsilon: float = 1.0 / 16.0,
    floor: float = 0.1,
    seed: int = 0,
) -> TestReport:
    """
    q(delta) = P(common zero in [epsilon, horizon]) for walks from 0 on one
    channel: decreasing and halved across the sweep when the geometric
    condition holds, at least floor throughout when it fails.
    """
    if beta1 == beta2:
        return TestReport(
            test_id="disjoint_zeros", mode="statistical", sample_size=0, status="skipped",
            seeds=(seed, n), details={"reason": "beta1 == beta2"},
        )
    seeds = _seeds(seed, n)
    q = [_common_zero_rate(beta1, beta2, d, seeds, horizon, epsilon) for d in deltas]
    holds = zeros_condition(beta1, beta2)
    if holds:
        ok = all(a > b for a, b in zip(q, q[1:])) and q[-1] < q[0] / 2.0
        null = "q(delta) decreases toward 0"
    else:
        ok = min(q) >= floor
        null = f"q(delta) stays above {floor:g}"
    logger.debug("common zeros beta=(%g, %g): %s", beta1, beta2, q)
    return TestReport(
        test_id="disjoint_zeros",
        mode="statistical",
        sample_size=n,
        status=_status(ok),
        statistic=q[-1],
        threshold=q[0] / 2.0 if holds else floor,
        null=null,
        seeds=(seed, n),
        details={"q": q, "deltas": list(deltas), "condition_holds": holds},
    )


def split_star(
    beta: float, split: tuple[Fraction, Fraction] = (Fraction(3, 5), Fraction(2, 5))
) -> StarGraphSpec:
    """Star with two edges per side and within-side weights split."""
    a_plus = (1 + Fraction(repr(beta))) / 2
    a_minus = 1 - a_plus
    return StarGraphSpec(
        alpha=(split[0] * a_plus, split[1] * a_plus, split[0] * a_minus, split[1] * a_minus),
        n_plus=2,
    )


def _label_index(spec: StarGraphSpec, edge: int | None) -> int:
    if edge is None:
        return 2
    return edge - 1 if edge <= spec.n_plus else edge - spec.n_plus - 1


def _mutual_information(a: np.ndarray, b: np.ndarray) -> float:
    table = np.zeros((3, 3))
    np.add.at(table, (a, b), 1.0)
    joint = table / table.sum()
    pa = joint.sum(axis=1, keepdims=True)
    pb = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    return float((joint[nz] * np.log(joint[nz] / (pa @ pb)[nz])).sum())


def _conditional_mi(a: np.ndarray, b: np.ndarray, strata: np.ndarray) -> float:
    total = 0.0
    for s in np.unique(strata):
        mask = strata == s
        total += mask.mean() * _mutual_information(a[mask], b[mask])
    return total


def _signature(prefix: np.ndarray, k_t: int) -> list[int]:
    """Endpoint and running min / max at four checkpoints of the driving walk."""
    out = [int(prefix[k_t])]
    for q in range(1, 5):
        seg = prefix[: k_t * q // 4 + 1]
        out += [int(seg.min()), int(seg.max())]
    return out


def cond_indep_test(
    beta1: float,
    beta2: float,
    n: int,
    *,
    delta: float = 2.0**-4,
    t: int = 1,
    seed: int = 0,
    permutations: int = 199,
    alpha: float = 0.01,
    shared_labels: bool = False,
) -> TestReport:
    """
    Edge labels of two stars driven by one W are independent given W: the
    conditional mutual information of their within-side labels at t, with W
    binned by its signature, lies in the within-stratum permutation null.
    """
    if not zeros_condition(beta1, beta2):
        logger.warning(
            "conditional independence needs the zeros condition; beta=(%g, %g)", beta1, beta2
        )
        return TestReport(
            test_id="cond_indep", mode="statistical", sample_size=0, status="hypothesis-not-met",
            seeds=(seed, n), details={"beta1": beta1, "beta2": beta2},
        )
    spec1, spec2 = split_star(beta1), split_star(beta2)
    suffixes = (":v1", ":v1") if shared_labels else (":v1", ":v2")

    def run(sd: int) -> tuple[int, int, list[int], float, float]:
        noise = _noise(sd, delta, 2 * t)
        one, two = (
            StarFlow(spec, ExcursionLabeler.mapping(spec), noise, delta, namespace_suffix=suffix)
            for spec, suffix in ((spec1, suffixes[0]), (spec2, suffixes[1]))
        )
        a = _label_index(spec1, one.phi(0, StarPoint.center(), t).edge)
        b = _label_index(spec2, two.phi(0, StarPoint.center(), t).edge)
        prefix = noise.walk_prefix(SHARED_CHANNEL, lattice_level(delta))
        half = Fraction(t, 2)
        early = one.radial_value(0, StarPoint.center(), half)
        late = two.radial_value(half, StarPoint.center(), t)
        return a, b, _signature(prefix, t << lattice_level(delta)), early, late

    rows = map_seeds(run, _seeds(seed, n))
    a = np.array([r[0] for r in rows])
    b = np.array([r[1] for r in rows])
    features = np.array([r[2] for r in rows])
    bits = features > np.median(features, axis=0)
    strata = bits.astype(np.int64) @ (1 << np.arange(bits.shape[1]))
    observed = _conditional_mi(a, b, strata)

    rng = np.random.default_rng([seed, permutations])
    exceed = 0
    for _ in range(permutations):
        shuffled = b.copy()
        for s in np.unique(strata):
            idx = np.flatnonzero(strata == s)
            shuffled[idx] = rng.permutation(b[idx])
        if _conditional_mi(a, shuffled, strata) >= observed:
            exceed += 1
    p_value = (exceed + 1) / (permutations + 1)

    early = np.array([r[3] for r in rows])
    late = np.array([r[4] for r in rows])
    if n < 3 or early.std() == 0.0 or late.std() == 0.0:
        corr, corr_p = 0.0, 1.0
    else:
        pearson = stats.pearsonr(early, late)
        corr, corr_p = float(pearson.statistic), float(pearson.pvalue)
    corr_ok = corr_p >= THREE_SIGMA_ALPHA
    return TestReport(
        test_id="cond_indep",
        mode="statistical",
        sample_size=n,
        status=_status(p_value > alpha and corr_ok),
        statistic=observed,
        threshold=alpha,
        null="labels independent given the binned driving path",
        p_value=p_value,
        seeds=(seed, n),
        details={
            "strata": int(np.unique(strata).size),
            "increment_correlation": corr,
            "increment_p_value": corr_p,
            "shared_labels": shared_labels,
        },
    )


# -- anchors and charts -------------------------------------------------------------


def strong_flow_test(
    params: SkewParams,
    n: int,
    *,
    start: Fraction = Fraction(1, 4),
    level_cells: int = 4,
    u: Fraction = Fraction(1, 4),
    width: int = 4,
    horizon: int = 2,
    seed: int = 0,
) -> TestReport:
    """Y_{S,T+u} = Y_{T,T+u} o Y_{S,T} for S fixed and T the next visit of level_cells cells."""
    starts = [j * Fraction(params.delta) for j in range(-width, width + 1)]
    S = fixed_rule(start)
    T = hitting_rule(S, 0, level=level_cells * params.delta)

    def run(sd: int) -> tuple[bool, list[dict[str, Any]]]:
        noise = _noise(sd, params.delta, horizon)
        report = strong_flow_check(params, noise, SHARED_CHANNEL, S, T, u, starts)
        if report.skipped:
            return False, []
        return True, [
            {"seed": sd, "x": x, "direct": a, "composed": b} for x, a, b in report.mismatches
        ]

    results = map_seeds(run, _seeds(seed, n))
    used = sum(1 for ok, _ in results if ok)
    bad = [c for _, found in results for c in found]
    return TestReport(
        test_id="strong_flow",
        mode="exact",
        sample_size=used,
        status="skipped" if used == 0 else _status(not bad),
        statistic=float(len(bad)),
        threshold=0.0,
        null="the flow restarts at a stopping time",
        seeds=(seed, n),
        counterexamples=tuple(bad[:5]),
        details={"beyond_horizon": n - used},
    )


def _anchor_counts(
    params: SkewParams,
    queries: Sequence[tuple[Fraction, Fraction, Fraction]],
    caps: Sequence[int],
    seeds: list[int],
) -> tuple[int, list[int], list[dict[str, Any]]]:
    horizon = max(t for _, _, t in queries)

    def run(sd: int) -> tuple[int, list[int], list[dict[str, Any]]]:
        noise = _noise(sd, params.delta, horizon)
        eligible = 0
        found = [0] * len(caps)
        bad: list[dict[str, Any]] = []
        for s, x, t in queries:
            tr = trace_from(params, noise, SHARED_CHANNEL, s, x, t)
            if not tr.zeros or tr.zeros[0] >= tr.k1:
                continue
            eligible += 1
            for i, cap in enumerate(caps):
                anchor = flow_anchor(params, noise, SHARED_CHANNEL, s, x, t, n_cap=cap)
                if anchor is None:
                    continue
                found[i] += 1
                if not anchor.identity_holds:
                    query = {"seed": sd, "s": str(s), "x": str(x), "t": str(t)}
                    bad.append({**query, "delta": params.delta, **anchor.to_dict()})
        return eligible, found, bad

    results = map_seeds(run, seeds)
    eligible = sum(r[0] for r in results)
    found = [sum(r[1][i] for r in results) for i in range(len(caps))]
    return eligible, found, [c for r in results for c in r[2]]


def anchor_identity_test(
    params: SkewParams,
    queries: Sequence[tuple[Fraction, Fraction, Fraction]],
    n: int,
    *,
    n_caps: Sequence[int] = (4, 16, DEFAULT_N_CAP),
    finer_deltas: Sequence[float] = (),
    seed: int = 0,
) -> TestReport:
    """
    Y_{v,t}(y) reproduces Y_{s,t}(x) at every anchor; pre-zero queries are skipped.

    Brackets x -+ 1/n stop changing once 1/n < delta, so at a fixed lattice the
    found rate plateaus at n_cap = 1/delta. Each entry of ``finer_deltas`` reruns
    the largest cap on that lattice; the rate should climb toward 1 as delta shrinks.
    """
    caps = sorted(n_caps)
    seeds = _seeds(seed, n)
    deltas = sorted(finer_deltas, reverse=True)
    if deltas and deltas[0] >= params.delta:
        raise ConfigError(f"sweep delta {deltas[0]} is not finer than {params.delta}")
    eligible, found, bad = _anchor_counts(params, queries, caps, seeds)
    rates = [f / eligible if eligible else 0.0 for f in found]

    sweep: list[dict[str, Any]] = []
    for d in deltas:
        fine = replace(params, delta=d)
        cap = max(caps[-1], 2**fine.level)
        fine_eligible, fine_found, fine_bad = _anchor_counts(fine, queries, [cap], seeds)
        bad.extend(fine_bad)
        rate = fine_found[0] / fine_eligible if fine_eligible else 0.0
        sweep.append({"delta": d, "n_cap": cap, "eligible": fine_eligible, "found_rate": rate})

    if eligible == 0:
        status = "skipped"
    else:
        status = _status(not bad and all(a <= b for a, b in zip(rates, rates[1:])))
    saturation = 2**params.level
    if eligible and rates[-1] < 1.0:
        missing = 100 * (1 - rates[-1])
        logger.warning("anchors missing for %.1f%% of queries at n_cap=%d", missing, caps[-1])
        if caps[-1] > saturation:
            logger.info(
                "n_cap above %d does not widen the search at delta=%s", saturation, params.delta
            )
    return TestReport(
        test_id="anchor_identity",
        mode="exact",
        sample_size=eligible,
        status=status,
        statistic=float(len(bad)),
        threshold=0.0,
        null="Y_{v,t}(y) = Y_{s,t}(x) whenever an anchor exists",
        seeds=(seed, n),
        counterexamples=tuple(bad[:5]),
        details={
            "n_caps": caps,
            "found_rate": rates,
            "saturation_cap": saturation,
            "delta_sweep": sweep,
        },
    )


def restriction_roundtrip_test(
    config: GlobalFlowConfig,
    v: str,
    queries: Sequence[tuple[Fraction, StarPoint, Fraction]],
    n: int,
    *,
    seed: int = 0,
) -> TestReport:
    """The star kernel at v is rebuilt from K0, and i_v * K = star kernel before rho."""
    chart = config.chart(v)

    def run(sd: int) -> tuple[int, list[dict[str, Any]]]:
        cfg = config.with_noise(config.noise.with_seed(sd))
        star = cfg.star(v)
        checked = 0
        bad: list[dict[str, Any]] = []
        for s, p, t in queries:
            direct = star.kernel(s, p, t)
            rebuilt = restrict_to_star(cfg, v, s, p, t)
            if rebuilt != direct:
                bad.append({"seed": sd, "kind": "restriction", "s": str(s), "t": str(t)})
            inside = p.edge is None or p.radius < chart.edges[p.edge - 1].length
            if not inside:
                continue
            x = graph_point(chart, p)
            exit_time = rho(cfg, s, x, v)
            if t < exit_time:
                checked += 1
                if not chart_identity(cfg, s, x, v, t).holds:
                    bad.append({"seed": sd, "kind": "chart", "s": str(s), "t": str(t)})
        return checked, bad

    results = map_seeds(run, _seeds(seed, n))
    bad = [c for _, b in results for c in b]
    return TestReport(
        test_id="restriction_roundtrip",
        mode="exact",
        sample_size=n * len(queries),
        status=_status(not bad),
        statistic=float(len(bad)),
        threshold=0.0,
        null="restriction and chart pushforward reproduce the star kernel",
        seeds=(seed, n),
        counterexamples=tuple(bad[:5]),
        details={"vertex": v, "chart_checks": sum(c for c, _ in results)},
    )


# -- stationarity and noise -----------------------------------------------------------


def stationarity_test(
    config: GlobalFlowConfig,
    f: TestFunction,
    x: GraphPoint,
    s: Fraction,
    h: Fraction,
    shift: Fraction,
    n: int,
    *,
    seed: int = 0,
    control_h: Fraction | None = None,
) -> TestReport:
    """K_{s,s+h} f(x) and K_{s+shift,s+shift+h} f(x) on fresh seeds agree in law (two-sample KS)."""

    def sample(start: Fraction, width: Fraction, first: int) -> np.ndarray:
        def one(sd: int) -> float:
            cfg = config.with_noise(config.noise.with_seed(sd))
            return _integrate(k(cfg, start, start + width, x), f)[0]

        return np.array(map_seeds(one, _seeds(first, n)))

    before = sample(s, h, seed)
    after = sample(s + shift, h if control_h is None else control_h, seed + n)
    result = stats.ks_2samp(before, after)
    return TestReport(
        test_id="stationarity",
        mode="statistical",
        sample_size=2 * n,
        status=_status(float(result.pvalue) > THREE_SIGMA_ALPHA),
        statistic=float(result.statistic),
        threshold=THREE_SIGMA_ALPHA,
        null="same law before and after the shift",
        p_value=float(result.pvalue),
        seeds=(seed, 2 * n),
        details={"function": f.name, "shift": str(shift), "h": str(h)},
    )


def noise_variance_test(
    s: Fraction,
    t: Fraction,
    n: int,
    *,
    n_max: int = 10,
    channel: str = SHARED_CHANNEL,
    seed: int = 0,
    claimed_variance: float | None = None,
) -> TestReport:
    """W_{s,t} has variance t - s (chi-square test) and is exactly additive at a midpoint."""
    horizon = float(math.ceil(t))
    variance = float(t - s) if claimed_variance is None else claimed_variance
    mid = s + Fraction(1, 2**n_max) * ((t - s) * 2**n_max // 2)
    values = []
    broken: list[dict[str, Any]] = []
    for sd in _seeds(seed, n):
        noise = NoiseField(seed=sd, n_max=n_max, horizon=(0.0, horizon))
        w = noise.increment(channel, s, t)
        values.append(w)
        if w != noise.increment(channel, s, mid) + noise.increment(channel, mid, t):
            broken.append({"seed": sd, "mid": str(mid)})
    arr = np.array(values)
    chi = float((arr**2).sum() / variance)
    p_value = float(2.0 * min(stats.chi2.cdf(chi, n), stats.chi2.sf(chi, n)))
    return TestReport(
        test_id="noise_variance",
        mode="statistical",
        sample_size=n,
        status=_status(p_value >= THREE_SIGMA_ALPHA and not broken),
        statistic=float(arr.var()),
        threshold=variance,
        null=f"Var W_s,t = {variance:g}",
        p_value=p_value,
        seeds=(seed, n),
        counterexamples=tuple(broken[:5]),
        details={"channel": channel},
    )


def keyed_uniform_test(
    n: int, *, namespace: str = "audit", level: int = 12, seed: int = 0
) -> TestReport:
    """Keyed uniforms of distinct dyadic keys pass a KS test and replay identically."""
    level = max(level, (2 * n).bit_length())
    noise = NoiseField(seed=seed, n_max=0)
    keys = [Fraction(2 * i + 1, 2**level) for i in range(n)]
    values = np.array([noise.keyed_uniform(namespace, key) for key in keys])
    replay = NoiseField(seed=seed, n_max=0)
    broken = [
        {"key": str(key)}
        for key, value in zip(keys, values)
        if replay.keyed_uniform(namespace, key) != value
    ]
    result = stats.kstest(values, "uniform")
    return TestReport(
        test_id="keyed_uniform",
        mode="statistical",
        sample_size=n,
        status=_status(float(result.pvalue) >= THREE_SIGMA_ALPHA and not broken),
        statistic=float(result.statistic),
        threshold=THREE_SIGMA_ALPHA,
        null="keyed uniforms are Uniform[0, 1)",
        p_value=float(result.pvalue),
        seeds=(seed, 1),
        counterexamples=tuple(broken[:5]),
        details={"namespace": namespace, "level": level},
    )


def holm(reports: Sequence[TestReport], alpha: float = 0.05) -> list[TestReport]:
    """Holm step-down over the reports with p-values; rejected nulls fail, the rest keep status."""
    ranked = sorted(
        (i for i, r in enumerate(reports) if r.p_value is not None and r.passed is not None),
        key=lambda i: reports[i].p_value or 0.0,
    )
    out = list(reports)
    m = len(ranked)
    for rank, i in enumerate(ranked):
        p = reports[i].p_value or 0.0
        if p > alpha / (m - rank):
            break
        logger.warning("Holm rejects %s (p=%.3g)", reports[i].test_id, p)
        details = {**reports[i].details, "holm": "rejected"}
        out[i] = replace(reports[i], status="fail", details=details)
    return out


def unglued_identity(config: GlobalFlowConfig, v: str, radius: float = 4.0) -> TestFunction:
    """Signed chart coordinate at v with a cutoff; continuous, glued only when alpha+ = 1/2."""
    chart = config.chart(v)
    pieces = {e.id: EdgeFunction() for e in config.graph.edges}
    for ce in chart.edges:
        rad = min(radius, ce.length / 2.0)
        pieces[ce.edge_id] = EdgeFunction(terms=(BumpTerm(ce.anchor, (0.0, 1.0, 0.0), rad),))
    return TestFunction(
        name=f"unglued:{v}",
        pieces=pieces,
        vertex_values={w: 0.0 for w in config.graph.vertices},
    )


def star_config(
    spec: StarGraphSpec,
    labeler: ExcursionLabeler | None,
    *,
    seed: int,
    delta: float,
    horizon: int = 1,
) -> GlobalFlowConfig:
    """Single-vertex graph with infinite edges realizing a star."""
    edges = []
    alpha = {}
    for i, a in enumerate(spec.alpha, start=1):
        if i <= spec.n_plus:
            edges.append(Edge(id=f"e{i}", length=math.inf, start="o", end="inf"))
        else:
            edges.append(Edge(id=f"e{i}", length=math.inf, start="inf", end="o"))
        alpha[("o", f"e{i}")] = a
    graph = MetricGraph(vertices=("o",), edges=tuple(edges), alpha=alpha)
    noise = NoiseField(seed=seed, n_max=lattice_level(delta), horizon=(0.0, float(horizon)))
    labelers = {"o": labeler} if labeler is not None else {}
    return GlobalFlowConfig(graph=graph, labelers=labelers, noise=noise, delta=delta)


__all__ = [
    "TestReport",
    "negative_control",
    "flow_property_suite",
    "sign_law_test",
    "local_time_test",
    "edge_label_test",
    "radial_side_test",
    "freidlin_sheu_test",
    "zeros_condition",
    "disjoint_zeros_test",
    "split_star",
    "cond_indep_test",
    "strong_flow_test",
    "anchor_identity_test",
    "restriction_roundtrip_test",
    "stationarity_test",
    "noise_variance_test",
    "keyed_uniform_test",
    "holm",
    "unglued_identity",
    "star_config",
]
