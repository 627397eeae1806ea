"""
Named verification suites as engine pipelines.

Each suite is a Pipeline of stages; every stage runs one group of checks
from verify and emits one record per TestReport with id
f"{request_id}:{test_id}". The last stage of every suite emits the summary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Any, Callable, Sequence

from .core import Emission, Request
from .graph import Edge, GraphPoint, MetricGraph, make_glued_family, vertex_point
from .graphflow import GlobalFlowConfig
from .noise import NoiseField, lattice_level
from .pipeline import Pipeline, StepResult
from .sbmflow import SkewParams
from .starflow import ExcursionLabeler, MixtureAtom, StarGraphSpec, StarPoint
from .verify import (
    TestReport,
    anchor_identity_test,
    cond_indep_test,
    disjoint_zeros_test,
    edge_label_test,
    flow_property_suite,
    freidlin_sheu_test,
    holm,
    keyed_uniform_test,
    local_time_test,
    negative_control,
    noise_variance_test,
    radial_side_test,
    restriction_roundtrip_test,
    sign_law_test,
    star_config,
    stationarity_test,
    strong_flow_test,
    unglued_identity,
)

SUITES = ("noise", "sbm", "star", "graph", "all")
SIGN_LAW_BETAS = (-0.8, 0.0, 0.5, 0.9, -1.0)
TRIPLES = (
    (Fraction(0), Fraction(1, 4), Fraction(1, 2)),
    (Fraction(0), Fraction(1, 2), Fraction(1)),
    (Fraction(1, 8), Fraction(3, 8), Fraction(3, 4)),
    (Fraction(1, 4), Fraction(1, 2), Fraction(1)),
    (Fraction(0), Fraction(1, 16), Fraction(1, 8)),
)


@dataclass(frozen=True)
class SuiteRequest:
    """Parameters of one suite run; n for statistical tests, n_exact for per-realization checks."""

    suite: str
    n: int = 2000
    n_exact: int = 50
    seed: int = 0
    delta: float = 2.0**-4
    strict: bool = False


@dataclass
class SuiteState:
    """Reports accumulated across stages."""

    reports: tuple[TestReport, ...] = ()

    @property
    def passed(self) -> bool:
        return all(r.passed is not False for r in self.reports)

    def to_dict(self) -> dict[str, Any]:
        return {"passed": self.passed, "reports": [r.to_dict() for r in self.reports]}


@dataclass(frozen=True)
class SuiteStageSpec:
    """Reference metadata for a suite backed by a pipeline."""

    suite: str
    pipeline_name: str
    test_ids: tuple[str, ...] = field(default_factory=tuple)


def suite_specs() -> dict[str, SuiteStageSpec]:
    """Suites with the test ids their reports carry, in emission order."""
    noise = ("noise_variance", "noise_variance.control", "keyed_uniform")
    sbm = (
        *(f"sign_law@{b:g}" for b in SIGN_LAW_BETAS),
        "sign_law.control",
        "local_time",
        "strong_flow",
        "anchor_identity",
        "disjoint_zeros",
        "disjoint_zeros.control",
    )
    star = (
        "radial_side",
        "radial_side.kernel",
        "edge_label",
        "edge_label.control",
        "cond_indep",
        "cond_indep.control",
        "cond_indep.unmet",
    )
    graph = (
        "flow_property.star",
        "flow_property.barbell",
        "flow_property.control",
        "freidlin_sheu.1",
        "freidlin_sheu.2",
        "freidlin_sheu.3",
        "freidlin_sheu.control",
        "restriction_roundtrip",
        "stationarity",
        "stationarity.control",
    )
    return {
        "noise": SuiteStageSpec("noise", "verify_noise", noise),
        "sbm": SuiteStageSpec("sbm", "verify_sbm", sbm),
        "star": SuiteStageSpec("star", "verify_star", star),
        "graph": SuiteStageSpec("graph", "verify_graph", graph),
        "all": SuiteStageSpec("all", "verify_all", noise + sbm + star + graph),
    }


def expected_emission_ids(request_id: str, suite: str) -> list[str]:
    """Deterministic emission ids of a suite run, summary last."""
    spec = suite_specs()[suite]
    return [f"{request_id}:{test_id}" for test_id in spec.test_ids] + [f"{request_id}:summary"]


# -- fixtures shared by stages --------------------------------------------------------


def walsh_spec() -> StarGraphSpec:
    """Three edges, alpha 0.3 / 0.3 on the positive side and 0.4 on the negative side."""
    return StarGraphSpec(alpha=(Fraction(3, 10), Fraction(3, 10), Fraction(2, 5)), n_plus=2)


def walsh_kernel_labeler() -> ExcursionLabeler:
    """Positive side: half mass on (1/2, 1/2), a quarter on each vertex; negative side a point."""
    half = Fraction(1, 2)
    return ExcursionLabeler.kernel(
        m_plus=(
            MixtureAtom((half, half), half),
            MixtureAtom((Fraction(1), Fraction(0)), Fraction(1, 4)),
            MixtureAtom((Fraction(0), Fraction(1)), Fraction(1, 4)),
        ),
        m_minus=(MixtureAtom((Fraction(1),), Fraction(1)),),
    )


def barbell_graph() -> MetricGraph:
    """Vertices a, b joined by a bridge of length 2, each with infinite edges."""
    inf = math.inf
    edges = (
        Edge("in_a", inf, "inf", "a"),
        Edge("out_a", inf, "a", "inf"),
        Edge("bridge", 2.0, "a", "b"),
        Edge("out_b", inf, "b", "inf"),
    )
    alpha = {
        ("a", "in_a"): Fraction(3, 10),
        ("a", "out_a"): Fraction(3, 10),
        ("a", "bridge"): Fraction(2, 5),
        ("b", "bridge"): Fraction(2, 5),
        ("b", "out_b"): Fraction(3, 5),
    }
    return MetricGraph(vertices=("a", "b"), edges=edges, alpha=alpha)


def barbell_config(*, seed: int, delta: float, horizon: int = 1) -> GlobalFlowConfig:
    noise = NoiseField.for_edges(
        seed=seed,
        n_max=lattice_level(delta),
        horizon=(0.0, float(horizon)),
        edge_ids=[e.id for e in barbell_graph().edges],
    )
    return GlobalFlowConfig(graph=barbell_graph(), labelers={}, noise=noise, delta=delta)


def barbell_starts() -> tuple[GraphPoint, ...]:
    return (vertex_point("a"), GraphPoint(edge="bridge", r=1.0), GraphPoint(edge="in_a", r=-0.5))


# -- stages ---------------------------------------------------------------------------

Stage = Callable[[Request[SuiteRequest], SuiteState], StepResult]


def _emit(
    request: Request[SuiteRequest], suite: str, stage: str, reports: Sequence[TestReport]
) -> StepResult:
    emissions = [
        Emission(
            emission_id=f"{request.request_id}:{r.test_id}",
            emission_type=f"verify.{suite}.{r.test_id}.{r.status}",
            caused_by=request.request_id,
            payload=r,
            metadata={"trace": {"stage": stage, "caused_by": request.request_id, "null": r.null}},
        )
        for r in reports
    ]

    def updater(state: SuiteState) -> SuiteState:
        return SuiteState(reports=state.reports + tuple(reports))

    return emissions, updater


def _noise_stage(request: Request[SuiteRequest], state: SuiteState) -> StepResult:
    p = request.payload
    s, t = Fraction(1, 4), Fraction(3, 4)
    reports = [
        noise_variance_test(s, t, p.n, seed=p.seed),
        negative_control(
            noise_variance_test(s, t, p.n, seed=p.seed, claimed_variance=2.0 * float(t - s)),
            "noise_variance.control",
        ),
        keyed_uniform_test(p.n, seed=p.seed),
    ]
    return _emit(request, "noise", "noise_audit", reports)


def _sign_law_stage(request: Request[SuiteRequest], state: SuiteState) -> StepResult:
    p = request.payload
    reports = [
        replace(sign_law_test(b, 1, p.n, delta=p.delta, seed=p.seed), test_id=f"sign_law@{b:g}")
        for b in SIGN_LAW_BETAS
    ]
    reports.append(
        negative_control(
            sign_law_test(0.5, 1, p.n, delta=p.delta, seed=p.seed, claimed_beta=0.2),
            "sign_law.control",
        )
    )
    reports.append(local_time_test(p.n, delta=p.delta, seed=p.seed))
    return _emit(request, "sbm", "sign_law", reports)


def _sbm_flow_stage(request: Request[SuiteRequest], state: SuiteState) -> StepResult:
    p = request.payload
    params = SkewParams(beta=0.5, delta=p.delta)
    queries = [(Fraction(0), Fraction(0), Fraction(1))]
    reports = [
        strong_flow_test(params, p.n_exact, seed=p.seed),
        anchor_identity_test(
            params, queries, p.n_exact, finer_deltas=(p.delta / 2,), seed=p.seed
        ),
    ]
    return _emit(request, "sbm", "sbm_flow", reports)


def _zeros_stage(request: Request[SuiteRequest], state: SuiteState) -> StepResult:
    p = request.payload
    reports = [
        disjoint_zeros_test(-0.5, 0.5, p.n, seed=p.seed),
        replace(disjoint_zeros_test(0.5, 0.6, p.n, seed=p.seed), test_id="disjoint_zeros.control"),
    ]
    return _emit(request, "sbm", "disjoint_zeros", reports)


def _star_stage(request: Request[SuiteRequest], state: SuiteState) -> StepResult:
    p = request.payload
    spec = walsh_spec()
    times = (Fraction(1, 4), Fraction(1, 2), Fraction(1))
    reports = [
        radial_side_test(
            spec, ExcursionLabeler.mapping(spec), times, p.n_exact, delta=p.delta, seed=p.seed
        ),
        replace(
            radial_side_test(
                spec, walsh_kernel_labeler(), times, p.n_exact, delta=p.delta, seed=p.seed
            ),
            test_id="radial_side.kernel",
        ),
        edge_label_test(spec, 1, p.n, delta=p.delta, seed=p.seed),
        negative_control(
            edge_label_test(spec, 1, p.n, delta=p.delta, seed=p.seed, claimed=0.8),
            "edge_label.control",
        ),
    ]
    return _emit(request, "star", "walsh", reports)


def _cond_indep_stage(request: Request[SuiteRequest], state: SuiteState) -> StepResult:
    p = request.payload
    reports = [
        cond_indep_test(-0.5, 0.5, p.n, delta=p.delta, seed=p.seed),
        negative_control(
            cond_indep_test(-0.5, 0.5, p.n, delta=p.delta, seed=p.seed, shared_labels=True),
            "cond_indep.control",
        ),
        replace(
            cond_indep_test(0.5, 0.6, p.n, delta=p.delta, seed=p.seed), test_id="cond_indep.unmet"
        ),
    ]
    return _emit(request, "star", "cond_indep", reports)


def _graph_flow_stage(request: Request[SuiteRequest], state: SuiteState) -> StepResult:
    p = request.payload
    delta = min(p.delta, 2.0**-3)
    star = star_config(walsh_spec(), walsh_kernel_labeler(), seed=p.seed, delta=delta)
    barbell = barbell_config(seed=p.seed, delta=delta)
    star_starts = (vertex_point("o"), GraphPoint(edge="e1", r=0.5), GraphPoint(edge="e3", r=-0.25))
    reports = [
        replace(
            flow_property_suite(star, TRIPLES, star_starts, n=p.n_exact, seed=p.seed),
            test_id="flow_property.star",
        ),
        replace(
            flow_property_suite(barbell, TRIPLES, barbell_starts(), n=p.n_exact, seed=p.seed),
            test_id="flow_property.barbell",
        ),
        negative_control(
            flow_property_suite(
                star, TRIPLES, star_starts, n=p.n_exact, seed=p.seed, corrupt_namespace="U"
            ),
            "flow_property.control",
        ),
    ]
    return _emit(request, "graph", "flow_property", reports)


def _freidlin_sheu_stage(request: Request[SuiteRequest], state: SuiteState) -> StepResult:
    p = request.payload
    delta = min(p.delta, 2.0**-3)
    config = star_config(walsh_spec(), None, seed=p.seed, delta=delta)
    skip = 1 + len(config.graph.edges)
    family = make_glued_family(config.graph, skip + 3)[skip:]
    x = vertex_point("o")
    horizon = Fraction(1, 2)
    n = max(1, p.n // 4)
    reports = [
        replace(
            freidlin_sheu_test(config, f, x, horizon, n, seed=p.seed), test_id=f"freidlin_sheu.{i}"
        )
        for i, f in enumerate(family, start=1)
    ]
    # lopsided star so the missing gluing drift is visible at this sample size
    lopsided = star_config(
        StarGraphSpec(alpha=(Fraction(9, 20), Fraction(9, 20), Fraction(1, 10)), n_plus=2),
        None,
        seed=p.seed,
        delta=delta,
    )
    reports.append(
        negative_control(
            freidlin_sheu_test(
                lopsided, unglued_identity(lopsided, "o"), x, horizon, p.n, seed=p.seed
            ),
            "freidlin_sheu.control",
        )
    )
    return _emit(request, "graph", "freidlin_sheu", reports)


def _restriction_stage(request: Request[SuiteRequest], state: SuiteState) -> StepResult:
    p = request.payload
    delta = min(p.delta, 2.0**-3)
    barbell = barbell_config(seed=p.seed, delta=delta)
    queries = [
        (Fraction(0), StarPoint.center(), Fraction(1, 2)),
        (Fraction(1, 4), StarPoint(edge=3, radius=0.5), Fraction(1)),
        (Fraction(0), StarPoint(edge=1, radius=1.0), Fraction(3, 4)),
    ]
    skip = 1 + len(barbell.graph.edges)
    f = make_glued_family(barbell.graph, skip + 1)[skip]
    x = vertex_point("a")
    h, shift = Fraction(1, 4), Fraction(1, 2)
    reports = [
        restriction_roundtrip_test(barbell, "a", queries, p.n_exact, seed=p.seed),
        stationarity_test(barbell, f, x, Fraction(0), h, shift, p.n_exact * 10, seed=p.seed),
        negative_control(
            stationarity_test(
                barbell, f, x, Fraction(0), h, shift, p.n_exact * 10,
                seed=p.seed, control_h=Fraction(1, 64),
            ),
            "stationarity.control",
        ),
    ]
    return _emit(request, "graph", "restriction", reports)


def _summary_stage(request: Request[SuiteRequest], state: SuiteState) -> StepResult:
    reports = tuple(holm(state.reports)) if request.payload.strict else state.reports
    final = SuiteState(reports=reports)
    verdict = "pass" if final.passed else "fail"
    emission = Emission(
        emission_id=f"{request.request_id}:summary",
        emission_type=f"verify.{request.payload.suite}.summary.{verdict}",
        caused_by=request.request_id,
        payload={
            "passed": final.passed,
            "tests": len(reports),
            "failed": [r.test_id for r in reports if r.passed is False],
            "strict": request.payload.strict,
        },
        metadata={"trace": {"stage": "summary", "caused_by": request.request_id, "null": ""}},
    )
    return [emission], (lambda _: final)


_STAGES: dict[str, list[Stage]] = {
    "noise": [_noise_stage],
    "sbm": [_sign_law_stage, _sbm_flow_stage, _zeros_stage],
    "star": [_star_stage, _cond_indep_stage],
    "graph": [_graph_flow_stage, _freidlin_sheu_stage, _restriction_stage],
}


def build_suite_pipeline(suite: str) -> Pipeline:
    """Stages of a named suite followed by the summary stage."""
    specs = suite_specs()
    if suite not in specs:
        raise ValueError(f"unknown suite {suite!r}; expected one of {', '.join(SUITES)}")
    if suite == "all":
        steps = [stage for name in ("noise", "sbm", "star", "graph") for stage in _STAGES[name]]
    else:
        steps = list(_STAGES[suite])
    return Pipeline(steps=[*steps, _summary_stage], name=specs[suite].pipeline_name)


def make_suite_request(
    *,
    suite: str,
    n: int = 2000,
    n_exact: int = 50,
    seed: int = 0,
    delta: float = 2.0**-4,
    strict: bool = False,
    source: str = "cli",
) -> Request[SuiteRequest]:
    """Construct a suite request with the stable id f"{suite}-{seed}"."""
    return Request(
        payload=SuiteRequest(
            suite=suite, n=n, n_exact=n_exact, seed=seed, delta=delta, strict=strict
        ),
        source=source,
        request_id=f"{suite}-{seed}",
    )
