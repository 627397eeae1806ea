"""
graphflow-engine - stochastic flows of kernels on oriented metric graphs

A discrete, seeded simulator and verifier. One white-noise field drives
lattice skew walks; walks become star-graph flows through excursion labels;
star flows glue into a global flow on a metric graph. Every kernel is a
finite atom measure with exact rational weights, so the flow property can
be checked realization by realization.

Usage:
    from graphflow_engine import (
        Engine, SuiteState, build_suite_pipeline, make_suite_request,
    )

    engine = Engine(build_suite_pipeline("graph"), initial_state=SuiteState())
    engine.process(make_suite_request(suite="graph", n=2000, seed=7))
    print(engine.get_state().passed)

    # or directly
    from graphflow_engine import MetricGraph, NoiseField, GlobalFlowConfig, k

    config = GlobalFlowConfig(graph=graph, labelers={}, noise=noise, delta=2**-4)
    measure = k(config, 0, 1, vertex_point("a"))
"""

from .core import (
    ConfigError,
    Emission,
    GraphflowError,
    HorizonError,
    InvariantViolation,
    LatticeError,
    Request,
    State,
)
from .engine import Engine, EngineBuilder, EngineConfig, map_seeds
from .graph import (
    Edge,
    GraphPoint,
    MetricGraph,
    StarChart,
    TestFunction,
    ValidationReport,
    evaluate,
    from_star,
    load_graph,
    make_glued_family,
    star_chart,
    to_star,
    validate,
    vertex_point,
)
from .graphflow import (
    AtomMeasure,
    GlobalFlowConfig,
    assemble,
    barrier_flow,
    chart_identity,
    compose,
    k,
    k0,
    kn,
    restrict_to_star,
    rho,
    vertex_star_spec,
)
from .noise import NoiseField, event_A, increment, keyed_uniform, lattice_level, omega_n, rademacher
from .pipeline import Pipeline, Step
from .sbmflow import (
    SkewParams,
    coalescence_time,
    dyadic_select,
    evolve,
    flow,
    flow_anchor,
    strong_flow_check,
)
from .starflow import (
    ExcursionLabeler,
    MixtureAtom,
    StarFlow,
    StarGraphSpec,
    StarKernelValue,
    StarPoint,
    half_case_kernel,
    validate_labeler,
)
from .suites import SuiteRequest, SuiteState, build_suite_pipeline, make_suite_request
from .verify import TestReport, holm, negative_control

__version__ = "0.2.0"
__all__ = [
    # Core types and errors
    "Request",
    "Emission",
    "State",
    "GraphflowError",
    "ConfigError",
    "HorizonError",
    "LatticeError",
    "InvariantViolation",
    # Pipeline and engine
    "Pipeline",
    "Step",
    "Engine",
    "EngineBuilder",
    "EngineConfig",
    "map_seeds",
    # Graphs
    "Edge",
    "GraphPoint",
    "MetricGraph",
    "StarChart",
    "TestFunction",
    "ValidationReport",
    "evaluate",
    "from_star",
    "load_graph",
    "make_glued_family",
    "star_chart",
    "to_star",
    "validate",
    "vertex_point",
    # Noise
    "NoiseField",
    "event_A",
    "increment",
    "keyed_uniform",
    "lattice_level",
    "omega_n",
    "rademacher",
    # Skew Brownian flow
    "SkewParams",
    "coalescence_time",
    "dyadic_select",
    "evolve",
    "flow",
    "flow_anchor",
    "strong_flow_check",
    # Star flows
    "ExcursionLabeler",
    "MixtureAtom",
    "StarFlow",
    "StarGraphSpec",
    "StarKernelValue",
    "StarPoint",
    "half_case_kernel",
    "validate_labeler",
    # Global flows
    "AtomMeasure",
    "GlobalFlowConfig",
    "assemble",
    "barrier_flow",
    "chart_identity",
    "compose",
    "k",
    "k0",
    "kn",
    "restrict_to_star",
    "rho",
    "vertex_star_spec",
    # Verification
    "TestReport",
    "holm",
    "negative_control",
    "SuiteRequest",
    "SuiteState",
    "build_suite_pipeline",
    "make_suite_request",
]
