"""
Command-line runner: validate configs, emit simulation CSVs and run suites.

Every CSV starts with a header row and ends with one metadata comment
    # seed=<first> n=<count> delta=<delta> config_hash=<git blob sha1>
Rows are ordered by seed, then by query order. Reports are JSON.

Exit codes: 0 ok, 1 verification failure, 2 configuration error,
3 invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .core import ConfigError, GraphflowError, InvariantViolation
from .engine import EngineBuilder
from .graph import MetricGraph, load_graph, point_from_spec, validate
from .graphflow import GlobalFlowConfig, k, vertex_star_spec
from .noise import NoiseField, lattice_level
from .sbmflow import SkewParams, flow
from .starflow import ExcursionLabeler, StarFlow, StarGraphSpec, StarPoint, validate_labeler
from .suites import SUITES, SuiteState, build_suite_pipeline, make_suite_request

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_INVARIANT = 3


def config_hash(data: bytes) -> str:
    """Content hash as git computes it for a blob."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _time(value: Any) -> Fraction:
    try:
        return Fraction(str(value))
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"time {value!r} is not a number") from exc


def _num(value: Any) -> str:
    if isinstance(value, Fraction):
        value = float(value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _read_json(path: Path) -> tuple[Any, bytes]:
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from exc
    try:
        return json.loads(data), data
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc


@dataclass(frozen=True)
class ExperimentConfig:
    """A parsed experiment file; subcommands read the sections they need from raw."""

    path: Path
    raw: Mapping[str, Any]
    digest: str
    delta: float
    queries: tuple[Mapping[str, Any], ...]
    seeds: tuple[int, int]
    output: Path | None = None

    @classmethod
    def load(cls, path: str | Path) -> ExperimentConfig:
        p = Path(path)
        raw, data = _read_json(p)
        if not isinstance(raw, dict):
            raise ConfigError(f"{p}: top level must be an object")
        try:
            delta = float(raw["delta"])
        except KeyError as exc:
            raise ConfigError(f"{p}: missing key 'delta'") from exc
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{p}: delta must be a number") from exc
        lattice_level(delta)
        seeds = raw.get("seeds", {})
        noise_seed = int(raw.get("noise", {}).get("seed", 0))
        first, count = int(seeds.get("first", noise_seed)), int(seeds.get("count", 1))
        if count < 1:
            raise ConfigError(f"{p}: seeds.count must be positive, got {count}")
        queries = raw.get("queries", [])
        if not isinstance(queries, list) or not queries:
            raise ConfigError(f"{p}: queries must be a non-empty list")
        return cls(
            path=p,
            raw=raw,
            digest=config_hash(data),
            delta=delta,
            queries=tuple(queries),
            seeds=(first, count),
            output=p.parent / raw["output"] if raw.get("output") else None,
        )

    def seed_list(self) -> list[int]:
        first, count = self.seeds
        return list(range(first, first + count))

    def noise_spec(self) -> dict[str, Any]:
        """The noise section with defaults: first seed, the lattice level, horizon [0, 1]."""
        spec = dict(self.raw.get("noise", {}))
        spec.setdefault("seed", self.seeds[0])
        spec.setdefault("n_max", lattice_level(self.delta))
        spec.setdefault("horizon", [0, 1])
        return spec

    def noise(self, edge_ids: Iterable[str] = ()) -> NoiseField:
        return NoiseField.from_spec(self.noise_spec(), edge_ids=edge_ids)

    def graph(self) -> MetricGraph:
        item = self.raw.get("graph")
        if item is None:
            raise ConfigError(f"{self.path}: missing key 'graph'")
        if isinstance(item, str):
            return load_graph(self.path.parent / item)
        return MetricGraph.from_spec(item)

    def query_times(self, item: Mapping[str, Any]) -> tuple[Fraction, Fraction]:
        try:
            s, t = _time(item["s"]), _time(item["t"])
        except KeyError as exc:
            raise ConfigError(f"{self.path}: query is missing {exc.args[0]!r}") from exc
        if t < s:
            raise ConfigError(f"{self.path}: query has t={t} before s={s}")
        return s, t

    def trailer(self) -> str:
        first, count = self.seeds
        return f"# seed={first} n={count} delta={self.delta!r} config_hash={self.digest}\n"


def _write(text: str, output: Path | None) -> None:
    if output is None:
        sys.stdout.write(text)
    else:
        output.parent.mkdir(parents=True, exist_ok=True)
        output.write_text(text)


def _csv(header: Sequence[str], rows: Iterable[Sequence[Any]], trailer: str) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_num(v) for v in row])
    buf.write(trailer)
    return buf.getvalue()


def _json(payload: Any) -> str:
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


# -- subcommands ----------------------------------------------------------------------


def cmd_validate(args: argparse.Namespace) -> int:
    """Graph file or experiment file: graph invariants, then labeler moment conditions."""
    path = Path(args.config)
    raw, _ = _read_json(path)
    graph_spec = raw.get("graph", raw) if isinstance(raw, dict) else raw
    if isinstance(graph_spec, str):
        graph = load_graph(path.parent / graph_spec)
    else:
        graph = MetricGraph.from_spec(graph_spec)
    report = validate(graph)
    payload: dict[str, Any] = {"graph": report.to_dict(), "labelers": {}}
    problems = list(report.violations)
    if report.valid:
        for v, item in sorted(dict(raw.get("labelers", {})).items()):
            star = vertex_star_spec(graph, v)
            found = validate_labeler(ExcursionLabeler.from_spec(item, star), star)
            payload["labelers"][v] = found
            problems.extend(f"labeler at {v}: {p}" for p in found)
    _write(_json(payload), args.output)
    for problem in problems:
        logger.error("%s: %s", path, problem)
    return EXIT_OK if not problems else EXIT_INVARIANT


def cmd_noise_audit(args: argparse.Namespace) -> int:
    """W over every cell of a level, per channel, for regression pinning."""
    path = Path(args.config)
    raw, data = _read_json(path)
    edge_ids = [str(e) for e in raw.get("edges", [])]
    noise = NoiseField.from_spec(raw, edge_ids=edge_ids)
    level = int(raw.get("level", min(noise.n_max, 4))) if args.level is None else args.level
    if not 0 <= level <= noise.n_max:
        raise ConfigError(f"audit level {level} outside [0, n_max={noise.n_max}]")
    k_lo, k_hi = noise.cell_range(level)
    step = Fraction(1, 2**level)
    rows = [
        (k * step, (k + 1) * step, channel, noise.increment(channel, k * step, (k + 1) * step))
        for channel in noise.channels
        for k in range(k_lo, k_hi)
    ]
    trailer = f"# seed={noise.seed} level={level} config_hash={config_hash(data)}\n"
    _write(_csv(("s", "t", "channel", "increment"), rows, trailer), args.output)
    return EXIT_OK


def cmd_simulate_sbm(args: argparse.Namespace) -> int:
    """Skew walks from every start of each (s, t) group, driven together."""
    cfg = ExperimentConfig.load(args.config)
    try:
        params = SkewParams(beta=float(cfg.raw["beta"]), delta=cfg.delta)
    except KeyError as exc:
        raise ConfigError(f"{cfg.path}: missing key 'beta'") from exc
    groups: dict[tuple[Fraction, Fraction], list[Fraction]] = {}
    for item in cfg.queries:
        starts = item.get("starts", [item.get("x", 0)])
        groups.setdefault(cfg.query_times(item), []).extend(_time(x) for x in starts)
    base = cfg.noise()
    rows = []
    for sd in cfg.seed_list():
        noise = base.with_seed(sd)
        for (s, t), starts in groups.items():
            sample = flow(params, noise, base.channels[0], s, starts, t)
            ends = {x: sample.value(x, t) for x in sorted(set(starts))}
            for x in sorted(set(starts)):
                partners = [other for other in ends if other != x and ends[other] == ends[x]]
                rows.append(
                    (
                        sd,
                        params.beta,
                        s,
                        x,
                        t,
                        ends[x],
                        sample.local_time(x, t),
                        min(partners) if partners else "",
                    )
                )
    header = ("seed", "beta", "s", "x", "t", "Y", "L", "coalesced_with")
    _write(_csv(header, rows, cfg.trailer()), args.output or cfg.output)
    return EXIT_OK


def _star_point(spec: StarGraphSpec, item: Any) -> StarPoint:
    if item is None or item == "center":
        return StarPoint.center()
    try:
        edge, radius = item.get("edge"), float(item.get("r", 0.0))
    except AttributeError as exc:
        raise ConfigError(f"star point {item!r} must be an object") from exc
    if edge is None or radius == 0.0:
        return StarPoint.center()
    spec.sign(int(edge))
    return StarPoint(edge=int(edge), radius=radius)


def cmd_simulate_star(args: argparse.Namespace) -> int:
    """Star kernels K_{s,t}(x) as long-format atoms."""
    cfg = ExperimentConfig.load(args.config)
    try:
        star_raw = cfg.raw["star"]
    except KeyError as exc:
        raise ConfigError(f"{cfg.path}: missing key 'star'") from exc
    spec = StarGraphSpec.from_spec(star_raw)
    labeler = ExcursionLabeler.from_spec(star_raw, spec)
    problems = validate_labeler(labeler, spec)
    if problems:
        raise ConfigError(f"{cfg.path}: " + "; ".join(problems))
    channels: tuple[str, ...] = ()
    if star_raw.get("channels") == "per-edge":
        channels = tuple(f"W:e{i}" for i in range(1, spec.n + 1))
    queries = [(*cfg.query_times(item), _star_point(spec, item.get("x"))) for item in cfg.queries]
    base = cfg.noise()
    rows = []
    for sd in cfg.seed_list():
        star = StarFlow(spec, labeler, base.with_seed(sd), cfg.delta, channels=channels)
        for s, t, x in queries:
            value = star.kernel(s, x, t)
            if value.mass != 1:
                raise InvariantViolation(f"star kernel mass {value.mass} at seed {sd}")
            for atom in value.atoms:
                rows.append(
                    (sd, s, x.edge or 0, x.radius, t, atom.edge or 0, atom.radius, str(atom.weight))
                )
    header = ("seed", "s", "x_edge", "x_r", "t", "atom_edge", "atom_r", "weight")
    _write(_csv(header, rows, cfg.trailer()), args.output or cfg.output)
    return EXIT_OK


def cmd_simulate_graph(args: argparse.Namespace) -> int:
    """Global kernels K_{s,t}(x) on a metric graph as long-format atoms."""
    cfg = ExperimentConfig.load(args.config)
    graph = cfg.graph()
    report = validate(graph)
    if not report.valid:
        raise InvariantViolation(f"{cfg.path}: " + "; ".join(report.violations))
    flow_config = GlobalFlowConfig.from_spec({**cfg.raw, "noise": cfg.noise_spec()}, graph=graph)
    queries = []
    for item in cfg.queries:
        if "x" not in item:
            raise ConfigError(f"{cfg.path}: query is missing 'x'")
        queries.append((*cfg.query_times(item), point_from_spec(graph, item["x"])))
    rows = []
    for sd in cfg.seed_list():
        config = flow_config.with_noise(flow_config.noise.with_seed(sd))
        for s, t, x in queries:
            measure = k(config, s, t, x)
            if measure.mass != 1:
                raise InvariantViolation(f"kernel mass {measure.mass} at seed {sd}")
            for where, coordinate, weight in measure.rows():
                rows.append((sd, s, t, where, coordinate, weight))
    header = ("seed", "s", "t", "atom_edge_or_vertex", "atom_coord", "weight")
    _write(_csv(header, rows, cfg.trailer()), args.output or cfg.output)
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    """Run a named suite through the engine and print its JSON report."""
    suite = args.suite
    builder = (
        EngineBuilder()
        .with_pipeline(build_suite_pipeline(suite))
        .with_initial_state(SuiteState())
        .with_emission_hook(
            lambda e: logger.debug("%s %s", e.emission_id, e.emission_type)
        )
        .with_error_hook(
            lambda exc, req: logger.error("suite %s aborted in %s", suite, req.request_id)
        )
    )
    if args.state_file:
        builder = builder.with_state_file(args.state_file)
    engine = builder.build()
    request = make_suite_request(
        suite=suite,
        n=args.n,
        n_exact=args.n_exact,
        seed=args.seed,
        delta=args.delta,
        strict=args.strict,
    )
    logger.info("suite %s: n=%d seed=%d", suite, args.n, args.seed)
    emissions = engine.process(request)
    state: SuiteState = engine.get_state()
    summary = emissions[-1].payload
    payload = {
        "suite": suite,
        "request_id": request.request_id,
        "seed": args.seed,
        "n": args.n,
        "n_exact": args.n_exact,
        "delta": args.delta,
        **state.to_dict(),
        "failed": summary["failed"],
    }
    _write(_json(payload), args.output)
    logger.info("suite %s finished: %s", suite, "pass" if state.passed else "fail")
    return EXIT_OK if state.passed else EXIT_FAILED


# -- parser ---------------------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--log-level",
        default="WARNING",
        choices=("DEBUG", "INFO", "WARNING", "ERROR"),
        help="Logging threshold for stderr (default: WARNING)",
    )
    parser.add_argument(
        "--output",
        type=Path,
        default=None,
        help="Write to this file instead of stdout",
    )


def _add_suite_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--n", type=int, default=2000, help="Seeds per statistical test (default: 2000)"
    )
    parser.add_argument(
        "--n-exact",
        type=int,
        default=50,
        help="Seeds per per-realization check (default: 50)",
    )
    parser.add_argument("--seed", type=int, default=0, help="First seed (default: 0)")
    parser.add_argument(
        "--delta",
        type=float,
        default=2.0**-4,
        help="Lattice step, a power of two (default: 0.0625)",
    )
    parser.add_argument(
        "--strict",
        action="store_true",
        help="Apply the Holm correction across the suite's p-values",
    )
    parser.add_argument(
        "--state-file",
        default=None,
        help="Also persist the accumulated suite state as JSON to this path",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graphflow",
        description="Stochastic flows of kernels on oriented metric graphs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="Check a graph or experiment file")
    p.add_argument("config", help="Graph spec JSON, or an experiment JSON with a 'graph' key")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("noise-audit", help="Emit (s, t, channel, increment) for one level")
    p.add_argument("config", help="Noise config JSON: seed, n_max, horizon, channels, edges")
    p.add_argument("--level", type=int, default=None, help="Grid level of the audited cells")
    p.set_defaults(func=cmd_noise_audit)

    for name, func, what in (
        ("simulate-sbm", cmd_simulate_sbm, "skew Brownian flow endpoints"),
        ("simulate-star", cmd_simulate_star, "star-graph kernels"),
        ("simulate-graph", cmd_simulate_graph, "metric-graph kernels"),
    ):
        p = sub.add_parser(name, help=f"Emit CSV of {what}")
        p.add_argument("config", help="Experiment config JSON")
        p.set_defaults(func=func)

    p = sub.add_parser("verify", help="Run a verification suite and print a JSON report")
    p.add_argument("--suite", choices=SUITES, default="all", help="Suite to run (default: all)")
    _add_suite_flags(p)
    p.set_defaults(func=cmd_verify)

    for name, suite in (("sbm-verify", "sbm"), ("graph-verify", "graph")):
        p = sub.add_parser(name, help=f"Shorthand for verify --suite {suite}")
        _add_suite_flags(p)
        p.set_defaults(func=cmd_verify, suite=suite)

    for p in sub.choices.values():
        _add_common(p)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return int(args.func(args))
    except InvariantViolation as exc:
        logger.error("invariant violated: %s", exc)
        return EXIT_INVARIANT
    except GraphflowError as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
