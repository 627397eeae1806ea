"""
Engine - The runtime for running requests through pipelines.

The Engine is the main entry point for verification runs. It:
- Accepts requests (one per suite invocation)
- Processes them through pipelines
- Persists the accumulated report as JSON
- Delivers emissions to hooks
- Maps work over seeds with a bounded thread pool
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, List, Optional, Sequence, TypeVar

from .core import ConfigError, Emission, Request, State
from .pipeline import Pipeline

logger = logging.getLogger(__name__)

R = TypeVar("R")

THREADS_ENV = "GRAPHFLOW_THREADS"


def thread_count() -> int:
    """Worker cap for seed-parallel maps, read from GRAPHFLOW_THREADS (default 1)."""
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        value = int(raw)
    except ValueError as exc:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from exc
    return max(1, value)


def map_seeds(
    fn: Callable[[int], R], seeds: Sequence[int], threads: Optional[int] = None
) -> List[R]:
    """
    Apply fn to every seed, returning results in seed order.

    The output order never depends on the worker count, so reports are
    identical for any GRAPHFLOW_THREADS value.
    """
    workers = thread_count() if threads is None else max(1, threads)
    if workers == 1 or len(seeds) < 2:
        return [fn(seed) for seed in seeds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, seeds))


@dataclass
class EngineConfig:
    """Configuration for the engine."""

    # Report persistence
    persist_state: bool = False
    state_file: Optional[Path] = None

    # Hooks
    on_emission: Optional[Callable[[Emission[Any]], None]] = None
    on_error: Optional[Callable[[Exception, Request[Any]], None]] = None


@dataclass
class EngineStats:
    """Runtime statistics for the engine."""

    requests_processed: int = 0
    emissions_produced: int = 0
    errors_encountered: int = 0
    state_updates: int = 0


class Engine:
    """
    The runtime for processing requests through pipelines.

    Example:
        engine = Engine(pipeline=build_suite_pipeline("sbm"), initial_state=SuiteState())
        emissions = engine.process(make_suite_request(suite="sbm", n=2000, seed=7))
        verdict = engine.get_state().passed
    """

    def __init__(
        self,
        pipeline: Pipeline,
        initial_state: Any,
        config: Optional[EngineConfig] = None,
    ):
        self.pipeline = pipeline
        self.state = State(value=initial_state)
        self.config = config or EngineConfig()
        self.stats = EngineStats()

    def process(self, request: Request[Any]) -> List[Emission[Any]]:
        """Process a single request through the pipeline and return its emissions."""
        self.stats.requests_processed += 1
        state_before = self.state.version
        logger.info("pipeline %s: processing %s", self.pipeline.name, request.request_id)

        try:
            emissions, self.state = self.pipeline.process(request, self.state)

            if self.state.version > state_before:
                self.stats.state_updates += 1
                if self.config.persist_state and self.config.state_file:
                    self._save_state()

            self.stats.emissions_produced += len(emissions)
            if self.config.on_emission:
                for emission in emissions:
                    self.config.on_emission(emission)

            return emissions

        except Exception as e:
            self.stats.errors_encountered += 1
            logger.error("pipeline %s failed on %s: %s", self.pipeline.name, request.request_id, e)
            if self.config.on_error:
                self.config.on_error(e, request)
            raise

    def get_state(self) -> Any:
        """Get current state value."""
        return self.state.value

    def _save_state(self) -> None:
        if self.config.state_file:
            self.config.state_file.parent.mkdir(parents=True, exist_ok=True)
            with open(self.config.state_file, "w") as f:
                json.dump(self.state.to_dict(), f, indent=2, sort_keys=True, default=str)


class EngineBuilder:
    """
    Fluent builder for creating engines.

    Example:
        engine = (EngineBuilder()
            .with_pipeline(build_suite_pipeline("graph"))
            .with_initial_state(SuiteState())
            .with_state_file("./report.json")
            .with_emission_hook(log_report)
            .build())
    """

    def __init__(self) -> None:
        self._pipeline: Optional[Pipeline] = None
        self._initial_state: Any = None
        self._config = EngineConfig()

    def with_pipeline(self, pipeline: Pipeline) -> EngineBuilder:
        self._pipeline = pipeline
        return self

    def with_initial_state(self, state: Any) -> EngineBuilder:
        self._initial_state = state
        return self

    def with_state_file(self, path: str) -> EngineBuilder:
        """Enable report persistence to file."""
        self._config.persist_state = True
        self._config.state_file = Path(path)
        return self

    def with_emission_hook(self, hook: Callable[[Emission[Any]], None]) -> EngineBuilder:
        self._config.on_emission = hook
        return self

    def with_error_hook(self, hook: Callable[[Exception, Request[Any]], None]) -> EngineBuilder:
        self._config.on_error = hook
        return self

    def build(self) -> Engine:
        """Build the engine."""
        if self._pipeline is None:
            raise ValueError("Pipeline is required")
        if self._initial_state is None:
            raise ValueError("Initial state is required")
        return Engine(
            pipeline=self._pipeline,
            initial_state=self._initial_state,
            config=self._config,
        )
