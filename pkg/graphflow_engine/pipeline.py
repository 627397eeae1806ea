"""
Pipeline abstraction for the graphflow engine.

A Pipeline is a sequence of Steps that process requests.
Steps are pure functions that take (request, state) and return (emissions, state_updater).

Verification suites are pipelines of test stages followed by a summary stage.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, List, Optional, Protocol, Tuple

from .core import Emission, Request, State

# Step result: list of emissions and optional state update function
StepResult = Tuple[List[Emission[Any]], Optional[Callable[[Any], Any]]]


class Step(Protocol):
    """
    Protocol for a pipeline step.

    A step processes a request given the current state value and returns
    emissions plus an optional state updater. Given the same request and
    state, the output is deterministic.
    """

    def __call__(self, request: Request[Any], state: Any) -> StepResult:
        """
        Process a request.

        Args:
            request: The input request
            state: Current state value (not the State wrapper)

        Returns:
            Tuple of the emissions (can be empty) and an optional
            updater (old_state) -> new_state. None leaves state unchanged.
        """
        ...


@dataclass
class Pipeline:
    """
    A sequence of steps that process requests, threading state through each step.

    Example:
        pipeline = Pipeline([sign_law_step, local_time_step], name="sbm")
        emissions, final_state = pipeline.process(request, state)
    """

    steps: List[Step]
    name: str = "unnamed"

    def process(
        self, request: Request[Any], state: State[Any]
    ) -> Tuple[List[Emission[Any]], State[Any]]:
        """Process a request through all steps; returns all emissions and the updated state."""
        all_emissions: List[Emission[Any]] = []
        current_state_value = state.value

        for step in self.steps:
            emissions, state_updater = step(request, current_state_value)
            all_emissions.extend(emissions)
            if state_updater is not None:
                current_state_value = state_updater(current_state_value)

        if current_state_value is not state.value:
            state.update(current_state_value)

        return all_emissions, state
