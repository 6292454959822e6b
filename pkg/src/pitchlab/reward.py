"""Reward construction for the defending team.

The base signal is sparse: -1 when a goal is conceded, 0 otherwise.  A
dense shaping term derived from the attacking side's expected possession
value is layered on top, either subtracted directly each step (additive
mode) or applied as a potential-based difference, which provably leaves
the optimal policy unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .sim import ConfigError, StepEvents


class ShapingMode(Enum):
    ADDITIVE = "additive"
    POTENTIAL_BASED = "potential_based"


@dataclass(frozen=True)
class ShapingConfig:
    """How the dense term is mixed into the sparse reward.

    weight 0 turns shaping off; the shaped stream is then bit-identical to
    the sparse one.  In potential-based mode `gamma` must match the
    training discount or the policy-invariance argument breaks down, so a
    mismatch is rejected up front.
    """

    mode: ShapingMode = ShapingMode.ADDITIVE
    weight: float = 0.1
    gamma: float = 0.99

    def __post_init__(self) -> None:
        if self.weight < 0:
            raise ConfigError("shaping weight must be >= 0")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError("shaping gamma must lie in (0, 1]")


def sparse_reward(events: StepEvents) -> float:
    """-1 when this step conceded a goal, else 0."""
    return -1.0 if events.goal else 0.0


def additive_shaped(sparse: float, value_curr: float, weight: float) -> float:
    """Dense penalty proportional to the attacking side's current state
    value: r = sparse - weight * value."""
    return sparse - weight * value_curr


def potential_shaped(sparse: float, value_prev: float, value_curr: float,
                     weight: float, gamma: float) -> float:
    """Potential-based term with potential phi(s) = -value(s):
    r = sparse + weight * (gamma * phi(s') - phi(s))."""
    return sparse + weight * (gamma * (-value_curr) - (-value_prev))


class RewardShaper:
    """Stateful per-episode shaping wrapper.

    Call episode_start() with the value of the reset state, then step()
    once per transition with the sparse reward and the value of the state
    the transition landed in.
    """

    def __init__(self, config: ShapingConfig, train_gamma: float):
        if config.mode is ShapingMode.POTENTIAL_BASED \
                and config.gamma != train_gamma:
            raise ConfigError(
                f"potential-based shaping needs gamma == training gamma "
                f"({config.gamma} != {train_gamma})")
        self.config = config
        self._prev_value: float | None = None

    @property
    def needs_value(self) -> bool:
        """Whether the caller must supply state values at all (weight 0
        runs skip the control-field and grid work entirely)."""
        return self.config.weight != 0.0

    def episode_start(self, value0: float = 0.0) -> None:
        self._prev_value = value0

    def step(self, sparse: float, value_curr: float = 0.0) -> float:
        cfg = self.config
        if cfg.weight == 0.0:
            return sparse
        if cfg.mode is ShapingMode.ADDITIVE:
            return additive_shaped(sparse, value_curr, cfg.weight)
        if self._prev_value is None:
            raise RuntimeError("episode_start() must run before step()")
        out = potential_shaped(sparse, self._prev_value, value_curr,
                               cfg.weight, cfg.gamma)
        self._prev_value = value_curr
        return out
