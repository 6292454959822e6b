"""Deterministic 2D football-defense environment.

Controllable defenders (plus an immobile goalkeeper) face scripted attackers
on a rectangular pitch with the defended goal on the x = 0 line.  All
randomness flows through a single seeded generator stored on the state, so a
(scenario, seed, action sequence) triple fully determines the trajectory.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from functools import cached_property
from typing import Optional, Sequence

import numpy as np


class ConfigError(ValueError):
    """Scenario or pitch parameters violate an invariant."""


class ActionArityError(ValueError):
    """Number of defender actions does not match the scenario."""


class SteppedTerminalError(RuntimeError):
    """step() was called on a state whose episode already ended."""


class Team(Enum):
    DEFENDING = "defending"
    ATTACKING = "attacking"


class Role(Enum):
    OUTFIELD = "outfield"
    LAZY_GOALKEEPER = "lazy_goalkeeper"


@dataclass(frozen=True)
class PitchSpec:
    """Pitch geometry and the control/value grid laid over it.

    x runs along the pitch length with the defended goal centred on x = 0;
    y runs along the width.  The grid has grid_m cells along x and grid_n
    along y, sampled at cell centres.
    """

    length: float = 105.0
    width: float = 68.0
    grid_m: int = 32
    grid_n: int = 20
    goal_half_width: float = 3.66

    def __post_init__(self) -> None:
        if not (self.length > 0 and self.width > 0):
            raise ConfigError("pitch length and width must be positive")
        if self.grid_m < 2 or self.grid_n < 2:
            raise ConfigError("grid must be at least 2x2")
        if not 0 < self.goal_half_width < self.width / 2:
            raise ConfigError("goal_half_width must lie in (0, width/2)")

    @property
    def goal_center(self) -> tuple[float, float]:
        return (0.0, self.width / 2.0)

    @property
    def cell_size(self) -> tuple[float, float]:
        return (self.length / self.grid_m, self.width / self.grid_n)

    @cached_property
    def cell_centers(self) -> np.ndarray:
        """(grid_m * grid_n, 2) cell-centre coordinates, row-major over (i, j)."""
        xs = (np.arange(self.grid_m) + 0.5) * (self.length / self.grid_m)
        ys = (np.arange(self.grid_n) + 0.5) * (self.width / self.grid_n)
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        out = np.stack([gx.ravel(), gy.ravel()], axis=1)
        out.setflags(write=False)
        return out


@dataclass(frozen=True)
class ScenarioConfig:
    """Episode setup plus the kinematic constants of the simulator.

    Only the first block is scenario-defining; the rest are physical
    defaults exposed for tuning from the experiment config.
    """

    n_defenders: int = 4
    n_attackers: int = 6
    difficulty: float = 0.95
    max_episode_steps: int = 400
    dt: float = 0.1
    pitch: PitchSpec = PitchSpec()

    max_speed: float = 8.0              # outfield top speed, m/s
    gk_control_speed: float = 0.6       # nominal GK speed used by arrival-time models
    reaction_time: float = 0.5          # seconds before a player starts moving
    attacker_speed_factor: float = 0.95
    dribble_speed_factor: float = 0.85
    tackle_radius: float = 1.5          # press must be this close to attempt a tackle
    press_radius: float = 4.0           # carrier counts as pressed inside this radius
    scoring_zone_depth: float = 20.0    # shots allowed when carrier x is below this
    pass_speed: float = 16.0
    shot_speed: float = 22.0
    receive_radius: float = 1.2         # attackers control the ball inside this
    intercept_radius: float = 0.9       # defenders win a flying ball inside this
    ball_drag: float = 0.25             # fractional speed loss per second in flight
    noise_max: float = 0.35             # radians of aim noise at difficulty 0
    tackle_prob: float = 0.15
    foul_prob: float = 0.1
    decision_period: int = 5            # steps between attacker re-decisions

    def __post_init__(self) -> None:
        if self.n_defenders < 1:
            raise ConfigError("n_defenders must be >= 1")
        if self.n_attackers < 1:
            raise ConfigError("n_attackers must be >= 1")
        if not 0.0 <= self.difficulty <= 1.0:
            raise ConfigError("difficulty must lie in [0, 1]")
        if self.max_episode_steps < 1:
            raise ConfigError("max_episode_steps must be >= 1")
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        for name in ("max_speed", "gk_control_speed", "pass_speed", "shot_speed",
                     "tackle_radius", "receive_radius", "intercept_radius",
                     "press_radius"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("tackle_prob", "foul_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.ball_drag < 0:
            raise ConfigError("ball_drag must be >= 0")
        if self.reaction_time < 0:
            raise ConfigError("reaction_time must be >= 0")
        if self.decision_period < 1:
            raise ConfigError("decision_period must be >= 1")

    @property
    def n_players(self) -> int:
        return self.n_defenders + 1 + self.n_attackers


class DefenderAction(IntEnum):
    """Per-defender discrete action: hold, move on a compass bearing, or press."""

    STAY = 0
    MOVE_E = 1
    MOVE_NE = 2
    MOVE_N = 3
    MOVE_NW = 4
    MOVE_W = 5
    MOVE_SW = 6
    MOVE_S = 7
    MOVE_SE = 8
    PRESS = 9


N_ACTIONS = len(DefenderAction)

_D = math.sqrt(0.5)
# unit vectors for MOVE_E .. MOVE_SE, indexed by DefenderAction value
_MOVE_DIRS = np.array([
    [0.0, 0.0],      # STAY (unused)
    [1.0, 0.0],      # E
    [_D, _D],        # NE
    [0.0, 1.0],      # N
    [-_D, _D],       # NW
    [-1.0, 0.0],     # W
    [-_D, -_D],      # SW
    [0.0, -1.0],     # S
    [_D, -_D],       # SE
])
_MOVE_DIRS.setflags(write=False)


class OutcomeKind(Enum):
    GOAL_CONCEDED = "goal_conceded"
    OUT_OF_BOUNDS = "out_of_bounds"
    TURNOVER = "turnover"
    STEP_LIMIT = "step_limit"


@dataclass(frozen=True)
class EpisodeOutcome:
    kind: OutcomeKind
    goal_difference: int  # defending goals minus attacking goals: 0 or -1 here


@dataclass
class StepEvents:
    """Flags raised by one call to step()."""

    goal: bool = False
    out_of_bounds: bool = False
    turnover: bool = False
    tackle: bool = False
    foul: bool = False
    terminal: bool = False
    outcome: Optional[EpisodeOutcome] = None


@dataclass
class PlayerState:
    """Read-only view of one player, materialised from the state arrays."""

    id: int
    team: Team
    role: Role
    position: tuple[float, float]
    velocity: tuple[float, float]
    max_speed: float
    reaction_time: float


@dataclass
class BallState:
    position: tuple[float, float]
    velocity: tuple[float, float]
    carrier: Optional[int]


class CarrierOption(Enum):
    DRIBBLE = "dribble"
    PASS = "pass"
    SHOOT = "shoot"


@dataclass
class AttackerIntents:
    """One scripted-attacker decision: what the carrier does and where the
    off-ball runners are heading."""

    carrier_option: Optional[CarrierOption]
    greedy_option: Optional[CarrierOption]
    available_options: tuple[CarrierOption, ...]
    pass_target: Optional[int]
    aim_point: Optional[tuple[float, float]]  # release point for PASS or SHOOT
    dribble_dir: Optional[tuple[float, float]]
    offball_targets: np.ndarray  # (n_attackers, 2)


class GameState:
    """Full kinematic snapshot; step() advances it in place.

    Player order is fixed: outfield defenders first, then the goalkeeper,
    then the attackers.  Positions/velocities live in (P, 2) arrays for
    vectorised access; the `players` property materialises PlayerState
    views on demand.
    """

    __slots__ = (
        "scenario", "positions", "velocities", "is_attacker", "gk_index",
        "max_speeds", "reaction_times", "ball_pos", "ball_vel", "carrier",
        "kick_shield", "step_index", "rng", "score_events", "terminal",
        "outcome", "intents", "intents_step", "intents_carrier", "intents_pressed",
    )

    def __init__(self, scenario: ScenarioConfig, positions: np.ndarray,
                 velocities: np.ndarray, ball_pos: np.ndarray,
                 ball_vel: np.ndarray, carrier: Optional[int],
                 rng: np.random.Generator):
        n_def = scenario.n_defenders
        P = scenario.n_players
        self.scenario = scenario
        self.positions = positions
        self.velocities = velocities
        self.gk_index = n_def
        self.is_attacker = np.zeros(P, dtype=bool)
        self.is_attacker[n_def + 1:] = True
        self.max_speeds = np.full(P, scenario.max_speed)
        self.max_speeds[self.gk_index] = scenario.gk_control_speed
        self.max_speeds[n_def + 1:] = scenario.max_speed * scenario.attacker_speed_factor
        self.reaction_times = np.full(P, scenario.reaction_time)
        self.ball_pos = ball_pos
        self.ball_vel = ball_vel
        self.carrier = carrier
        self.kick_shield: Optional[int] = None
        self.step_index = 0
        self.rng = rng
        self.score_events: list[dict] = []
        self.terminal = False
        self.outcome: Optional[EpisodeOutcome] = None
        self.intents: Optional[AttackerIntents] = None
        self.intents_step = -1
        self.intents_carrier: Optional[int] = None
        self.intents_pressed = False

    @property
    def attacker_indices(self) -> np.ndarray:
        return np.nonzero(self.is_attacker)[0]

    @property
    def players(self) -> list[PlayerState]:
        out = []
        for i in range(self.scenario.n_players):
            if self.is_attacker[i]:
                team, role = Team.ATTACKING, Role.OUTFIELD
            elif i == self.gk_index:
                team, role = Team.DEFENDING, Role.LAZY_GOALKEEPER
            else:
                team, role = Team.DEFENDING, Role.OUTFIELD
            out.append(PlayerState(
                id=i, team=team, role=role,
                position=(float(self.positions[i, 0]), float(self.positions[i, 1])),
                velocity=(float(self.velocities[i, 0]), float(self.velocities[i, 1])),
                max_speed=float(self.max_speeds[i]),
                reaction_time=float(self.reaction_times[i]),
            ))
        return out

    @property
    def ball(self) -> BallState:
        return BallState(
            position=(float(self.ball_pos[0]), float(self.ball_pos[1])),
            velocity=(float(self.ball_vel[0]), float(self.ball_vel[1])),
            carrier=self.carrier,
        )


def reset(scenario: ScenarioConfig, seed: int) -> GameState:
    """Build the kickoff state: defenders spread in their own half, attackers
    around a kickoff formation, ball carried by an attacker on the halfway
    line.  Identical (scenario, seed) pairs produce bit-identical states."""
    pitch = scenario.pitch
    L, W = pitch.length, pitch.width
    rng = np.random.default_rng(int(seed))
    n_def, n_att = scenario.n_defenders, scenario.n_attackers
    P = scenario.n_players

    positions = np.zeros((P, 2))
    velocities = np.zeros((P, 2))

    for i in range(n_def):
        base_y = W * (i + 1) / (n_def + 1)
        x = 0.22 * L + rng.uniform(-2.0, 2.0)
        y = base_y + rng.uniform(-2.0, 2.0)
        positions[i] = (min(max(x, 1.0), 0.45 * L), min(max(y, 1.0), W - 1.0))

    positions[n_def] = pitch.goal_center  # lazy goalkeeper, never moves

    first_att = n_def + 1
    positions[first_att] = (0.5 * L, 0.5 * W)
    for k in range(1, n_att):
        base_y = W * k / n_att
        x = 0.5 * L + 3.0 + 4.0 * ((k - 1) // 2) + rng.uniform(0.0, 2.0)
        y = base_y + rng.uniform(-2.0, 2.0)
        positions[first_att + k] = (min(max(x, 0.5 * L), L - 1.0), min(max(y, 1.0), W - 1.0))

    ball_pos = positions[first_att].copy()
    state = GameState(scenario, positions, velocities, ball_pos,
                      np.zeros(2), first_att, rng)
    return state


def _unit(v: np.ndarray) -> np.ndarray:
    n = math.hypot(v[0], v[1])
    if n < 1e-12:
        return np.zeros(2)
    return v / n


def _rotate(v: np.ndarray, angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([c * v[0] - s * v[1], s * v[0] + c * v[1]])


def _dist_point_segment(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    ab = b - a
    denom = float(ab @ ab)
    if denom < 1e-12:
        return float(np.hypot(*(p - a)))
    t = float((p - a) @ ab) / denom
    t = min(max(t, 0.0), 1.0)
    proj = a + t * ab
    return float(np.hypot(*(p - proj)))


def _segment_min_dist(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    return min(_dist_point_segment(points[i], a, b) for i in range(len(points)))


def attacker_policy(state: GameState, difficulty: float,
                    rng: np.random.Generator) -> AttackerIntents:
    """Scripted attacker decision for the current state.

    The carrier ranks its available options (dribble toward goal, pass to
    the best-placed teammate, shoot when inside the scoring zone) with a
    deterministic heuristic; the greedy option is taken with probability
    0.5 + 0.5 * difficulty, otherwise one of the remaining options is drawn
    uniformly.  Off-ball attackers head for the most open grid cell near
    goal.  Pure in state; consumes only `rng`.
    """
    if not 0.0 <= difficulty <= 1.0:
        raise ConfigError("difficulty must lie in [0, 1]")
    sc = state.scenario
    pitch = sc.pitch
    goal = np.array(pitch.goal_center)
    att_idx = state.attacker_indices
    def_mask = ~state.is_attacker
    def_pos = state.positions[def_mask]

    carrier = state.carrier
    carrier_is_attacker = carrier is not None and state.is_attacker[carrier]

    option: Optional[CarrierOption] = None
    greedy: Optional[CarrierOption] = None
    available: tuple[CarrierOption, ...] = ()
    pass_target: Optional[int] = None
    aim_point: Optional[tuple[float, float]] = None
    dribble_dir: Optional[tuple[float, float]] = None

    if carrier_is_attacker:
        cpos = state.positions[carrier]
        d_goal = float(np.hypot(*(cpos - goal)))
        pressed_dist = float(np.min(np.hypot(def_pos[:, 0] - cpos[0],
                                             def_pos[:, 1] - cpos[1])))
        in_zone = cpos[0] <= sc.scoring_zone_depth
        teammates = [int(j) for j in att_idx if j != carrier]

        scores: dict[CarrierOption, float] = {}
        unpressed = pressed_dist > sc.press_radius
        scores[CarrierOption.DRIBBLE] = 0.55 if unpressed else 0.25

        if teammates:
            best_tm, best_val = teammates[0], -np.inf
            for j in teammates:
                tpos = state.positions[j]
                tm_d_goal = float(np.hypot(*(tpos - goal)))
                openness = float(np.min(np.hypot(def_pos[:, 0] - tpos[0],
                                                 def_pos[:, 1] - tpos[1])))
                blocked = _segment_min_dist(def_pos, cpos, tpos) < 1.5
                val = (0.4 * min(max((d_goal - tm_d_goal) / 20.0, -1.0), 1.0)
                       + 0.15 * min(openness / 10.0, 1.0)
                       - (0.4 if blocked else 0.0))
                if val > best_val:
                    best_tm, best_val = j, val
            pass_target = best_tm
            scores[CarrierOption.PASS] = 0.35 + best_val

        if in_zone:
            scores[CarrierOption.SHOOT] = (
                (2.0 if unpressed else 0.0)
                + 0.4 * max(0.0, 1.0 - d_goal / (2.0 * sc.scoring_zone_depth))
                + 0.6 * max(0.0, 1.0 - d_goal / 12.0)
            )

        available = tuple(o for o in CarrierOption if o in scores)
        greedy = max(available, key=lambda o: scores[o])
        if len(available) == 1:
            option = available[0]
        else:
            p_greedy = 0.5 + 0.5 * difficulty
            if rng.random() < p_greedy:
                option = greedy
            else:
                rest = [o for o in available if o is not greedy]
                option = rest[int(rng.integers(len(rest)))]

        if option is CarrierOption.SHOOT:
            margin = 0.5
            corners = [
                np.array([0.0, goal[1] - (pitch.goal_half_width - margin)]),
                np.array([0.0, goal[1] + (pitch.goal_half_width - margin)]),
            ]
            gaps = [_segment_min_dist(def_pos, cpos, c) for c in corners]
            aim = corners[0] if gaps[0] >= gaps[1] else corners[1]
            aim_point = (float(aim[0]), float(aim[1]))
        elif option is CarrierOption.PASS:
            tpos = state.positions[pass_target]
            tvel = state.velocities[pass_target]
            flight = float(np.hypot(*(tpos - cpos))) / sc.pass_speed
            aim = tpos + 0.5 * flight * tvel  # lead the runner half a flight
            aim_point = (float(aim[0]), float(aim[1]))
        else:
            base = _unit(goal - cpos)
            if pressed_dist <= sc.press_radius:
                nearest = def_pos[np.argmin(np.hypot(def_pos[:, 0] - cpos[0],
                                                     def_pos[:, 1] - cpos[1]))]
                to_def = _unit(nearest - cpos)
                if float(base @ to_def) > 0.5:
                    cross = base[0] * to_def[1] - base[1] * to_def[0]
                    side = -1.0 if cross > 0 else 1.0
                    base = _rotate(base, side * 0.7)
            dribble_dir = (float(base[0]), float(base[1]))

    offball = _offball_targets(state)
    return AttackerIntents(
        carrier_option=option,
        greedy_option=greedy,
        available_options=available,
        pass_target=pass_target,
        aim_point=aim_point,
        dribble_dir=dribble_dir,
        offball_targets=offball,
    )


def _offball_targets(state: GameState) -> np.ndarray:
    """Pick a run target per attacker: the candidate cell (coarse grid over
    the defensive half) where they out-arrive every defender, pulled toward
    goal, avoiding targets already claimed by earlier teammates."""
    sc = state.scenario
    pitch = sc.pitch
    centers = pitch.cell_centers
    m, n = pitch.grid_m, pitch.grid_n
    grid = centers.reshape(m, n, 2)
    cand = grid[0:max(2, m // 2):2, ::2].reshape(-1, 2)

    goal = np.array(pitch.goal_center)
    d_goal = np.hypot(cand[:, 0] - goal[0], cand[:, 1] - goal[1])

    def_mask = ~state.is_attacker
    def_pos = state.positions[def_mask]
    def_speeds = state.max_speeds[def_mask]
    def_react = state.reaction_times[def_mask]
    d_def = np.hypot(cand[:, None, 0] - def_pos[None, :, 0],
                     cand[:, None, 1] - def_pos[None, :, 1])
    tau_def = (def_react[None, :] + d_def / def_speeds[None, :]).min(axis=1)

    att_idx = state.attacker_indices
    ball_x = float(state.ball_pos[0])
    # stay connected to the play: punish runs far ahead of the ball
    tether = np.abs(cand[:, 0] - ball_x) / 30.0
    targets = np.zeros((len(att_idx), 2))
    claimed: list[np.ndarray] = []
    for k, idx in enumerate(att_idx):
        pos = state.positions[idx]
        tau_att = state.reaction_times[idx] + \
            np.hypot(cand[:, 0] - pos[0], cand[:, 1] - pos[1]) / state.max_speeds[idx]
        score = (tau_def - tau_att) - d_goal / 25.0 - tether
        for c in claimed:
            near = np.hypot(cand[:, 0] - c[0], cand[:, 1] - c[1]) < 6.0
            score = score - 1.5 * near
        best = int(np.argmax(score))
        targets[k] = cand[best]
        claimed.append(cand[best])
    return targets


def step(state: GameState, actions: Sequence[int]) -> tuple[GameState, StepEvents]:
    """Advance one tick: defenders move per their actions, attackers per the
    scripted policy, the ball with its carrier or along its flight.  Returns
    the (mutated) state and the events raised during the tick."""
    if state.terminal:
        raise SteppedTerminalError("episode already ended; reset() for a new one")
    sc = state.scenario
    n_def = sc.n_defenders
    if len(actions) != n_def:
        raise ActionArityError(f"expected {n_def} actions, got {len(actions)}")

    pitch = sc.pitch
    rng = state.rng
    events = StepEvents()
    pos = state.positions
    vel = state.velocities

    # -- defender velocities ------------------------------------------------
    press_flags = np.zeros(n_def, dtype=bool)
    for i in range(n_def):
        a = DefenderAction(actions[i])
        if a is DefenderAction.STAY:
            vel[i] = 0.0
        elif a is DefenderAction.PRESS:
            press_flags[i] = True
            target = pos[state.carrier] if state.carrier is not None else state.ball_pos
            vel[i] = _unit(target - pos[i]) * sc.max_speed
        else:
            vel[i] = _MOVE_DIRS[a.value] * sc.max_speed
    vel[state.gk_index] = 0.0

    # -- attacker decisions (held while a pass or shot is in flight) ---------
    pressed_now = False
    if state.carrier is not None:
        cp = pos[state.carrier]
        dmask = ~state.is_attacker
        pressed_now = bool(np.min(np.hypot(pos[dmask, 0] - cp[0],
                                           pos[dmask, 1] - cp[1])) <= sc.press_radius)
    needs_refresh = state.intents is None or (
        state.carrier is not None
        and (state.carrier != state.intents_carrier
             or pressed_now != state.intents_pressed  # react to a press event
             or state.step_index - state.intents_step >= sc.decision_period)
    )
    if needs_refresh:
        state.intents = attacker_policy(state, sc.difficulty, rng)
        state.intents_step = state.step_index
        state.intents_carrier = state.carrier
        state.intents_pressed = pressed_now
        intents = state.intents
        # release the ball on a fresh pass/shoot decision
        if intents.carrier_option in (CarrierOption.PASS, CarrierOption.SHOOT) \
                and state.carrier is not None:
            cpos = pos[state.carrier]
            aim = np.array(intents.aim_point)
            noise = (1.0 - sc.difficulty) * sc.noise_max
            direction = _rotate(_unit(aim - cpos), rng.normal(0.0, noise))
            speed = sc.shot_speed if intents.carrier_option is CarrierOption.SHOOT \
                else sc.pass_speed
            state.ball_vel = direction * speed
            vel[state.carrier] = 0.0
            state.kick_shield = state.carrier  # kicker cannot re-catch instantly
            state.carrier = None
            state.intents_carrier = None
    intents = state.intents

    # -- attacker velocities ------------------------------------------------
    att_speed = sc.max_speed * sc.attacker_speed_factor
    ball_flying = state.carrier is None
    for k, idx in enumerate(state.attacker_indices):
        if idx == state.carrier:
            if intents.dribble_dir is not None:
                d = np.array(intents.dribble_dir)
            else:
                d = _unit(np.array(pitch.goal_center) - pos[idx])
            vel[idx] = d * att_speed * sc.dribble_speed_factor
        elif (ball_flying and intents.carrier_option is CarrierOption.PASS
                and intents.pass_target == idx):
            # intended receiver runs to meet the pass
            meet = state.ball_pos + 0.3 * state.ball_vel - pos[idx]
            vel[idx] = _unit(meet) * att_speed
        else:
            to_target = intents.offball_targets[k] - pos[idx]
            if math.hypot(to_target[0], to_target[1]) > 0.5:
                vel[idx] = _unit(to_target) * att_speed
            else:
                vel[idx] = 0.0

    # -- integrate player positions (containment clamp) ----------------------
    pos += vel * sc.dt
    np.clip(pos[:, 0], 0.0, pitch.length, out=pos[:, 0])
    np.clip(pos[:, 1], 0.0, pitch.width, out=pos[:, 1])

    # -- ball ----------------------------------------------------------------
    if state.carrier is not None:
        state.ball_pos = pos[state.carrier].copy()
        state.ball_vel = vel[state.carrier].copy()
    else:
        old = state.ball_pos
        new = old + state.ball_vel * sc.dt
        delta = new - old

        # fraction of the segment inside the pitch
        t_exit = 1.0
        if delta[0] < 0.0 and new[0] < 0.0:
            t_exit = min(t_exit, old[0] / -delta[0])
        elif delta[0] > 0.0 and new[0] > pitch.length:
            t_exit = min(t_exit, (pitch.length - old[0]) / delta[0])
        if delta[1] < 0.0 and new[1] < 0.0:
            t_exit = min(t_exit, old[1] / -delta[1])
        elif delta[1] > 0.0 and new[1] > pitch.width:
            t_exit = min(t_exit, (pitch.width - old[1]) / delta[1])
        end = old + t_exit * delta

        # interception: swept distance from every player to the in-pitch
        # segment, so a fast ball cannot tunnel past a body between ticks
        seg = end - old
        seg_sq = float(seg @ seg)
        rel = pos - old
        if seg_sq > 0.0:
            tt = np.clip((rel @ seg) / seg_sq, 0.0, 1.0)
        else:
            tt = np.zeros(len(pos))
        nearest_pts = old + tt[:, None] * seg
        d = np.hypot(pos[:, 0] - nearest_pts[:, 0], pos[:, 1] - nearest_pts[:, 1])
        if state.kick_shield is not None:
            if d[state.kick_shield] > sc.receive_radius:
                state.kick_shield = None
            else:
                d[state.kick_shield] = np.inf
        radii = np.where(state.is_attacker, sc.receive_radius, sc.intercept_radius)
        close = np.nonzero(d <= radii)[0]
        if len(close):
            nearest = int(close[np.argmin(tt[close])])  # first along the path
            state.kick_shield = None
            if state.is_attacker[nearest]:
                state.carrier = nearest
                state.ball_pos = pos[nearest].copy()
                state.ball_vel = vel[nearest].copy()
            else:
                events.turnover = True
                state.ball_pos = pos[nearest].copy()
                _terminate(state, events, OutcomeKind.TURNOVER)
        elif t_exit < 1.0:
            cy = pitch.width / 2.0
            if delta[0] < 0.0 and end[0] <= 1e-9 \
                    and abs(end[1] - cy) <= pitch.goal_half_width:
                events.goal = True
                state.score_events.append(
                    {"step": state.step_index, "team": Team.ATTACKING.value})
                _terminate(state, events, OutcomeKind.GOAL_CONCEDED)
            else:
                events.out_of_bounds = True
                _terminate(state, events, OutcomeKind.OUT_OF_BOUNDS)
            state.ball_pos = end
        else:
            state.ball_pos = new
            state.ball_vel = state.ball_vel * max(0.0, 1.0 - sc.ball_drag * sc.dt)

    # -- press tackles -------------------------------------------------------
    if not state.terminal and state.carrier is not None:
        cpos = pos[state.carrier]
        for i in range(n_def):
            if not press_flags[i]:
                continue
            if math.hypot(pos[i, 0] - cpos[0], pos[i, 1] - cpos[1]) > sc.tackle_radius:
                continue
            if rng.random() < sc.tackle_prob:
                events.tackle = True
                events.turnover = True
                _terminate(state, events, OutcomeKind.TURNOVER)
                break
            if rng.random() < sc.foul_prob:
                events.foul = True
                events.turnover = True
                _terminate(state, events, OutcomeKind.TURNOVER)
                break

    state.step_index += 1
    if not state.terminal and state.step_index >= sc.max_episode_steps:
        _terminate(state, events, OutcomeKind.STEP_LIMIT)
    return state, events


def _terminate(state: GameState, events: StepEvents, kind: OutcomeKind) -> None:
    gd = -1 if kind is OutcomeKind.GOAL_CONCEDED else 0
    state.terminal = True
    state.outcome = EpisodeOutcome(kind=kind, goal_difference=gd)
    events.terminal = True
    events.outcome = state.outcome


def observation_length(scenario: ScenarioConfig) -> int:
    return scenario.n_players * 5 + 4


def observe(state: GameState) -> np.ndarray:
    """Flat observation: per player (x, y, vx, vy), then ball (x, y, vx, vy),
    then a carrier one-hot.  Positions map to [-1, 1] over the pitch, speeds
    are scaled by the relevant top speed."""
    sc = state.scenario
    pitch = sc.pitch
    P = sc.n_players
    out = np.empty(P * 4 + 4 + P)
    pos, vel = state.positions, state.velocities
    out[0:P * 4:4] = 2.0 * pos[:, 0] / pitch.length - 1.0
    out[1:P * 4:4] = 2.0 * pos[:, 1] / pitch.width - 1.0
    out[2:P * 4:4] = vel[:, 0] / sc.max_speed
    out[3:P * 4:4] = vel[:, 1] / sc.max_speed
    b = P * 4
    out[b] = 2.0 * state.ball_pos[0] / pitch.length - 1.0
    out[b + 1] = 2.0 * state.ball_pos[1] / pitch.width - 1.0
    out[b + 2] = state.ball_vel[0] / sc.shot_speed
    out[b + 3] = state.ball_vel[1] / sc.shot_speed
    out[b + 4:] = 0.0
    if state.carrier is not None:
        out[b + 4 + state.carrier] = 1.0
    return out


# -- serialization -----------------------------------------------------------

def scenario_to_dict(sc: ScenarioConfig) -> dict:
    d = {
        "n_defenders": sc.n_defenders, "n_attackers": sc.n_attackers,
        "difficulty": sc.difficulty, "max_episode_steps": sc.max_episode_steps,
        "dt": sc.dt,
        "pitch": {
            "length": sc.pitch.length, "width": sc.pitch.width,
            "grid_m": sc.pitch.grid_m, "grid_n": sc.pitch.grid_n,
            "goal_half_width": sc.pitch.goal_half_width,
        },
        "max_speed": sc.max_speed, "gk_control_speed": sc.gk_control_speed,
        "reaction_time": sc.reaction_time,
        "attacker_speed_factor": sc.attacker_speed_factor,
        "dribble_speed_factor": sc.dribble_speed_factor,
        "tackle_radius": sc.tackle_radius, "press_radius": sc.press_radius,
        "scoring_zone_depth": sc.scoring_zone_depth,
        "pass_speed": sc.pass_speed, "shot_speed": sc.shot_speed,
        "receive_radius": sc.receive_radius,
        "intercept_radius": sc.intercept_radius,
        "ball_drag": sc.ball_drag, "noise_max": sc.noise_max,
        "tackle_prob": sc.tackle_prob, "foul_prob": sc.foul_prob,
        "decision_period": sc.decision_period,
    }
    return d


def scenario_from_dict(d: dict) -> ScenarioConfig:
    d = dict(d)
    pitch_d = d.pop("pitch", None)
    pitch = PitchSpec(**pitch_d) if pitch_d else PitchSpec()
    known = set(ScenarioConfig.__dataclass_fields__) - {"pitch"}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown scenario fields: {sorted(unknown)}")
    return ScenarioConfig(pitch=pitch, **d)


def save_state(state: GameState, path: str) -> None:
    """Write a JSON snapshot (kinematics, rng, bookkeeping).  Cached attacker
    decisions are not stored; they are recomputed on the next step."""
    doc = {
        "version": 1,
        "scenario": scenario_to_dict(state.scenario),
        "positions": state.positions.tolist(),
        "velocities": state.velocities.tolist(),
        "ball_pos": state.ball_pos.tolist(),
        "ball_vel": state.ball_vel.tolist(),
        "carrier": state.carrier,
        "kick_shield": state.kick_shield,
        "step_index": state.step_index,
        "score_events": state.score_events,
        "terminal": state.terminal,
        "outcome": None if state.outcome is None else {
            "kind": state.outcome.kind.value,
            "goal_difference": state.outcome.goal_difference,
        },
        "rng_state": state.rng.bit_generator.state,
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def load_state(path: str) -> GameState:
    with open(path) as f:
        doc = json.load(f)
    if doc.get("version") != 1:
        raise ConfigError(f"unsupported state file version in {path}")
    sc = scenario_from_dict(doc["scenario"])
    rng = np.random.default_rng(0)
    rng_state = doc["rng_state"]
    # json round-trips the big PCG64 integers as ints already
    rng.bit_generator.state = rng_state
    state = GameState(
        sc,
        np.array(doc["positions"], dtype=float),
        np.array(doc["velocities"], dtype=float),
        np.array(doc["ball_pos"], dtype=float),
        np.array(doc["ball_vel"], dtype=float),
        doc["carrier"],
        rng,
    )
    state.kick_shield = doc["kick_shield"]
    state.step_index = doc["step_index"]
    state.score_events = doc["score_events"]
    state.terminal = doc["terminal"]
    if doc["outcome"] is not None:
        state.outcome = EpisodeOutcome(
            kind=OutcomeKind(doc["outcome"]["kind"]),
            goal_difference=doc["outcome"]["goal_difference"],
        )
    return state


def snapshot(state: GameState) -> dict:
    """Compact JSON-able view of the state, used for trajectory dumps."""
    return {
        "step": state.step_index,
        "positions": [[round(float(x), 6) for x in row] for row in state.positions],
        "ball": [round(float(x), 6) for x in state.ball_pos],
        "carrier": state.carrier,
        "terminal": state.terminal,
    }


def state_digest(state: GameState) -> str:
    """Hex digest over every dynamic field, for bit-identity checks."""
    import hashlib
    h = hashlib.sha256()
    h.update(state.positions.tobytes())
    h.update(state.velocities.tobytes())
    h.update(state.ball_pos.tobytes())
    h.update(state.ball_vel.tobytes())
    h.update(str(state.carrier).encode())
    h.update(str(state.kick_shield).encode())
    h.update(str(state.step_index).encode())
    h.update(json.dumps(state.rng.bit_generator.state, sort_keys=True).encode())
    h.update(str(state.terminal).encode())
    h.update(str(state.outcome).encode())
    h.update(json.dumps(state.score_events, sort_keys=True).encode())
    return h.hexdigest()
