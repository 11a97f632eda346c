"""Two deterministic task families used as cycling-task benchmarks.

``pointmass`` is a continuous 2-D goal-reaching task with binary success;
``gridworld`` is a 5x5 discrete navigation task scored by normalized return.
Each family has four variants whose goals sit on opposite sides of the arena,
so consecutive opposite-goal tasks interfere with each other.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from nbsp.errors import ConfigError, NumericError
from nbsp.metrics import ReturnNorm, normalized_return

# pointmass physics
DT = 0.1
V_MAX = 1.0
SUCCESS_RADIUS = 0.1
SUCCESS_BONUS = 5.0
DISTANCE_COST = 0.1

# gridworld
GRID_SIZE = 5
STEP_COST = 0.01
GOAL_REWARD = 1.0
GRID_ACTIONS = ("up", "down", "left", "right", "stay")
_MOVES = {0: (-1, 0), 1: (1, 0), 2: (0, -1), 3: (0, 1), 4: (0, 0)}

POINTMASS_GOALS = {
    "goal-east": (0.8, 0.0),
    "goal-west": (-0.8, 0.0),
    "goal-north": (0.0, 0.8),
    "goal-south": (0.0, -0.8),
}
GRID_GOALS = {
    "goal-north": (0, 2),
    "goal-south": (4, 2),
    "goal-west": (2, 0),
    "goal-east": (2, 4),
}
GRID_START = (2, 2)

FAMILIES = {
    "pointmass": {"variants": POINTMASS_GOALS, "episode_limit": 200, "gpm_kind": "binary_success"},
    "gridworld": {"variants": GRID_GOALS, "episode_limit": 50, "gpm_kind": "normalized_return"},
}

RANDOM_BASELINE_EPISODES = 1000


@dataclass(frozen=True)
class TaskSpec:
    family: str
    variant: str
    episode_limit: int
    gpm_kind: str
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown task family {self.family!r}; expected one of {sorted(FAMILIES)}")
        variants = FAMILIES[self.family]["variants"]
        if self.variant not in variants:
            raise ConfigError(f"unknown {self.family} variant {self.variant!r}; expected one of {sorted(variants)}")
        if self.episode_limit < 1:
            raise ConfigError("episode_limit must be >= 1")
        if self.gpm_kind not in ("binary_success", "normalized_return"):
            raise ConfigError(f"unknown gpm_kind {self.gpm_kind!r}")

    @property
    def name(self) -> str:
        return f"{self.family}/{self.variant}"

    @property
    def discrete(self) -> bool:
        return self.family == "gridworld"

    @property
    def obs_dim(self) -> int:
        return 6 if self.family == "pointmass" else 4

    @property
    def action_dim(self) -> int:
        """Continuous action width, or the number of discrete actions."""
        return 2 if self.family == "pointmass" else len(GRID_ACTIONS)


def make_task(name: str, seed: int = 0) -> TaskSpec:
    """Build a task from ``"family/variant"`` using the family defaults."""
    try:
        family, variant = name.split("/")
    except ValueError:
        raise ConfigError(f"task name {name!r} must look like 'pointmass/goal-east'") from None
    if family not in FAMILIES:
        raise ConfigError(f"unknown task family {family!r}; expected one of {sorted(FAMILIES)}")
    info = FAMILIES[family]
    return TaskSpec(family, variant, info["episode_limit"], info["gpm_kind"], seed)


@dataclass(frozen=True)
class PointmassState:
    position: np.ndarray
    velocity: np.ndarray
    goal: np.ndarray
    t: int = 0
    success: bool = False


@dataclass(frozen=True)
class GridworldState:
    agent: tuple[int, int]
    goal: tuple[int, int]
    t: int = 0
    success: bool = False


@dataclass
class EpisodeRecord:
    transitions: list = field(default_factory=list)
    success: bool = False
    ret: float = 0.0


def reset(task: TaskSpec, episode_seed: int):
    if task.family == "pointmass":
        rng = np.random.default_rng([task.seed, episode_seed])
        return PointmassState(
            position=rng.uniform(-0.5, 0.5, size=2),
            velocity=np.zeros(2),
            goal=np.array(POINTMASS_GOALS[task.variant], dtype=np.float64),
        )
    return GridworldState(agent=GRID_START, goal=GRID_GOALS[task.variant])


def observe(task: TaskSpec, state) -> np.ndarray:
    if task.family == "pointmass":
        return np.concatenate([state.position, state.velocity, state.goal])
    half = (GRID_SIZE - 1) / 2.0
    return (np.array([*state.agent, *state.goal], dtype=np.float64) - half) / half


def step(task: TaskSpec, state, action):
    """Advance one step; returns ``(next_state, reward, done)``."""
    if task.family == "pointmass":
        a = np.asarray(action, dtype=np.float64).reshape(2)
        if not np.isfinite(a).all():
            raise NumericError("non-finite pointmass action")
        a = np.clip(a, -1.0, 1.0)
        v = np.clip(state.velocity + a * DT, -V_MAX, V_MAX)
        p = np.clip(state.position + v * DT, -1.0, 1.0)
        dist = float(np.linalg.norm(p - state.goal))
        success = dist < SUCCESS_RADIUS
        reward = -dist * DISTANCE_COST + (SUCCESS_BONUS if success else 0.0)
        t = state.t + 1
        nxt = PointmassState(p, v, state.goal, t, success)
        return nxt, reward, success or t >= task.episode_limit

    a = int(action)
    if a != action or a not in _MOVES:
        raise ValueError(f"gridworld action must be an integer in 0..{len(_MOVES) - 1}, got {action!r}")
    dr, dc = _MOVES[a]
    r, c = state.agent
    nr, nc = r + dr, c + dc
    if not (0 <= nr < GRID_SIZE and 0 <= nc < GRID_SIZE):
        nr, nc = r, c
    success = (nr, nc) == state.goal
    reward = -STEP_COST + (GOAL_REWARD if success else 0.0)
    t = state.t + 1
    nxt = GridworldState((nr, nc), state.goal, t, success)
    return nxt, reward, success or t >= task.episode_limit


def rollout(task: TaskSpec, policy, episode_seed: int, keep_transitions: bool = True) -> EpisodeRecord:
    """Run one episode with ``policy(obs, state) -> action``."""
    state = reset(task, episode_seed)
    obs = observe(task, state)
    ep = EpisodeRecord()
    done = False
    while not done:
        action = policy(obs, state)
        state, reward, done = step(task, state, action)
        nxt = observe(task, state)
        if keep_transitions:
            ep.transitions.append((obs, action, nxt, reward, state.success))
        ep.ret += reward
        obs = nxt
    ep.success = bool(state.success)
    return ep


def proportional_controller(obs, state) -> np.ndarray:
    """Scripted pointmass expert: a = clip(2 (goal - p) - v)."""
    return np.clip(2.0 * (state.goal - state.position) - state.velocity, -1.0, 1.0)


def shortest_path(task: TaskSpec) -> list[int]:
    """Breadth-first action sequence from the start cell to the goal."""
    start, goal = GRID_START, GRID_GOALS[task.variant]
    prev = {start: None}
    queue = deque([start])
    while queue:
        cell = queue.popleft()
        if cell == goal:
            break
        for a in range(4):
            dr, dc = _MOVES[a]
            nxt = (cell[0] + dr, cell[1] + dc)
            if 0 <= nxt[0] < GRID_SIZE and 0 <= nxt[1] < GRID_SIZE and nxt not in prev:
                prev[nxt] = (cell, a)
                queue.append(nxt)
    actions = []
    cell = goal
    while prev[cell] is not None:
        cell, a = prev[cell]
        actions.append(a)
    return actions[::-1]


def shortest_path_policy(task: TaskSpec):
    plan = shortest_path(task)

    def policy(obs, state):
        # replans from the current cell so it also works mid-episode
        r, c = state.agent
        gr, gc = state.goal
        if r != gr:
            return 0 if gr < r else 1
        if c != gc:
            return 2 if gc < c else 3
        return 4

    policy.plan = plan
    return policy


@lru_cache(maxsize=None)
def _return_anchors(family: str, variant: str, episode_limit: int) -> tuple[float, float]:
    task = TaskSpec(family, variant, episode_limit, "normalized_return")
    rng = np.random.default_rng(20240)
    returns = []
    for i in range(RANDOM_BASELINE_EPISODES):
        ep = rollout(task, lambda obs, state: int(rng.integers(len(GRID_ACTIONS))), i, keep_transitions=False)
        returns.append(ep.ret)
    r_random = float(np.mean(returns))
    n = len(shortest_path(task))
    r_reference = -STEP_COST * n + GOAL_REWARD
    return r_random, r_reference


def return_norm(task: TaskSpec) -> ReturnNorm:
    """Random-policy and shortest-path anchors for a gridworld variant."""
    if task.family != "gridworld":
        raise ConfigError(f"{task.name} is scored by binary success and has no return anchors")
    r_random, r_reference = _return_anchors(task.family, task.variant, task.episode_limit)
    return ReturnNorm(r_random, r_reference)


def gpm(episode: EpisodeRecord, task: TaskSpec, norm: ReturnNorm | None = None) -> float:
    """Goal proximity of a finished episode."""
    if task.gpm_kind == "binary_success":
        return 1.0 if episode.success else 0.0
    if norm is None:
        raise ConfigError(f"{task.name} needs return normalization anchors")
    return normalized_return(episode.ret, norm)


def describe_physics() -> dict:
    """Constants echoed into run config snapshots."""
    return {
        "dt": DT, "v_max": V_MAX, "success_radius": SUCCESS_RADIUS, "success_bonus": SUCCESS_BONUS,
        "distance_cost": DISTANCE_COST, "grid_size": GRID_SIZE, "step_cost": STEP_COST,
        "goal_reward": GOAL_REWARD,
    }
