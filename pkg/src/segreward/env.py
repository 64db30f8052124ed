"""Toy multi-subtask manipulation chains ("ChainManip-m").

An agent moves in the unit square and has to carry m colored objects into
named target zones, one after the other in a fixed order. Subtask i counts
as complete only once all earlier subtasks are complete, which makes the
segmentation oracle `segment` single-valued and monotone along any rollout.
Grasping and releasing are automatic, so the action space is just a bounded
2-D displacement.

Instructions are templated token lists over a small shared vocabulary.
Colors and zone names are global: a color always refers to the same start
position and observation slot, a zone name always refers to the same spot
in the arena. Task variants recombine (color, zone) pairs, which is what
makes zero-shot transfer to unseen recombinations meaningful.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ParseError, TerminalStateError
from .rng import RngStream

# Global token bindings. Slot order in observations follows COLOR_ORDER, and
# zone names map to fixed arena coordinates, independent of any task.
COLOR_ORDER = ("red", "green", "blue", "yellow", "purple")

COLOR_HOMES = {
    "red": (0.2, 0.2),
    "green": (0.7, 0.75),
    "blue": (0.75, 0.25),
    "yellow": (0.25, 0.7),
    "purple": (0.45, 0.3),
}

ZONE_POSITIONS = {
    "north": (0.5, 0.875),
    "south": (0.5, 0.125),
    "east": (0.875, 0.5),
    "west": (0.125, 0.5),
    "center": (0.5, 0.5),
}

VOCABULARY = ("move", "block", "to", "zone") + COLOR_ORDER + tuple(ZONE_POSITIONS)

# Task presets as ordered (color, zone) pairs. chain3 and chain3_swap share
# tokens but bind them differently; the mix variants use only pairs that
# appear in neither, so they test recombination of seen tokens.
TASKS = {
    "chain2": (("red", "north"), ("green", "east")),
    "chain3": (("red", "north"), ("green", "east"), ("blue", "west")),
    "chain5": (
        ("red", "north"),
        ("green", "east"),
        ("blue", "west"),
        ("yellow", "south"),
        ("purple", "center"),
    ),
    "chain3_swap": (("green", "west"), ("red", "east"), ("blue", "north")),
    "chain3_mix1": (("blue", "east"), ("green", "north"), ("red", "west")),
    "chain3_mix2": (("red", "west"), ("blue", "east"), ("green", "north")),
}


@dataclass
class EnvConfig:
    num_subtasks: int
    colors: tuple
    zone_names: tuple
    object_start_positions: np.ndarray  # (m, 2) in subtask order
    target_zones: np.ndarray  # (m, 2) in subtask order
    grasp_radius: float = 0.10
    zone_radius: float = 0.12
    a_max: float = 0.08
    max_steps: int = 200
    seed: int = 0
    name: str = "custom"

    def __post_init__(self):
        self.colors = tuple(self.colors)
        self.zone_names = tuple(self.zone_names)
        self.object_start_positions = np.asarray(self.object_start_positions, dtype=float)
        self.target_zones = np.asarray(self.target_zones, dtype=float)
        m = self.num_subtasks
        if m < 1:
            raise ConfigurationError("num_subtasks must be >= 1")
        if len(self.colors) != m or len(self.zone_names) != m:
            raise ConfigurationError("colors and zone_names must have one entry per subtask")
        if len(set(self.colors)) != m:
            raise ConfigurationError("colors must be distinct")
        for c in self.colors:
            if c not in COLOR_ORDER:
                raise ConfigurationError(f"unknown color {c!r}")
        for z in self.zone_names:
            if z not in ZONE_POSITIONS:
                raise ConfigurationError(f"unknown zone name {z!r}")
        if self.object_start_positions.shape != (m, 2) or self.target_zones.shape != (m, 2):
            raise ConfigurationError("positions must be (m, 2) arrays")
        for arr in (self.object_start_positions, self.target_zones):
            if np.any(arr < 0.0) or np.any(arr > 1.0):
                raise ConfigurationError("all positions must lie inside the unit square")
        if self.zone_radius <= 0.0:
            raise ConfigurationError("zone_radius must be positive")
        # observation slot s shows the object whose color is s-th in global order
        self.slot_order = tuple(
            sorted(range(m), key=lambda p: COLOR_ORDER.index(self.colors[p]))
        )

    @property
    def obs_dim(self) -> int:
        return 3 + 3 * self.num_subtasks


def make_task(name: str, **overrides) -> EnvConfig:
    """Build one of the preset ChainManip task configs by name."""
    if name not in TASKS:
        raise ConfigurationError(f"unknown task {name!r}; choose from {sorted(TASKS)}")
    pairs = TASKS[name]
    colors = tuple(c for c, _ in pairs)
    zones = tuple(z for _, z in pairs)
    cfg = dict(
        num_subtasks=len(pairs),
        colors=colors,
        zone_names=zones,
        object_start_positions=np.array([COLOR_HOMES[c] for c in colors]),
        target_zones=np.array([ZONE_POSITIONS[z] for z in zones]),
        name=name,
    )
    cfg.update(overrides)
    return EnvConfig(**cfg)


@dataclass
class EnvState:
    agent_xy: np.ndarray
    carried_object: int | None  # subtask index of the carried object
    object_xy: np.ndarray  # (m, 2) in subtask order
    steps_elapsed: int
    completed: np.ndarray  # (m,) bool, monotone over a rollout


@dataclass
class ActionSpec:
    displacement: np.ndarray

    def __post_init__(self):
        self.displacement = np.asarray(self.displacement, dtype=float).reshape(2)


def observe(config: EnvConfig, state: EnvState) -> np.ndarray:
    """Flat feature vector: agent_xy, carried flag, per-slot object_xy, per-slot done flag.

    Slots are ordered by global color, not by subtask order, so that a color
    token always refers to the same observation coordinates across tasks.
    """
    m = config.num_subtasks
    obs = np.empty(3 + 3 * m, dtype=float)
    obs[0:2] = state.agent_xy
    obs[2] = 0.0 if state.carried_object is None else 1.0
    for s, p in enumerate(config.slot_order):
        obs[3 + 2 * s : 5 + 2 * s] = state.object_xy[p]
        obs[3 + 2 * m + s] = 1.0 if state.completed[p] else 0.0
    return obs


def is_terminal(config: EnvConfig, state: EnvState) -> bool:
    return bool(state.completed.all()) or state.steps_elapsed >= config.max_steps


def reset(config: EnvConfig, rng: RngStream):
    """Fresh episode: agent at a random spot, objects at their start positions."""
    state = EnvState(
        agent_xy=rng.uniform(0.05, 0.95, size=2),
        carried_object=None,
        object_xy=config.object_start_positions.copy(),
        steps_elapsed=0,
        completed=np.zeros(config.num_subtasks, dtype=bool),
    )
    return state, observe(config, state)


def segment(state: EnvState) -> int:
    """The segmentation oracle: index of the smallest incomplete subtask.

    Terminal-success states keep the final index, so the label sequence of a
    successful episode ends at m-1 and never decreases.
    """
    incomplete = np.flatnonzero(~state.completed)
    if incomplete.size == 0:
        return state.completed.size - 1
    return int(incomplete[0])


def segment_observations(config: EnvConfig, observations: np.ndarray) -> np.ndarray:
    """Oracle labels recovered from the completion flags inside observations.

    Works on any (N, obs_dim) array produced by `observe` for this config,
    which lets rollouts be relabeled long after their states are gone.
    """
    observations = np.atleast_2d(np.asarray(observations, dtype=float))
    m = config.num_subtasks
    if observations.shape[1] != config.obs_dim:
        raise ConfigurationError(
            f"observations have dim {observations.shape[1]}, config expects {config.obs_dim}"
        )
    flags_by_slot = observations[:, 3 + 2 * m :] > 0.5
    completed = np.empty_like(flags_by_slot)
    for s, p in enumerate(config.slot_order):
        completed[:, p] = flags_by_slot[:, s]
    labels = np.where(
        completed.all(axis=1), m - 1, np.argmin(completed, axis=1)
    )
    return labels.astype(int)


def step(config: EnvConfig, state: EnvState, action):
    """Advance one timestep. Returns (state, observation, sparse_reward, done).

    Within a step: move (and drag any carried object), auto-release a carried
    object inside its own target zone, run the ordered completion sweep, then
    auto-grasp the current subtask's object if it is within grasp range.
    """
    if is_terminal(config, state):
        raise TerminalStateError("cannot step a terminal state; call reset")
    if not isinstance(action, ActionSpec):
        action = ActionSpec(np.asarray(action, dtype=float))

    m = config.num_subtasks
    disp = np.clip(action.displacement, -config.a_max, config.a_max)
    agent = np.clip(state.agent_xy + disp, 0.0, 1.0)
    objects = state.object_xy.copy()
    completed = state.completed.copy()
    carried = state.carried_object

    if carried is not None:
        objects[carried] = agent
        # release once the carried object is inside its own target zone
        if np.linalg.norm(agent - config.target_zones[carried]) <= config.zone_radius:
            carried = None

    was_done = completed[m - 1]
    for i in range(m):
        if completed[i] or carried == i:
            continue
        if not completed[:i].all():
            break  # ordered completion: nothing later can complete either
        if np.linalg.norm(objects[i] - config.target_zones[i]) <= config.zone_radius:
            completed[i] = True

    if carried is None and not completed.all():
        current = int(np.flatnonzero(~completed)[0])
        if np.linalg.norm(objects[current] - agent) <= config.grasp_radius:
            carried = current

    new_state = EnvState(
        agent_xy=agent,
        carried_object=carried,
        object_xy=objects,
        steps_elapsed=state.steps_elapsed + 1,
        completed=completed,
    )
    sparse_reward = 1.0 if (completed[m - 1] and not was_done) else 0.0
    done = is_terminal(config, new_state)
    return new_state, observe(config, new_state), sparse_reward, done


def expert_action(config: EnvConfig, state: EnvState, rng: RngStream, noise: float = 0.0) -> ActionSpec:
    """Proportional controller: walk to the current object, then to its zone."""
    if state.completed.all():
        return ActionSpec(np.zeros(2))
    if state.carried_object is not None:
        target = config.target_zones[state.carried_object]
    else:
        current = int(np.flatnonzero(~state.completed)[0])
        target = state.object_xy[current]
    delta = target - state.agent_xy
    if noise > 0.0:
        delta = delta + rng.normal(0.0, noise, size=2)
    return ActionSpec(np.clip(delta, -config.a_max, config.a_max))


def make_expert_policy(noise: float = 0.0):
    """Wrap expert_action as a policy callable for demo collection."""

    def policy(config, state, obs, rng):
        return expert_action(config, state, rng, noise=noise)

    return policy


def instruction(config: EnvConfig, i: int) -> list:
    """Templated instruction tokens for subtask i."""
    if not 0 <= i < config.num_subtasks:
        raise ConfigurationError(f"subtask index {i} out of range for m={config.num_subtasks}")
    return ["move", "block", config.colors[i], "to", "zone", config.zone_names[i]]


def instructions(config: EnvConfig) -> list:
    return [instruction(config, i) for i in range(config.num_subtasks)]


# ---------------------------------------------------------------------------
# plain-text key/value serialization


def _fmt_points(arr: np.ndarray) -> str:
    # repr(float(.)) rather than repr(.): numpy scalars print as np.float64(..)
    return " ; ".join(f"{float(x)!r} {float(y)!r}" for x, y in arr)


def _parse_points(text: str) -> np.ndarray:
    pts = []
    for chunk in text.split(";"):
        parts = chunk.split()
        if len(parts) != 2:
            raise ValueError(f"expected 'x y' pair, got {chunk!r}")
        pts.append([float(parts[0]), float(parts[1])])
    return np.array(pts)


def parse_kv(text: str) -> dict:
    """Parse 'key = value' lines; '#' starts a comment, blanks are skipped."""
    out = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {raw!r}", ln)
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def save_env_config(config: EnvConfig, path) -> None:
    lines = [
        f"name = {config.name}",
        f"num_subtasks = {config.num_subtasks}",
        f"colors = {', '.join(config.colors)}",
        f"zone_names = {', '.join(config.zone_names)}",
        f"object_start_positions = {_fmt_points(config.object_start_positions)}",
        f"target_zones = {_fmt_points(config.target_zones)}",
        f"grasp_radius = {float(config.grasp_radius)!r}",
        f"zone_radius = {float(config.zone_radius)!r}",
        f"a_max = {float(config.a_max)!r}",
        f"max_steps = {config.max_steps}",
        f"seed = {config.seed}",
    ]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_env_config(path) -> EnvConfig:
    with open(path) as fh:
        kv = parse_kv(fh.read())
    try:
        return EnvConfig(
            num_subtasks=int(kv["num_subtasks"]),
            colors=tuple(c.strip() for c in kv["colors"].split(",")),
            zone_names=tuple(z.strip() for z in kv["zone_names"].split(",")),
            object_start_positions=_parse_points(kv["object_start_positions"]),
            target_zones=_parse_points(kv["target_zones"]),
            grasp_radius=float(kv["grasp_radius"]),
            zone_radius=float(kv["zone_radius"]),
            a_max=float(kv["a_max"]),
            max_steps=int(kv["max_steps"]),
            seed=int(kv["seed"]),
            name=kv.get("name", "custom"),
        )
    except KeyError as exc:
        raise ParseError(f"missing config key {exc.args[0]!r}") from exc
