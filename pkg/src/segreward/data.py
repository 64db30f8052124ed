"""Trajectory collection, windowing, persistence, and batch sampling.

Datasets are JSON-lines files: one header line with schema metadata, then
one line per timestep. All sampling flows through caller-owned RngStreams.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import env as envmod
from .errors import ConfigurationError, DatasetError, ParseError
from .rng import RngStream

DATASET_VERSION = 1


@dataclass
class SubtaskSpec:
    """A subtask index together with its instruction tokens (the U_i, x_i pair)."""

    index: int
    tokens: list


@dataclass
class Trajectory:
    observations: np.ndarray  # (L, obs_dim)
    actions: np.ndarray  # (L, 2); the final row is zero padding
    labels: np.ndarray  # (L,) int subtask labels; -1 marks "not yet labeled"
    expert: bool
    episode_id: int

    def __post_init__(self):
        self.observations = np.asarray(self.observations, dtype=float)
        self.actions = np.asarray(self.actions, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if len(self.observations) == 0:
            raise DatasetError("empty trajectory")
        if not (len(self.observations) == len(self.actions) == len(self.labels)):
            raise DatasetError("per-timestep arrays disagree on length")

    def __len__(self):
        return len(self.observations)


@dataclass
class Window:
    """The K consecutive observations ending at timestep t of one episode."""

    observations: np.ndarray  # (K, obs_dim)
    t: int
    episode_id: int


@dataclass
class SegmentedDataset:
    trajectories: list
    m: int
    vocab: list
    instructions: list  # one token list per subtask
    iteration_tag: int = 0

    def __post_init__(self):
        if not self.trajectories:
            raise DatasetError("dataset needs at least one trajectory")
        if len(self.instructions) != self.m:
            raise DatasetError("need one instruction per subtask")
        if not any(t.expert for t in self.trajectories):
            raise DatasetError("dataset needs at least one expert trajectory")
        for traj in self.trajectories:
            if traj.labels.max() >= self.m:
                raise DatasetError(
                    f"episode {traj.episode_id} carries label {traj.labels.max()} >= m={self.m}"
                )
        vocab_set = set(self.vocab)
        for tokens in self.instructions:
            unknown = [tok for tok in tokens if tok not in vocab_set]
            if unknown:
                raise DatasetError(f"instruction tokens missing from vocab: {unknown}")
        self._index = None

    @property
    def obs_dim(self) -> int:
        return self.trajectories[0].observations.shape[1]

    @property
    def num_timesteps(self) -> int:
        return sum(len(t) for t in self.trajectories)

    def specs(self):
        return [SubtaskSpec(i, list(tokens)) for i, tokens in enumerate(self.instructions)]

    def timestep_table(self):
        """(traj_index, t) arrays over every timestep, built once."""
        if self._index is None:
            ti = np.concatenate(
                [np.full(len(t), i, dtype=int) for i, t in enumerate(self.trajectories)]
            )
            tt = np.concatenate([np.arange(len(t)) for t in self.trajectories])
            self._index = (ti, tt)
        return self._index


def collect_demos(config: envmod.EnvConfig, policy, n: int, rng: RngStream, expert: bool = True,
                  episode_id_start: int = 0) -> list:
    """Roll out `policy` for n episodes, labeling every timestep with the oracle.

    `policy(config, state, obs, rng) -> action`. The expert flag is assigned
    by the caller: collecting with a noisy policy and expert=False is how
    suboptimal data enters the pipeline.
    """
    if n < 1:
        raise ConfigurationError("need n >= 1 episodes")
    trajectories = []
    for e in range(n):
        ep_rng = rng.fork(f"episode-{episode_id_start + e}")
        state, obs = envmod.reset(config, ep_rng)
        observations = [obs]
        labels = [envmod.segment(state)]
        actions = []
        done = False
        while not done:
            action = policy(config, state, obs, ep_rng)
            state, obs, _, done = envmod.step(config, state, action)
            actions.append(np.asarray(action.displacement if isinstance(action, envmod.ActionSpec) else action, dtype=float))
            observations.append(obs)
            labels.append(envmod.segment(state))
        actions.append(np.zeros(2))
        trajectories.append(
            Trajectory(
                observations=np.array(observations),
                actions=np.array(actions),
                labels=np.array(labels),
                expert=expert,
                episode_id=episode_id_start + e,
            )
        )
    return trajectories


def make_dataset(config: envmod.EnvConfig, trajectories, iteration_tag: int = 0) -> SegmentedDataset:
    return SegmentedDataset(
        trajectories=list(trajectories),
        m=config.num_subtasks,
        vocab=list(envmod.VOCABULARY),
        instructions=envmod.instructions(config),
        iteration_tag=iteration_tag,
    )


def window_indices(length: int, K: int) -> np.ndarray:
    """(length, K) index matrix; positions before the episode start repeat index 0."""
    if K < 1:
        raise ConfigurationError("K must be >= 1")
    idx = np.arange(length)[:, None] + np.arange(-K + 1, 1)[None, :]
    return np.maximum(idx, 0)


def make_windows(traj: Trajectory, K: int) -> list:
    """One window per timestep; early timesteps pad by repeating the first frame."""
    idx = window_indices(len(traj), K)
    stacked = traj.observations[idx]
    return [Window(stacked[t], t, traj.episode_id) for t in range(len(traj))]


def window_array(traj: Trajectory, K: int) -> np.ndarray:
    """(L, K, obs_dim) array of all windows of one trajectory."""
    return traj.observations[window_indices(len(traj), K)]


@dataclass
class Batch:
    windows: np.ndarray  # (B, K, obs_dim)
    labels: np.ndarray  # (B,) int
    targets: np.ndarray  # (B,) float, the numeric segmentation signal
    expert: np.ndarray  # (B,) bool


def sample_batch(ds: SegmentedDataset, size: int, rng: RngStream, K: int = 4) -> Batch:
    """Uniform minibatch over all timesteps of all trajectories."""
    if size < 3:
        raise ConfigurationError("batch size must be >= 3 (Pearson needs variance)")
    total = ds.num_timesteps
    if total == 0:
        raise DatasetError("dataset has no timesteps")
    ti, tt = ds.timestep_table()
    picks = rng.integers(0, total, size=size)
    windows = np.empty((size, K, ds.obs_dim))
    labels = np.empty(size, dtype=int)
    expert = np.empty(size, dtype=bool)
    for row, pick in enumerate(picks):
        traj = ds.trajectories[ti[pick]]
        t = int(tt[pick])
        idx = np.arange(t - K + 1, t + 1)
        windows[row] = traj.observations[np.maximum(idx, 0)]
        labels[row] = traj.labels[t]
        expert[row] = traj.expert
    return Batch(windows=windows, labels=labels, targets=labels.astype(float), expert=expert)


def label_suboptimal(traj: Trajectory, model, thresholds, eta: float):
    """Auto-label a suboptimal rollout with the trained model.

    Every timestep gets the inferred subtask; at the first timestep whose
    similarity to its inferred subtask drops below that subtask's threshold,
    the subtask counts as failed and every remaining timestep keeps its index.
    """
    from .model import infer_subtask_batch

    thresholds = np.asarray(thresholds, dtype=float)
    windows = window_array(traj, model.config.K)
    inferred, sims = infer_subtask_batch(model, windows, eta)
    labels = inferred.copy()
    failed = np.flatnonzero(sims < thresholds[inferred])
    if failed.size:
        t_fail = int(failed[0])
        labels[t_fail:] = inferred[t_fail]
    return Trajectory(
        observations=traj.observations,
        actions=traj.actions,
        labels=labels,
        expert=traj.expert,
        episode_id=traj.episode_id,
    )


# ---------------------------------------------------------------------------
# JSON-lines persistence


def save_dataset(ds: SegmentedDataset, path) -> None:
    header = {
        "version": DATASET_VERSION,
        "m": ds.m,
        "vocab": list(ds.vocab),
        "instructions": [list(t) for t in ds.instructions],
        "iteration_tag": ds.iteration_tag,
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for traj in ds.trajectories:
            for t in range(len(traj)):
                record = {
                    "episode": traj.episode_id,
                    "t": t,
                    "obs": traj.observations[t].tolist(),
                    "action": traj.actions[t].tolist(),
                    "subtask": int(traj.labels[t]),
                    "expert": traj.expert,
                }
                fh.write(json.dumps(record) + "\n")


def load_dataset(path) -> SegmentedDataset:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetError(f"empty dataset file: {path}")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad header: {exc.msg}", 1) from exc
    if not isinstance(header, dict) or "version" not in header:
        raise ParseError("header line lacks a version field", 1)
    if header["version"] != DATASET_VERSION:
        raise ParseError(
            f"unsupported dataset version {header['version']} (expected {DATASET_VERSION})", 1
        )

    episodes: dict = {}
    order: list = []
    for ln, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
            episode = rec["episode"]
            t = rec["t"]
            obs = rec["obs"]
            action = rec["action"]
            subtask = rec["subtask"]
            expert = rec["expert"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ParseError(f"malformed record: {exc}", ln) from exc
        if episode not in episodes:
            episodes[episode] = {"obs": [], "action": [], "subtask": [], "expert": expert}
            order.append(episode)
        ep = episodes[episode]
        if t != len(ep["obs"]):
            raise ParseError(f"episode {episode} has non-contiguous timestep {t}", ln)
        ep["obs"].append(obs)
        ep["action"].append(action)
        ep["subtask"].append(subtask)

    if not episodes:
        raise DatasetError(f"dataset file has a header but no records: {path}")
    trajectories = [
        Trajectory(
            observations=np.array(episodes[e]["obs"], dtype=float),
            actions=np.array(episodes[e]["action"], dtype=float),
            labels=np.array(episodes[e]["subtask"], dtype=int),
            expert=bool(episodes[e]["expert"]),
            episode_id=int(e),
        )
        for e in order
    ]
    return SegmentedDataset(
        trajectories=trajectories,
        m=int(header["m"]),
        vocab=list(header["vocab"]),
        instructions=[list(t) for t in header["instructions"]],
        iteration_tag=int(header.get("iteration_tag", 0)),
    )


def merge_datasets(base: SegmentedDataset, extra_trajectories, iteration_tag: int) -> SegmentedDataset:
    """Base dataset plus freshly labeled replay, with episode ids renumbered."""
    merged = []
    next_id = 0
    for traj in list(base.trajectories) + list(extra_trajectories):
        merged.append(
            Trajectory(
                observations=traj.observations,
                actions=traj.actions,
                labels=traj.labels,
                expert=traj.expert,
                episode_id=next_id,
            )
        )
        next_id += 1
    return SegmentedDataset(
        trajectories=merged,
        m=base.m,
        vocab=list(base.vocab),
        instructions=[list(t) for t in base.instructions],
        iteration_tag=iteration_tag,
    )
