"""Downstream RL: a small advantage actor-critic over discrete displacements.

The agent never sees which reward it is optimizing: a RewardSource maps
transitions to scalars (environment sparse signal, the oracle segmentation
index, or the learned model's normalized subtask-conditioned reward) while
dynamics stay identical. Returns always bootstrap through the value of the
observation the agent continues from, including at episode ends, where that
is the freshly reset state: a terminal cutoff would otherwise punish
finishing the final subtask, since hovering one step short of success would
keep collecting a high reward forever while completion would forfeit the
value of every future episode.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import data as datamod
from . import env as envmod
from . import model as modelmod
from .autodiff import Tensor, log_softmax, no_grad, parameter
from .errors import ConfigurationError, EvaluationError
from .rng import RngStream
from .train import AdamW

# 8 compass displacements at full amplitude plus "stay"; scaled by a_max at use
ACTION_DIRECTIONS = np.array(
    [[1, 0], [-1, 0], [0, 1], [0, -1], [1, 1], [1, -1], [-1, 1], [-1, -1], [0, 0]],
    dtype=float,
)
NUM_ACTIONS = len(ACTION_DIRECTIONS)

CURVE_COLUMNS = ("step", "success_rate", "mean_completed_subtasks", "seed")


@dataclass
class RLConfig:
    gamma: float = 0.95
    num_envs: int = 8
    rollout_length: int = 16
    total_env_steps: int = 1_200_000
    learning_rate: float = 1e-3
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    max_grad_norm: float = 1.0
    hidden: int = 64
    eval_every: int = 10_000
    eval_episodes: int = 10
    seed: int = 0
    # Learned rewards carry an arbitrary affine scale (the comparison metric
    # is invariant to it), so the consumer must not depend on it either.
    normalize_advantages: bool = True
    # "progress" pays the per-step change of a potential built from the model
    # (inferred subtask index + normalized reward): standing still earns zero,
    # moving the way the demonstrations move earns the model's slope, and
    # advancing a subtask climbs one stair. "level" pays the normalized reward
    # directly. Sources other than the learned model are always level-valued.
    reward_mode: str = "progress"

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ConfigurationError("gamma must lie in (0, 1)")
        for name in ("num_envs", "rollout_length", "eval_episodes", "hidden"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.total_env_steps < 0:
            raise ConfigurationError("total_env_steps must be >= 0")
        if self.reward_mode not in ("progress", "level"):
            raise ConfigurationError("reward_mode must be 'progress' or 'level'")


@dataclass
class RewardSource:
    kind: str  # "sparse" | "oracle_psi" | "learned"
    params: modelmod.RewardModelParams | None = None
    normalize_factor: float = 1.0
    center: float = 0.0
    eta: float = 0.01

    @staticmethod
    def sparse() -> "RewardSource":
        return RewardSource(kind="sparse")

    @staticmethod
    def oracle_psi() -> "RewardSource":
        return RewardSource(kind="oracle_psi")

    @staticmethod
    def learned(params, normalize_factor: float = None, eta: float = 0.01,
                center: float = None) -> "RewardSource":
        """Model rewards remapped onto the expert range, (r - center) / factor.

        Defaults come from the checkpoint; overrides exist so refinement can
        renormalize against the current expert subset.
        """
        factor = params.normalize_factor if normalize_factor is None else normalize_factor
        if factor <= 0.0:
            raise ConfigurationError("normalize_factor must be positive")
        center = params.reward_center if center is None else center
        return RewardSource(kind="learned", params=params, normalize_factor=factor,
                            center=center, eta=eta)


@dataclass
class PolicyParams:
    arrays: dict
    obs_dim: int
    n_actions: int = NUM_ACTIONS


def init_policy(obs_dim: int, hidden: int, rng: RngStream) -> PolicyParams:
    def u(shape, fan_in):
        return parameter(rng.uniform(-1.0 / np.sqrt(fan_in), 1.0 / np.sqrt(fan_in), size=shape))

    arrays = {
        "w1": u((obs_dim, hidden), obs_dim),
        "b1": parameter(np.zeros(hidden)),
        "w2": u((hidden, hidden), hidden),
        "b2": parameter(np.zeros(hidden)),
        "logits.w": u((hidden, NUM_ACTIONS), hidden),
        "logits.b": parameter(np.zeros(NUM_ACTIONS)),
        "value.w": u((hidden, 1), hidden),
        "value.b": parameter(np.zeros(1)),
    }
    return PolicyParams(arrays=arrays, obs_dim=obs_dim)


def policy_forward(policy: PolicyParams, obs_batch: np.ndarray):
    """(logits, values) tensors for a (B, obs_dim) batch."""
    P = policy.arrays
    x = Tensor(np.asarray(obs_batch, dtype=float))
    h = (x @ P["w1"] + P["b1"]).tanh()
    h = (h @ P["w2"] + P["b2"]).tanh()
    logits = h @ P["logits.w"] + P["logits.b"]
    values = (h @ P["value.w"] + P["value.b"]).reshape(x.shape[0])
    return logits, values


def _softmax_np(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _learned_eval(source: RewardSource, windows: np.ndarray):
    """(inferred subtask, normalized R(s; U_i-hat)) per window, one forward pass."""
    params = source.params
    with no_grad():
        out = modelmod.encode_windows(params, windows)
        v = out[:, -1, :]
        e = modelmod.subtask_embeddings(params, params.specs)
        sims = modelmod.cosine_sims(params, v, e).data
        m = params.config.m
        margins = source.eta * (m - 1 - np.arange(m))
        chosen = np.argmax(sims + margins, axis=1)
        if params.config.head_all_outputs:
            B = out.shape[0]
            feats = out.reshape(B, params.config.K * params.config.embed_dim)
        else:
            feats = v
        rewards = modelmod.reward_heads(params, feats, e[chosen]).data
    return chosen, (rewards - source.center) / source.normalize_factor


def _learned_rewards(source: RewardSource, windows: np.ndarray) -> np.ndarray:
    """Normalized R(s; U_i-hat) with the subtask inferred per window."""
    return _learned_eval(source, windows)[1]


def _learned_potential(source: RewardSource, windows: np.ndarray) -> np.ndarray:
    """Staircase progress potential: inferred subtask index plus normalized reward.

    The per-subtask reward falls back to its low end whenever the inferred
    subtask advances, so diffing it alone would fine the agent for finishing a
    subtask. Adding the inferred index restores a monotone ladder: within a
    subtask the diff is the model's slope, and at a boundary the unit step
    cancels the drop.
    """
    chosen, rewards = _learned_eval(source, windows)
    return chosen.astype(float) + rewards


@dataclass
class RunResult:
    policy: PolicyParams
    curve: list
    replay: list | None
    seed: int
    reward_kind: str


def _transition_rewards(source, config_env, new_states, sparse, stacks):
    if source.kind == "sparse":
        return np.asarray(sparse, dtype=float)
    if source.kind == "oracle_psi":
        denom = float(max(1, config_env.num_subtasks - 1))
        return np.array([envmod.segment(s) / denom for s in new_states])
    windows = np.stack([np.stack(s) for s in stacks])
    return _learned_rewards(source, windows)


def compute_returns(rewards: np.ndarray, dones: np.ndarray, v_next: np.ndarray,
                    gamma: float) -> np.ndarray:
    """Bootstrapped n-step targets over a (T, N) rollout buffer.

    Episode boundaries reset the environment but never truncate the value
    recursion: at a done step `v_next` must hold the critic's estimate of the
    freshly reset observation, so the target prices in the episodes still to
    come. Cutting the recursion to zero instead would teach the policy that
    finishing an episode forfeits all future reward.
    """
    rewards = np.asarray(rewards, dtype=float)
    if rewards.ndim != 2:
        raise ValueError("expected a (T, N) reward buffer")
    T = rewards.shape[0]
    returns = np.empty_like(rewards)
    for t in reversed(range(T)):
        if t == T - 1:
            nxt = v_next[t]
        else:
            nxt = np.where(dones[t], v_next[t], returns[t + 1])
        returns[t] = rewards[t] + gamma * nxt
    return returns


def train_agent(env_config: envmod.EnvConfig, reward_source: RewardSource, config: RLConfig,
                curve_path=None, retain_rollouts: bool = False) -> RunResult:
    """On-policy actor-critic training; greedy evaluation on the sparse metric.

    The learned reward is queried once per environment step on the window of
    the K most recent observations, ending at the new observation. In
    "progress" mode the agent is paid the change of the staircase potential
    since the previous step, which starts every episode at zero instead of
    wherever the model's affine scale happens to sit.
    """
    rng = RngStream(config.seed)
    policy = init_policy(env_config.obs_dim, config.hidden, rng.fork("policy-init"))
    opt = AdamW(policy.arrays, weight_decay=0.0)
    act_rng = rng.fork("actions")
    env_rngs = [rng.fork(f"env-{j}") for j in range(config.num_envs)]

    K = reward_source.params.config.K if reward_source.kind == "learned" else 1
    states = []
    obs = []
    stacks = []
    for j in range(config.num_envs):
        s, o = envmod.reset(env_config, env_rngs[j])
        states.append(s)
        obs.append(o)
        stacks.append([o.copy() for _ in range(K)])

    episode_obs = [[o.copy()] for o in obs]
    episode_act = [[] for _ in range(config.num_envs)]
    replay = [] if retain_rollouts else None
    episode_counter = 0

    progress = config.reward_mode == "progress" and reward_source.kind == "learned"
    prev_val = None
    if progress:
        prev_val = _learned_potential(reward_source, np.stack([np.stack(s) for s in stacks]))

    curve = []
    eval_rng = rng.fork("eval")
    last_eval_step = -1

    def run_eval(at_step):
        nonlocal last_eval_step
        stats = evaluate(policy, env_config, config.eval_episodes, eval_rng)
        curve.append((at_step, stats["success_rate"], stats["mean_completed_subtasks"],
                      config.seed))
        last_eval_step = at_step

    global_step = 0
    next_eval = config.eval_every
    N = config.num_envs
    T = config.rollout_length
    D = env_config.obs_dim

    while global_step < config.total_env_steps:
        buf_obs = np.empty((T, N, D))
        buf_next = np.empty((T, N, D))
        buf_act = np.empty((T, N), dtype=int)
        buf_rew = np.empty((T, N))
        buf_done = np.zeros((T, N), dtype=bool)

        for t in range(T):
            obs_arr = np.stack(obs)
            with no_grad():
                logits, _ = policy_forward(policy, obs_arr)
            probs = _softmax_np(logits.data)
            u = act_rng.random(N)
            actions = (u[:, None] > np.cumsum(probs, axis=1)).sum(axis=1)
            actions = np.minimum(actions, NUM_ACTIONS - 1)

            new_states = []
            sparse = np.zeros(N)
            dones = np.zeros(N, dtype=bool)
            for j in range(N):
                disp = ACTION_DIRECTIONS[actions[j]] * env_config.a_max
                s2, o2, r_sparse, done = envmod.step(env_config, states[j], disp)
                new_states.append(s2)
                sparse[j] = r_sparse
                dones[j] = done
                stacks[j].pop(0)
                stacks[j].append(o2.copy())
                buf_next[t, j] = o2
                if retain_rollouts:
                    episode_obs[j].append(o2.copy())
                    episode_act[j].append(disp.copy())
                obs[j] = o2

            buf_obs[t] = obs_arr
            buf_act[t] = actions
            if progress:
                pot = _learned_potential(reward_source,
                                         np.stack([np.stack(s) for s in stacks]))
                buf_rew[t] = pot - prev_val
                prev_val = pot
            else:
                buf_rew[t] = _transition_rewards(reward_source, env_config, new_states,
                                                 sparse, stacks)
            buf_done[t] = dones

            for j in range(N):
                states[j] = new_states[j]
                if dones[j]:
                    if retain_rollouts:
                        L = len(episode_obs[j])
                        acts = np.array(episode_act[j] + [np.zeros(2)])
                        replay.append(datamod.Trajectory(
                            observations=np.array(episode_obs[j]),
                            actions=acts,
                            labels=np.full(L, -1),
                            expert=False,
                            episode_id=episode_counter,
                        ))
                        episode_counter += 1
                    s, o = envmod.reset(env_config, env_rngs[j])
                    states[j] = s
                    obs[j] = o
                    # the continuing process resumes here, so this is the
                    # observation the done step's return must bootstrap from
                    buf_next[t, j] = o
                    stacks[j] = [o.copy() for _ in range(K)]
                    episode_obs[j] = [o.copy()]
                    episode_act[j] = []
                    if progress:
                        prev_val[j] = _learned_potential(
                            reward_source, np.stack(stacks[j])[None])[0]

        global_step += T * N

        with no_grad():
            _, v_next_t = policy_forward(policy, buf_next.reshape(T * N, D))
        v_next = v_next_t.data.reshape(T, N)
        returns = compute_returns(buf_rew, buf_done, v_next, config.gamma)

        for tensor in policy.arrays.values():
            tensor.grad = None
        logits, values = policy_forward(policy, buf_obs.reshape(T * N, D))
        logp = log_softmax(logits, axis=1)
        chosen = logp[np.arange(T * N), buf_act.reshape(-1)]
        adv = returns.reshape(-1) - values.data
        if config.normalize_advantages:
            adv = (adv - adv.mean()) / (adv.std() + 1e-8)
        policy_loss = -(chosen * Tensor(adv)).mean()
        entropy = -(logp.exp() * logp).sum(axis=1).mean()
        value_err = values - Tensor(returns.reshape(-1))
        value_loss = (value_err * value_err).mean()
        loss = policy_loss - entropy * config.entropy_coef + value_loss * config.value_coef
        if not np.isfinite(loss.data):
            raise EvaluationError(f"non-finite actor-critic loss at step {global_step}")
        loss.backward()

        norm_sq = 0.0
        for tensor in policy.arrays.values():
            if tensor.grad is not None:
                norm_sq += float(np.sum(tensor.grad * tensor.grad))
        norm = np.sqrt(norm_sq)
        if norm > config.max_grad_norm:
            scale = config.max_grad_norm / norm
            for tensor in policy.arrays.values():
                if tensor.grad is not None:
                    tensor.grad *= scale
        opt.step(config.learning_rate)

        if global_step >= next_eval:
            run_eval(global_step)
            next_eval += config.eval_every

    if last_eval_step != global_step:
        run_eval(global_step)
    if curve_path is not None:
        write_curve(curve, curve_path)
    return RunResult(policy=policy, curve=curve, replay=replay, seed=config.seed,
                     reward_kind=reward_source.kind)


def evaluate(policy, env_config: envmod.EnvConfig, episodes: int, rng: RngStream) -> dict:
    """Greedy rollouts scored by the sparse success signal and subtasks completed."""
    if episodes < 1:
        raise ConfigurationError("episodes must be >= 1")
    successes = 0
    completed = 0.0
    for _ in range(episodes):
        state, obs = envmod.reset(env_config, rng)
        done = False
        while not done:
            if hasattr(policy, "act"):
                a = policy.act(env_config, state, obs)
            else:
                with no_grad():
                    logits, _ = policy_forward(policy, obs[None])
                a = int(np.argmax(logits.data[0]))
            disp = ACTION_DIRECTIONS[a] * env_config.a_max
            state, obs, sparse, done = envmod.step(env_config, state, disp)
            if sparse > 0:
                successes += 1
        completed += float(state.completed.sum())
    return {
        "success_rate": successes / episodes,
        "mean_completed_subtasks": completed / episodes,
    }


class ScriptedExpertPolicy:
    """The proportional expert, snapped to the discrete action set."""

    def act(self, config, state, obs) -> int:
        action = envmod.expert_action(config, state, RngStream(0), noise=0.0)
        target = state.agent_xy + action.displacement
        dists = np.linalg.norm(
            state.agent_xy + ACTION_DIRECTIONS * config.a_max - target, axis=1
        )
        return int(np.argmin(dists))


def harvest_replay(run: RunResult) -> list:
    """Episode trajectories retained during training, unlabeled, expert=False."""
    if run.replay is None:
        raise ConfigurationError("train_agent must run with retain_rollouts=True to harvest")
    return list(run.replay)


def write_curve(rows, path) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(CURVE_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) if isinstance(v, float) else str(v)
                              for v in row) + "\n")
