"""Training objectives and loops for the reward model.

Three losses: an EPIC-distance loss against the numeric segmentation signal
(every subtask conditioning scored over the full batch), a progressive hinge
on expert state pairs, and a temperature-scaled contrastive loss aligning
window embeddings with their labeled subtask embedding. They are summed
unweighted by default; per-term toggles and weights exist for ablations.

Optimization is adaptive moments with decoupled weight decay, linear warmup
then cosine decay. The iterative refinement loop harvests suboptimal RL
rollouts, auto-labels them with similarity thresholds, and fine-tunes on a
short fresh schedule.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import data as datamod
from . import epic as epicmod
from . import model as modelmod
from .autodiff import Tensor, concat, no_grad
from .errors import ConfigurationError, DatasetError, DegenerateVarianceError
from .numerics import PEARSON_CLAMP, pearson_correlation
from .rng import RngStream

logger = logging.getLogger(__name__)

METRICS_COLUMNS = ("step", "loss_epic", "loss_reg", "loss_cont", "loss_total", "lr")


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 0.02
    batch_size: int = 32
    training_steps: int = 5000
    warmup_steps: int = 500
    epsilon: float = 0.05
    eta: float = 0.01
    j_set: tuple = (1, 5, 10)
    temperature: float = 0.1
    num_canonical: int = 8
    refinement_iterations: int = 2
    seed: int = 0
    use_epic: bool = True
    use_reg: bool = True
    use_cont: bool = True
    weight_epic: float = 1.0
    weight_reg: float = 1.0
    weight_cont: float = 1.0
    label_conditioned: bool = False
    cont_expert_only: bool = False
    obs_noise: float = 0.0
    distance_form: str = "squared"
    fine_tune_steps: int = 1000
    fine_tune_warmup: int = 100
    replay_episodes: int = 100

    def __post_init__(self):
        self.j_set = tuple(int(j) for j in self.j_set)
        if not self.j_set or min(self.j_set) < 1:
            raise ConfigurationError("j_set must hold positive offsets")
        for name in ("learning_rate", "temperature", "batch_size", "num_canonical"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.distance_form not in ("root", "squared"):
            raise ConfigurationError("distance_form must be 'root' or 'squared'")


@dataclass
class LossBreakdown:
    epic: float
    reg: float
    cont: float
    total: float


@dataclass
class ProgressivePairs:
    """Expert (s_t, s_{t+j}) window pairs with their own-label conditionings."""

    windows_a: np.ndarray
    windows_b: np.ndarray
    labels_a: np.ndarray
    labels_b: np.ndarray


@dataclass
class PreparedBatches:
    batch: datamod.Batch
    canon_windows: np.ndarray  # (B * M, K, obs_dim)
    canon_targets: np.ndarray  # (B * M,)
    pairs: ProgressivePairs | None
    specs: list


def sample_progressive_pairs(ds: datamod.SegmentedDataset, size: int, j_set, K: int,
                             rng: RngStream) -> ProgressivePairs:
    """Sample expert-only (t, t+j) pairs, resampling any pair that runs off the episode."""
    expert_ids = [i for i, t in enumerate(ds.trajectories) if t.expert]
    if not expert_ids:
        raise DatasetError("progressive pairs need expert trajectories")
    j_set = tuple(j_set)
    wa = np.empty((size, K, ds.obs_dim))
    wb = np.empty((size, K, ds.obs_dim))
    la = np.empty(size, dtype=int)
    lb = np.empty(size, dtype=int)
    filled = 0
    attempts = 0
    while filled < size:
        attempts += 1
        if attempts > 1000 * size:
            raise DatasetError("could not sample progressive pairs; episodes too short for j_set")
        traj = ds.trajectories[int(rng.choice(expert_ids))]
        j = int(rng.choice(j_set))
        if len(traj) <= j:
            continue
        t = int(rng.integers(0, len(traj) - j))
        idx_a = np.maximum(np.arange(t - K + 1, t + 1), 0)
        idx_b = np.maximum(np.arange(t + j - K + 1, t + j + 1), 0)
        wa[filled] = traj.observations[idx_a]
        wb[filled] = traj.observations[idx_b]
        la[filled] = traj.labels[t]
        lb[filled] = traj.labels[t + j]
        filled += 1
    return ProgressivePairs(windows_a=wa, windows_b=wb, labels_a=la, labels_b=lb)


def prepare_batches(ds: datamod.SegmentedDataset, config: TrainConfig, K: int,
                    rng: RngStream) -> PreparedBatches:
    """Draw one training step's worth of samples (coverage, canonical, pairs)."""
    batch = None
    for _ in range(50):
        candidate = datamod.sample_batch(ds, config.batch_size, rng, K=K)
        if np.unique(candidate.targets).size >= 2:
            batch = candidate
            break
    if batch is None:
        raise DegenerateVarianceError(
            "targets", "could not draw a batch spanning two subtask labels"
        )
    canon = datamod.sample_batch(ds, config.batch_size * config.num_canonical, rng, K=K)
    pairs = None
    if config.use_reg:
        pairs = sample_progressive_pairs(ds, config.batch_size, config.j_set, K, rng)
    if config.obs_noise > 0.0:
        batch = datamod.Batch(
            windows=batch.windows + rng.normal(0.0, config.obs_noise, size=batch.windows.shape),
            labels=batch.labels,
            targets=batch.targets,
            expert=batch.expert,
        )
    return PreparedBatches(
        batch=batch,
        canon_windows=canon.windows,
        canon_targets=canon.targets,
        pairs=pairs,
        specs=ds.specs(),
    )


# ---------------------------------------------------------------------------
# losses


def _distance_from_rho(rho: Tensor, form: str) -> Tensor:
    rho = rho.clip(-1.0 + PEARSON_CLAMP, 1.0 - PEARSON_CLAMP)
    half = (1.0 - rho) / 2.0
    return half.sqrt() if form == "root" else half


def _epic_from_values(model_cov: Tensor, model_canon: Tensor, psi_canonical: np.ndarray,
                      form: str) -> Tensor:
    """Distance between canonicalized model rewards and canonicalized targets.

    model_cov: (B,) rewards on the coverage batch; model_canon: (B, M) rewards
    on each state's canonical samples; psi_canonical: (B,) already-canonicalized
    numeric targets (a constant with respect to the parameters).
    """
    centered = model_cov - model_canon.mean(axis=1)
    try:
        rho = pearson_correlation(centered, Tensor(psi_canonical))
    except DegenerateVarianceError as exc:
        side = "model" if exc.side == "xs" else "targets"
        raise DegenerateVarianceError(side, f"constant {side} rewards over the batch") from exc
    return _distance_from_rho(rho, form)


def _check_target_variance(targets: np.ndarray, psi_canonical: np.ndarray) -> None:
    if np.unique(targets).size < 2:
        raise DegenerateVarianceError("targets", "batch spans a single subtask label")
    if np.all(psi_canonical == psi_canonical[0]):
        raise DegenerateVarianceError("targets", "canonicalized targets are constant")


def _loss_epic_prepared(params, batch: datamod.Batch, canon_windows, canon_targets,
                        config: TrainConfig, specs) -> Tensor:
    B = len(batch.targets)
    M = config.num_canonical
    if canon_windows.shape[0] != B * M:
        raise ConfigurationError("canonical windows must number batch_size * num_canonical")
    psi_canonical = batch.targets - canon_targets.reshape(B, M).mean(axis=1)
    _check_target_variance(batch.targets, psi_canonical)

    all_windows = np.concatenate([batch.windows, canon_windows], axis=0)
    feats = modelmod._head_features(params, all_windows)
    e_all = modelmod.subtask_embeddings(params, specs)

    if config.label_conditioned:
        labels = np.concatenate([batch.labels, np.asarray(canon_targets, dtype=int)])
        r = modelmod.reward_heads(params, feats, e_all[labels])
        model_canon = r[B:].reshape(B, M)
        return _epic_from_values(r[:B], model_canon, psi_canonical, config.distance_form)

    total = None
    n = B + B * M
    for i in range(len(specs)):
        r = modelmod.reward_heads(params, feats, e_all[np.full(n, i)])
        d = _epic_from_values(r[:B], r[B:].reshape(B, M), psi_canonical, config.distance_form)
        total = d if total is None else total + d
    return total / float(len(specs))


def loss_epic(params, batch: datamod.Batch, dataset: datamod.SegmentedDataset,
              config: TrainConfig, rng: RngStream) -> Tensor:
    """Average EPIC distance of every subtask conditioning to the segmentation signal.

    Canonical batches are M fresh uniform draws from the dataset per coverage
    sample, shared between the model side and the target side.
    """
    canon = datamod.sample_batch(ds=dataset, size=len(batch.targets) * config.num_canonical,
                                 rng=rng, K=params.config.K)
    return _loss_epic_prepared(params, batch, canon.windows, canon.targets, config,
                               dataset.specs())


def _hinge_from_differences(diffs: Tensor, epsilon: float) -> Tensor:
    return (epsilon - diffs).relu().mean()


def loss_reg(params, pairs: ProgressivePairs, config: TrainConfig) -> Tensor:
    """Progressive hinge: expert rewards must grow by epsilon from t to t+j."""
    B = pairs.windows_a.shape[0]
    windows = np.concatenate([pairs.windows_a, pairs.windows_b], axis=0)
    labels = np.concatenate([pairs.labels_a, pairs.labels_b])
    r = modelmod.reward_batch(params, windows, labels)
    return _hinge_from_differences(r[B:] - r[:B], config.epsilon)


def _cont_from_sims(sims: Tensor, labels: np.ndarray, temperature: float) -> Tensor:
    from .autodiff import log_softmax

    logits = sims / temperature
    logp = log_softmax(logits, axis=1)
    picked = logp[np.arange(len(labels)), np.asarray(labels, dtype=int)]
    return -picked.mean()


def loss_cont(params, batch: datamod.Batch, config: TrainConfig, specs=None) -> Tensor:
    """Temperature-scaled softmax cross-entropy over cosine similarities."""
    specs = params.specs if specs is None else specs
    windows = batch.windows
    labels = batch.labels
    if config.cont_expert_only:
        rows = np.flatnonzero(batch.expert)
        if rows.size == 0:
            return Tensor(0.0)
        windows = windows[rows]
        labels = labels[rows]
    v = modelmod.final_embeddings(params, windows)
    e = modelmod.subtask_embeddings(params, specs)
    sims = modelmod.cosine_sims(params, v, e)
    return _cont_from_sims(sims, labels, config.temperature)


def _total_loss(params, batches: PreparedBatches, config: TrainConfig):
    """All enabled losses from one shared encoder pass over every window.

    Numerically equivalent to calling loss_epic / loss_reg / loss_cont on the
    same draws; fusing them just avoids encoding the coverage batch three
    times.
    """
    batch = batches.batch
    B = len(batch.targets)
    M = config.num_canonical
    cfg = params.config

    segments = [batch.windows]
    n_canon = 0
    if config.use_epic:
        segments.append(batches.canon_windows)
        n_canon = batches.canon_windows.shape[0]
    use_reg = config.use_reg and batches.pairs is not None
    if use_reg:
        segments.append(batches.pairs.windows_a)
        segments.append(batches.pairs.windows_b)
    out = modelmod.encode_windows(params, np.concatenate(segments, axis=0))
    v = out[:, -1, :]
    if cfg.head_all_outputs:
        feats = out.reshape(out.shape[0], cfg.K * cfg.embed_dim)
    else:
        feats = v
    e_all = modelmod.subtask_embeddings(params, batches.specs)

    zero = Tensor(0.0)
    l_epic = zero
    l_reg = zero
    l_cont = zero

    if config.use_epic:
        if n_canon != B * M:
            raise ConfigurationError("canonical windows must number batch_size * num_canonical")
        n = B + n_canon
        psi_canonical = batch.targets - batches.canon_targets.reshape(B, M).mean(axis=1)
        _check_target_variance(batch.targets, psi_canonical)
        epic_feats = feats[:n]
        if config.label_conditioned:
            labels = np.concatenate([batch.labels, np.asarray(batches.canon_targets, dtype=int)])
            r = modelmod.reward_heads(params, epic_feats, e_all[labels])
            l_epic = _epic_from_values(r[:B], r[B:].reshape(B, M), psi_canonical,
                                       config.distance_form)
        else:
            m = len(batches.specs)
            tiled = concat([epic_feats] * m, axis=0)
            r = modelmod.reward_heads(params, tiled, e_all[np.repeat(np.arange(m), n)])
            total_d = None
            for i in range(m):
                ri = r[i * n : (i + 1) * n]
                d = _epic_from_values(ri[:B], ri[B:].reshape(B, M), psi_canonical,
                                      config.distance_form)
                total_d = d if total_d is None else total_d + d
            l_epic = total_d / float(m)

    if use_reg:
        off = B + n_canon
        pair_labels = np.concatenate([batches.pairs.labels_a, batches.pairs.labels_b])
        r = modelmod.reward_heads(params, feats[off:], e_all[pair_labels])
        Bp = batches.pairs.windows_a.shape[0]
        l_reg = _hinge_from_differences(r[Bp:] - r[:Bp], config.epsilon)

    if config.use_cont:
        v_batch = v[:B]
        cont_labels = batch.labels
        if config.cont_expert_only:
            rows = np.flatnonzero(batch.expert)
            if rows.size == 0:
                v_batch = None
            else:
                v_batch = v[rows]
                cont_labels = batch.labels[rows]
        if v_batch is not None:
            sims = modelmod.cosine_sims(params, v_batch, e_all)
            l_cont = _cont_from_sims(sims, cont_labels, config.temperature)

    total = (l_epic * config.weight_epic + l_reg * config.weight_reg
             + l_cont * config.weight_cont)
    breakdown = LossBreakdown(
        epic=float(l_epic.data), reg=float(l_reg.data), cont=float(l_cont.data),
        total=float(total.data),
    )
    return breakdown, total


def total_loss(params, batches: PreparedBatches, config: TrainConfig) -> LossBreakdown:
    """Unweighted sum of the enabled loss terms (weights exist for ablations only)."""
    breakdown, _ = _total_loss(params, batches, config)
    return breakdown


# ---------------------------------------------------------------------------
# optimizer loop


def learning_rate_at(step: int, config: TrainConfig) -> float:
    """Linear warmup to the base rate, then cosine decay to zero."""
    if step < config.warmup_steps:
        return config.learning_rate * (step + 1) / config.warmup_steps
    span = max(1, config.training_steps - config.warmup_steps)
    progress = min(1.0, (step - config.warmup_steps) / span)
    return config.learning_rate * 0.5 * (1.0 + np.cos(np.pi * progress))


class AdamW:
    """Adaptive moments with decoupled weight decay (beta1=0.9, beta2=0.999).

    Decay applies to matrices only; biases, gains, and other 1-D arrays are
    exempt.
    """

    def __init__(self, arrays: dict, weight_decay: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.arrays = arrays
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(t.data) for n, t in arrays.items()}
        self.v = {n: np.zeros_like(t.data) for n, t in arrays.items()}

    def step(self, lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, tensor in self.arrays.items():
            g = tensor.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if tensor.data.ndim >= 2 and self.weight_decay > 0.0:
                tensor.data -= lr * self.weight_decay * tensor.data
            tensor.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def write_metrics(rows, path) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(METRICS_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) if isinstance(v, float) else str(v)
                              for v in row) + "\n")


def train_reward_model(dataset, config: TrainConfig, model_config: modelmod.ModelConfig = None,
                       init: modelmod.RewardModelParams = None, metrics_path=None):
    """Train (or fine-tune, via `init`) the reward model.

    `dataset` may be a single SegmentedDataset or a list of them; with several,
    steps round-robin through the datasets so jointly trained task variants see
    the same schedule. Returns (params, metrics rows). Thresholds and the
    normalization factor from the first dataset's expert demos are stored on
    the returned params.
    """
    datasets = list(dataset) if isinstance(dataset, (list, tuple)) else [dataset]
    for ds in datasets[1:]:
        if ds.obs_dim != datasets[0].obs_dim or ds.m != datasets[0].m:
            raise DatasetError("jointly trained datasets must share obs_dim and m")
    primary = datasets[0]
    rng = RngStream(config.seed)
    if model_config is None:
        model_config = modelmod.ModelConfig(obs_dim=primary.obs_dim, m=primary.m)
    if init is None:
        params = modelmod.init_params(model_config, primary.vocab, primary.specs(),
                                      rng.fork("init"))
    else:
        params = modelmod.clone_params(init)

    opt = AdamW(params.arrays, weight_decay=config.weight_decay)
    batch_rng = rng.fork("batches")
    metrics = []
    last_good = modelmod.params_vector(params)
    for step in range(config.training_steps):
        ds = datasets[step % len(datasets)]
        batches = prepare_batches(ds, config, params.config.K, batch_rng)
        modelmod.zero_grads(params)
        breakdown, total = _total_loss(params, batches, config)
        if not np.isfinite(breakdown.total):
            logger.warning("non-finite loss at step %d; stopping with last good parameters", step)
            modelmod.set_params_vector(params, last_good)
            break
        last_good = modelmod.params_vector(params)
        total.backward()
        lr = learning_rate_at(step, config)
        opt.step(lr)
        metrics.append((step, breakdown.epic, breakdown.reg, breakdown.cont,
                        breakdown.total, lr))
    if metrics_path is not None:
        write_metrics(metrics, metrics_path)

    expert = expert_subset(primary)
    if expert is not None:
        try:
            params.thresholds = compute_thresholds(params, expert)
        except ConfigurationError:
            params.thresholds = None
        params.reward_center, params.normalize_factor = reward_normalization(params, expert)
    return params, metrics


def expert_subset(ds: datamod.SegmentedDataset):
    experts = [t for t in ds.trajectories if t.expert]
    if not experts:
        return None
    return datamod.SegmentedDataset(
        trajectories=experts, m=ds.m, vocab=list(ds.vocab),
        instructions=[list(t) for t in ds.instructions], iteration_tag=ds.iteration_tag,
    )


def _expert_windows_labels(params, ds: datamod.SegmentedDataset):
    windows = []
    labels = []
    for traj in ds.trajectories:
        if not traj.expert:
            continue
        windows.append(datamod.window_array(traj, params.config.K))
        labels.append(traj.labels)
    if not windows:
        raise ConfigurationError("no expert trajectories available")
    return np.concatenate(windows, axis=0), np.concatenate(labels)


def percentile_threshold(scores, q: float = 0.75) -> float:
    """Nearest-rank percentile: the value at 1-based rank ceil(q * N) ascending."""
    scores = np.sort(np.asarray(scores, dtype=float))
    if scores.size == 0:
        raise ConfigurationError("percentile of an empty score list")
    if not 0.0 < q <= 1.0:
        raise ConfigurationError("q must lie in (0, 1]")
    rank = int(np.ceil(q * scores.size))
    return float(scores[rank - 1])


def compute_thresholds(params, expert_dataset) -> np.ndarray:
    """Per-subtask 75th-percentile (nearest-rank) expert similarity scores."""
    windows, labels = _expert_windows_labels(params, expert_dataset)
    with no_grad():
        v = modelmod.final_embeddings(params, windows)
        e = modelmod.subtask_embeddings(params, params.specs)
        sims = modelmod.cosine_sims(params, v, e).data
    m = params.config.m
    thresholds = np.empty(m)
    for i in range(m):
        own = sims[labels == i, i]
        if own.size == 0:
            raise ConfigurationError(f"subtask {i} absent from expert data")
        thresholds[i] = percentile_threshold(own)
    return thresholds


def reward_normalization(params, expert_dataset):
    """(center, scale) mapping expert own-label rewards onto roughly [0, 1].

    center is the expert minimum and scale the expert range, so downstream
    consumers see a dense progress-like signal with a near-zero baseline
    instead of whatever affine scale training happened to settle on. The
    comparison metric is invariant to this remap. A degenerate range falls
    back to the identity.
    """
    windows, labels = _expert_windows_labels(params, expert_dataset)
    with no_grad():
        rewards = modelmod.reward_batch(params, windows, labels).data
    lo = float(rewards.min())
    scale = float(rewards.max()) - lo
    if scale <= 1e-9:
        logger.warning("expert reward range %.4g is degenerate; using identity normalization",
                       scale)
        return 0.0, 1.0
    return lo, scale


@dataclass
class EpicEvaluation:
    per_subtask: np.ndarray
    mean: float


def evaluate_epic(params, dataset: datamod.SegmentedDataset, epic_config=None,
                  rng: RngStream = None, coverage_size: int = 256) -> EpicEvaluation:
    """Canonicalized distance to the segmentation signal, per conditioning.

    Coverage states and shaping samples are both uniform draws from the
    dataset; each coverage state gets its own batch of canonical samples,
    shared between the model side and the target side. Uses the evaluation
    (root) distance form.
    """
    if epic_config is None:
        epic_config = epicmod.EpicConfig()
    if rng is None:
        rng = RngStream(0)
    K = params.config.K
    M = epic_config.num_canonical_samples
    cov = datamod.sample_batch(dataset, coverage_size, rng, K=K)
    canon = datamod.sample_batch(dataset, coverage_size * M, rng, K=K)
    B = len(cov.targets)

    with no_grad():
        all_windows = np.concatenate([cov.windows, canon.windows], axis=0)
        feats = modelmod._head_features(params, all_windows)
        e = modelmod.subtask_embeddings(params, dataset.specs())
        per = np.empty(dataset.m)
        for i in range(dataset.m):
            r = modelmod.reward_heads(params, feats, e[np.full(B + B * M, i)]).data
            est = epicmod.epic_distance(
                r[:B], cov.targets, r[B:].reshape(B, M),
                canon.targets.reshape(B, M), epic_config,
            )
            per[i] = est.distance
    return EpicEvaluation(per_subtask=per, mean=float(np.mean(per)))


def label_precision(labeled, reference) -> float:
    """Fraction of timesteps whose labels match between two trajectory lists."""
    hit = 0
    total = 0
    for lab, ref in zip(labeled, reference):
        hit += int(np.sum(lab.labels == ref.labels))
        total += len(ref)
    return hit / max(1, total)


def iterate_refinement(env_config, dataset: datamod.SegmentedDataset, config: TrainConfig,
                       rl_config=None, model0=None, out_dir=None):
    """Harvest suboptimal rollouts, auto-label them, fine-tune; repeat n times.

    Returns (final params, [D^1 .. D^n]). The progressive hinge stays
    expert-only throughout because pair sampling only ever touches expert
    trajectories.
    """
    from . import rl as rlmod

    if model0 is None:
        model0, _ = train_reward_model(dataset, config)
    params = model0
    current = dataset
    produced = []
    if rl_config is None:
        rl_config = rlmod.RLConfig(seed=config.seed)
    expert_ds = expert_subset(dataset)
    for iteration in range(1, config.refinement_iterations + 1):
        thresholds = compute_thresholds(params, expert_ds)
        center, factor = reward_normalization(params, expert_ds)
        source = rlmod.RewardSource.learned(params, factor, config.eta, center=center)
        run = rlmod.train_agent(env_config, source,
                                replace(rl_config, seed=rl_config.seed + iteration),
                                retain_rollouts=True)
        replay = rlmod.harvest_replay(run)
        if not replay:
            raise DatasetError(f"refinement iteration {iteration} harvested zero trajectories")
        if len(replay) > config.replay_episodes:
            keep = np.linspace(0, len(replay) - 1, config.replay_episodes).astype(int)
            replay = [replay[i] for i in keep]
        labeled = [datamod.label_suboptimal(t, params, thresholds, config.eta) for t in replay]
        current = datamod.merge_datasets(current, labeled, iteration_tag=iteration)
        produced.append(current)
        fine_cfg = replace(
            config,
            training_steps=config.fine_tune_steps,
            warmup_steps=config.fine_tune_warmup,
            seed=config.seed + iteration,
        )
        metrics_path = None
        if out_dir is not None:
            metrics_path = f"{out_dir}/metrics_refine_{iteration}.csv"
        params, _ = train_reward_model(current, fine_cfg, init=params,
                                       metrics_path=metrics_path)
    return params, produced
