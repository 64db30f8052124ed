"""The subtask-conditioned reward model R(s_t; U_i) = f(v_t, e_i).

A per-frame MLP encoder lifts observations to embed_dim, positional
embeddings are added, and a small pre-norm causal transformer aggregates the
K-frame window. The final slot output v_t is concatenated with a subtask
embedding e_i (mean of token embeddings through a 2-layer projection) and a
2-layer head maps the pair to a scalar reward.

Two config switches cover the architecture ablations: `use_aggregator=False`
replaces the transformer with a linear map over the concatenated frame
encodings, and `head_all_outputs=True` feeds all K slot outputs (not just
the final one) to the head.

All forward passes share one code path over autodiff tensors; evaluation
entry points simply run it under no_grad.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, causal_attention, concat, layer_norm, linear, no_grad, parameter
from .errors import ConfigurationError, ParseError, VocabularyError
from .rng import RngStream

_LN_EPS = 1e-5
_MASK_VALUE = -1e9
_NORM_FLOOR = 1e-12


@dataclass
class ModelConfig:
    obs_dim: int
    m: int
    K: int = 4
    embed_dim: int = 64
    encoder_hidden: int = 64
    agg_layers: int = 2
    agg_heads: int = 4
    head_hidden: int = 64
    use_aggregator: bool = True
    head_all_outputs: bool = False

    def __post_init__(self):
        for name in ("obs_dim", "m", "K", "embed_dim", "encoder_hidden", "agg_layers",
                     "agg_heads", "head_hidden"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.embed_dim % self.agg_heads != 0:
            raise ConfigurationError("embed_dim must divide evenly into agg_heads")

    @property
    def head_in_dim(self) -> int:
        per_window = self.K * self.embed_dim if self.head_all_outputs else self.embed_dim
        return per_window + self.embed_dim


@dataclass
class RewardModelParams:
    """Trainable arrays plus everything needed to use them on their own.

    vocab and subtask specs ride along so that a loaded checkpoint can run
    online inference without the dataset; reward_center / normalize_factor
    (the affine remap onto the expert reward range) and thresholds are filled
    in after training and default to neutral values.
    """

    config: ModelConfig
    vocab: list
    specs: list
    arrays: dict  # name -> Tensor (requires_grad)
    normalize_factor: float = 1.0
    reward_center: float = 0.0
    thresholds: np.ndarray | None = None

    def vocab_index(self, token: str) -> int:
        try:
            return self._vocab_index[token]
        except AttributeError:
            self._vocab_index = {tok: i for i, tok in enumerate(self.vocab)}
            return self.vocab_index(token)
        except KeyError:
            raise VocabularyError(f"token {token!r} not in model vocabulary") from None


def _uniform(rng: RngStream, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(config: ModelConfig, vocab, specs, rng: RngStream) -> RewardModelParams:
    E = config.embed_dim
    H = config.encoder_hidden
    K = config.K
    arrays = {}

    def p(name, values):
        arrays[name] = parameter(values)

    p("enc.w1", _uniform(rng, (config.obs_dim, H), config.obs_dim))
    p("enc.b1", np.zeros(H))
    p("enc.w2", _uniform(rng, (H, E), H))
    p("enc.b2", np.zeros(E))

    if config.use_aggregator:
        p("pos", _uniform(rng, (K, E), E))
        for l in range(config.agg_layers):
            pre = f"layer{l}."
            p(pre + "ln1.g", np.ones(E))
            p(pre + "ln1.b", np.zeros(E))
            for part in ("wq", "wk", "wv", "wo"):
                p(pre + "attn." + part, _uniform(rng, (E, E), E))
            for part in ("bq", "bk", "bv", "bo"):
                p(pre + "attn." + part, np.zeros(E))
            p(pre + "ln2.g", np.ones(E))
            p(pre + "ln2.b", np.zeros(E))
            p(pre + "mlp.w1", _uniform(rng, (E, 2 * E), E))
            p(pre + "mlp.b1", np.zeros(2 * E))
            p(pre + "mlp.w2", _uniform(rng, (2 * E, E), 2 * E))
            p(pre + "mlp.b2", np.zeros(E))
        p("final.ln.g", np.ones(E))
        p("final.ln.b", np.zeros(E))
    else:
        p("cat.w", _uniform(rng, (K * E, E), K * E))
        p("cat.b", np.zeros(E))

    p("tok.emb", _uniform(rng, (len(vocab), E), E))
    p("sub.w1", _uniform(rng, (E, E), E))
    p("sub.b1", np.zeros(E))
    p("sub.w2", _uniform(rng, (E, E), E))
    p("sub.b2", np.zeros(E))

    p("head.w1", _uniform(rng, (config.head_in_dim, config.head_hidden), config.head_in_dim))
    p("head.b1", np.zeros(config.head_hidden))
    p("head.w2", _uniform(rng, (config.head_hidden, 1), config.head_hidden))
    p("head.b2", np.zeros(1))

    return RewardModelParams(config=config, vocab=list(vocab), specs=list(specs), arrays=arrays)


def clone_params(params: RewardModelParams) -> RewardModelParams:
    arrays = {name: parameter(t.data.copy()) for name, t in params.arrays.items()}
    return RewardModelParams(
        config=params.config,
        vocab=list(params.vocab),
        specs=list(params.specs),
        arrays=arrays,
        normalize_factor=params.normalize_factor,
        reward_center=params.reward_center,
        thresholds=None if params.thresholds is None else np.array(params.thresholds),
    )


# ---------------------------------------------------------------------------
# forward passes


def _layer_norm(x: Tensor, g: Tensor, b: Tensor) -> Tensor:
    return layer_norm(x, g, b, eps=_LN_EPS)


def encode_windows(params: RewardModelParams, windows) -> Tensor:
    """All K slot embeddings for a batch of windows: (B, K, obs_dim) -> (B, K, E).

    Slot j only sees frames up to j (causal mask in the aggregator, prefix
    concatenation in the ablated path).
    """
    cfg = params.config
    P = params.arrays
    w = np.asarray(windows, dtype=float)
    if w.ndim != 3 or w.shape[1] != cfg.K or w.shape[2] != cfg.obs_dim:
        raise ConfigurationError(f"windows must be (B, {cfg.K}, {cfg.obs_dim}), got {w.shape}")
    B, K, D = w.shape
    E = cfg.embed_dim

    frames = Tensor(w.reshape(B * K, D))
    h = linear(frames, P["enc.w1"], P["enc.b1"]).tanh()
    z = linear(h, P["enc.w2"], P["enc.b2"]).reshape(B, K, E)

    if not cfg.use_aggregator:
        # direct concatenation: slot j is a linear map of frames max(0, j-K+1)..j,
        # padded by repeating the window's first frame
        prefix = np.maximum(np.arange(K)[:, None] + np.arange(-K + 1, 1)[None, :], 0)
        gathered = z[:, prefix.reshape(-1), :].reshape(B, K, K * E)
        return linear(gathered, P["cat.w"], P["cat.b"])

    x = z + P["pos"]
    heads = cfg.agg_heads
    dh = E // heads
    mask = np.triu(np.full((K, K), _MASK_VALUE), k=1)
    scale = 1.0 / np.sqrt(dh)
    for l in range(cfg.agg_layers):
        pre = f"layer{l}."
        xn = _layer_norm(x, P[pre + "ln1.g"], P[pre + "ln1.b"])
        q = linear(xn, P[pre + "attn.wq"], P[pre + "attn.bq"]).reshape(B, K, heads, dh).swapaxes(1, 2)
        k = linear(xn, P[pre + "attn.wk"], P[pre + "attn.bk"]).reshape(B, K, heads, dh).swapaxes(1, 2)
        v = linear(xn, P[pre + "attn.wv"], P[pre + "attn.bv"]).reshape(B, K, heads, dh).swapaxes(1, 2)
        mixed = causal_attention(q, k, v, scale, mask).swapaxes(1, 2).reshape(B, K, E)
        x = x + linear(mixed, P[pre + "attn.wo"], P[pre + "attn.bo"])
        yn = _layer_norm(x, P[pre + "ln2.g"], P[pre + "ln2.b"])
        y = linear(linear(yn, P[pre + "mlp.w1"], P[pre + "mlp.b1"]).relu(),
                   P[pre + "mlp.w2"], P[pre + "mlp.b2"])
        x = x + y
    return _layer_norm(x, P["final.ln.g"], P["final.ln.b"])


def encode_window(params: RewardModelParams, window):
    """The K slot embeddings of a single window, as a plain (K, E) array."""
    obs = np.asarray(window.observations if hasattr(window, "observations") else window, dtype=float)
    with no_grad():
        out = encode_windows(params, obs[None])
    return out.data[0]


def final_embeddings(params: RewardModelParams, windows) -> Tensor:
    """v_t for a batch of windows: the last causal slot output, (B, E)."""
    return encode_windows(params, windows)[:, -1, :]


def _head_features(params: RewardModelParams, windows) -> Tensor:
    out = encode_windows(params, windows)
    if params.config.head_all_outputs:
        B = out.shape[0]
        return out.reshape(B, params.config.K * params.config.embed_dim)
    return out[:, -1, :]


def subtask_embeddings(params: RewardModelParams, specs) -> Tensor:
    """Embeddings e_i for a list of subtask specs, stacked as (len(specs), E)."""
    P = params.arrays
    rows = []
    for spec in specs:
        ids = [params.vocab_index(tok) for tok in spec.tokens]
        mean = P["tok.emb"][ids].mean(axis=0).reshape(1, -1)
        rows.append(mean)
    bag = concat(rows, axis=0)
    h = linear(bag, P["sub.w1"], P["sub.b1"]).tanh()
    return linear(h, P["sub.w2"], P["sub.b2"])


def subtask_embedding(params: RewardModelParams, spec):
    with no_grad():
        return subtask_embeddings(params, [spec]).data[0]


def reward_heads(params: RewardModelParams, features: Tensor, e_rows: Tensor) -> Tensor:
    """Apply the head to per-element (features, subtask embedding) pairs -> (B,)."""
    P = params.arrays
    h = linear(concat([features, e_rows], axis=1), P["head.w1"], P["head.b1"]).tanh()
    out = linear(h, P["head.w2"], P["head.b2"])
    return out.reshape(out.shape[0])


def reward_batch(params: RewardModelParams, windows, labels) -> Tensor:
    """R(s_t; U_{labels[t]}) for a batch, differentiable."""
    feats = _head_features(params, windows)
    e_all = subtask_embeddings(params, params.specs)
    return reward_heads(params, feats, e_all[np.asarray(labels, dtype=int)])


def reward(params: RewardModelParams, window, spec) -> float:
    obs = np.asarray(window.observations if hasattr(window, "observations") else window, dtype=float)
    with no_grad():
        feats = _head_features(params, obs[None])
        e = subtask_embeddings(params, [spec])
        value = reward_heads(params, feats, e)
    return float(value.data[0])


def cosine_sims(params: RewardModelParams, v: Tensor, e: Tensor) -> Tensor:
    """Row-wise cosine similarity matrix between windows (B, E) and subtasks (m, E).

    Norms are floored at a tiny positive value so an untrained (all-zero)
    model yields zeros instead of dividing by zero.
    """
    vn = (v * v).sum(axis=1, keepdims=True).sqrt().clip(_NORM_FLOOR, np.inf)
    en = (e * e).sum(axis=1, keepdims=True).sqrt().clip(_NORM_FLOOR, np.inf)
    return (v / vn) @ (e / en).transpose()


def infer_subtask_batch(params: RewardModelParams, windows, eta: float):
    """Margin-adjusted subtask inference for a batch of windows.

    Returns (indices, raw cosine similarities at the chosen index). The margin
    eta * (m - 1 - i) breaks ties toward earlier subtasks.
    """
    m = params.config.m
    with no_grad():
        v = final_embeddings(params, windows)
        e = subtask_embeddings(params, params.specs)
        sims = cosine_sims(params, v, e).data
    margins = eta * (m - 1 - np.arange(m))
    chosen = np.argmax(sims + margins, axis=1)
    return chosen.astype(int), sims[np.arange(len(chosen)), chosen]


def infer_subtask(params: RewardModelParams, window, eta: float):
    """(inferred subtask index, its raw cosine similarity) for one window."""
    obs = np.asarray(window.observations if hasattr(window, "observations") else window, dtype=float)
    idx, sims = infer_subtask_batch(params, obs[None], eta)
    return int(idx[0]), float(sims[0])


# ---------------------------------------------------------------------------
# flat parameter vector helpers (gradient checking, optimizer-agnostic tooling)


def param_names(params: RewardModelParams) -> list:
    return sorted(params.arrays)


def params_vector(params: RewardModelParams) -> np.ndarray:
    return np.concatenate([params.arrays[n].data.reshape(-1) for n in param_names(params)])


def grads_vector(params: RewardModelParams) -> np.ndarray:
    out = []
    for n in param_names(params):
        t = params.arrays[n]
        out.append((np.zeros_like(t.data) if t.grad is None else t.grad).reshape(-1))
    return np.concatenate(out)


def set_params_vector(params: RewardModelParams, vec: np.ndarray) -> None:
    vec = np.asarray(vec, dtype=float)
    names = param_names(params)
    total = sum(params.arrays[n].data.size for n in names)
    # check up front so a bad vector cannot leave the model half-written
    if vec.size != total:
        raise ConfigurationError("parameter vector has the wrong length")
    offset = 0
    for n in names:
        t = params.arrays[n]
        size = t.data.size
        t.data = vec[offset : offset + size].reshape(t.data.shape).copy()
        offset += size


def zero_grads(params: RewardModelParams) -> None:
    for t in params.arrays.values():
        t.grad = None


# ---------------------------------------------------------------------------
# checkpoint I/O

CHECKPOINT_VERSION = 1


def save_checkpoint(params: RewardModelParams, path) -> None:
    payload = {
        "version": CHECKPOINT_VERSION,
        "config": dataclasses.asdict(params.config),
        "vocab": list(params.vocab),
        "instructions": [list(s.tokens) for s in params.specs],
        "normalize_factor": params.normalize_factor,
        "reward_center": params.reward_center,
        "thresholds": None if params.thresholds is None else list(map(float, params.thresholds)),
        "arrays": {
            name: {"shape": list(t.data.shape), "data": t.data.reshape(-1).tolist()}
            for name, t in sorted(params.arrays.items())
        },
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_checkpoint(path) -> RewardModelParams:
    from .data import SubtaskSpec

    with open(path) as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"checkpoint is not valid JSON: {exc.msg}") from exc
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ParseError(f"unsupported checkpoint version {payload.get('version')!r}")
    config = ModelConfig(**payload["config"])
    vocab = list(payload["vocab"])
    specs = [SubtaskSpec(i, list(toks)) for i, toks in enumerate(payload["instructions"])]
    template = init_params(config, vocab, specs, RngStream(0))
    arrays = {}
    for name, t in template.arrays.items():
        if name not in payload["arrays"]:
            raise ParseError(f"checkpoint is missing array {name!r}")
        entry = payload["arrays"][name]
        shape = tuple(entry["shape"])
        if shape != t.data.shape:
            raise ParseError(
                f"array {name!r} has shape {shape}, config implies {t.data.shape}"
            )
        arrays[name] = parameter(np.array(entry["data"], dtype=float).reshape(shape))
    extra = set(payload["arrays"]) - set(template.arrays)
    if extra:
        raise ParseError(f"checkpoint carries unknown arrays: {sorted(extra)}")
    thresholds = payload.get("thresholds")
    return RewardModelParams(
        config=config,
        vocab=vocab,
        specs=specs,
        arrays=arrays,
        normalize_factor=float(payload.get("normalize_factor", 1.0)),
        reward_center=float(payload.get("reward_center", 0.0)),
        thresholds=None if thresholds is None else np.array(thresholds, dtype=float),
    )
