"""Reward model: inference margins, causality, checkpointing, config validation."""

import dataclasses
import json

import numpy as np
import pytest

from segreward import data, model
from segreward.autodiff import Tensor, no_grad
from segreward.errors import ConfigurationError, ParseError, VocabularyError
from segreward.rng import RngStream


def _random_windows(params, batch, rng):
    cfg = params.config
    return rng.normal(size=(batch, cfg.K, cfg.obs_dim))


# ---------------------------------------------------------------------------
# initialization


def test_init_is_deterministic(chain2_dataset):
    ds = chain2_dataset
    cfg = model.ModelConfig(obs_dim=ds.obs_dim, m=ds.m, K=3, embed_dim=16,
                            encoder_hidden=12, agg_layers=1, agg_heads=2, head_hidden=10)
    a = model.init_params(cfg, ds.vocab, ds.specs(), RngStream(5).fork("init"))
    b = model.init_params(cfg, ds.vocab, ds.specs(), RngStream(5).fork("init"))
    assert model.param_names(a) == model.param_names(b)
    for name in model.param_names(a):
        np.testing.assert_array_equal(a.arrays[name].data, b.arrays[name].data)


def test_model_config_validation():
    with pytest.raises(ConfigurationError):
        model.ModelConfig(obs_dim=0, m=3)
    with pytest.raises(ConfigurationError):
        model.ModelConfig(obs_dim=12, m=3, agg_layers=0)
    # heads must divide the embedding width
    with pytest.raises(ConfigurationError):
        model.ModelConfig(obs_dim=12, m=3, embed_dim=16, agg_heads=3)


def test_head_in_dim_accounts_for_all_outputs():
    base = dict(obs_dim=12, m=3, K=4, embed_dim=16, agg_heads=2)
    narrow = model.ModelConfig(**base)
    wide = model.ModelConfig(**base, head_all_outputs=True)
    assert narrow.head_in_dim == 16 + 16
    assert wide.head_in_dim == 4 * 16 + 16


def test_vocab_index_rejects_unknown_token(tiny_model):
    assert tiny_model.vocab_index(tiny_model.vocab[0]) == 0
    with pytest.raises(VocabularyError):
        tiny_model.vocab_index("definitely-not-a-token")


def test_clone_params_is_independent(tiny_model):
    clone = model.clone_params(tiny_model)
    clone.arrays["enc.w1"].data += 1.0
    assert not np.array_equal(clone.arrays["enc.w1"].data, tiny_model.arrays["enc.w1"].data)
    assert clone.vocab == tiny_model.vocab
    assert clone.normalize_factor == tiny_model.normalize_factor
    assert clone.reward_center == tiny_model.reward_center


# ---------------------------------------------------------------------------
# encoding and causality


def test_encode_windows_shape_and_validation(tiny_model):
    rng = RngStream(3).fork("w")
    w = _random_windows(tiny_model, 5, rng)
    with no_grad():
        out = model.encode_windows(tiny_model, w)
    cfg = tiny_model.config
    assert out.shape == (5, cfg.K, cfg.embed_dim)
    with pytest.raises(ConfigurationError):
        model.encode_windows(tiny_model, w[:, :, :-1])
    with pytest.raises(ConfigurationError):
        model.encode_windows(tiny_model, w[0])


def test_causal_mask_last_frame_cannot_leak_backward(tiny_model):
    """Perturbing the final frame must leave every earlier slot bitwise intact."""
    rng = RngStream(4).fork("w")
    w = _random_windows(tiny_model, 3, rng)
    w2 = w.copy()
    w2[:, -1, :] = rng.normal(size=w2[:, -1, :].shape)
    with no_grad():
        a = model.encode_windows(tiny_model, w).data
        b = model.encode_windows(tiny_model, w2).data
    K = tiny_model.config.K
    np.testing.assert_array_equal(a[:, : K - 1, :], b[:, : K - 1, :])
    assert not np.array_equal(a[:, K - 1, :], b[:, K - 1, :])


def test_causality_holds_without_aggregator(chain2_dataset):
    ds = chain2_dataset
    cfg = model.ModelConfig(obs_dim=ds.obs_dim, m=ds.m, K=3, embed_dim=16,
                            encoder_hidden=12, agg_layers=1, agg_heads=2,
                            head_hidden=10, use_aggregator=False)
    params = model.init_params(cfg, ds.vocab, ds.specs(), RngStream(5).fork("init"))
    rng = RngStream(4).fork("w")
    w = rng.normal(size=(3, cfg.K, cfg.obs_dim))
    w2 = w.copy()
    w2[:, -1, :] = rng.normal(size=w2[:, -1, :].shape)
    with no_grad():
        a = model.encode_windows(params, w).data
        b = model.encode_windows(params, w2).data
    np.testing.assert_array_equal(a[:, : cfg.K - 1, :], b[:, : cfg.K - 1, :])
    assert not np.array_equal(a[:, -1, :], b[:, -1, :])


def test_encoding_sensitive_to_frame_order(tiny_model):
    rng = RngStream(6).fork("w")
    w = _random_windows(tiny_model, 2, rng)
    assert not np.array_equal(
        model.final_embeddings(tiny_model, w).data,
        model.final_embeddings(tiny_model, w[:, ::-1, :]).data,
    )


def test_encode_window_matches_batch_path(tiny_model):
    rng = RngStream(7).fork("w")
    w = _random_windows(tiny_model, 4, rng)
    with no_grad():
        batch = model.encode_windows(tiny_model, w).data
    single = model.encode_window(tiny_model, w[2])
    np.testing.assert_allclose(single, batch[2], rtol=0, atol=1e-12)


# ---------------------------------------------------------------------------
# subtask inference


def test_cosine_sims_rows_are_scale_invariant(tiny_model):
    rng = RngStream(8).fork("v")
    v = Tensor(rng.normal(size=(4, tiny_model.config.embed_dim)))
    e = Tensor(rng.normal(size=(3, tiny_model.config.embed_dim)))
    with no_grad():
        base = model.cosine_sims(tiny_model, v, e).data
        scaled = model.cosine_sims(tiny_model, Tensor(v.data * 7.5), Tensor(e.data * 0.2)).data
    np.testing.assert_allclose(scaled, base, atol=1e-12)
    assert np.all(base <= 1.0 + 1e-12) and np.all(base >= -1.0 - 1e-12)


def test_cosine_sims_survive_zero_vector(tiny_model):
    v = Tensor(np.zeros((1, tiny_model.config.embed_dim)))
    e = Tensor(np.ones((2, tiny_model.config.embed_dim)))
    with no_grad():
        sims = model.cosine_sims(tiny_model, v, e).data
    assert np.all(np.isfinite(sims))
    np.testing.assert_allclose(sims, 0.0, atol=1e-6)


def test_margin_breaks_near_ties_toward_earlier_subtask(tiny_model, monkeypatch):
    """A later subtask must beat an earlier one by the margin, not merely tie it.

    With raw similarities (0.48, 0.50) and eta = 0.05 the offsets (eta, 0)
    make subtask 0 win despite subtask 1 scoring higher.
    """
    sims = np.array([[0.48, 0.50]])

    def fake_sims(params, v, e):
        return Tensor(sims.copy())

    monkeypatch.setattr(model, "cosine_sims", fake_sims)
    w = np.zeros((1, tiny_model.config.K, tiny_model.config.obs_dim))
    idx, at = model.infer_subtask_batch(tiny_model, w, eta=0.05)
    assert idx[0] == 0
    assert at[0] == pytest.approx(0.48)
    # a clear winner is untouched by the margin
    idx2, at2 = model.infer_subtask_batch(tiny_model, w, eta=0.001)
    assert idx2[0] == 1
    assert at2[0] == pytest.approx(0.50)


def test_infer_subtask_single_matches_batch(tiny_model):
    rng = RngStream(9).fork("w")
    w = _random_windows(tiny_model, 5, rng)
    idx_b, sim_b = model.infer_subtask_batch(tiny_model, w, eta=0.01)
    idx_1, sim_1 = model.infer_subtask(tiny_model, w[3], eta=0.01)
    assert idx_1 == idx_b[3]
    # BLAS blocks matmuls differently across batch sizes, so bitwise equality
    # is out of reach; the values must still agree to near machine precision
    assert sim_1 == pytest.approx(float(sim_b[3]), rel=1e-12)


def test_reported_similarity_is_raw_not_margin_adjusted(tiny_model, monkeypatch):
    sims = np.array([[0.10, 0.90]])
    monkeypatch.setattr(model, "cosine_sims", lambda p, v, e: Tensor(sims.copy()))
    w = np.zeros((1, tiny_model.config.K, tiny_model.config.obs_dim))
    idx, at = model.infer_subtask_batch(tiny_model, w, eta=0.01)
    assert idx[0] == 1
    assert at[0] == pytest.approx(0.90)


# ---------------------------------------------------------------------------
# reward head


def test_reward_batch_matches_scalar_reward(tiny_model, chain2_dataset):
    rng = RngStream(10).fork("w")
    w = _random_windows(tiny_model, 4, rng)
    labels = np.array([0, 1, 0, 1])
    with no_grad():
        batch = model.reward_batch(tiny_model, w, labels).data
    specs = chain2_dataset.specs()
    for i in range(4):
        single = model.reward(tiny_model, w[i], specs[labels[i]])
        assert single == pytest.approx(float(batch[i]), abs=1e-12)


def test_reward_depends_on_subtask_spec(tiny_model, chain2_dataset):
    rng = RngStream(11).fork("w")
    w = _random_windows(tiny_model, 1, rng)[0]
    specs = chain2_dataset.specs()
    r0 = model.reward(tiny_model, w, specs[0])
    r1 = model.reward(tiny_model, w, specs[1])
    assert r0 != r1


def test_head_all_outputs_changes_feature_width(chain2_dataset):
    ds = chain2_dataset
    cfg = model.ModelConfig(obs_dim=ds.obs_dim, m=ds.m, K=3, embed_dim=16,
                            encoder_hidden=12, agg_layers=1, agg_heads=2,
                            head_hidden=10, head_all_outputs=True)
    params = model.init_params(cfg, ds.vocab, ds.specs(), RngStream(5).fork("init"))
    assert params.arrays["head.w1"].data.shape[0] == cfg.K * 16 + 16
    w = RngStream(12).fork("w").normal(size=(2, cfg.K, cfg.obs_dim))
    with no_grad():
        out = model.reward_batch(params, w, [0, 1]).data
    assert out.shape == (2,) and np.all(np.isfinite(out))


def test_no_aggregator_drops_attention_arrays(chain2_dataset):
    ds = chain2_dataset
    cfg = model.ModelConfig(obs_dim=ds.obs_dim, m=ds.m, K=3, embed_dim=16,
                            encoder_hidden=12, agg_layers=1, agg_heads=2,
                            head_hidden=10, use_aggregator=False)
    params = model.init_params(cfg, ds.vocab, ds.specs(), RngStream(5).fork("init"))
    names = model.param_names(params)
    assert not any("attn" in n for n in names)
    assert "cat.w" in names


# ---------------------------------------------------------------------------
# flat vector helpers


def test_params_vector_round_trip(tiny_model):
    params = model.clone_params(tiny_model)
    vec = model.params_vector(params)
    rng = RngStream(13).fork("vec")
    new = vec + rng.normal(size=vec.shape) * 0.01
    model.set_params_vector(params, new)
    np.testing.assert_array_equal(model.params_vector(params), new)
    with pytest.raises(ConfigurationError):
        model.set_params_vector(params, new[:-1])


def test_grads_vector_zero_without_backward(tiny_model):
    model.zero_grads(tiny_model)
    g = model.grads_vector(tiny_model)
    assert g.shape == model.params_vector(tiny_model).shape
    np.testing.assert_array_equal(g, 0.0)


# ---------------------------------------------------------------------------
# checkpoints


def test_checkpoint_round_trip(tiny_model, tmp_path):
    params = model.clone_params(tiny_model)
    params.normalize_factor = 3.25
    params.reward_center = -1.5
    params.thresholds = np.array([0.4, 0.6])
    path = tmp_path / "ckpt.json"
    model.save_checkpoint(params, path)
    loaded = model.load_checkpoint(path)

    assert loaded.config == params.config
    assert loaded.vocab == params.vocab
    assert [s.tokens for s in loaded.specs] == [s.tokens for s in params.specs]
    assert loaded.normalize_factor == 3.25
    assert loaded.reward_center == -1.5
    np.testing.assert_array_equal(loaded.thresholds, [0.4, 0.6])
    for name in model.param_names(params):
        np.testing.assert_array_equal(loaded.arrays[name].data, params.arrays[name].data)

    w = RngStream(14).fork("w").normal(size=(2, params.config.K, params.config.obs_dim))
    idx_a, sim_a = model.infer_subtask_batch(params, w, eta=0.01)
    idx_b, sim_b = model.infer_subtask_batch(loaded, w, eta=0.01)
    np.testing.assert_array_equal(idx_a, idx_b)
    np.testing.assert_array_equal(sim_a, sim_b)


def test_checkpoint_rejects_bad_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{ not json")
    with pytest.raises(ParseError, match="not valid JSON"):
        model.load_checkpoint(path)


def test_checkpoint_rejects_wrong_version(tiny_model, tmp_path):
    path = tmp_path / "ckpt.json"
    model.save_checkpoint(tiny_model, path)
    payload = json.loads(path.read_text())
    payload["version"] = 99
    path.write_text(json.dumps(payload))
    with pytest.raises(ParseError, match="version"):
        model.load_checkpoint(path)


def test_checkpoint_rejects_missing_array(tiny_model, tmp_path):
    path = tmp_path / "ckpt.json"
    model.save_checkpoint(tiny_model, path)
    payload = json.loads(path.read_text())
    del payload["arrays"]["head.w2"]
    path.write_text(json.dumps(payload))
    with pytest.raises(ParseError, match="missing array"):
        model.load_checkpoint(path)


def test_checkpoint_rejects_shape_mismatch(tiny_model, tmp_path):
    path = tmp_path / "ckpt.json"
    model.save_checkpoint(tiny_model, path)
    payload = json.loads(path.read_text())
    payload["arrays"]["head.b2"]["shape"] = [2]
    payload["arrays"]["head.b2"]["data"] = [0.0, 0.0]
    path.write_text(json.dumps(payload))
    with pytest.raises(ParseError, match="shape"):
        model.load_checkpoint(path)


def test_checkpoint_rejects_unknown_arrays(tiny_model, tmp_path):
    path = tmp_path / "ckpt.json"
    model.save_checkpoint(tiny_model, path)
    payload = json.loads(path.read_text())
    payload["arrays"]["mystery.w"] = {"shape": [1], "data": [0.0]}
    path.write_text(json.dumps(payload))
    with pytest.raises(ParseError, match="unknown arrays"):
        model.load_checkpoint(path)


def test_checkpoint_defaults_for_missing_optional_fields(tiny_model, tmp_path):
    path = tmp_path / "ckpt.json"
    model.save_checkpoint(tiny_model, path)
    payload = json.loads(path.read_text())
    del payload["normalize_factor"]
    del payload["reward_center"]
    path.write_text(json.dumps(payload))
    loaded = model.load_checkpoint(path)
    assert loaded.normalize_factor == 1.0
    assert loaded.reward_center == 0.0
