"""Shared fixtures and the tensor-level gradient check helper.

The heavy acceptance fixtures (full default training runs) live in
test_acceptance.py; here we keep only small objects that several unit test
modules want: a tiny chain2 dataset and a tiny randomly initialized model.
"""

import numpy as np
import pytest

from segreward import data, env, model
from segreward.numerics import grad_check
from segreward.rng import RngStream


def tensor_grad_check(build, tensors, coords=None, step=1e-5):
    """Run numerics.grad_check over a list of leaf Tensors.

    `build` must construct and return a scalar Tensor from the current
    contents of `tensors`. The tensors are flattened into one parameter
    vector, perturbed coordinate by coordinate, and the analytic gradient
    from backward() is compared against central differences.
    """
    sizes = [t.data.size for t in tensors]
    shapes = [t.data.shape for t in tensors]

    def fn(vec):
        offset = 0
        for t, size, shape in zip(tensors, sizes, shapes):
            t.data = vec[offset:offset + size].reshape(shape).copy()
            t.grad = None
            offset += size
        out = build()
        out.backward()
        grads = []
        for t in tensors:
            g = t.grad if t.grad is not None else np.zeros_like(t.data)
            grads.append(np.asarray(g, dtype=float).reshape(-1))
        return float(out.data), np.concatenate(grads)

    flat = np.concatenate([t.data.reshape(-1) for t in tensors]).astype(float)
    return grad_check(fn, flat, step=step, coords=coords)


@pytest.fixture(scope="session")
def chain2_config():
    return env.make_task("chain2", max_steps=150)


@pytest.fixture(scope="session")
def chain2_dataset(chain2_config):
    trajs = data.collect_demos(chain2_config, env.make_expert_policy(), 6,
                               RngStream(11).fork("demos"))
    return data.make_dataset(chain2_config, trajs)


@pytest.fixture(scope="session")
def tiny_model(chain2_dataset):
    """Random-init model small enough for per-test gradient checks."""
    ds = chain2_dataset
    cfg = model.ModelConfig(obs_dim=ds.obs_dim, m=ds.m, K=3, embed_dim=16,
                            encoder_hidden=12, agg_layers=1, agg_heads=2,
                            head_hidden=10)
    return model.init_params(cfg, ds.vocab, ds.specs(), RngStream(5).fork("init"))
