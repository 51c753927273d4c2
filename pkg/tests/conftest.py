import functools

import numpy as np
import pytest

from hardmine import autodiff as ad
from hardmine.config import ExperimentConfig
from hardmine.models import TargetModel
from hardmine.optim import Adam
from hardmine.trainer import build_task, pretrain_vae


@functools.lru_cache(maxsize=None)
def trained_blobs(latent_dim=2, seed=0, steps=150):
    """Small blobs task with a pretrained VAE and a partly trained classifier.

    The classifier is trained on 60 samples only, so it still makes mistakes
    and latent gradients are informative.
    """
    cfg = ExperimentConfig(n_train=400, n_test=200, latent_dim=latent_dim, vae_steps=800, vae_hidden=32,
                           seeds=[seed])
    task = build_task(cfg)
    vae = pretrain_vae(cfg, seed, task.train)
    rng = np.random.default_rng(seed)
    F = TargetModel(task.train.input_dim, [32, 32], task.output_dim, rng=rng)
    opt = Adam(F.parameters(), lr=3e-3)
    pos = rng.choice(len(task.train), 60, replace=False)
    x, y = task.train.inputs[pos], task.train.labels[pos]
    for _ in range(steps):
        loss = ad.cross_entropy(F(x), y)
        opt.step(ad.grad(loss, F.parameters()))
    return cfg, task, vae, F


@pytest.fixture
def blobs2d():
    return trained_blobs(2)


@pytest.fixture
def blobs3d():
    return trained_blobs(3)
