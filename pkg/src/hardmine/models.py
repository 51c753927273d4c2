"""Generator/encoder (VAE) and target networks built on :mod:`hardmine.autodiff`."""

from __future__ import annotations

import contextlib
import enum
import json
from pathlib import Path

import numpy as np

from hardmine import autodiff as ad
from hardmine.autodiff import ShapeError, Tensor
from hardmine.optim import Adam

CHECKPOINT_VERSION = 1


class LossKind(str, enum.Enum):
    CROSS_ENTROPY = "cross_entropy"
    MSE = "mean_squared_error"
    VAE_ELBO = "vae_elbo"


class Linear:
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None = None, zero: bool = False):
        if zero or rng is None:
            w = np.zeros((n_in, n_out))
        else:
            # He-uniform; every layer here is followed by relu or a head
            bound = np.sqrt(6.0 / n_in)
            w = rng.uniform(-bound, bound, size=(n_in, n_out))
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(n_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias

    @property
    def n_in(self) -> int:
        return self.weight.shape[0]

    @property
    def n_out(self) -> int:
        return self.weight.shape[1]


class _Module:
    """Shared parameter plumbing: listing, freezing, checksums, (de)serialization."""

    kind = "module"

    def parameters(self) -> list[Tensor]:
        raise NotImplementedError

    def config(self) -> dict:
        raise NotImplementedError

    @contextlib.contextmanager
    def frozen(self):
        """Temporarily exclude all parameters from the autodiff graph."""
        params = self.parameters()
        saved = [p.requires_grad for p in params]
        for p in params:
            p.requires_grad = False
        try:
            yield self
        finally:
            for p, flag in zip(params, saved):
                p.requires_grad = flag

    def checksum(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for p in self.parameters():
            h.update(p.values.tobytes())
            if p.grad is not None:
                h.update(p.grad.tobytes())
        return h.hexdigest()

    def get_arrays(self) -> list[np.ndarray]:
        return [p.values.copy() for p in self.parameters()]

    def set_arrays(self, arrays: list[np.ndarray]) -> None:
        params = self.parameters()
        if len(arrays) != len(params):
            raise ShapeError(f"expected {len(params)} arrays, got {len(arrays)}")
        for p, a in zip(params, arrays):
            if a.shape != p.shape:
                raise ShapeError(f"parameter shape {p.shape} vs stored {a.shape}")
            p.values = np.array(a, dtype=np.float64)
            p.grad = None


def _as_batch(x, width: int, what: str) -> Tensor:
    x = ad.as_tensor(x)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.ndim != 2 or x.shape[1] != width:
        raise ShapeError(f"{what}: expected width {width}, got shape {x.shape}")
    return x


class VaeModel(_Module):
    """Fully connected VAE: encoder in->h->h->{mean, logvar}, decoder n->h->h->in (sigmoid)."""

    kind = "vae"

    def __init__(self, input_dim: int, latent_dim: int = 3, hidden: int = 64,
                 rng: np.random.Generator | None = None, zero: bool = False):
        if min(input_dim, latent_dim, hidden) < 1:
            raise ValueError("VAE dimensions must be positive")
        self.input_dim = input_dim
        self.latent_dim = latent_dim
        self.hidden = hidden
        self.enc1 = Linear(input_dim, hidden, rng, zero)
        self.enc2 = Linear(hidden, hidden, rng, zero)
        self.mean_head = Linear(hidden, latent_dim, rng, zero)
        self.logvar_head = Linear(hidden, latent_dim, rng, zero)
        self.dec1 = Linear(latent_dim, hidden, rng, zero)
        self.dec2 = Linear(hidden, hidden, rng, zero)
        self.dec_out = Linear(hidden, input_dim, rng, zero)

    def _layers(self) -> list[Linear]:
        return [self.enc1, self.enc2, self.mean_head, self.logvar_head, self.dec1, self.dec2, self.dec_out]

    def parameters(self) -> list[Tensor]:
        return [t for layer in self._layers() for t in (layer.weight, layer.bias)]

    def config(self) -> dict:
        return {"input_dim": self.input_dim, "latent_dim": self.latent_dim, "hidden": self.hidden}

    def encode(self, x) -> tuple[Tensor, Tensor]:
        x = _as_batch(x, self.input_dim, "vae_encode")
        h = ad.relu(self.enc2(ad.relu(self.enc1(x))))
        return self.mean_head(h), self.logvar_head(h)

    def decode(self, z) -> Tensor:
        z = _as_batch(z, self.latent_dim, "vae_decode")
        h = ad.relu(self.dec2(ad.relu(self.dec1(z))))
        return ad.sigmoid(self.dec_out(h))

    __call__ = decode

    def embed(self, x) -> np.ndarray:
        """Deterministic latent position (mean head) as a plain array."""
        with self.frozen():
            mean, _ = self.encode(x)
        return mean.values

    def loss(self, batch, rng: np.random.Generator, kl_weight: float = 1.0) -> tuple[Tensor, Tensor, Tensor]:
        """ELBO pieces ``(total, recon, kl)``, each averaged over the batch.

        ``recon`` is the per-sample sum of squared errors with the
        reparameterized sample ``z = mean + exp(logvar / 2) * eps``, and
        ``total = recon + kl_weight * kl``. Inputs scaled to [0, 1] have small
        variance, so a KL weight below 1 is usually needed to keep the latent
        informative.
        """
        x = _as_batch(batch, self.input_dim, "vae_loss")
        if x.shape[0] == 0:
            raise ValueError("vae_loss: empty batch")
        mean, logvar = self.encode(x)
        eps = rng.standard_normal(mean.shape)
        z = mean + ad.exp(logvar * 0.5) * eps
        diff = self.decode(z) - x.values
        recon = ad.mean(ad.tsum(diff * diff, axis=1))
        kl = kl_divergence(mean, logvar)
        total = recon + kl if kl_weight == 1.0 else recon + kl * kl_weight
        return total, recon, kl


def kl_divergence(mean: Tensor, logvar: Tensor) -> Tensor:
    """KL(N(mean, exp(logvar)) || N(0, I)) summed over latents, averaged over rows."""
    terms = ad.exp(logvar) + mean * mean - 1.0 - logvar
    return ad.mean(ad.tsum(terms, axis=1)) * 0.5


class TargetModel(_Module):
    """MLP target network with a classifier-logit or sigmoid dense-map head."""

    kind = "target"

    def __init__(self, input_dim: int, hidden: list[int] | tuple[int, ...], output_dim: int,
                 head: str = "classifier", rng: np.random.Generator | None = None, zero: bool = False):
        if head not in ("classifier", "dense"):
            raise ValueError(f"unknown head {head!r}")
        self.input_dim = input_dim
        self.hidden = list(hidden)
        self.output_dim = output_dim
        self.head = head
        widths = [input_dim, *self.hidden, output_dim]
        self.layers = [Linear(a, b, rng, zero) for a, b in zip(widths[:-1], widths[1:])]

    @property
    def loss_kind(self) -> LossKind:
        return LossKind.CROSS_ENTROPY if self.head == "classifier" else LossKind.MSE

    def parameters(self) -> list[Tensor]:
        return [t for layer in self.layers for t in (layer.weight, layer.bias)]

    def config(self) -> dict:
        return {"input_dim": self.input_dim, "hidden": self.hidden,
                "output_dim": self.output_dim, "head": self.head}

    def __call__(self, x) -> Tensor:
        h = _as_batch(x, self.input_dim, "target_forward")
        for layer in self.layers[:-1]:
            h = ad.relu(layer(h))
        out = self.layers[-1](h)
        return out if self.head == "classifier" else ad.sigmoid(out)

    def predict(self, x) -> np.ndarray:
        with self.frozen():
            return self(x).values


def task_loss(kind: LossKind | str, prediction: Tensor, y, reduction: str = "mean") -> Tensor:
    kind = LossKind(kind)
    if kind is LossKind.CROSS_ENTROPY:
        return ad.cross_entropy(prediction, y, reduction=reduction)
    if kind is LossKind.MSE:
        return ad.mse(prediction, y, reduction=reduction)
    raise ValueError(f"{kind.value} is not a task loss")


def train_vae(vae: VaeModel, inputs: np.ndarray, steps: int, batch_size: int = 64,
              lr: float = 1e-3, rng: np.random.Generator | None = None,
              kl_weight: float = 1.0) -> list[float]:
    """Fit the VAE on unlabeled inputs; returns the total-loss history."""
    rng = rng if rng is not None else np.random.default_rng(0)
    inputs = np.asarray(inputs, dtype=np.float64)
    opt = Adam(vae.parameters(), lr=lr)
    history = []
    n = inputs.shape[0]
    order = rng.permutation(n)
    pos = 0
    for _ in range(steps):
        if pos + batch_size > n:
            order = rng.permutation(n)
            pos = 0
        idx = order[pos:pos + batch_size]
        pos += batch_size
        total, _, _ = vae.loss(inputs[idx], rng, kl_weight)
        params = vae.parameters()
        opt.step(ad.grad(total, params))
        history.append(total.item())
    return history


# -- checkpoints ------------------------------------------------------------


def save_model(model: _Module, path: str | Path) -> None:
    meta = {"version": CHECKPOINT_VERSION, "kind": model.kind, "config": model.config()}
    arrays = {f"param_{i:03d}": a for i, a in enumerate(model.get_arrays())}
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_model(path: str | Path) -> _Module:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        keys = sorted(k for k in data.files if k.startswith("param_"))
        arrays = [data[k] for k in keys]
    cls = {"vae": VaeModel, "target": TargetModel}[meta["kind"]]
    model = cls(**meta["config"], zero=True)
    model.set_arrays(arrays)
    return model
