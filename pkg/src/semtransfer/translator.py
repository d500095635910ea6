"""Image-to-semantics translator: a regression head over frozen VAE means."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from .dataset import OfflineDataset, PairedDataset
from .pairing import NoiseConfig, annotate
from .representation import VaeEncoder, encode_batched, encode_mean, load_vae

HEAD_WIDTH = 128
HEAD_LAYERS = 4
HEAD_EPOCHS = 300
HEAD_LR = 1e-3
BATCH_SIZE = 64


@dataclass
class Translator:
    encoder: VaeEncoder
    head: nn.DenseNet

    def __post_init__(self):
        if self.head.input_dim != self.encoder.latent_dim:
            raise ValueError("head input must match the encoder latent dimension")

    @property
    def dim_sigma(self) -> int:
        return self.head.output_dim

    def predict_latents(self, z: np.ndarray) -> np.ndarray:
        return nn.forward(self.head, z)

    def predict(self, images: np.ndarray) -> np.ndarray:
        return self.predict_latents(encode_batched(self.encoder, images))


def f_hat(tr: Translator, image) -> np.ndarray:
    return nn.forward(tr.head, encode_mean(tr.encoder, image))


def pair_loss(tr: Translator, pairs: PairedDataset) -> float:
    """Mean over pairs of ``||semantics - F_hat(image)||^2``."""
    pred = tr.predict(pairs.images)
    return float(np.mean(np.sum((pairs.semantics - pred) ** 2, axis=1)))


def build_head(latent_dim: int, dim_sigma: int, rng: np.random.Generator,
               width: int = HEAD_WIDTH, n_layers: int = HEAD_LAYERS) -> nn.DenseNet:
    return nn.mlp(latent_dim, [width] * (n_layers - 1), dim_sigma, rng, "tanh", "identity")


def train_head(z: np.ndarray, y: np.ndarray, head: nn.DenseNet, epochs: int,
               rng: np.random.Generator, lr: float = HEAD_LR,
               batch_size: int = BATCH_SIZE) -> list[float]:
    """Adam on the mean squared norm; returns full-set loss before and after each epoch."""
    opt = nn.Adam(lr=lr)
    params = head.params()
    trace = [nn.mse_loss(nn.forward(head, z), y)[0]]
    for epoch in range(epochs):
        order = rng.permutation(len(z))
        for start in range(0, len(z), batch_size):
            idx = order[start:start + batch_size]
            out, cache = nn.forward_cached(head, z[idx])
            loss, g = nn.mse_loss(out, y[idx])
            if not np.isfinite(loss):
                raise nn.NonFiniteError(f"head loss became non-finite at epoch {epoch}")
            grads, _ = nn.backward_cached(head, cache, g, need_input_grad=False)
            opt.step(params, grads)
        trace.append(nn.mse_loss(nn.forward(head, z), y)[0])
    return trace


def train_translator(enc: VaeEncoder, pairs: PairedDataset, epochs: int,
                     rng: np.random.Generator, lr: float = HEAD_LR,
                     width: int = HEAD_WIDTH) -> tuple[Translator, list[float]]:
    """Fit the head on ``pairs``; the encoder is only read, never updated."""
    if len(pairs) == 0:
        raise ValueError("cannot train a translator on an empty pair set")
    z = encode_batched(enc, pairs.images)
    y = np.asarray(pairs.semantics, dtype=np.float64)
    head = build_head(enc.latent_dim, y.shape[1], rng, width)
    trace = train_head(z, y, head, epochs, rng, lr)
    return Translator(enc, head), trace


def baseline_crar_indices(n_records: int, budget: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform sample without replacement over all timesteps."""
    if not 0 <= budget <= n_records:
        raise ValueError(f"budget {budget} must lie in [0, {n_records}]")
    return rng.choice(n_records, size=budget, replace=False).astype(np.int64)


def train_baseline_crar(enc: VaeEncoder, ds: OfflineDataset, budget: int, noise: NoiseConfig,
                        rng: np.random.Generator, epochs: int = HEAD_EPOCHS,
                        ) -> tuple[Translator, PairedDataset, list[float]]:
    """Baseline: annotate uniformly chosen timesteps, no augmentation."""
    idx = baseline_crar_indices(len(ds), budget, rng)
    pairs, _ = annotate(ds, idx, noise, starts_only=False)
    tr, trace = train_translator(enc, pairs, epochs, rng)
    return tr, pairs, trace


def save_translator(path, tr: Translator, encoder_path=None, meta: dict | None = None) -> None:
    """Head in the model format plus a JSON manifest pointing at the encoder."""
    path = Path(path)
    nn.save_nets(path, {"head": tr.head}, meta or {})
    manifest = {"head": path.name, "encoder": str(encoder_path) if encoder_path else None,
                "latent_dim": tr.encoder.latent_dim, "dim_sigma": tr.dim_sigma}
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_translator(path, enc: VaeEncoder | None = None) -> Translator:
    path = Path(path)
    nets, _ = nn.load_nets(path)
    if enc is None:
        manifest = json.loads(path.with_suffix(".json").read_text())
        if not manifest.get("encoder"):
            raise ValueError(f"{path}: manifest names no encoder artifact")
        enc, _, _ = load_vae(manifest["encoder"])
    return Translator(enc, nets["head"])
