"""VAE over flattened offline images; the encoder mean is the latent feature."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn

DEFAULT_LATENT_DIM = {"line_shooter": 8, "point_reach": 16}
# weight on the summed squared error; lower collapses the small PointReach goal blob
DEFAULT_RECON_WEIGHT = {"line_shooter": 3.0, "point_reach": 10.0}
TRUNK_WIDTH = 256
TRUNK_DEPTH = 3


@dataclass
class VaeEncoder:
    trunk: nn.DenseNet
    mean_head: nn.DenseNet
    logvar_head: nn.DenseNet
    image_shape: tuple[int, ...]

    def __post_init__(self):
        if self.mean_head.output_dim != self.logvar_head.output_dim:
            raise ValueError("mean and logvar heads must have equal output dims")
        self.image_shape = tuple(self.image_shape)

    @property
    def latent_dim(self) -> int:
        return self.mean_head.output_dim

    def nets(self) -> dict[str, nn.DenseNet]:
        return {"trunk": self.trunk, "mean": self.mean_head, "logvar": self.logvar_head}

    def params(self) -> list[np.ndarray]:
        return self.trunk.params() + self.mean_head.params() + self.logvar_head.params()


@dataclass
class VaeDecoder:
    net: nn.DenseNet
    image_shape: tuple[int, ...]

    def params(self) -> list[np.ndarray]:
        return self.net.params()


def build_vae(image_shape, latent_dim: int, rng: np.random.Generator, width: int = TRUNK_WIDTH,
              depth: int = TRUNK_DEPTH, activation: str = "relu",
              dtype=np.float32) -> tuple[VaeEncoder, VaeDecoder]:
    n_pix = int(np.prod(image_shape))
    trunk = nn.mlp(n_pix, [width] * (depth - 1), width, rng, activation, activation, dtype)
    mean = nn.mlp(width, [], latent_dim, rng, dtype=dtype)
    logvar = nn.mlp(width, [], latent_dim, rng, dtype=dtype)
    dec = nn.mlp(latent_dim, [width] * (depth - 1), n_pix, rng, activation, "identity", dtype)
    return VaeEncoder(trunk, mean, logvar, image_shape), VaeDecoder(dec, image_shape)


def _flatten(enc_or_shape, x) -> np.ndarray:
    shape = enc_or_shape.image_shape if hasattr(enc_or_shape, "image_shape") else enc_or_shape
    x = np.asarray(x)
    if x.shape == tuple(shape):
        return x.reshape(1, -1)
    if x.shape[1:] != tuple(shape):
        raise ValueError(f"image shape {x.shape} does not match encoder input {tuple(shape)}")
    return x.reshape(len(x), -1)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def vae_loss_and_grads(enc: VaeEncoder, dec: VaeDecoder, x_flat: np.ndarray,
                       eps: np.ndarray, beta: float = 1.0, recon_weight: float = 1.0):
    """Batch-mean ELBO loss with fixed reparameterisation noise ``eps``.

    Reconstruction is the per-image sum of squared pixel errors; KL is to
    N(0, I). Returns ``(total, recon, kl, grads)`` with ``grads`` ordered as
    ``enc.params() + dec.params()``.
    """
    n = x_flat.shape[0]
    h, c_trunk = nn.forward_cached(enc.trunk, x_flat)
    mu, c_mu = nn.forward_cached(enc.mean_head, h)
    lv, c_lv = nn.forward_cached(enc.logvar_head, h)
    std = np.exp(0.5 * lv)
    z = mu + std * eps
    logits, c_dec = nn.forward_cached(dec.net, z)
    xr = _sigmoid(logits)
    diff = xr - x_flat
    recon = float(recon_weight * np.sum(diff * diff) / n)
    kl = float(0.5 * np.sum(mu * mu + std * std - 1.0 - lv) / n)
    total = recon + beta * kl

    g_logits = (2.0 * recon_weight / n) * diff * xr * (1.0 - xr)
    g_dec, g_z = nn.backward_cached(dec.net, c_dec, g_logits)
    g_mu = g_z + (beta / n) * mu
    g_lv = 0.5 * g_z * eps * std + (beta / n) * 0.5 * (std * std - 1.0)
    g_mean, g_h1 = nn.backward_cached(enc.mean_head, c_mu, g_mu)
    g_logv, g_h2 = nn.backward_cached(enc.logvar_head, c_lv, g_lv)
    g_trunk, _ = nn.backward_cached(enc.trunk, c_trunk, g_h1 + g_h2, need_input_grad=False)
    return total, recon, kl, g_trunk + g_mean + g_logv + g_dec


@dataclass
class VaeTrace:
    total: list[float]
    recon: list[float]
    kl: list[float]
    min_step_kl: float


def train_vae(images: np.ndarray, latent_dim: int, epochs: int, rng: np.random.Generator,
              batch_size: int = 64, lr: float = 1e-3, beta: float = 1.0,
              width: int = TRUNK_WIDTH, recon_weight: float = 1.0, activation: str = "relu",
              dtype=np.float32) -> tuple[VaeEncoder, VaeDecoder, VaeTrace]:
    """Fit a VAE to every image of an offline dataset; returns per-epoch mean losses."""
    images = np.asarray(images)
    if len(images) == 0:
        raise ValueError("cannot train a VAE on an empty dataset")
    shape = images.shape[1:]
    enc, dec = build_vae(shape, latent_dim, rng, width=width, activation=activation, dtype=dtype)
    x_all = images.reshape(len(images), -1).astype(dtype)
    params = enc.params() + dec.params()
    opt = nn.Adam(lr=lr)
    trace = VaeTrace([], [], [], np.inf)
    for epoch in range(epochs):
        order = rng.permutation(len(x_all))
        sums = np.zeros(3)
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            xb = x_all[idx]
            eps = rng.standard_normal((len(idx), latent_dim)).astype(dtype)
            total, recon, kl, grads = vae_loss_and_grads(enc, dec, xb, eps, beta, recon_weight)
            if not np.isfinite(total):
                raise nn.NonFiniteError(f"VAE loss became non-finite at epoch {epoch}")
            trace.min_step_kl = min(trace.min_step_kl, kl)
            opt.step(params, grads)
            sums += np.array([total, recon, kl]) * len(idx)
        sums /= len(x_all)
        trace.total.append(float(sums[0]))
        trace.recon.append(float(sums[1]))
        trace.kl.append(float(sums[2]))
    return enc, dec, trace


def encode_mean(enc: VaeEncoder, x) -> np.ndarray:
    """Posterior mean for one image (vector) or a batch of images (matrix)."""
    single = np.asarray(x).shape == enc.image_shape
    mu = nn.forward(enc.mean_head, nn.forward(enc.trunk, _flatten(enc, x)))
    mu = mu.astype(np.float64)
    return mu[0] if single else mu


def encode_batched(enc: VaeEncoder, images: np.ndarray, chunk: int = 1024) -> np.ndarray:
    if len(images) == 0:
        return np.zeros((0, enc.latent_dim))
    return np.concatenate([encode_mean(enc, images[i:i + chunk])
                           for i in range(0, len(images), chunk)])


def reconstruct(enc: VaeEncoder, dec: VaeDecoder, x) -> np.ndarray:
    mu = encode_mean(enc, x)
    out = _sigmoid(nn.forward(dec.net, np.atleast_2d(mu).astype(dec.net.dtype)))
    return out.reshape(-1, *dec.image_shape)


def latent_distance(enc: VaeEncoder, x_p, x_q) -> float:
    return float(np.linalg.norm(encode_mean(enc, x_p) - encode_mean(enc, x_q)))


def save_vae(path, enc: VaeEncoder, dec: VaeDecoder | None = None, meta: dict | None = None) -> None:
    nets = dict(enc.nets())
    if dec is not None:
        nets["decoder"] = dec.net
    nn.save_nets(path, nets, {"image_shape": list(enc.image_shape), **(meta or {})})


def load_vae(path) -> tuple[VaeEncoder, VaeDecoder | None, dict]:
    nets, meta = nn.load_nets(path)
    shape = tuple(meta["image_shape"])
    enc = VaeEncoder(nets["trunk"], nets["mean"], nets["logvar"], shape)
    dec = VaeDecoder(nets["decoder"], shape) if "decoder" in nets else None
    return enc, dec, meta
