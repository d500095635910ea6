"""Annotation at episode starts, pair augmentation through the simulator, and
the annotation/transition error models.

Noise draws come from per-episode streams keyed on ``(seed, kind, start)``:
the same episode receives the same standard-normal draws regardless of the
noise scale or of which other episodes are selected, so sweeps over ``alpha``
are common-random-number comparisons.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import envs
from .dataset import ANNOTATED, AUGMENTED, OfflineDataset, PairedDataset, episode_starts

_ANNOTATION_STREAM = 1
_TRANSITION_STREAM = 2


@dataclass(frozen=True)
class NoiseConfig:
    alpha_annotation: float = 0.0
    alpha_transition: float = 0.0
    std: tuple[float, ...] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.alpha_annotation < 0 or self.alpha_transition < 0:
            raise ValueError("noise scales must be nonnegative")
        if self.std is not None:
            std = np.asarray(self.std, dtype=np.float64)
            if not np.all(np.isfinite(std)) or np.any(std < 0):
                raise ValueError("per-dimension std must be finite and nonnegative")
            object.__setattr__(self, "std", tuple(float(x) for x in std))
        elif self.alpha_annotation > 0 or self.alpha_transition > 0:
            raise ValueError("nonzero noise needs the per-dimension std of a source trajectory")

    def scale(self, alpha: float, dim: int) -> np.ndarray:
        if alpha == 0:
            return np.zeros(dim)
        return alpha * np.asarray(self.std, dtype=np.float64)


def semantic_std(trajectory) -> np.ndarray:
    """Per-dimension sample standard deviation (divisor n - 1)."""
    traj = np.asarray(trajectory, dtype=np.float64)
    if traj.ndim != 2 or len(traj) < 2:
        raise ValueError("need at least two states to estimate a standard deviation")
    return traj.std(axis=0, ddof=1)


def _stream(seed: int, kind: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), kind, int(index)])


def annotate(ds: OfflineDataset, indices, noise: NoiseConfig = NoiseConfig(),
             starts_only: bool = True) -> tuple[PairedDataset, np.ndarray]:
    """Query the annotator at ``indices``; returns P and the per-pair errors.

    With ``starts_only`` every index must be an episode start (the proposed
    method); the baseline annotates arbitrary timesteps.
    """
    idx = np.asarray(list(indices), dtype=np.int64)
    if starts_only and len(idx):
        starts = set(episode_starts(ds).starts.tolist())
        bad = [int(i) for i in idx if int(i) not in starts]
        if bad:
            raise ValueError(f"indices {bad[:5]} are not episode starts")
    if len(idx) and (idx.min() < 0 or idx.max() >= len(ds)):
        raise IndexError("annotation index out of range")
    dim = ds.env.dim_sigma
    scale = noise.scale(noise.alpha_annotation, dim)
    errors = np.zeros((len(idx), dim))
    if noise.alpha_annotation > 0:
        for k, i in enumerate(idx):
            errors[k] = scale * _stream(noise.seed, _ANNOTATION_STREAM, i).standard_normal(dim)
    sem = ds.oracle(idx) + errors
    pairs = PairedDataset(sem, ds.images[idx].copy(), np.full(len(idx), ANNOTATED, np.int64),
                          idx.copy())
    return pairs, errors


def augment(pairs: PairedDataset, ds: OfflineDataset, noise: NoiseConfig = NoiseConfig(),
            errors: np.ndarray | None = None, transition=None) -> PairedDataset:
    """Roll annotated episode starts forward along the logged actions.

    For a start ``i`` with annotation error ``e_i`` the pair at offset ``t`` is
    ``(s_hat[i+t] + e_i + sum_{j<=t} d_{i,j}, image[i+t])`` where ``s_hat`` is
    the error-free chain through ``transition`` and ``d`` the transition error.
    """
    cfg = ds.env
    step = transition or (lambda s, a: envs.tr_sigma(s, a, cfg))
    index = episode_starts(ds)
    dim = cfg.dim_sigma
    if errors is None:
        errors = np.zeros((len(pairs), dim))
    scale = noise.scale(noise.alpha_transition, dim)
    sem_out, img_idx = [], []
    for k in range(len(pairs)):
        if pairs.provenance[k] != ANNOTATED:
            continue
        i = int(pairs.source_index[k])
        n_steps = int(index.lengths[index.position(i)])
        if i + n_steps >= len(ds) or ds.end_flags[i + n_steps] != 1:
            raise RuntimeError(f"episode starting at {i} overruns its boundary")
        s_hat = pairs.semantics[k] - errors[k]
        drift = np.zeros(dim)
        rng = _stream(noise.seed, _TRANSITION_STREAM, i) if noise.alpha_transition > 0 else None
        for t in range(1, n_steps + 1):
            s_hat = step(s_hat, envs.row_to_action(ds.actions[i + t - 1], cfg))
            if rng is not None:
                drift = drift + scale * rng.standard_normal(dim)
            sem_out.append(s_hat + errors[k] + drift)
            img_idx.append(i + t)
    if not sem_out:
        return PairedDataset.empty(dim, cfg.image_shape)
    img_idx = np.asarray(img_idx, dtype=np.int64)
    return PairedDataset(np.stack(sem_out), ds.images[img_idx].copy(),
                         np.full(len(img_idx), AUGMENTED, np.int64), img_idx)
