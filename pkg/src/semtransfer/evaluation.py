"""Policy Performance (PP) and Matching Distance (MD)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import OfflineDataset
from .envs import EnvConfig, Frame, SourceEnv, TargetEnv, oracle_f
from .translator import Translator, f_hat


@dataclass(frozen=True)
class OracleTranslator:
    """The true map F, optionally shifted by a constant vector."""

    offset: tuple[float, ...] | None = None

    def _shift(self, s: np.ndarray) -> np.ndarray:
        return s if self.offset is None else s + np.asarray(self.offset)


ORACLE = OracleTranslator()


@dataclass(frozen=True)
class EvalReport:
    pp_mean: float
    pp_std: float
    md: float
    n_episodes: int
    seed: int
    fingerprint: str = ""

    def __post_init__(self):
        if self.n_episodes < 1:
            raise ValueError("n_episodes must be >= 1")
        if not self.md >= 0:
            raise ValueError("matching distance must be nonnegative")


def evaluate(tr, policy, cfg: EnvConfig, held_out: OfflineDataset, n_episodes: int = 50,
             seed: int = 0, fingerprint: str = "") -> EvalReport:
    mean, std = policy_performance(tr, policy, cfg, n_episodes, seed)
    return EvalReport(mean, std, matching_distance(tr, held_out), n_episodes, seed, fingerprint)


def translate_frame(tr, frame: Frame) -> np.ndarray:
    if isinstance(tr, OracleTranslator):
        return tr._shift(oracle_f(frame))
    return f_hat(tr, frame.image)


def _episode_rng(seed: int, episode: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(episode)])


def _returns_summary(returns: list[float]) -> tuple[float, float]:
    r = np.asarray(returns, dtype=np.float64)
    return float(r.mean()), float(r.std())


def policy_performance(tr, policy, cfg: EnvConfig, n_episodes: int = 50,
                       seed: int = 0) -> tuple[float, float]:
    """Undiscounted return of ``policy(F_hat(image))`` in the target MDP.

    Episode ``e`` is reset from the stream ``(seed, e)``; policies that need
    randomness draw from the same stream after the reset.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    env = TargetEnv(cfg)
    returns = []
    for e in range(n_episodes):
        rng = _episode_rng(seed, e)
        frame = env.reset(rng)
        total, done, disc = 0.0, False, 1.0
        while not done:
            a = policy(translate_frame(tr, frame), rng)
            frame, r, done = env.step(a)
            total += disc * r
            disc *= cfg.gamma
        returns.append(total)
    return _returns_summary(returns)


def source_policy_performance(policy, cfg: EnvConfig, n_episodes: int = 50,
                              seed: int = 0) -> tuple[float, float]:
    """Same protocol as :func:`policy_performance`, run on semantics directly."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    env = SourceEnv(cfg)
    returns = []
    for e in range(n_episodes):
        rng = _episode_rng(seed, e)
        s = env.reset(rng)
        total, done, disc = 0.0, False, 1.0
        while not done:
            s, r, done = env.step(policy(s, rng))
            total += disc * r
            disc *= cfg.gamma
        returns.append(total)
    return _returns_summary(returns)


def predict_dataset(tr, held_out: OfflineDataset) -> np.ndarray:
    if isinstance(tr, OracleTranslator):
        return tr._shift(held_out.oracle(np.arange(len(held_out))))
    if isinstance(tr, Translator):
        return tr.predict(held_out.view().images)
    return np.stack([np.asarray(tr(img), dtype=np.float64) for img in held_out.view().images])


def matching_distance(tr, held_out: OfflineDataset) -> float:
    """Mean over records of ``||F(image) - F_hat(image)||^2``."""
    if len(held_out) == 0:
        raise ValueError("matching distance needs a nonempty dataset")
    truth = held_out.oracle(np.arange(len(held_out)))
    pred = predict_dataset(tr, held_out)
    return float(np.mean(np.sum((truth - pred) ** 2, axis=1)))
