"""Handcrafted source policies and behaviour policies for offline collection.

Every policy is called as ``policy(state, rng)`` and returns an action valid
for its environment. Handcrafted policies ignore ``rng``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envs import LEFT, LINE_SHOOTER, RIGHT, SHOOT, EnvConfig

REACH_KP = 10.0
REACH_KD = 5.0


def shooter_policy(s, cfg: EnvConfig) -> int:
    agent_x, enemy_x = s[0], s[1]
    if abs(agent_x - enemy_x) <= cfg.hit_radius:
        return SHOOT
    return RIGHT if enemy_x > agent_x else LEFT


def reach_policy(s, kp: float = REACH_KP, kd: float = REACH_KD) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    pos, vel, goal = s[0:2], s[2:4], s[4:6]
    return np.clip(kp * (goal - pos) - kd * vel, -1.0, 1.0)


def random_action(rng: np.random.Generator, cfg: EnvConfig):
    if cfg.discrete:
        return int(rng.integers(cfg.n_actions))
    return rng.uniform(-1.0, 1.0, size=cfg.action_dim)


@dataclass(frozen=True)
class Policy:
    """A policy selectable by id: ``handcrafted``, ``random`` or ``weak``."""

    policy_id: str
    cfg: EnvConfig
    mix: float = 0.5

    def __post_init__(self):
        if self.policy_id not in POLICY_IDS:
            raise ValueError(f"unknown policy {self.policy_id!r}; expected one of {POLICY_IDS}")
        if not 0.0 <= self.mix <= 1.0:
            raise ValueError("mix must lie in [0, 1]")

    def handcrafted(self, s):
        if self.cfg.env_id == LINE_SHOOTER:
            return shooter_policy(s, self.cfg)
        return reach_policy(s)

    def __call__(self, s, rng: np.random.Generator | None = None):
        if self.policy_id == "handcrafted":
            return self.handcrafted(s)
        if self.policy_id == "random":
            return random_action(rng, self.cfg)
        return weak_policy(s, rng, self.cfg, self.mix)


POLICY_IDS = ("handcrafted", "random", "weak")


def weak_policy(s, rng: np.random.Generator, cfg: EnvConfig, mix: float = 0.5):
    """Follow the handcrafted policy with probability ``mix``, else act randomly.

    One uniform draw decides the branch; the random branch then draws its own
    action, so ``mix=0`` reproduces :func:`random_action` only in distribution.
    """
    if rng.uniform() < mix:
        return Policy("handcrafted", cfg).handcrafted(s)
    return random_action(rng, cfg)


def make_policy(policy_id: str, cfg: EnvConfig, mix: float = 0.5) -> Policy:
    return Policy(policy_id, cfg, mix)
