"""Source/target MDP pair: semantic dynamics plus a deterministic renderer.

Two environments are provided:

``line_shooter``
    Discrete actions {0: left, 1: right, 2: shoot}. Semantics are
    ``[agent_x, enemy_x]``. The enemy is static; shooting within
    ``hit_radius`` of the enemy ends the episode with reward ``T - t``.

``point_reach``
    Continuous 2-D acceleration in ``[-1, 1]^2``. Semantics are
    ``[pos_x, pos_y, vel_x, vel_y, goal_x, goal_y]``. Fixed-length episodes
    with reward ``-||pos - goal||`` each step. Observations stack the current
    and previous frame so velocity is recoverable from pixels.

The target MDP shares the transition and reward functions with the source
MDP; it only differs in what the agent observes, so the transition and
reward conditions hold exactly.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

LINE_SHOOTER = "line_shooter"
POINT_REACH = "point_reach"
ENV_IDS = (LINE_SHOOTER, POINT_REACH)

LEFT, RIGHT, SHOOT = 0, 1, 2

BLOB_SIGMA_PX = 1.5
AGENT_INTENSITY = 1.0
GOAL_INTENSITY = 0.6
VEL_LIMIT = 0.1
PIXEL_FLOOR = 1e-12


@dataclass(frozen=True)
class EnvConfig:
    env_id: str = LINE_SHOOTER
    horizon: int = 50
    move_delta: float = 0.05
    hit_radius: float = 0.05
    dt: float = 1.0
    accel_gain: float = 0.01
    drag: float = 0.9
    gamma: float = 1.0
    width: int = 32
    height: int = 32
    blob_sigma_px: float = BLOB_SIGMA_PX

    def __post_init__(self):
        if self.env_id not in ENV_IDS:
            raise ValueError(f"unknown env_id {self.env_id!r}; expected one of {ENV_IDS}")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.move_delta <= 0 or self.hit_radius <= 0:
            raise ValueError("move_delta and hit_radius must be positive")
        if self.width < 4 or self.height < 4:
            raise ValueError("image must be at least 4x4")
        if self.blob_sigma_px <= 0:
            raise ValueError("blob_sigma_px must be positive")

    @property
    def dim_sigma(self) -> int:
        return 2 if self.env_id == LINE_SHOOTER else 6

    @property
    def discrete(self) -> bool:
        return self.env_id == LINE_SHOOTER

    @property
    def n_actions(self) -> int:
        """Number of discrete actions, or the continuous action dimension."""
        return 3 if self.discrete else 2

    @property
    def action_dim(self) -> int:
        return 1 if self.discrete else 2

    @property
    def frame_count(self) -> int:
        return 1 if self.env_id == LINE_SHOOTER else 2

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return (self.height, self.width, self.frame_count)

    def to_dict(self) -> dict:
        return asdict(self)


def make_config(env_id: str, **overrides) -> EnvConfig:
    """Per-environment defaults, optionally overridden."""
    if env_id == LINE_SHOOTER:
        base = EnvConfig(env_id=LINE_SHOOTER, horizon=50)
    elif env_id == POINT_REACH:
        base = EnvConfig(env_id=POINT_REACH, horizon=40)
    else:
        raise ValueError(f"unknown env_id {env_id!r}")
    return replace(base, **overrides) if overrides else base


def _check_state(s, cfg: EnvConfig) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if s.shape != (cfg.dim_sigma,):
        raise ValueError(f"{cfg.env_id} expects a state of shape ({cfg.dim_sigma},), got {s.shape}")
    return s


def check_action(a, cfg: EnvConfig):
    """Validate and normalise an action: ``int`` for discrete, clipped array otherwise."""
    if cfg.discrete:
        a_int = int(np.asarray(a).reshape(-1)[0]) if np.ndim(a) else int(a)
        if not 0 <= a_int < cfg.n_actions:
            raise ValueError(f"discrete action {a_int} outside 0..{cfg.n_actions - 1}")
        return a_int
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    if a.shape != (cfg.action_dim,):
        raise ValueError(f"continuous action must have {cfg.action_dim} entries, got {a.shape}")
    return np.clip(a, -1.0, 1.0)


def action_to_row(a, cfg: EnvConfig) -> np.ndarray:
    """Actions as float64 rows for storage."""
    a = check_action(a, cfg)
    return np.array([a], dtype=np.float64) if cfg.discrete else a.astype(np.float64)


def row_to_action(row: np.ndarray, cfg: EnvConfig):
    return int(row[0]) if cfg.discrete else np.asarray(row, dtype=np.float64)


def tr_sigma(s, a, cfg: EnvConfig) -> np.ndarray:
    """Deterministic source transition."""
    s = _check_state(s, cfg)
    a = check_action(a, cfg)
    if cfg.env_id == LINE_SHOOTER:
        agent_x, enemy_x = s
        if a == LEFT:
            agent_x = agent_x - cfg.move_delta
        elif a == RIGHT:
            agent_x = agent_x + cfg.move_delta
        return np.array([min(max(agent_x, 0.0), 1.0), enemy_x])
    pos, vel, goal = s[0:2], s[2:4], s[4:6]
    vel = np.clip(cfg.drag * vel + cfg.accel_gain * a, -VEL_LIMIT, VEL_LIMIT)
    pos = np.clip(pos + cfg.dt * vel, 0.0, 1.0)
    return np.concatenate([pos, vel, goal])


def is_hit(s, a, cfg: EnvConfig) -> bool:
    if cfg.env_id != LINE_SHOOTER:
        return False
    return check_action(a, cfg) == SHOOT and abs(s[0] - s[1]) <= cfg.hit_radius


def reward(s_next, a, s, t: int, cfg: EnvConfig) -> float:
    """Reward of the transition ``s --a--> s_next`` taken at timestep ``t``."""
    s_next = _check_state(s_next, cfg)
    s = _check_state(s, cfg)
    if cfg.env_id == LINE_SHOOTER:
        return float(cfg.horizon - t) if is_hit(s, a, cfg) else 0.0
    return -float(np.linalg.norm(s_next[0:2] - s_next[4:6]))


def is_terminal(s_next, a, s, t: int, cfg: EnvConfig) -> bool:
    """Episode end after the transition at timestep ``t`` (hit or horizon)."""
    return is_hit(np.asarray(s, dtype=np.float64), a, cfg) or t + 1 >= cfg.horizon


def reset(rng: np.random.Generator, cfg: EnvConfig) -> np.ndarray:
    if cfg.env_id == LINE_SHOOTER:
        return np.array([0.5, rng.uniform(0.0, 1.0)])
    pos = rng.uniform(0.0, 1.0, size=2)
    goal = rng.uniform(0.0, 1.0, size=2)
    return np.concatenate([pos, np.zeros(2), goal])


# -- rendering ---------------------------------------------------------------

def _profile(center_px: float, n: int, sigma: float) -> np.ndarray:
    # pixel j covers [j, j+1); sample at its centre
    x = np.arange(n, dtype=np.float64) + 0.5
    return np.exp(-0.5 * ((x - center_px) / sigma) ** 2)


def _shooter_frame(s: np.ndarray, cfg: EnvConfig) -> np.ndarray:
    h, w = cfg.height, cfg.width
    img = np.zeros((h, w), dtype=np.float64)
    band = h // 3
    sig = cfg.blob_sigma_px
    img[:band, :] = _profile(s[1] * w, w, sig)[None, :]
    img[h - band:, :] = _profile(s[0] * w, w, sig)[None, :]
    return img


def _reach_frame(s: np.ndarray, cfg: EnvConfig) -> np.ndarray:
    h, w = cfg.height, cfg.width
    sig = cfg.blob_sigma_px
    agent = np.outer(_profile(s[1] * h, h, sig), _profile(s[0] * w, w, sig))
    goal = np.outer(_profile(s[5] * h, h, sig), _profile(s[4] * w, w, sig))
    return np.maximum(AGENT_INTENSITY * agent, GOAL_INTENSITY * goal)


def render(s, s_prev, cfg: EnvConfig) -> np.ndarray:
    """Render semantics to an ``(H, W, C)`` float32 image in [0, 1].

    ``point_reach`` stacks ``[frame(s), frame(s_prev)]`` on the channel axis;
    pass ``s_prev=s`` at the start of an episode. ``line_shooter`` ignores
    ``s_prev``.
    """
    s = _check_state(s, cfg)
    if cfg.env_id == LINE_SHOOTER:
        frames = [_shooter_frame(s, cfg)]
    else:
        prev = s if s_prev is None else _check_state(s_prev, cfg)
        frames = [_reach_frame(s, cfg), _reach_frame(prev, cfg)]
    img = np.clip(np.stack(frames, axis=-1), 0.0, 1.0)
    # far blob tails would be float32 denormals, which slow every matmul downstream
    img[img < PIXEL_FLOOR] = 0.0
    return img.astype(np.float32)


# -- rollouts ----------------------------------------------------------------

@dataclass(frozen=True)
class Frame:
    """A target-MDP observation. ``truth`` is the annotator channel."""

    image: np.ndarray
    truth: np.ndarray = field(repr=False)


def oracle_f(record) -> np.ndarray:
    """The true image-to-semantics map, available because we own the renderer.

    Accepts anything carrying a hidden ``truth`` vector (a :class:`Frame` or a
    dataset record).
    """
    truth = getattr(record, "truth", None)
    if truth is None:
        raise ValueError("record carries no ground-truth semantics")
    return np.array(truth, dtype=np.float64)


class SourceEnv:
    """Source MDP: the agent observes semantics directly."""

    def __init__(self, cfg: EnvConfig):
        self.cfg = cfg
        self.state: np.ndarray | None = None
        self.t = 0

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self.state = reset(rng, self.cfg)
        self.t = 0
        return self.state.copy()

    def step(self, a):
        s = self.state
        s_next = tr_sigma(s, a, self.cfg)
        r = reward(s_next, a, s, self.t, self.cfg)
        done = is_terminal(s_next, a, s, self.t, self.cfg)
        self.state = s_next
        self.t += 1
        return s_next.copy(), r, done


class TargetEnv(SourceEnv):
    """Target MDP: identical dynamics, but the agent observes rendered frames."""

    def __init__(self, cfg: EnvConfig):
        super().__init__(cfg)
        self._prev: np.ndarray | None = None

    def _observe(self) -> Frame:
        return Frame(render(self.state, self._prev, self.cfg), self.state.copy())

    def reset(self, rng: np.random.Generator) -> Frame:
        super().reset(rng)
        self._prev = self.state
        return self._observe()

    def step(self, a):
        self._prev = self.state
        _, r, done = super().step(a)
        return self._observe(), r, done
