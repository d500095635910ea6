"""Offline trajectories, episode indexing and paired (semantics, image) sets.

``.semds`` layout (little-endian throughout)::

    b"SEMDS\\x00\\x00\\x01"        8-byte magic, last byte is the format version
    u64                          length of the JSON header in bytes
    JSON header                  kind, env config, shapes, counts
    float32[n, H, W, C]          image block
    float64[n, k]                table block (see ``columns`` in the header)
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .envs import EnvConfig, SourceEnv, TargetEnv, action_to_row

SEMDS_MAGIC = b"SEMDS\x00\x00"
SEMDS_VERSION = 1
ANNOTATED, AUGMENTED = 0, 1
PROVENANCE_NAMES = {ANNOTATED: "annotated", AUGMENTED: "augmented"}


class DatasetFormatError(ValueError):
    """Malformed ``.semds`` file."""


class DatasetVersionError(DatasetFormatError):
    """Unknown magic header or format version."""


class TruncatedDatasetError(DatasetFormatError):
    """File shorter (or longer) than its header declares."""


@dataclass(frozen=True)
class Record:
    image: np.ndarray
    action: np.ndarray
    end_flag: int
    truth: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class LearnerView:
    """What a learner may see of an offline dataset: no semantics."""

    images: np.ndarray
    actions: np.ndarray
    end_flags: np.ndarray

    def __len__(self):
        return len(self.end_flags)


@dataclass(frozen=True)
class OfflineDataset:
    env: EnvConfig
    images: np.ndarray
    actions: np.ndarray
    end_flags: np.ndarray
    truth: np.ndarray = field(repr=False)
    behavior: str = "random"

    def __post_init__(self):
        n = len(self.end_flags)
        if not (len(self.images) == len(self.actions) == len(self.truth) == n):
            raise ValueError("dataset columns have different lengths")
        if n and self.end_flags[-1] != 1:
            raise ValueError("last record must close an episode (end_flag = 1)")

    def __len__(self):
        return len(self.end_flags)

    def view(self) -> LearnerView:
        return LearnerView(self.images, self.actions, self.end_flags)

    def record(self, i: int) -> Record:
        return Record(self.images[i], self.actions[i], int(self.end_flags[i]), self.truth[i])

    def oracle(self, indices) -> np.ndarray:
        """Vectorised annotator: exact semantics of the given records."""
        return self.truth[np.asarray(indices, dtype=np.int64)].copy()


@dataclass(frozen=True)
class EpisodeIndex:
    """Episode starts O and, per start, |E_i| (steps following the start)."""

    starts: np.ndarray
    lengths: np.ndarray

    def __len__(self):
        return len(self.starts)

    def span(self, k: int) -> range:
        """Record indices ``i .. i + |E_i|`` of the k-th episode."""
        i = int(self.starts[k])
        return range(i, i + int(self.lengths[k]) + 1)

    def position(self, start: int) -> int:
        k = int(np.searchsorted(self.starts, start))
        if k >= len(self.starts) or self.starts[k] != start:
            raise ValueError(f"index {start} is not an episode start")
        return k


def episode_starts(ds) -> EpisodeIndex:
    flags = np.asarray(ds.end_flags)
    if flags.size == 0:
        raise ValueError("empty dataset")
    if not np.isin(flags, (0, 1)).all():
        raise ValueError("end flags must be 0 or 1")
    if flags[-1] != 1:
        raise ValueError("malformed end flags: last record does not end an episode")
    ends = np.flatnonzero(flags == 1)
    starts = np.concatenate([[0], ends[:-1] + 1]).astype(np.int64)
    return EpisodeIndex(starts, (ends - starts).astype(np.int64))


def collect(cfg: EnvConfig, behavior_policy, n_episodes: int, rng: np.random.Generator,
            tag: str | None = None) -> OfflineDataset:
    """Roll ``n_episodes`` in the target MDP with ``behavior_policy(state, rng)``.

    The behaviour policy reads true semantics; only images, actions and end
    flags are exposed to learners.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    env = TargetEnv(cfg)
    images, actions, flags, truth = [], [], [], []
    for _ in range(n_episodes):
        frame = env.reset(rng)
        done = False
        while not done:
            a = behavior_policy(frame.truth, rng)
            images.append(frame.image)
            truth.append(frame.truth)
            actions.append(action_to_row(a, cfg))
            frame, _, done = env.step(a)
            flags.append(1 if done else 0)
    return OfflineDataset(
        env=cfg,
        images=np.stack(images).astype(np.float32),
        actions=np.stack(actions).astype(np.float64),
        end_flags=np.array(flags, dtype=np.int64),
        truth=np.stack(truth).astype(np.float64),
        behavior=tag or getattr(behavior_policy, "policy_id", "custom"),
    )


def collect_source_trajectory(cfg: EnvConfig, behavior_policy, n_episodes: int,
                              rng: np.random.Generator) -> np.ndarray:
    """Semantic states visited by ``behavior_policy`` in the source MDP."""
    env = SourceEnv(cfg)
    states = []
    for _ in range(n_episodes):
        s = env.reset(rng)
        done = False
        while not done:
            states.append(s)
            s, _, done = env.step(behavior_policy(s, rng))
    return np.stack(states)


@dataclass(frozen=True)
class PairedDataset:
    semantics: np.ndarray
    images: np.ndarray
    provenance: np.ndarray
    source_index: np.ndarray

    def __post_init__(self):
        n = len(self.semantics)
        if not (len(self.images) == len(self.provenance) == len(self.source_index) == n):
            raise ValueError("paired dataset columns have different lengths")

    def __len__(self):
        return len(self.semantics)

    @property
    def n_annotated(self) -> int:
        return int(np.sum(self.provenance == ANNOTATED))

    @property
    def n_augmented(self) -> int:
        return int(np.sum(self.provenance == AUGMENTED))

    @classmethod
    def empty(cls, dim: int, image_shape) -> "PairedDataset":
        return cls(np.zeros((0, dim)), np.zeros((0, *image_shape), np.float32),
                   np.zeros(0, np.int64), np.zeros(0, np.int64))

    def __add__(self, other: "PairedDataset") -> "PairedDataset":
        return PairedDataset(
            np.concatenate([self.semantics, other.semantics]),
            np.concatenate([self.images, other.images]),
            np.concatenate([self.provenance, other.provenance]),
            np.concatenate([self.source_index, other.source_index]),
        )


# -- persistence ---------------------------------------------------------------

def _write(path, header: dict, images: np.ndarray, table: np.ndarray) -> None:
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(SEMDS_MAGIC + bytes([SEMDS_VERSION]))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(images, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(table, dtype="<f8").tobytes())


def _read(path) -> tuple[dict, np.ndarray, np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:7] != SEMDS_MAGIC:
        raise DatasetVersionError(f"{path}: not a .semds file")
    if raw[7] != SEMDS_VERSION:
        raise DatasetVersionError(f"{path}: unsupported .semds version {raw[7]}")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    if 16 + hlen > len(raw):
        raise TruncatedDatasetError(f"{path}: truncated header")
    try:
        header = json.loads(raw[16:16 + hlen])
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{path}: corrupt header") from exc
    n = header["n"]
    img_shape = tuple(header["image_shape"])
    n_img = n * int(np.prod(img_shape))
    n_tab = n * len(header["columns"])
    off = 16 + hlen
    expected = off + 4 * n_img + 8 * n_tab
    if len(raw) != expected:
        raise TruncatedDatasetError(f"{path}: expected {expected} bytes, found {len(raw)}")
    images = np.frombuffer(raw, "<f4", n_img, off).reshape(n, *img_shape).astype(np.float32)
    table = np.frombuffer(raw, "<f8", n_tab, off + 4 * n_img).reshape(n, -1).astype(np.float64)
    return header, images, table


def save_offline(ds: OfflineDataset, path) -> None:
    cfg = ds.env
    cols = [f"action{k}" for k in range(cfg.action_dim)] + ["end"] + \
           [f"truth{k}" for k in range(cfg.dim_sigma)]
    header = {"kind": "offline", "env": cfg.to_dict(), "behavior": ds.behavior,
              "n": len(ds), "image_shape": list(cfg.image_shape), "columns": cols}
    table = np.column_stack([ds.actions, ds.end_flags.astype(np.float64), ds.truth])
    _write(path, header, ds.images, table)


def load_offline(path) -> OfflineDataset:
    header, images, table = _read(path)
    if header.get("kind") != "offline":
        raise DatasetFormatError(f"{path}: expected an offline dataset, got {header.get('kind')}")
    cfg = EnvConfig(**header["env"])
    a = cfg.action_dim
    return OfflineDataset(cfg, images, table[:, :a].copy(), table[:, a].astype(np.int64),
                          table[:, a + 1:].copy(), header["behavior"])


def save_paired(pairs: PairedDataset, path, env: EnvConfig) -> None:
    dim = env.dim_sigma
    cols = [f"sem{k}" for k in range(dim)] + ["provenance", "source_index"]
    header = {"kind": "paired", "env": env.to_dict(), "behavior": "",
              "n": len(pairs), "image_shape": list(env.image_shape), "columns": cols}
    table = np.column_stack([pairs.semantics.reshape(len(pairs), dim),
                             pairs.provenance.astype(np.float64),
                             pairs.source_index.astype(np.float64)])
    _write(path, header, pairs.images, table)


def load_paired(path) -> tuple[PairedDataset, EnvConfig]:
    header, images, table = _read(path)
    if header.get("kind") != "paired":
        raise DatasetFormatError(f"{path}: expected a paired dataset, got {header.get('kind')}")
    cfg = EnvConfig(**header["env"])
    dim = cfg.dim_sigma
    pairs = PairedDataset(table[:, :dim].copy(), images, table[:, dim].astype(np.int64),
                          table[:, dim + 1].astype(np.int64))
    return pairs, cfg
