"""Diversity-based episode selection in VAE latent space.

Each round keeps the top ``b`` percent of unselected episodes by inter-batch
diversity (distance of an episode's states to everything already chosen) and
picks, among those, the episode with the largest intra-batch diversity.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import EpisodeIndex, OfflineDataset, episode_starts
from .representation import VaeEncoder, encode_batched


@dataclass(frozen=True)
class ALConfig:
    rounds: int
    top_percent: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds (annotation budget) must be >= 1")
        if not 0 < self.top_percent <= 100:
            raise ValueError("top_percent must lie in (0, 100]")


@dataclass
class RoundInfo:
    chosen: int
    f_inter: float
    f_intra: float
    q_size: int
    q_min_f_inter: float
    rest_max_f_inter: float


@dataclass
class SelectionResult:
    indices: list[int]
    rounds: list[RoundInfo] = field(default_factory=list)

    def to_json(self) -> str:
        def clean(x):
            return None if isinstance(x, float) and not math.isfinite(x) else x
        rounds = [{k: clean(v) for k, v in asdict(r).items()} for r in self.rounds]
        return json.dumps({"indices": self.indices, "rounds": rounds}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SelectionResult":
        raw = json.loads(text)
        rounds = [RoundInfo(**{k: (float("nan") if v is None else v) for k, v in r.items()})
                  for r in raw["rounds"]]
        return cls([int(i) for i in raw["indices"]], rounds)


def _pairwise(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def inter_batch_diversity(batch, selected) -> float:
    """Sum over the batch of each point's distance to its nearest selected point."""
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    selected = np.atleast_2d(np.asarray(selected, dtype=np.float64))
    if selected.size == 0:
        raise ValueError("selected set must be nonempty")
    return float(np.sum(_pairwise(batch, selected).min(axis=1)))


def intra_batch_diversity(batch) -> float:
    """Sum of distances over all ordered pairs inside the batch."""
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if batch.size == 0:
        raise ValueError("batch must be nonempty")
    return float(np.sum(_pairwise(batch, batch)))


def top_count(n_unselected: int, top_percent: float) -> int:
    return max(1, math.ceil(top_percent / 100.0 * n_unselected))


def select_from_latents(latents: np.ndarray, index: EpisodeIndex, cfg: ALConfig) -> SelectionResult:
    """Greedy selection given precomputed per-record latent means."""
    n_eps = len(index)
    if cfg.rounds > n_eps:
        raise ValueError(f"budget {cfg.rounds} exceeds the {n_eps} available episodes")
    latents = np.asarray(latents, dtype=np.float64)
    spans = [np.arange(r.start, r.stop) for r in (index.span(k) for k in range(n_eps))]
    intra = np.array([intra_batch_diversity(latents[s]) for s in spans])

    rng = np.random.default_rng(cfg.seed)
    first = int(rng.integers(n_eps))
    chosen = [first]
    taken = np.zeros(n_eps, dtype=bool)
    taken[first] = True
    mind = _pairwise(latents, latents[spans[first]]).min(axis=1)
    info = [RoundInfo(int(index.starts[first]), float("nan"), float(intra[first]), 1,
                      float("nan"), float("nan"))]

    for _ in range(1, cfg.rounds):
        inter = np.array([np.sum(mind[s]) for s in spans])
        cand = np.flatnonzero(~taken)
        # descending f_inter, ties to the smaller episode index
        ranked = cand[np.lexsort((cand, -inter[cand]))]
        q = ranked[:top_count(len(cand), cfg.top_percent)]
        rest = ranked[len(q):]
        q_sorted = np.sort(q)
        c = int(q_sorted[np.argmax(intra[q_sorted])])
        chosen.append(c)
        taken[c] = True
        info.append(RoundInfo(int(index.starts[c]), float(inter[c]), float(intra[c]), len(q),
                              float(inter[q].min()),
                              float(inter[rest].max()) if len(rest) else float("-inf")))
        mind = np.minimum(mind, _pairwise(latents, latents[spans[c]]).min(axis=1))
    return SelectionResult([int(index.starts[k]) for k in chosen], info)


def select_episodes(enc: VaeEncoder, ds: OfflineDataset, cfg: ALConfig) -> SelectionResult:
    latents = encode_batched(enc, ds.view().images)
    return select_from_latents(latents, episode_starts(ds), cfg)


def selection_coverage(latents: np.ndarray, index: EpisodeIndex, starts) -> float:
    """Sum of f_inter over rounds 1..N-1 for an ordered selection of episode starts.

    This is the quantity each greedy round pushes up; it lets any selection
    order (e.g. a uniform random one) be scored on the same scale.
    """
    latents = np.asarray(latents, dtype=np.float64)
    batches = [latents[np.asarray(index.span(index.position(int(i))))] for i in starts]
    total = 0.0
    for n in range(1, len(batches)):
        total += inter_batch_diversity(batches[n], np.concatenate(batches[:n]))
    return total
