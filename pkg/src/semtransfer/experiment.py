"""Experiment grid: collect, train VAE, select, annotate, augment, train F_hat, evaluate.

Every random draw is keyed on ``(master seed, trial, stage, ...)`` so a cell's
result does not depend on which other cells run, or in which order.
Methods within a trial share the offline dataset, held-out set and encoder.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import active_learning as al
from . import dataset, envs, evaluation, pairing, policies, representation, translator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

METHODS = ("ours", "ours_no_al", "crar")
CSV_COLUMNS = ("method", "budget", "alpha_ann", "alpha_tr", "trial", "pp_mean", "pp_std", "md")
DEFAULT_OFFLINE_EPISODES = {envs.LINE_SHOOTER: 200, envs.POINT_REACH: 250}

# stage tags for rng derivation
_COLLECT, _HELDOUT, _VAE, _SOURCE, _SELECT, _NOISE, _HEAD, _EVAL = range(8)
_METHOD_CODE = {m: k for k, m in enumerate(METHODS)}


@dataclass(frozen=True)
class ExperimentConfig:
    env: envs.EnvConfig = field(default_factory=lambda: envs.make_config(envs.LINE_SHOOTER))
    behavior: str = "random"
    behavior_mix: float = 0.5
    n_offline_episodes: int | None = None
    n_heldout_episodes: int = 50
    n_source_episodes: int | None = None
    latent_dim: int | None = None
    vae_epochs: int = 50
    vae_recon_weight: float | None = None
    head_epochs: int = translator.HEAD_EPOCHS
    active_learning: bool = True
    top_percent: float = 10.0
    budgets: tuple[int, ...] = (10,)
    noise: tuple[tuple[float, float], ...] = ((0.0, 0.0),)
    methods: tuple[str, ...] = METHODS
    n_trials: int = 5
    n_eval_episodes: int = 50
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "budgets", tuple(int(b) for b in self.budgets))
        object.__setattr__(self, "noise", tuple((float(a), float(b)) for a, b in self.noise))
        object.__setattr__(self, "methods", tuple(self.methods))
        if not self.budgets or min(self.budgets) < 1:
            raise ValueError("budgets must be >= 1")
        if self.n_trials < 1:
            raise ValueError("n_trials must be >= 1")
        if self.vae_recon_weight is not None and self.vae_recon_weight <= 0:
            raise ValueError("vae_recon_weight must be > 0")
        if not self.methods or any(m not in METHODS for m in self.methods):
            raise ValueError(f"methods must be a nonempty subset of {METHODS}")
        if any(a < 0 or b < 0 for a, b in self.noise) or not self.noise:
            raise ValueError("noise settings must be nonnegative (alpha_ann, alpha_tr) pairs")
        if self.behavior not in ("random", "weak", "handcrafted"):
            raise ValueError(f"unknown behavior policy {self.behavior!r}")

    @property
    def offline_episodes(self) -> int:
        return self.n_offline_episodes or DEFAULT_OFFLINE_EPISODES[self.env.env_id]

    @property
    def source_episodes(self) -> int:
        return self.n_source_episodes or self.offline_episodes

    @property
    def z_dim(self) -> int:
        return self.latent_dim or representation.DEFAULT_LATENT_DIM[self.env.env_id]

    @property
    def recon_weight(self) -> float:
        if self.vae_recon_weight is None:
            return representation.DEFAULT_RECON_WEIGHT[self.env.env_id]
        return self.vae_recon_weight

    def cells(self) -> list["Cell"]:
        return [Cell(m, b, a, t, trial)
                for trial in range(self.n_trials)
                for m in self.methods
                for b in self.budgets
                for a, t in self.noise]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["budgets"] = list(self.budgets)
        d["noise"] = [list(x) for x in self.noise]
        d["methods"] = list(self.methods)
        return d


def config_from_dict(raw: dict) -> ExperimentConfig:
    raw = dict(raw)
    env_raw = dict(raw.pop("env", {}))
    env_id = env_raw.pop("env_id", envs.LINE_SHOOTER)
    kwargs = {"env": envs.make_config(env_id, **env_raw)}
    names = {f for f in ExperimentConfig.__dataclass_fields__} - {"env"}
    unknown = set(raw) - names
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    kwargs.update(raw)
    return ExperimentConfig(**kwargs)


def load_config(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        return config_from_dict(tomllib.load(fh))


@dataclass(frozen=True)
class Cell:
    method: str
    budget: int
    alpha_ann: float
    alpha_tr: float
    trial: int


@dataclass
class CellResult:
    cell: Cell
    pp_mean: float
    pp_std: float
    md: float
    n_annotated: int
    n_augmented: int
    coverage: float | None = None

    def row(self) -> dict:
        c = self.cell
        return {"method": c.method, "budget": c.budget, "alpha_ann": c.alpha_ann,
                "alpha_tr": c.alpha_tr, "trial": c.trial, "pp_mean": self.pp_mean,
                "pp_std": self.pp_std, "md": self.md}


@dataclass
class TrialContext:
    """Everything a trial's cells share."""

    cfg: ExperimentConfig
    trial: int
    offline: dataset.OfflineDataset
    heldout: dataset.OfflineDataset
    encoder: representation.VaeEncoder
    source_std: np.ndarray
    _latents: np.ndarray | None = None

    @property
    def latents(self) -> np.ndarray:
        if self._latents is None:
            self._latents = representation.encode_batched(self.encoder, self.offline.images)
        return self._latents


# -- rng plumbing -------------------------------------------------------------

def stage_rng(cfg: ExperimentConfig, trial: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng([int(cfg.seed), int(trial), *[int(t) for t in tags]])


def stage_seed(cfg: ExperimentConfig, trial: int, *tags: int) -> int:
    ss = np.random.SeedSequence([int(cfg.seed), int(trial), *[int(t) for t in tags]])
    return int(ss.generate_state(1, np.uint32)[0])


def eval_seed(cfg: ExperimentConfig, trial: int) -> int:
    return stage_seed(cfg, trial, _EVAL)


def behavior_policy(cfg: ExperimentConfig) -> policies.Policy:
    return policies.make_policy(cfg.behavior, cfg.env, cfg.behavior_mix)


def source_policy(cfg: ExperimentConfig) -> policies.Policy:
    return policies.make_policy("handcrafted", cfg.env)


# -- stages ---------------------------------------------------------------------

def stage_collect(cfg: ExperimentConfig, trial: int):
    """Offline dataset, held-out MD set and the noise reference std."""
    beh = behavior_policy(cfg)
    offline = dataset.collect(cfg.env, beh, cfg.offline_episodes,
                              stage_rng(cfg, trial, _COLLECT), tag=cfg.behavior)
    heldout = dataset.collect(cfg.env, beh, cfg.n_heldout_episodes,
                              stage_rng(cfg, trial, _HELDOUT), tag=cfg.behavior)
    traj = dataset.collect_source_trajectory(cfg.env, beh, cfg.source_episodes,
                                             stage_rng(cfg, trial, _SOURCE))
    return offline, heldout, pairing.semantic_std(traj)


def stage_train_vae(cfg: ExperimentConfig, trial: int, offline: dataset.OfflineDataset):
    enc, dec, trace = representation.train_vae(
        offline.view().images, cfg.z_dim, cfg.vae_epochs, stage_rng(cfg, trial, _VAE),
        recon_weight=cfg.recon_weight)
    return enc, dec, trace


def prepare_trial(cfg: ExperimentConfig, trial: int) -> TrialContext:
    offline, heldout, std = stage_collect(cfg, trial)
    enc, _, _ = stage_train_vae(cfg, trial, offline)
    return TrialContext(cfg, trial, offline, heldout, enc, std)


def uses_al(cfg: ExperimentConfig, method: str) -> bool:
    return method == "ours" and cfg.active_learning


def stage_select(ctx: TrialContext, cell: Cell) -> tuple[np.ndarray, al.SelectionResult | None]:
    """Annotation indices for a cell; AL diagnostics when AL ran."""
    cfg = ctx.cfg
    rng = stage_rng(cfg, cell.trial, _SELECT, _METHOD_CODE[cell.method], cell.budget)
    if cell.method == "crar":
        return translator.baseline_crar_indices(len(ctx.offline), cell.budget, rng), None
    index = dataset.episode_starts(ctx.offline)
    if cell.budget > len(index):
        raise ValueError(f"budget {cell.budget} exceeds the {len(index)} episodes available")
    if uses_al(cfg, cell.method):
        al_cfg = al.ALConfig(cell.budget, cfg.top_percent, int(rng.integers(2**31)))
        res = al.select_from_latents(ctx.latents, index, al_cfg)
        return res.indices, res
    return rng.choice(index.starts, size=cell.budget, replace=False).astype(np.int64), None


def noise_config(ctx: TrialContext, cell: Cell) -> pairing.NoiseConfig:
    std = tuple(ctx.source_std) if (cell.alpha_ann > 0 or cell.alpha_tr > 0) else None
    return pairing.NoiseConfig(cell.alpha_ann, cell.alpha_tr, std,
                               stage_seed(ctx.cfg, cell.trial, _NOISE))


def stage_annotate(ctx: TrialContext, cell: Cell, indices):
    return pairing.annotate(ctx.offline, indices, noise_config(ctx, cell),
                            starts_only=cell.method != "crar")


def stage_augment(ctx: TrialContext, cell: Cell, pairs, errors) -> dataset.PairedDataset:
    if cell.method == "crar":
        return dataset.PairedDataset.empty(ctx.cfg.env.dim_sigma, ctx.cfg.env.image_shape)
    return pairing.augment(pairs, ctx.offline, noise_config(ctx, cell), errors)


def stage_train(ctx: TrialContext, cell: Cell, pairs: dataset.PairedDataset):
    rng = stage_rng(ctx.cfg, cell.trial, _HEAD, _METHOD_CODE[cell.method], cell.budget)
    return translator.train_translator(ctx.encoder, pairs, ctx.cfg.head_epochs, rng)


def stage_eval(ctx: TrialContext, cell: Cell, tr) -> tuple[float, float, float]:
    cfg = ctx.cfg
    pp_mean, pp_std = evaluation.policy_performance(tr, source_policy(cfg), cfg.env,
                                                    cfg.n_eval_episodes, eval_seed(cfg, cell.trial))
    return pp_mean, pp_std, evaluation.matching_distance(tr, ctx.heldout)


def run_cell(ctx: TrialContext, cell: Cell) -> CellResult:
    indices, sel = stage_select(ctx, cell)
    pairs, errors = stage_annotate(ctx, cell, indices)
    pairs = pairs + stage_augment(ctx, cell, pairs, errors)
    tr, _ = stage_train(ctx, cell, pairs)
    pp_mean, pp_std, md = stage_eval(ctx, cell, tr)
    coverage = None
    if cell.method != "crar":
        coverage = al.selection_coverage(ctx.latents, dataset.episode_starts(ctx.offline), indices)
    return CellResult(cell, pp_mean, pp_std, md, pairs.n_annotated, pairs.n_augmented, coverage)


def reference_performance(cfg: ExperimentConfig, trial: int) -> dict:
    """PP of the source policy through the exact F, and of the behavior policy."""
    seed = eval_seed(cfg, trial)
    oracle = evaluation.policy_performance(evaluation.ORACLE, source_policy(cfg), cfg.env,
                                           cfg.n_eval_episodes, seed)
    beh = evaluation.source_policy_performance(behavior_policy(cfg), cfg.env,
                                               cfg.n_eval_episodes, seed)
    return {"trial": trial, "pp_oracle": oracle[0], "pp_behavior": beh[0]}


# -- grid -------------------------------------------------------------------------

@dataclass
class ExperimentResult:
    results: list[CellResult]
    failures: list[tuple[Cell, str]]
    references: list[dict]

    @property
    def ok(self) -> bool:
        return not self.failures

    def rows(self) -> list[dict]:
        return [r.row() for r in self.results]

    def csv_text(self) -> str:
        return results_csv(self.rows())

    def to_json(self, cfg: ExperimentConfig) -> str:
        cells = []
        for r in self.results:
            d = r.row()
            d.update(n_annotated=r.n_annotated, n_augmented=r.n_augmented, coverage=r.coverage)
            cells.append(d)
        failures = [{**asdict(c), "error": msg} for c, msg in self.failures]
        return json.dumps({"config": cfg.to_dict(), "cells": cells, "references": self.references,
                           "failures": failures}, indent=2, sort_keys=True)


def results_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _trial_job(cfg: ExperimentConfig, trial: int, cells: list[Cell]):
    try:
        ctx = prepare_trial(cfg, trial)
    except Exception as exc:  # noqa: BLE001 - a failed trial fails only its own cells
        log.exception("trial %d setup failed", trial)
        return [], [(c, f"trial setup: {exc!r}") for c in cells], None
    results, failures = [], []
    for cell in cells:
        try:
            results.append(run_cell(ctx, cell))
            log.info("done %s", cell)
        except Exception as exc:  # noqa: BLE001
            log.exception("cell %s failed", cell)
            failures.append((cell, repr(exc)))
    return results, failures, reference_performance(cfg, trial)


def run_experiment(cfg: ExperimentConfig, jobs: int = 1) -> ExperimentResult:
    """Run every (method, budget, noise, trial) cell.

    Worker processes each own whole trials, since cells of a trial share the
    encoder; results are gathered here and sorted into grid order.
    """
    cells = cfg.cells()
    by_trial: dict[int, list[Cell]] = {}
    for c in cells:
        by_trial.setdefault(c.trial, []).append(c)
    outputs = []
    if jobs <= 1 or len(by_trial) == 1:
        outputs = [_trial_job(cfg, t, cs) for t, cs in by_trial.items()]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_trial_job, cfg, t, cs) for t, cs in by_trial.items()]
            outputs = [f.result() for f in futures]
    order = {c: k for k, c in enumerate(cells)}
    results = sorted((r for out in outputs for r in out[0]), key=lambda r: order[r.cell])
    failures = sorted((f for out in outputs for f in out[1]), key=lambda f: order[f[0]])
    refs = [out[2] for out in outputs if out[2] is not None]
    return ExperimentResult(results, failures, refs)


def write_outputs(res: ExperimentResult, cfg: ExperimentConfig, out) -> None:
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(res.csv_text())
    out.with_suffix(".json").write_text(res.to_json(cfg))


def with_overrides(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
