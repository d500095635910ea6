"""Command line entry point.

Stage commands run one grid cell step by step through files in ``--stage-dir``;
``experiment`` runs the whole grid in memory.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import dataset, representation, translator
from . import experiment as ex

log = logging.getLogger("semtransfer")

# artifact name -> stage that produces it
ARTIFACTS = {
    "config.json": "collect",
    "offline.semds": "collect",
    "heldout.semds": "collect",
    "source_std.json": "collect",
    "encoder.semnet": "train-vae",
    "selection.json": "select",
    "annotated.semds": "annotate",
    "annotation_errors.npy": "annotate",
    "paired.semds": "augment",
    "translator.semnet": "train",
}


class StageDependencyError(RuntimeError):
    pass


def _need(stage_dir: Path, name: str, stage: str) -> Path:
    path = stage_dir / name
    if not path.exists():
        raise StageDependencyError(
            f"{stage} needs {path}, which is produced by the '{ARTIFACTS[name]}' stage; run it first")
    return path


def _config(args) -> ex.ExperimentConfig:
    cfg = ex.load_config(args.config) if args.config else ex.ExperimentConfig()
    return ex.with_overrides(cfg, seed=args.seed)


def _check_config(stage_dir: Path, cfg: ex.ExperimentConfig, stage: str) -> None:
    saved = json.loads(_need(stage_dir, "config.json", stage).read_text())
    if saved != json.loads(json.dumps(cfg.to_dict())):
        raise ValueError(f"{stage}: config differs from the one used by 'collect' in {stage_dir}")


def _cell(args, cfg: ex.ExperimentConfig) -> ex.Cell:
    method = args.method or cfg.methods[0]
    if method not in ex.METHODS:
        raise ValueError(f"unknown method {method!r}")
    a_ann = cfg.noise[0][0] if args.alpha_ann is None else args.alpha_ann
    a_tr = cfg.noise[0][1] if args.alpha_tr is None else args.alpha_tr
    budget = args.budget or cfg.budgets[0]
    return ex.Cell(method, int(budget), float(a_ann), float(a_tr), int(args.trial))


def _context(stage_dir: Path, cfg: ex.ExperimentConfig, trial: int, stage: str,
             need_encoder: bool = False) -> ex.TrialContext:
    _check_config(stage_dir, cfg, stage)
    offline = dataset.load_offline(_need(stage_dir, "offline.semds", stage))
    heldout = dataset.load_offline(_need(stage_dir, "heldout.semds", stage))
    std = np.array(json.loads(_need(stage_dir, "source_std.json", stage).read_text())["std"])
    enc = None
    if need_encoder:
        enc, _, _ = representation.load_vae(_need(stage_dir, "encoder.semnet", stage))
    return ex.TrialContext(cfg, trial, offline, heldout, enc, std)


# -- stage commands ---------------------------------------------------------------

def cmd_collect(args, cfg, stage_dir: Path) -> int:
    stage_dir.mkdir(parents=True, exist_ok=True)
    offline, heldout, std = ex.stage_collect(cfg, args.trial)
    dataset.save_offline(offline, stage_dir / "offline.semds")
    dataset.save_offline(heldout, stage_dir / "heldout.semds")
    (stage_dir / "source_std.json").write_text(json.dumps({"std": [float(x) for x in std]}))
    (stage_dir / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    log.info("collected %d offline and %d held-out records", len(offline), len(heldout))
    return 0


def cmd_train_vae(args, cfg, stage_dir: Path) -> int:
    ctx = _context(stage_dir, cfg, args.trial, "train-vae")
    enc, dec, trace = ex.stage_train_vae(cfg, args.trial, ctx.offline)
    representation.save_vae(stage_dir / "encoder.semnet", enc, dec,
                            {"loss": trace.total, "trial": args.trial})
    log.info("VAE loss %.4f -> %.4f", trace.total[0], trace.total[-1])
    return 0


def cmd_select(args, cfg, stage_dir: Path) -> int:
    ctx = _context(stage_dir, cfg, args.trial, "select", need_encoder=True)
    cell = _cell(args, cfg)
    indices, sel = ex.stage_select(ctx, cell)
    payload = {"method": cell.method, "budget": cell.budget, "trial": cell.trial,
               "indices": [int(i) for i in indices],
               "rounds": json.loads(sel.to_json())["rounds"] if sel is not None else None}
    (stage_dir / "selection.json").write_text(json.dumps(payload, indent=2))
    return 0


def _selection(stage_dir: Path, cell: ex.Cell, stage: str) -> np.ndarray:
    sel = json.loads(_need(stage_dir, "selection.json", stage).read_text())
    if (sel["method"], sel["budget"], sel["trial"]) != (cell.method, cell.budget, cell.trial):
        raise ValueError(f"{stage}: selection.json was made for a different cell; rerun 'select'")
    return np.asarray(sel["indices"], dtype=np.int64)


def cmd_annotate(args, cfg, stage_dir: Path) -> int:
    ctx = _context(stage_dir, cfg, args.trial, "annotate")
    cell = _cell(args, cfg)
    pairs, errors = ex.stage_annotate(ctx, cell, _selection(stage_dir, cell, "annotate"))
    dataset.save_paired(pairs, stage_dir / "annotated.semds", cfg.env)
    np.save(stage_dir / "annotation_errors.npy", errors)
    return 0


def cmd_augment(args, cfg, stage_dir: Path) -> int:
    ctx = _context(stage_dir, cfg, args.trial, "augment")
    cell = _cell(args, cfg)
    pairs, _ = dataset.load_paired(_need(stage_dir, "annotated.semds", "augment"))
    errors = np.load(_need(stage_dir, "annotation_errors.npy", "augment"))
    full = pairs + ex.stage_augment(ctx, cell, pairs, errors)
    dataset.save_paired(full, stage_dir / "paired.semds", cfg.env)
    log.info("%d annotated + %d augmented pairs", full.n_annotated, full.n_augmented)
    return 0


def cmd_train(args, cfg, stage_dir: Path) -> int:
    ctx = _context(stage_dir, cfg, args.trial, "train", need_encoder=True)
    cell = _cell(args, cfg)
    pairs, _ = dataset.load_paired(_need(stage_dir, "paired.semds", "train"))
    tr, trace = ex.stage_train(ctx, cell, pairs)
    translator.save_translator(stage_dir / "translator.semnet", tr,
                               (stage_dir / "encoder.semnet").resolve(),
                               {"loss_first": trace[0], "loss_last": trace[-1]})
    return 0


def cmd_eval(args, cfg, stage_dir: Path) -> int:
    ctx = _context(stage_dir, cfg, args.trial, "eval", need_encoder=True)
    cell = _cell(args, cfg)
    tr = translator.load_translator(_need(stage_dir, "translator.semnet", "eval"), ctx.encoder)
    pp_mean, pp_std, md = ex.stage_eval(ctx, cell, tr)
    pairs, _ = dataset.load_paired(_need(stage_dir, "paired.semds", "eval"))
    res = ex.CellResult(cell, pp_mean, pp_std, md, pairs.n_annotated, pairs.n_augmented)
    text = ex.results_csv([res.row()])
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_experiment(args, cfg, stage_dir: Path | None) -> int:
    res = ex.run_experiment(cfg, jobs=args.jobs)
    if args.out:
        ex.write_outputs(res, cfg, args.out)
    else:
        sys.stdout.write(res.csv_text())
    for cell, msg in res.failures:
        log.error("cell failed: %s: %s", cell, msg)
    return 0 if res.ok else 1


COMMANDS = {
    "collect": cmd_collect,
    "train-vae": cmd_train_vae,
    "select": cmd_select,
    "annotate": cmd_annotate,
    "augment": cmd_augment,
    "train": cmd_train,
    "eval": cmd_eval,
    "experiment": cmd_experiment,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="semtransfer", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="TOML experiment config")
        sp.add_argument("--out", help="output CSV (a JSON sidecar is written next to it)")
        sp.add_argument("--seed", type=int, help="override the master seed")
        sp.add_argument("--jobs", type=int, default=1, help="worker processes")
        sp.add_argument("--stage-dir", default="stages", help="artifact directory for stage commands")
        sp.add_argument("--trial", type=int, default=0)
        sp.add_argument("--method", choices=ex.METHODS)
        sp.add_argument("--budget", type=int)
        sp.add_argument("--alpha-ann", type=float)
        sp.add_argument("--alpha-tr", type=float)
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        return COMMANDS[args.command](args, cfg, Path(args.stage_dir))
    except (StageDependencyError, ValueError, dataset.DatasetFormatError, OSError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
