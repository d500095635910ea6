import csv
import json

import numpy as np
import pytest

from semtransfer import cli, envs
from semtransfer import experiment as ex

SMOKE = """
seed = 3
n_trials = 2
n_offline_episodes = 14
n_heldout_episodes = 3
n_eval_episodes = 3
vae_epochs = 1
head_epochs = 3
budgets = [10]
noise = [[0.0, 0.0], [0.1, 0.04]]

[env]
env_id = "line_shooter"
"""


@pytest.fixture(scope="module")
def smoke_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "smoke.toml"
    path.write_text(SMOKE)
    return path


@pytest.fixture(scope="module")
def smoke_result(smoke_path):
    cfg = ex.load_config(smoke_path)
    return cfg, ex.run_experiment(cfg)


def test_config_parsing(smoke_path):
    cfg = ex.load_config(smoke_path)
    assert cfg.env == envs.make_config(envs.LINE_SHOOTER)
    assert cfg.noise == ((0.0, 0.0), (0.1, 0.04)) and cfg.methods == ex.METHODS
    assert len(cfg.cells()) == 2 * 3 * 1 * 2
    assert ex.ExperimentConfig().n_trials == 5


@pytest.mark.parametrize("bad", [{"budgets": [0]}, {"n_trials": 0}, {"methods": ["zhang"]},
                                 {"noise": [[-0.1, 0.0]]}, {"typo_key": 1}])
def test_config_validation(bad):
    with pytest.raises((ValueError, TypeError)):
        ex.config_from_dict(bad)


def test_cells_and_schema(smoke_result):
    cfg, res = smoke_result
    assert res.ok and len(res.results) == len(cfg.cells())
    header = res.csv_text().splitlines()[0]
    assert header == ",".join(ex.CSV_COLUMNS)
    for r in res.results:
        if r.cell.method == "crar":
            assert r.n_augmented == 0 and r.n_annotated == 10
        else:
            assert 10 <= r.n_annotated + r.n_augmented <= 500
        assert r.md >= 0
    assert {ref["trial"] for ref in res.references} == {0, 1}


def test_rerun_is_bitwise_identical(smoke_result):
    cfg, res = smoke_result
    assert ex.run_experiment(cfg).csv_text() == res.csv_text()


def test_jobs_do_not_change_output(smoke_result):
    cfg, res = smoke_result
    assert ex.run_experiment(cfg, jobs=2).csv_text() == res.csv_text()


def test_methods_share_trial_data(smoke_result):
    cfg, _ = smoke_result
    a = ex.prepare_trial(cfg, 1)
    b = ex.prepare_trial(cfg, 1)
    c = ex.prepare_trial(cfg, 0)
    assert a.offline.images.tobytes() == b.offline.images.tobytes()
    assert a.offline.images.tobytes() != c.offline.images.tobytes()


def test_failed_cell_does_not_stop_others(tmp_path):
    raw = SMOKE.replace("budgets = [10]", "budgets = [10, 15]").replace("n_trials = 2",
                                                                         "n_trials = 1")
    path = tmp_path / "c.toml"
    path.write_text(raw)
    cfg = ex.load_config(path)
    res = ex.run_experiment(cfg)
    failed = {(c.method, c.budget) for c, _ in res.failures}
    # 14 episodes cannot supply 15 starts, but 15 timesteps are fine for the baseline
    assert failed == {("ours", 15), ("ours_no_al", 15)}
    assert len(res.results) == len(cfg.cells()) - 4
    out = tmp_path / "r.csv"
    ex.write_outputs(res, cfg, out)
    side = json.loads(out.with_suffix(".json").read_text())
    assert len(side["failures"]) == 4


def test_cli_experiment(tmp_path, smoke_path, smoke_result):
    out = tmp_path / "res.csv"
    rc = cli.main(["experiment", "--config", str(smoke_path), "--out", str(out)])
    assert rc == 0
    assert out.read_text() == smoke_result[1].csv_text()
    rows = list(csv.DictReader(out.open()))
    assert list(rows[0]) == list(ex.CSV_COLUMNS)


def test_cli_exit_code_on_failure(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text(SMOKE.replace("budgets = [10]", "budgets = [99]").replace("n_trials = 2",
                                                                               "n_trials = 1"))
    assert cli.main(["experiment", "--config", str(path), "--out", str(tmp_path / "o.csv")]) == 1


def test_select_without_encoder(tmp_path, smoke_path, caplog):
    stage = tmp_path / "stage"
    assert cli.main(["collect", "--config", str(smoke_path), "--stage-dir", str(stage)]) == 0
    rc = cli.main(["select", "--config", str(smoke_path), "--stage-dir", str(stage)])
    assert rc == 2
    assert "train-vae" in caplog.text


def test_missing_collect(tmp_path, smoke_path, caplog):
    rc = cli.main(["train-vae", "--config", str(smoke_path), "--stage-dir", str(tmp_path)])
    assert rc == 2 and "'collect'" in caplog.text


@pytest.mark.parametrize("method,a_ann,a_tr", [("ours", "0.1", "0.04"), ("crar", "0.0", "0.0"),
                                               ("ours_no_al", "0.0", "0.0")])
def test_stagewise_equals_experiment(tmp_path, smoke_path, smoke_result, method, a_ann, a_tr):
    stage = tmp_path / "stage"
    common = ["--config", str(smoke_path), "--stage-dir", str(stage), "--trial", "1",
              "--method", method, "--alpha-ann", a_ann, "--alpha-tr", a_tr]
    for cmd in ("collect", "train-vae", "select", "annotate", "augment", "train"):
        assert cli.main([cmd, *common]) == 0, cmd
    out = tmp_path / "row.csv"
    assert cli.main(["eval", *common, "--out", str(out)]) == 0
    row = out.read_text().splitlines()[1]
    assert row in smoke_result[1].csv_text().splitlines()


def test_stage_config_mismatch(tmp_path, smoke_path, caplog):
    stage = tmp_path / "stage"
    cli.main(["collect", "--config", str(smoke_path), "--stage-dir", str(stage)])
    rc = cli.main(["train-vae", "--config", str(smoke_path), "--stage-dir", str(stage),
                   "--seed", "99"])
    assert rc == 2 and "config differs" in caplog.text


def test_seed_changes_results(smoke_result):
    cfg, res = smoke_result
    other = ex.run_experiment(ex.with_overrides(cfg, seed=cfg.seed + 1, n_trials=1))
    assert other.rows()[0]["md"] != res.rows()[0]["md"]


def test_rng_streams_are_keyed():
    cfg = ex.ExperimentConfig(seed=5)
    a = ex.stage_rng(cfg, 0, 1).random()
    assert a == ex.stage_rng(cfg, 0, 1).random()
    assert a != ex.stage_rng(cfg, 1, 1).random() and a != ex.stage_rng(cfg, 0, 2).random()
    assert isinstance(ex.eval_seed(cfg, 0), int)
    assert np.isfinite(a)
