import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from semtransfer import dataset, envs, policies, representation

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def shooter_cfg():
    return envs.make_config(envs.LINE_SHOOTER)


@pytest.fixture(scope="session")
def reach_cfg():
    return envs.make_config(envs.POINT_REACH)


@pytest.fixture(scope="session")
def shooter_ds(shooter_cfg):
    pol = policies.make_policy("random", shooter_cfg)
    return dataset.collect(shooter_cfg, pol, 8, np.random.default_rng(11))


@pytest.fixture(scope="session")
def reach_ds(reach_cfg):
    pol = policies.make_policy("random", reach_cfg)
    return dataset.collect(reach_cfg, pol, 5, np.random.default_rng(12))


@pytest.fixture(scope="session")
def tiny_encoder(shooter_ds):
    enc, _, _ = representation.train_vae(shooter_ds.images, 4, 2, np.random.default_rng(0),
                                         width=32)
    return enc


def pytest_terminal_summary(terminalreporter):
    from .acceptance_log import RESULTS
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        for ok, detail in RESULTS[n]:
            terminalreporter.write_line(f"CRITERION {n}: {'PASS' if ok else 'FAIL'} - {detail}")
