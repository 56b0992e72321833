import warnings

import numpy as np
import pytest

from ordsurf.net import NetConfig, OrdinalNet


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_config():
    return NetConfig(stem_channels=4, stage_channels=(4, 4, 4, 4), blocks_per_stage=(1, 1, 1, 1),
                     aspp_rates=(1, 2, 3), aspp_channels=4, K=4, patch_size=16)


def make_net(config, seed=0, dtype=np.float32, random_head=False):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        net = OrdinalNet(config, seed=seed, dtype=dtype)
    if random_head:
        g = np.random.default_rng(seed + 99)
        for name in ("head.out.weight", "head.out.bias"):
            p = net.params[name]
            p.data = (0.5 * g.standard_normal(p.shape)).astype(dtype)
    return net


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
