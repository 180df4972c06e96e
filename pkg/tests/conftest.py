import numpy as np
import pytest

from mspn.config import (AugmentConfig, DataConfig, InferenceConfig, NetworkConfig, OptimizerConfig, RunConfig,
                         SupervisionConfig)
from mspn.synthetic import make_synthetic


def tiny_network(**kw) -> NetworkConfig:
    base = dict(num_stages=2, num_joints=5, input_size=(64, 96), block="basic", base_width=8,
                blocks_per_level=(1, 1, 1, 1), up_width=16)
    base.update(kw)
    return NetworkConfig(**base)


def tiny_run(ann=None, out="runs/tiny", iterations=10, batch=4, **net) -> RunConfig:
    netcfg = tiny_network(**net)
    ks = (7, 5, 5, 3)[:netcfg.num_stages]
    return RunConfig(network=netcfg,
                     supervision=SupervisionConfig(kernel_sizes=ks, ohkm_top_k=3),
                     augment=AugmentConfig(), optimizer=OptimizerConfig(lr_start=1e-3, iterations=iterations,
                                                                        batch_per_device=batch),
                     data=DataConfig(skeleton="synthetic5", train_ann=ann),
                     inference=InferenceConfig(flip_test=False, batch_size=8),
                     output_dir=str(out), log_every=1000)


@pytest.fixture(scope="session")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    make_synthetic(8, 123, out)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(0)


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
