"""Shared fixtures. The desk-scale training runs are session-scoped so that the
slow tests and the acceptance suite train each configuration only once."""

import dataclasses

import numpy as np
import pytest

from nfcmri.encoding import StiffParams
from nfcmri.io import preset_config
from nfcmri.phantom import desk_dataset
from nfcmri.training import ArchConfig, TrainConfig, train

# 4-spoke regularisation comparison: shared L and sigma, p_s varied
DESK4_L = 600
DESK4_SIGMA = 7.5
DESK4_ITERATIONS = 3000


@pytest.fixture(scope="session")
def desk8():
    return desk_dataset(8)


@pytest.fixture(scope="session")
def desk4():
    return desk_dataset(4)


@pytest.fixture(scope="session")
def desk8_run(desk8):
    cfg = preset_config(8)
    return train(desk8, cfg.stiff, cfg.arch, cfg.train, cfg.forward)


@pytest.fixture(scope="session")
def desk4_runs(desk4):
    cfg = dataclasses.replace(TrainConfig(), n_iterations=DESK4_ITERATIONS)
    return {p_s: train(desk4, StiffParams(p_s, DESK4_L, DESK4_SIGMA), ArchConfig(), cfg)
            for p_s in (90, 67)}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
