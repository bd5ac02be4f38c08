import numpy as np
import pytest

from fluxobs import SMIB_COEFFICIENTS, Scenario, run_scenario
from fluxobs.config import load_config

X_QP = 0.0608


@pytest.fixture(scope="session")
def smib_cfg():
    return load_config("smib_vi_a")


@pytest.fixture(scope="session")
def smib_traj(smib_cfg):
    return run_scenario(smib_cfg.scenario)


@pytest.fixture(scope="session")
def short_traj():
    s = Scenario(coeffs=SMIB_COEFFICIENTS, x_qp=X_QP, T=3.0, drem_gains=(1e15,),
                 overparam_gains=(1e6,), gradient_gains=(1.0,))
    return run_scenario(s)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
