import warnings

import numpy as np
import pytest

from sirv_mfc.grid import GridSpec, KernelSpec, make_ball
from sirv_mfc.model import (
    Bump,
    ControlWeights,
    EpidemicParams,
    InitialData,
    SIRVModel,
    VaccineLogistics,
)
from sirv_mfc.state import StateVector


def small_model(nx=8, nt=8, kernel=(0.2, 0.2), eta=0.05, **changes) -> SIRVModel:
    """Exp1-like model on a coarse grid with a kernel wide enough to matter."""
    grid = GridSpec(nx, nx, nt)
    init = InitialData(
        bumps={
            "S": (Bump(2.0, 5.0, (0.7, 0.7), 1.5),),
            "I": (Bump(2.0, 5.0, (0.7, 0.7), 1.8),),
        }
    )
    factory = make_ball(grid, (0.3, 0.3), 0.2)
    model = SIRVModel(
        grid=grid,
        epidemic=EpidemicParams(0.8, 0.1, 0.9, 0.9, eta, eta, eta, KernelSpec(*kernel)),
        weights=ControlWeights(),
        logistics=VaccineLogistics(10.0, 2.0, factory, factories=(factory,)),
        rho0=init.densities(grid),
    )
    return model.replace(**changes) if changes else model


def positive_state(model, rng, scale=1.0) -> StateVector:
    u = StateVector.random(model.grid, rng, positive=True) * scale
    u.rho += 0.05
    return u


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def model():
    return small_model()


@pytest.fixture(autouse=True)
def _quiet_kernel_warning():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="kernel widths")
        yield
