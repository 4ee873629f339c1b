import numpy as np
import pytest

import mixedcorr as mc

ACCEPT_SEED = 20260810

R_DESIGN1 = np.array(
    [
        [1.0, 0.3, 0.4, 0.5],
        [0.3, 1.0, 0.6, 0.7],
        [0.4, 0.6, 1.0, 0.8],
        [0.5, 0.7, 0.8, 1.0],
    ]
)
TRUE1 = np.array([0.3, 0.4, 0.5, 0.6, 0.7, 0.8])

R_DESIGN2 = np.array(
    [
        [1.0, -0.4, -0.3, -0.2, -0.1],
        [-0.4, 1.0, 0.0, 0.1, 0.2],
        [-0.3, 0.0, 1.0, 0.3, 0.4],
        [-0.2, 0.1, 0.3, 1.0, 0.5],
        [-0.1, 0.2, 0.4, 0.5, 1.0],
    ]
)
TRUE2 = np.array([-0.4, -0.3, -0.2, -0.1, 0.0, 0.1, 0.2, 0.3, 0.4, 0.5])
TERNARY_CUTS = [-0.431, 0.431]


def design1(n=1000, replications=2, seed=ACCEPT_SEED, fit=None):
    return mc.SimDesign(
        continuous=("Y1", "Y2"),
        ordinal=(("X1", [0.0]), ("X2", [0.0])),
        r_true=R_DESIGN1,
        n=n,
        replications=replications,
        seed=seed,
        fit=fit or mc.FitConfig(),
        name="design1",
    )


def design2(n=1000, replications=2, seed=ACCEPT_SEED, fit=None):
    return mc.SimDesign(
        continuous=("Y1", "Y2"),
        ordinal=(("X1", TERNARY_CUTS), ("X2", TERNARY_CUTS), ("X3", TERNARY_CUTS)),
        r_true=R_DESIGN2,
        n=n,
        replications=replications,
        seed=seed,
        fit=fit or mc.FitConfig(),
        name="design2",
    )


@pytest.fixture(scope="session")
def four_var_system():
    return mc.build_system(design1().specs, mc.MAX_SET)


@pytest.fixture(scope="session")
def c2d3_system():
    return mc.build_system(design2().specs, mc.MAX_SET)


@pytest.fixture(scope="session")
def design1_data():
    """One design-1 replication at n=1000."""
    return mc.generate(design1(), 0)


@pytest.fixture(scope="session")
def study1_n1000():
    """Design-1 two-step study, n=1000, N=1000 (acceptance criteria 1-2)."""
    return mc.run_study(design1(n=1000, replications=1000), workers=1, keep_estimates=True)


@pytest.fixture(scope="session")
def study2_n1000():
    """Design-2 two-step study, n=1000, N=500 (acceptance criterion 3)."""
    return mc.run_study(design2(n=1000, replications=500), workers=1)
