import numpy as np
import pytest

from beamilc.dynamics import BeamGeometry, BeamParams, analytic_init_params
from beamilc.kinematics import planar_chain, seven_dof_chain
from beamilc.plant import TwoSegmentParams

REFERENCE_Q0_7DOF = np.array([-np.pi / 2, -np.pi / 6, 0.0, -2 * np.pi / 3, 0.0,
                          np.pi / 2, np.pi / 4])


@pytest.fixture(scope="session")
def reference_beam():
    # 60 x 6 x 0.1 cm stainless beam, rho = 6.3 g/cm^3, EI = 1.267 N m^2
    return BeamGeometry(length=0.6, width=0.06, thickness=0.001,
                        density=6300.0, bending_stiffness=1.267)


@pytest.fixture(scope="session")
def nominal_params(reference_beam):
    return analytic_init_params(reference_beam)


@pytest.fixture(scope="session")
def chain3():
    return planar_chain([0.4, 0.3, 0.2])


@pytest.fixture(scope="session")
def chain2():
    return planar_chain([1.0, 1.0])


@pytest.fixture(scope="session")
def chain7():
    return seven_dof_chain()


@pytest.fixture(scope="session")
def mismatch_two_segment():
    # first mode detuned below the analytic prior, second mode near 3x
    return TwoSegmentParams(m1=0.12, l1=0.4, k1=7.835, c1=0.010,
                            m2=0.03, l2=0.2, k2=2.0856, c2=0.004)


@pytest.fixture(scope="session")
def free_params():
    # generic well-conditioned parameter set for unit tests
    return BeamParams(k=5.2, c=0.006, m=0.10, l=0.38, a=55.0, b=2.2, tau_e0=0.0)
