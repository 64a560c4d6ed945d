import numpy as np
import pytest

from covsteer.belief import GaussianBelief
from covsteer.lifted import build_lifted
from covsteer.linearize import LinearModel
from covsteer.models import DuffingParams, SystemModel, duffing_model


def rand_spd(rng, n, scale=1.0):
    a = rng.normal(0.0, scale, (n, n))
    return a @ a.T + scale * 0.3 * np.eye(n)


def scalar_lifted(a, b, d, w, H, k=0):
    """Lifted system for a scalar model z+ = a z + b u + d + w."""
    lm = LinearModel(
        A=np.array([[float(a)]]),
        B=np.array([[float(b)]]),
        r=np.array([float(d)]),
        d=np.array([float(d)]),
        k=k,
        N=k + H,
        lin_state=np.zeros(1),
        lin_input=np.zeros(1),
    )
    return build_lifted(lm, [np.array([[float(w)]])] * H)


def integrator_model(w=0.01):
    """f = x + u with scalar state and input."""
    w_mat = np.array([[float(w)]])
    return SystemModel(
        n=1,
        m=1,
        dynamics=lambda x, u: x + u,
        noise_cov=lambda t: w_mat,
        jacobian_x=lambda x, u: np.array([[1.0]]),
        jacobian_u=lambda x, u: np.array([[1.0]]),
        dynamics_batch=lambda x, u: x + u,
        name="integrator",
    )


SEC4_PARAMS = DuffingParams(tau=0.01, delta=-1.0, zeta=0.05, gamma_damp=0.05, sigma_w=1.0)


@pytest.fixture(scope="session")
def sec4_model():
    return duffing_model(SEC4_PARAMS)


@pytest.fixture(scope="session")
def sec4_beliefs():
    b0 = GaussianBelief([0.0, 0.0], np.diag([2.5**2, 2.0**2]))
    goal = GaussianBelief([0.0, 0.0], np.diag([1.25**2, 1.0**2]))
    return b0, goal
