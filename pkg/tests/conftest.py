import numpy as np
import pytest

from fvsde.velocity import ProblemSpec, make_initial, make_scalar, make_velocity


def build_spec(g=("zero", {}), beta=("zero", {}), v=("zero", {}), u0=("zero", {}),
               horizon=1.0, rect=(0.0, 0.0, 1.0, 1.0), **overrides) -> ProblemSpec:
    """Assemble a ProblemSpec from registry names, deriving the constants."""
    gc = make_scalar(*g)
    bc = make_scalar(*beta)
    vf = make_velocity(v[0], v[1], rect=rect)
    u0f = make_initial(*u0)
    kwargs = dict(
        g=gc.fn, g_lipschitz=gc.lipschitz, g_growth_const=gc.growth_const,
        beta=bc.fn, beta_lipschitz=bc.lipschitz,
        velocity=vf.fn, velocity_sup=vf.sup, velocity_dt_sup=vf.dt_sup,
        velocity_time_dependent=vf.time_dependent,
        u0=u0f, T=horizon,
        g_is_zero=gc.is_zero, beta_is_zero=bc.is_zero,
    )
    kwargs.update(overrides)
    return ProblemSpec(**kwargs)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
