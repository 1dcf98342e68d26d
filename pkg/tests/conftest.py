import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

sys.path.insert(0, str(Path(__file__).parent))

from c0embed.metric import FiniteMetricSpace, validate_metric  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def path3():
    """Path metric 0 - 1 - 2 with unit edges."""
    return validate_metric([[0, 1, 2], [1, 0, 1], [2, 1, 0]])


@pytest.fixture
def line056():
    """Points 0, 5, 6 on the real line."""
    return FiniteMetricSpace.from_points([[0.0], [5.0], [6.0]], p=1.0)


@st.composite
def point_spaces(draw, n_min=2, n_max=9, dim_max=3, p=None):
    """Distinct points on a 1/8 grid under an l^p norm."""
    n = draw(st.integers(n_min, n_max))
    dim = draw(st.integers(1, dim_max))
    pp = p if p is not None else draw(st.sampled_from([1.0, 2.0, np.inf]))
    cells = draw(st.lists(st.tuples(*[st.integers(-40, 40)] * dim), min_size=n, max_size=n, unique=True))
    return FiniteMetricSpace.from_points(np.array(cells, dtype=float) / 8.0, p=pp)


@st.composite
def dyadic_l1_spaces(draw, n_min=3, n_max=10):
    """l1 spaces on a 1/16 grid, where every distance and sum is exact in floating point."""
    n = draw(st.integers(n_min, n_max))
    dim = draw(st.integers(1, 3))
    cells = draw(st.lists(st.tuples(*[st.integers(-64, 64)] * dim), min_size=n, max_size=n, unique=True))
    return FiniteMetricSpace.from_points(np.array(cells, dtype=float) / 16.0, p=1.0)
