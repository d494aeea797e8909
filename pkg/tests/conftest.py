import itertools

import numpy as np
import pytest

from photonloop import LoopConfig


@pytest.fixture
def splitter_half_config():
    """Passive loop at R=0.5, eta=0.9, nu=1e-3: the standard bench setup."""
    return LoopConfig(mode="passive", R=0.5, eta=0.9, nu=1e-3)


@pytest.fixture
def hdr_config():
    """High-dynamic-range passive loop with a very low noise floor."""
    return LoopConfig(mode="passive", R=0.91370, eta=0.8615, nu=1.2e-7)


def enumerate_independent_patterns(p):
    """Exact c_k for N independent bins with click probabilities p.

    Brute force over all 2^N patterns; oracle for the witness formulas.
    """
    p = np.asarray(p, dtype=float)
    n = len(p)
    c = np.zeros(n + 1)
    for pattern in itertools.product([0, 1], repeat=n):
        fired = np.array(pattern, dtype=bool)
        prob = np.prod(np.where(fired, p, 1.0 - p))
        c[fired.sum()] += prob
    return c
