"""Shared fixtures: small corpora and probe images.

Everything is seeded; fixtures are session-scoped because the corpus
generator is the slowest shared dependency and the images are never
mutated by tests.
"""

import numpy as np
import pytest

from normeq import make_corpus, make_image


@pytest.fixture(scope="session")
def small_corpus():
    """Twelve 48x48 clean images spanning all four pattern families."""
    return make_corpus(12, 48, np.random.default_rng(1000))


@pytest.fixture(scope="session")
def probe_images():
    """Three nonconstant 32x32 instances for equivariance probing."""
    return make_corpus(3, 32, np.random.default_rng(7))


@pytest.fixture(scope="session")
def textured_image():
    """One 32x32 instance with visible structure at mid contrast."""
    return make_image(32, np.random.default_rng(40))
