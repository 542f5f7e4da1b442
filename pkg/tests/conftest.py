import numpy as np
import pytest
from hypothesis import settings

from idecorona.acceptance import PaperPipeline
from idecorona.model import paper_example

settings.register_profile("repo", max_examples=40, deadline=None)
settings.load_profile("repo")


@pytest.fixture(scope="session")
def pipeline():
    """Checked, synthesized and simulated example; shared because the grid sweep takes seconds."""
    return PaperPipeline.run()


@pytest.fixture(scope="session")
def example():
    return paper_example()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
