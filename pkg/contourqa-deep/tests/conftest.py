import pytest

from contourqa_deep import load_backbone


@pytest.fixture(scope="session")
def backbone():
    return load_backbone()
