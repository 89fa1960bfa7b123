import warnings

import pytest

from resolute.core import ResoluteWarning


@pytest.fixture
def quiet():
    """Silence the t_corr <= tau advisory for tests that cross it on purpose."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ResoluteWarning)
        yield
