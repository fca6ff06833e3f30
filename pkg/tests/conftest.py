import pytest

from otalign import _kernels


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Compile (or load from cache) the jitted kernels once per session."""
    _kernels.warmup()
