import pytest

from adapter.make_tiny_checkpoint import build


@pytest.fixture(scope="session")
def tiny_checkpoint(tmp_path_factory):
    return str(build(str(tmp_path_factory.mktemp("ckpt") / "tiny")))
