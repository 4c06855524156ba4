import logging
from pathlib import Path
from tempfile import TemporaryDirectory
from unittest import TestCase

import numpy as np
import pytest

from scattersim.media import MediumKind, MediumSpec, generate_medium


@pytest.fixture(autouse=True)
def no_logs_gte_error(caplog, request):
    yield  # Yielding here runs the test itself
    if "allowloggingwarn" in request.keywords:
        return
    errors = [
        record
        for record in caplog.get_records("call")
        if record.levelno >= logging.WARNING
    ]
    formatter = logging.Formatter("%(name)s:%(lineno)d  %(levelname)s - %(message)s")
    assert (
        not errors
    ), f"Got Warning logged: {[formatter.format(error) for error in errors]}"


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "allowloggingwarn: mark for allowing logger warnings"
    )
    config.addinivalue_line(
        "markers", "slow: end to end runs of the experiment cases"
    )


class MediumBaseTest(TestCase):
    """Shares one generated medium and a temporary directory per test class."""

    __test__ = False
    kind = MediumKind.LINEAR
    in_dims = (16, 16)
    out_dims = (24, 24)
    seed = 1

    @classmethod
    def setUpClass(cls) -> None:
        cls.medium = generate_medium(MediumSpec(cls.kind, cls.in_dims, cls.out_dims, cls.seed))
        cls._tmp = TemporaryDirectory()
        cls.tmp_path = Path(cls._tmp.name)

    @classmethod
    def tearDownClass(cls) -> None:
        cls._tmp.cleanup()

    def assertAllClose(self, actual, expected, rtol=1e-10, atol=0.0):
        np.testing.assert_allclose(actual, expected, rtol=rtol, atol=atol)
