import hypothesis
import numpy as np
import pytest

from partgrasp.dataset import GenConfig, generate_object

hypothesis.settings.register_profile("default", max_examples=40, deadline=None)
hypothesis.settings.load_profile("default")


@pytest.fixture(scope="session")
def mug():
    """One fully generated mug (grasp sets included)."""
    return generate_object("mug", 0, GenConfig(categories=("mug",), placements=1, grasps_per_part=20))


@pytest.fixture(scope="session")
def small_objects():
    """Two light objects per core category, without grasp sets."""
    cfg = GenConfig(placements=1, grasps_per_part=0)
    return [generate_object(c, i, cfg) for c in cfg.categories for i in range(2)]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_VERDICTS: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def verdict():
    """Record an acceptance criterion's outcome, print it, then assert it."""
    def record(number: int, ok: bool, detail: str):
        _VERDICTS[number] = (bool(ok), detail)
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})")
        assert ok, detail
    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_VERDICTS):
        ok, detail = _VERDICTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} ({detail})")
