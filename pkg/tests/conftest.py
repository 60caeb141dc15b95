import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "finhol",
    deadline=None,
    derandomize=True,
    max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("finhol")

BUILTIN_CASES = [
    ("euclidean", {}),
    ("klein", {}),
    ("sphere", {}),
    ("funk", {}),
    ("projective_randers", {"a": (0.5, 0.0)}),
    ("shen_disk", {"eps": 0.3}),
    ("shen_sphere", {"eps": 0.3}),
]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def unit_vectors(rng, n):
    th = rng.uniform(0, 2 * np.pi, n)
    return np.stack([np.cos(th), np.sin(th)])


ACCEPTANCE_LINES: dict = {}


def record_criterion(number: int, line: str) -> None:
    ACCEPTANCE_LINES[number] = line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
