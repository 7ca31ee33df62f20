import numpy as np
import pytest

from rar.core import Config
from rar.data import SyntheticSpec, generate

SMALL_SPEC = dict(n_users=60, n_items=120, r=20, l=10, exposure_depth=15, interaction_frac=0.6)


@pytest.fixture(scope="session")
def small_ds():
    return generate(SyntheticSpec(**SMALL_SPEC))


@pytest.fixture
def small_cfg():
    return Config(r=20, l=10, k_l=4, k_r=6, d1=8, mlp_hidden=(8,), head_hidden=(16, 8), batch_size=32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
