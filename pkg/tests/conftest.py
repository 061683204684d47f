import numpy as np
import pytest
import torch
from util import ACCEPTANCE

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int("".join(c for c in k[2:] if c.isdigit())), k)):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{key:<5} {'PASS' if ok else 'FAIL'}  {detail}")
