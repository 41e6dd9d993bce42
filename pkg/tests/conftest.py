import os
import sys

import pytest
import torch

sys.path.insert(0, os.path.dirname(__file__))


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)
    yield


# acceptance criteria report: one line per criterion at the end of the run
CRITERIA = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[key])
