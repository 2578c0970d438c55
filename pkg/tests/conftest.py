import numpy as np
import pytest
import torch

from designs import TINY_AUX
from macroplace.bookshelf import parse_aux
from macroplace.synthetic import load_bundled

torch.set_num_threads(1)


@pytest.fixture
def tiny():
    return parse_aux(TINY_AUX)


@pytest.fixture(scope="session")
def synth():
    return load_bundled()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# Acceptance criteria report: one PASS/FAIL/SKIP line per criterion, printed after the run.
ACCEPTANCE: list[tuple[str, str, str]] = []


class Criterion:
    def __init__(self):
        self.entries = []

    def __call__(self, name: str, ok: bool, detail: str = "") -> bool:
        self.entries.append((name, "PASS" if ok else "FAIL", detail))
        return ok

    def skip(self, name: str, reason: str):
        self.entries.append((name, "SKIP", reason))
        pytest.skip(reason)


@pytest.fixture
def criterion(request):
    rec = Criterion()
    yield rec
    if not rec.entries:
        rec.entries.append((request.node.name, "FAIL", "errored before reporting"))
    ACCEPTANCE.extend(rec.entries)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name, status, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{status:4s}  {name}" + (f"  ({detail})" if detail else ""))
