import pytest
import torch

_RESULTS: dict[int, str] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running end-to-end checks (still run by default)")
    torch.set_num_threads(1)


@pytest.fixture
def criterion(request, capsys):
    """Record a one-line verdict per acceptance criterion and echo it immediately."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}"
        _RESULTS[number] = line
        with capsys.disabled():
            print(f"\n{line}", flush=True)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        terminalreporter.write_line(_RESULTS[number])
