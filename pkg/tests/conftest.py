import pytest

from mcfluidics.transport_core import FlowEnv

_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def env():
    """Desk-scale transport environment shared by every experiment."""
    return FlowEnv(v_eff=0.002, D=1e-9, D_eff=1e-8)


@pytest.fixture(scope="session")
def verdict():
    """Record one acceptance line; the assertion is left to the caller."""
    def record(number: int, ok: bool, detail: str) -> bool:
        _ACCEPTANCE[number] = (bool(ok), detail)
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
        return bool(ok)
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
