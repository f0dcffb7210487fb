import pytest

from pgilab.config import baseline_config
from pgilab.pgi import bundled_scorecards

# filled by tests/test_acceptance.py: criterion number -> (passed, detail)
ACCEPTANCE: dict = {}


def record(num: int, name: str, passed: bool, detail: str) -> None:
    ACCEPTANCE[num] = (name, bool(passed), detail)
    print(f"[acceptance {num:>2}] {'PASS' if passed else 'FAIL'} {name}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        name, ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"{num:>2}. {'PASS' if ok else 'FAIL'}  {name}: {detail}")


@pytest.fixture(scope="session")
def cards():
    return bundled_scorecards()


@pytest.fixture(scope="session")
def raw_cards():
    return bundled_scorecards(with_dimensions=False)


@pytest.fixture(scope="session")
def baseline():
    return baseline_config()
