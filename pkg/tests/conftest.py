import pytest


@pytest.fixture
def report(capsys):
    """Print one criterion verdict straight to the terminal, bypassing capture."""

    def emit(number, title, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'} {title}: {detail}")
        return ok

    return emit
