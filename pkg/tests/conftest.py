import pytest

from cbi_cls.model import CbiParams

# critical parameter sets used across the suite; every one has beta_tilde > 0
STANDARD = {
    "pure-immigration": CbiParams(nu=[(1.0, 1.0)]),
    "pure-immigration-mixed": CbiParams(beta=0.5, nu=[(0.5, 2.0), (3.0, 0.2)]),
    "cir": CbiParams(c=0.5, beta=1.0),
    "cir-low-immigration": CbiParams(c=1.0, beta=0.1),
    # b = -(2 - 1) * 0.5 makes b_tilde = 0
    "jumps": CbiParams(c=0.5, beta=0.5, b=-0.5, mu=[(0.5, 1.0), (2.0, 0.5)], nu=[(1.0, 0.5)]),
}

_acceptance_lines: list[str] = []


@pytest.fixture
def record():
    """Collect one pass/fail line per acceptance criterion for the terminal summary."""

    def _record(criterion: int, ok: bool, detail: str):
        line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
        _acceptance_lines.append(line)
        print(line)
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)
