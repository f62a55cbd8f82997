import pytest


@pytest.fixture
def write_config(tmp_path):
    def write(text, name="run.toml"):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    return write


HEAT = """
[grid]
N = 64
[time]
T = 0.01
dt = 1e-3
snapshots = 2
[noise]
mu_preset = "zero"
[ensemble]
paths = 1
[outputs]
bessel_gammas = []
"""

PURE_NOISE = """
[grid]
N = 32
[time]
T = 0.2
dt = 1e-4
snapshots = 2
[initial]
preset = "constant"
amplitude = 1.0
[noise]
mu_scale = 0.5
[ensemble]
paths = 4
[analysis]
checks = ["positivity"]
[outputs]
bessel_gammas = []
"""


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
