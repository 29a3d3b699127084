import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from semrobe.embedding import EmbeddingTable
from semrobe.model import init_model

settings.register_profile("semrobe", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("semrobe")


@pytest.fixture
def grid_table():
    """Five words on a line, spaced 0.1 apart in the first coordinate."""
    vocab = ("a", "b", "c", "d", "e")
    vecs = np.zeros((5, 3))
    vecs[:, 0] = np.arange(5) * 0.1
    vecs[:, 1] = 0.5
    return EmbeddingTable(vocab, vecs)


@pytest.fixture
def tiny_model():
    return init_model(4, 3, (6, 5), seed=3, dtype=np.float64)


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance verdicts, one line per criterion, at the end of the run."""
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when != "call":
                continue
            for key, value in getattr(rep, "user_properties", []):
                if key == "criterion":
                    lines.append((value, "PASS" if outcome == "passed" else "FAIL"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for value, verdict in sorted(lines, key=lambda item: int(item[0].split(":")[0])):
            terminalreporter.write_line(f"{verdict}  criterion {value}")
