import numpy as np
import pytest

from hetgnn.build import build_graph
from hetgnn.graph import CELL, TISSUE, EntitySet


def random_graph(rng, n_cells=8, n_tissues=3, dim=16, k=5, edge_mode="feat-knn", label=0):
    cells = EntitySet(CELL, rng.uniform(0, 100, size=(n_cells, 2)),
                      rng.uniform(-1, 1, size=(n_cells, dim)))
    tissues = EntitySet(TISSUE, rng.uniform(0, 100, size=(n_tissues, 2)),
                        rng.uniform(-1, 1, size=(n_tissues, dim)))
    return build_graph(cells, tissues, edge_mode, k, label=label)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def make_graph():
    return random_graph


# acceptance reporting: one line per numbered criterion

def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): numbered acceptance criterion")
    config._acceptance = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        number, title = marker.args
        entry = item.config._acceptance.setdefault(number, {"title": title, "ok": True, "notes": []})
        entry["ok"] &= report.passed
        entry["notes"].extend(v for k, v in report.user_properties if k == "detail")
        if not report.passed:
            entry["notes"].append(f"{item.name} {report.outcome}")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = getattr(config, "_acceptance", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        entry = results[number]
        status = "PASS" if entry["ok"] else "FAIL"
        notes = "; ".join(entry["notes"])
        terminalreporter.write_line(f"criterion {number:>2} {status}  {entry['title']}  {notes}".rstrip())
