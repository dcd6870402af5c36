import numpy as np
import pytest

from splitkit.ingest import build_dataset


def random_log(seed, n_users=8, n_items=15, max_baskets=6, max_items=4, horizon=50):
    """Random basket log with timestamp ties inside and across users."""
    rng = np.random.default_rng(seed)
    users, items, stamps, baskets = [], [], [], []
    b = 0
    for u in range(n_users):
        for _ in range(int(rng.integers(1, max_baskets + 1))):
            t = int(rng.integers(0, horizon))
            size = int(rng.integers(1, min(max_items, n_items) + 1))
            for i in rng.choice(n_items, size=size, replace=False).tolist():
                users.append(f"u{u}")
                items.append(f"i{i}")
                stamps.append(t)
                baskets.append(f"b{b}")
            b += 1
    return build_dataset(users, items, stamps, baskets=baskets)


@pytest.fixture
def toy():
    # 3 users; u0 and u1 overlap in time, u2 arrives late with a new item
    rows = [
        ("u0", "a", 1, "b0"), ("u0", "b", 1, "b0"),
        ("u0", "c", 3, "b1"),
        ("u0", "a", 6, "b2"), ("u0", "d", 6, "b2"),
        ("u1", "b", 2, "b3"),
        ("u1", "c", 4, "b4"),
        ("u1", "a", 5, "b5"), ("u1", "b", 5, "b5"),
        ("u1", "d", 8, "b6"),
        ("u2", "a", 7, "b7"),
        ("u2", "e", 9, "b8"),
    ]
    u, i, t, b = zip(*rows)
    return build_dataset(u, i, t, baskets=b)


@pytest.fixture
def log():
    return random_log(0, n_users=30, n_items=25, max_baskets=8)


# --- acceptance summary -------------------------------------------------------

_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or not marker.args:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        number, title = marker.args
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        detail = ""
        if report.outcome == "skipped" and isinstance(report.longrepr, tuple):
            detail = f" ({report.longrepr[2]})"
        _CRITERIA[number] = f"criterion {number} {status}: {title} [{report.duration:.1f} s]{detail}"


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[number])
