import pytest

from lfpplab.scaling import build_table

# Real table used by the scaling and acceptance tests: four dyadic levels, four
# lattice points per eps, 40 replicas, master seed 0.
TABLE_EPS = (0.1, 0.05, 0.025, 0.0125)
TABLE_XI = 0.2


@pytest.fixture(scope="session")
def real_table():
    return build_table(TABLE_EPS, TABLE_XI, lambda e: e / 4, 40, 0)


@pytest.fixture(scope="session")
def real_table_csv(real_table, tmp_path_factory):
    p = tmp_path_factory.mktemp("table") / "scaling.csv"
    real_table.to_csv(p)
    return p


# ---------------------------------------------------------------- acceptance report

N_CRITERIA = 14


def pytest_configure(config):
    config._acceptance = {}


@pytest.fixture
def criterion(request):
    """Record the outcome of one acceptance criterion, then assert it."""

    def record(n, ok, detail):
        request.config._acceptance[n] = (bool(ok), detail)
        assert ok, f"criterion {n}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    res = config._acceptance
    ran = any("test_acceptance" in str(i.nodeid) for i in getattr(terminalreporter, "stats", {}).get("passed", [])
              + terminalreporter.stats.get("failed", []))
    if not res and not ran:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        if n in res:
            ok, detail = res[n]
            terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
        elif ran:
            terminalreporter.write_line(f"FAIL criterion {n}: not run or raised before reporting")
