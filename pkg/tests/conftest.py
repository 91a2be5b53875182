from pathlib import Path

import pytest

from srsettings.admx import load_template_dirs, load_templates

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN_DIR = FIXTURES / "golden"
SMALL = FIXTURES / "small"


@pytest.fixture
def golden_catalog():
    return load_template_dirs(GOLDEN_DIR / "admx", GOLDEN_DIR / "adml", "W10 1909")


@pytest.fixture
def small_catalog():
    return load_templates([(SMALL / "three_policies.admx", SMALL / "three_policies.adml")], "Sample")


@pytest.fixture
def labeling_catalog():
    return load_templates([(SMALL / "labeling5.admx", SMALL / "labeling5.adml")], "Lab")


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 10):
        terminalreporter.write_line(results.get(n, f"ACCEPTANCE {n} NOT RUN"))
