import os
from pathlib import Path

import pytest

from dagagg.oracles import load_csv

WINE_DEFAULT = Path(__file__).resolve().parent.parent / "data" / "winequality-white.csv"

_acceptance = {}


def wine_path() -> Path:
    return Path(os.environ.get("DAGAGG_WINE_CSV", WINE_DEFAULT))


def load_wine_or_fail():
    """The white wine-quality CSV, or a test failure naming where it was looked for."""
    path = wine_path()
    if not path.exists():
        pytest.fail(f"dataset unavailable: wine-quality CSV not found at {path} "
                    "(set DAGAGG_WINE_CSV to the semicolon-delimited UCI file)")
    return load_csv(path, ";", "quality")


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        name = report.nodeid.split("::")[-1]
        _acceptance[name] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_acceptance, key=lambda n: (len(n.split("_")[2]), n)):
        status = "PASS" if _acceptance[name] == "passed" else "FAIL"
        terminalreporter.write_line(f"{status}  {name}")
