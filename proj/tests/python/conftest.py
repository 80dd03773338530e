import os
import pathlib
import shutil

import pytest

ROOT = pathlib.Path(__file__).resolve().parents[2]


@pytest.fixture(scope="session")
def cli():
    path = os.environ.get("SCANPLAN_CLI") or shutil.which("scanplan")
    if not path:
        pytest.skip("scanplan executable not available")
    return path


@pytest.fixture(scope="session")
def scenarios():
    return pathlib.Path(os.environ.get("SCANPLAN_SCENARIOS", ROOT / "scenarios"))
