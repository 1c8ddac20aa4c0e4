from pathlib import Path

import pytest

DATA = Path(__file__).parent / "data"
TASK_FILE = DATA / "task_binding_6.json"


@pytest.fixture(scope="session")
def task_path() -> str:
    return str(TASK_FILE)
