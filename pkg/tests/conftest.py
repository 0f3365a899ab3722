from __future__ import annotations

import shutil
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def clang_path() -> str:
    path = shutil.which("clang")
    if path is None:
        pytest.skip("clang not available")
    return path
