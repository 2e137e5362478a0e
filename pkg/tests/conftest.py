import sys
from pathlib import Path

import pytest

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    """No DUALIS_* settings leak in from the developer's shell."""
    for key in ("DUALIS_SEED", "DUALIS_OUTPUT", "DUALIS_THREADS", "DUALIS_CONFIG", "DUALIS_LEDGER"):
        monkeypatch.delenv(key, raising=False)
    monkeypatch.setenv("DUALIS_NO_LOG_FILE", "1")
