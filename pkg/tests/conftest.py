from __future__ import annotations

import pytest

from support import REFERENCE


@pytest.fixture
def reference_text() -> str:
    return REFERENCE.read_text(encoding="utf-8")
