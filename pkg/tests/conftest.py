from __future__ import annotations

import numpy as np
import pytest

from chaostex.data import SynthSpec, gen_synthetic_textures


@pytest.fixture(scope="session")
def small_corpus():
    """5 classes x 8 images of 16x16; cheap enough for training smoke tests."""
    return gen_synthetic_textures(SynthSpec(n_per_class=8, size=16))


@pytest.fixture(scope="session")
def default_corpus():
    return gen_synthetic_textures(SynthSpec())


@pytest.fixture
def rng():
    return np.random.default_rng(20240521)


_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def acceptance():
    """Record one verdict line per acceptance criterion."""

    def record(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE[number] = line
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
