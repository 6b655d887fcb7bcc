import numpy as np
import pytest
from PIL import Image


def write_pngs(root, counts, size=8, value=None):
    for label, n in counts.items():
        d = root / str(label)
        d.mkdir(parents=True, exist_ok=True)
        rng = np.random.default_rng(label)
        for i in range(n):
            arr = np.full((size, size), value, np.uint8) if value is not None else rng.integers(0, 256, (size, size), dtype=np.uint8)
            Image.fromarray(arr, mode="L").save(d / f"img_{i:04d}.png")
    return root


@pytest.fixture
def png_tree(tmp_path):
    return lambda counts, **kw: write_pngs(tmp_path / "data", counts, **kw)


_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(number, title, ok, detail=""):
        _CRITERIA[number] = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}" + (f"  ({detail})" if detail else "")
        print(_CRITERIA[number])
        assert ok, _CRITERIA[number]

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
