from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
MNIST_DIR = ROOT / "data" / "mnist5k"

# criterion number -> list of (part, passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, list[tuple[str, bool, str]]] = {}


@pytest.fixture(autouse=True)
def _repo_root(monkeypatch):
    # configs name data/mnist5k relative to the checkout
    monkeypatch.chdir(ROOT)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[number]
        verdict = "PASS" if all(ok for _, ok, _ in parts) else "FAIL"
        detail = "; ".join(f"{name}: {'ok' if ok else 'FAILED'} ({info})" for name, ok, info in parts)
        terminalreporter.write_line(f"criterion {number:2d}: {verdict}  {detail}")
