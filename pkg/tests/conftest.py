import numpy as np
import pytest

from rashomon_consensus import forest, providers
from rashomon_consensus.data import matrix_csv
from rashomon_consensus.synthetic import additive_task, kernel_task

ADDITIVITY_CHECKS = {"count": 0}
_ACCEPTANCE = {}


@pytest.fixture(autouse=True)
def tree_shap_additivity(monkeypatch):
    """Every tree attribution computed anywhere in the suite must sum to the tree's gap."""
    original = forest.tree_shap

    def checked(tree, x, background, groups=None):
        phi = original(tree, x, background, groups)
        x = np.asarray(x, dtype=float).ravel()
        gap = tree.predict(x[None, :])[0] - tree.predict(np.atleast_2d(background)).mean()
        assert abs(phi.sum() - gap) <= 1e-9 * max(1.0, abs(gap)), "tree attributions do not sum to the gap"
        ADDITIVITY_CHECKS["count"] += 1
        return phi

    monkeypatch.setattr(forest, "tree_shap", checked)
    monkeypatch.setattr(providers, "tree_shap", checked)
    yield


@pytest.fixture(scope="session")
def datasets(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    X, y = additive_task(150, seed=1)
    (root / "add.csv").write_text(matrix_csv(X, y, ["a", "b", "c", "dummy"]))
    X, y = kernel_task(25, seed=2)
    (root / "ker.csv").write_text(matrix_csv(X, y, ["a", "b", "c", "d"]))
    rng = np.random.default_rng(3)
    rows = ["color,a,b,y"]
    for _ in range(120):
        color = ["red", "green", "blue"][rng.integers(0, 3)]
        a, b = (float(v) for v in rng.standard_normal(2))
        target = a + (color == "red") + 0.3 * float(rng.standard_normal())
        rows.append(f"{color},{a!r},{b!r},{target!r}")
    (root / "cat.csv").write_text("\n".join(rows) + "\n")
    return root


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _ACCEPTANCE[name] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE):
        status = "PASS" if _ACCEPTANCE[name] == "passed" else "FAIL"
        terminalreporter.write_line(f"{status}  {name}")
    terminalreporter.write_line(f"tree attribution additivity checks: {ADDITIVITY_CHECKS['count']}")
