import numpy as np
import pytest

from icsmarginal import ClusteredSample


@pytest.fixture
def tiny():
    """Clusters {1, 3} and {5}."""
    return ClusteredSample.from_groups([[1.0, 3.0], [5.0]], ids=["a", "b"])


@pytest.fixture
def write_csv(tmp_path):
    def _write(text, name="data.csv"):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    return _write


def random_sample(rng, m, max_size=4, dim=1):
    sizes = rng.integers(1, max_size + 1, size=m)
    shape = (int(sizes.sum()),) if dim == 1 else (int(sizes.sum()), dim)
    return ClusteredSample(y=rng.normal(size=shape), sizes=sizes)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record and print one PASS/FAIL line for an acceptance criterion."""
    lines = request.config.stash.setdefault(_VERDICTS, [])

    def _report(label, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
        print(line)
        lines.append(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
