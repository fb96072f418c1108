import numpy as np
import pytest

from thermoface import _fallback, kernels


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


BACKENDS = ["numpy"] + (["cython"] if kernels._compiled is not None else [])


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Run a test once per available kernel backend."""
    impl = _fallback if request.param == "numpy" else kernels._compiled
    monkeypatch.setattr(kernels, "_impl", impl)
    return request.param


_ACCEPTANCE: dict[int, str] = {}


class _Criterion:
    def __init__(self, number, title, budget_s):
        self.number, self.title, self.budget_s = number, title, budget_s
        self.detail = ""
        self.elapsed = 0.0


@pytest.fixture
def criterion():
    """``with criterion(n, title, budget_s) as c:`` records one PASS/FAIL line.

    Failing assertions inside the block, or exceeding the runtime budget,
    mark the criterion FAIL; the exception still propagates to pytest.
    """
    import contextlib
    import time

    @contextlib.contextmanager
    def run(number, title, budget_s):
        c = _Criterion(number, title, budget_s)
        start = time.perf_counter()
        try:
            yield c
            c.elapsed = time.perf_counter() - start
            assert c.elapsed < budget_s, f"runtime {c.elapsed:.1f} s exceeds budget {budget_s} s"
        except BaseException as exc:
            c.elapsed = time.perf_counter() - start
            msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
            _record(c, "FAIL", msg)
            raise
        _record(c, "PASS", c.detail)

    return run


def _record(c, status, detail):
    line = f"criterion {c.number} {status}: {c.title} ({c.elapsed:.2f} s, budget {c.budget_s:g} s)"
    if detail:
        line += f" -- {detail}"
    _ACCEPTANCE[c.number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
