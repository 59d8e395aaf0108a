import functools

import pytest

import oracles

ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def verdict(request):
    """verdict(tag, passed, detail): print and keep one PASS/FAIL line per criterion."""
    def record(tag, passed, detail):
        line = f"{tag} {'PASS' if passed else 'FAIL'}: {detail}"
        print(line)
        request.config.stash[ACCEPTANCE].append(line)
        return passed

    return record


@functools.lru_cache(maxsize=None)
def shells_by_class(m, n_max, moduli=(1, 2, 3)):
    return oracles.primitive_shells_by_class(m, n_max, moduli)


@pytest.fixture(scope="session")
def class_shells():
    """Cached brute-force primitive shells by residue class: class_shells(m, n_max)."""
    return shells_by_class
