import pytest

_ACCEPTANCE = {}


class _Recorder:
    def __call__(self, criterion, part, ok, detail=""):
        """Record one sub-check of an acceptance criterion and return ``ok``."""
        _ACCEPTANCE.setdefault(criterion, []).append((part, bool(ok), detail))
        print(f"{criterion} {part}: {'PASS' if ok else 'FAIL'} {detail}")
        return bool(ok)


@pytest.fixture
def acceptance():
    return _Recorder()


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(_ACCEPTANCE, key=lambda c: int(c[1:])):
        parts = _ACCEPTANCE[crit]
        failed = [p for p, ok, _ in parts if not ok]
        status = "FAIL" if failed else "PASS"
        detail = "; ".join(f"{p}={'ok' if ok else 'FAIL'} ({d})" if d else f"{p}={'ok' if ok else 'FAIL'}"
                           for p, ok, d in parts)
        terminalreporter.write_line(f"{crit} {status}: {detail}")
