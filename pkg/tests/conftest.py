import contextlib
import time

# criterion number -> (title, passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


@contextlib.contextmanager
def criterion(number, title):
    """Record a pass/fail line for one acceptance criterion."""
    start = time.perf_counter()
    details = []
    try:
        yield details
    except BaseException:
        ACCEPTANCE[number] = (title, False, "; ".join(details))
        print(f"FAIL  criterion {number}: {title}")
        raise
    took = time.perf_counter() - start
    details.append(f"{took:.1f}s")
    ACCEPTANCE[number] = (title, True, "; ".join(details))
    print(f"PASS  criterion {number}: {title} ({'; '.join(details)})")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[number]
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"{status}  {number:>2}. {title}  [{detail}]")
