import re


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion at the end of the run."""
    results = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            if getattr(rep, "when", "call") != "call" and outcome == "passed":
                continue
            m = re.search(r"test_acceptance\.py::test_criterion_(\d+)",
                          getattr(rep, "nodeid", ""))
            if m:
                n = int(m.group(1))
                ok = outcome == "passed"
                results[n] = results.get(n, True) and ok
    if not results:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for n in sorted(results):
        status = "PASS" if results[n] else "FAIL"
        terminalreporter.write_line(f"acceptance criterion {n:2d}: {status}")
