"""Shared pytest wiring: acceptance-criteria summary lines."""


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    rows = []
    for status in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(status, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance" in nodeid and getattr(rep, "when", "call") == "call":
                rows.append((nodeid.split("::")[-1], status))
    if not rows:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name, status in sorted(set(rows)):
        verdict = "PASS" if status == "passed" else "FAIL"
        terminalreporter.write_line(f"{verdict}  {name}")
