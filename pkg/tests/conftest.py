def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One line per acceptance criterion at the end of the run."""
    rows = []
    for status in ("passed", "failed", "error", "skipped"):
        for report in terminalreporter.stats.get(status, []):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance" in nodeid and "::" in nodeid:
                rows.append((nodeid.split("::")[-1], status.upper()))
    if not rows:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name, status in sorted(set(rows)):
        terminalreporter.write_line(f"{status:8s} {name}")
