def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for res in RESULTS.values():
        terminalreporter.write_line(res.line())
        for d in res.diagnostics:
            terminalreporter.write_line("    diagnostic: " + d)
