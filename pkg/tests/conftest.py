def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import REPORT, summary_lines
    except ImportError:
        return
    if not REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for line in summary_lines():
        terminalreporter.write_line(line)
