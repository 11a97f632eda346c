import acceptance_runs


def pytest_terminal_summary(terminalreporter):
    if acceptance_runs.REPORT:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in acceptance_runs.REPORT:
            terminalreporter.write_line(line)
