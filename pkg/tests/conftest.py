import re


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import REPORT

    if not REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(REPORT, key=lambda k: (int(re.match(r"\d+", k).group()), k)):
        terminalreporter.write_line(REPORT[key])
