"""Prints one line per acceptance criterion at the end of the session."""

_acceptance = []


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _acceptance.append((props["criterion"], report.outcome, props.get("detail", "")))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for label, outcome, detail in sorted(_acceptance, key=lambda row: int(row[0].split()[0])):
        status = "PASS" if outcome == "passed" else "FAIL"
        line = f"ACCEPTANCE [{status}] {label}"
        if detail:
            line += f" | {detail}"
        terminalreporter.write_line(line)
