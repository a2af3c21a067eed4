"""Collects acceptance-criterion outcomes and prints one line per criterion."""

_outcomes: dict[int, tuple[str, str]] = {}


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            item.user_properties.append(("criterion", mark.args))


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    number, title = props["criterion"]
    failed = report.failed or (report.when == "setup" and report.skipped)
    if report.when == "call" or failed:
        prev = _outcomes.get(number, ("PASS", title))[0]
        status = "FAIL" if failed or prev == "FAIL" else "PASS"
        _outcomes[number] = (status, title)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_outcomes):
        status, title = _outcomes[number]
        terminalreporter.write_line(f"criterion {number:>2}: {status}  {title}")
