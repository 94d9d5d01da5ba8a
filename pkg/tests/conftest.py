import pytest

# criterion number -> [title, outcome, detail]
ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


def pytest_collection_modifyitems(items):
    for item in items:
        marker = item.get_closest_marker("criterion")
        if marker is not None:
            number, title = marker.args
            ACCEPTANCE.setdefault(number, [title, None, ""])
            item.user_properties.append(("criterion", number))


@pytest.fixture
def criterion(request):
    """Returns ``note(detail)`` for attaching a measured value to the summary line."""
    number = request.node.get_closest_marker("criterion").args[0]

    def note(detail):
        ACCEPTANCE[number][2] = detail

    return note


def pytest_runtest_logreport(report):
    number = dict(report.user_properties).get("criterion")
    if number is None:
        return
    entry = ACCEPTANCE[number]
    if report.skipped:
        entry[1] = "NOT RUN"
    elif report.failed:
        entry[1] = "FAIL"
    elif report.when == "call" and entry[1] != "FAIL":
        entry[1] = "PASS"


def pytest_terminal_summary(terminalreporter):
    ran = {k: v for k, v in ACCEPTANCE.items() if v[1] is not None}
    if not ran:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ran):
        title, outcome, detail = ran[number]
        line = f"criterion {number:>2} {outcome}: {title}"
        if detail:
            line += f" [{detail}]"
        terminalreporter.write_line(line)
