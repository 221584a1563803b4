"""Print one line per acceptance criterion at the end of the run."""


def pytest_terminal_summary(terminalreporter):
    verdicts = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            props = dict(getattr(rep, "user_properties", []))
            crit = props.get("criterion")
            if crit is None or rep.when != "call" and outcome == "passed":
                continue
            ok = outcome == "passed" and verdicts.get(crit, True)
            verdicts[crit] = ok
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(verdicts, key=lambda c: int(c.split("-")[1])):
        terminalreporter.write_line(f"{crit}: {'PASS' if verdicts[crit] else 'FAIL'}")
