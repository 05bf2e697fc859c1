RESULTS = {}


def record(criterion: int, passed: bool, detail: str) -> None:
    RESULTS[criterion] = (passed, detail)
    print(f"CRITERION {criterion}: {'PASS' if passed else 'FAIL'} - {detail}", flush=True)


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(RESULTS):
        passed, detail = RESULTS[k]
        terminalreporter.write_line(f"CRITERION {k}: {'PASS' if passed else 'FAIL'} - {detail}")
