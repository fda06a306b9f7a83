import acceptance_report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not acceptance_report.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in range(1, acceptance_report.N_CRITERIA + 1):
        got = acceptance_report.RESULTS.get(num)
        if got is None:
            terminalreporter.write_line(f"criterion {num:2d}: NOT RUN")
        else:
            ok, detail = got
            verdict = "PASS" if ok else "FAIL"
            terminalreporter.write_line(f"criterion {num:2d}: {verdict} - {detail}")
