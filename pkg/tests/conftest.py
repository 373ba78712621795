"""Collects acceptance verdicts and prints them as one line per criterion."""

VERDICTS: dict[int, tuple[bool, str]] = {}
CRITERIA = {
    1: "gradient suite",
    2: "linear attention reduces to standard",
    3: "complexity scaling",
    4: "channel calibration",
    5: "BP sanity",
    6: "transformer vs one-iteration BP",
    7: "code construction invariants",
    8: "end-to-end determinism",
}


def record(criterion: int, ok: bool, detail: str) -> None:
    VERDICTS[criterion] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for c, name in CRITERIA.items():
        if c in VERDICTS:
            ok, detail = VERDICTS[c]
            terminalreporter.write_line(f"criterion {c} ({name}): {'PASS' if ok else 'FAIL'} - {detail}")
        else:
            terminalreporter.write_line(f"criterion {c} ({name}): NOT RUN")
