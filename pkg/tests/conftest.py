import re
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

_CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)")


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion, with its measured values."""
    results = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            m = _CRITERION.search(getattr(rep, "nodeid", ""))
            if not m or rep.when not in ("call", "setup"):
                continue
            key = int(m.group(1))
            if outcome == "passed" and rep.when != "call":
                continue
            detail = "; ".join(f"{k}={v}" for k, v in getattr(rep, "user_properties", []))
            status = "PASS" if outcome == "passed" else "FAIL"
            if results.get(key, ("PASS",))[0] == "FAIL":
                continue
            results[key] = (status, m.group(2), detail)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(results):
        status, name, detail = results[key]
        line = f"criterion {key:2d} {status}  {name}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
