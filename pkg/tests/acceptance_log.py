"""PASS/FAIL lines collected by the acceptance suite, echoed in the terminal summary."""

LINES = []


def report(n, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    LINES.append(line)
    print(line)
    return ok
