"""Shared store for acceptance results, printed in the terminal summary."""

RESULTS: dict[int, tuple[bool, str]] = {}


def record(number: int, passed: bool, detail: str) -> None:
    RESULTS[number] = (bool(passed), detail)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}")
