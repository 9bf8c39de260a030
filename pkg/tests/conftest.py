from __future__ import annotations

import pytest

from ringwatch.attributes import RawRegistrationEvent, default_schema, normalize

ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def record_criterion(name: str, passed: bool, detail: str = "") -> None:
    ACCEPTANCE_RESULTS.append((name, passed, detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE_RESULTS:
        status = "PASS" if passed else "FAIL"
        line = f"[{status}] {name}"
        if detail:
            line += f" :: {detail}"
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def schema():
    return default_schema()


def make_event(user_id: int, registered_at: int = 1_000, **attrs) -> RawRegistrationEvent:
    """Attribute values may be a string, a list of strings, or a list of
    [value, ts] pairs."""
    payload = {}
    for name, value in attrs.items():
        if isinstance(value, str):
            payload[name] = [value]
        else:
            payload[name] = value
    return RawRegistrationEvent(user_id=user_id, registered_at=registered_at, attributes=payload)


def make_record(schema, user_id: int, registered_at: int = 1_000, **attrs):
    return normalize(make_event(user_id, registered_at, **attrs), schema)
