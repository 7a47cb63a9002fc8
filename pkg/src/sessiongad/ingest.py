"""Event log parsing, session grouping, and technique mapping.

Telemetry arrives as newline-delimited JSON records.  Well-formed lines
become RawEvent objects; malformed lines are reported with a line number
and reason, never silently dropped.  Events are grouped by
(session_id, UTC day) and each signature is mapped to a high-level
technique through an editable first-match-wins pattern table.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

UNMAPPED = "Unmapped"

_SECONDS_PER_DAY = 86400

# required string fields must be present and non-empty
_REQUIRED = ("session_id", "machine_id", "signature")
_OPTIONAL_STR = ("enterprise_id", "command_line", "file_path",
                 "process_name", "signer_subject", "file_hash")
_FLAGS = ("remote", "admin", "idle")
_OPTIONAL_COUNTS = ("import_count", "section_count", "export_count")


class IngestError(ValueError):
    pass


@dataclass(frozen=True)
class RawEvent:
    session_id: str
    machine_id: str
    timestamp: int
    signature: str
    enterprise_id: str = ""
    command_line: str = ""
    file_path: str = ""
    process_name: str = ""
    signer_subject: str = ""
    entropy: float = 0.0
    remote: bool = False
    admin: bool = False
    idle: bool = False
    file_hash: str = ""
    import_count: int = 0
    section_count: int = 0
    export_count: int = 0

    @property
    def day(self) -> int:
        """UTC day index; midnight boundary events belong to the new day."""
        return self.timestamp // _SECONDS_PER_DAY


@dataclass(frozen=True)
class Diagnostic:
    line: int
    reason: str


@dataclass
class SessionGroup:
    session_id: str
    day: int
    events: list

    def __post_init__(self):
        if not self.events:
            raise IngestError("a session group needs at least one event")
        self.events = sorted(self.events, key=lambda e: e.timestamp)

    @property
    def key(self) -> tuple:
        return (self.session_id, self.day)

    @property
    def member_count(self) -> int:
        return len(self.events)


def _parse_record(obj: dict) -> RawEvent:
    for name in _REQUIRED:
        value = obj.get(name)
        if not isinstance(value, str) or not value:
            raise IngestError(f"missing {name}")
    ts = obj.get("timestamp")
    if isinstance(ts, bool) or not isinstance(ts, int) or ts <= 0:
        raise IngestError("invalid timestamp")
    entropy = obj.get("entropy", 0.0)
    if isinstance(entropy, bool) or not isinstance(entropy, (int, float)) \
            or not 0.0 <= float(entropy) <= 8.0:
        raise IngestError("entropy outside [0, 8]")
    kwargs = {"timestamp": ts, "entropy": float(entropy)}
    for name in _REQUIRED:
        kwargs[name] = obj[name]
    for name in _OPTIONAL_STR:
        value = obj.get(name, "")
        if not isinstance(value, str):
            raise IngestError(f"invalid {name}")
        kwargs[name] = value
    for name in _FLAGS:
        value = obj.get(name, False)
        if not isinstance(value, bool):
            raise IngestError(f"invalid {name}")
        kwargs[name] = value
    for name in _OPTIONAL_COUNTS:
        value = obj.get(name, 0)
        if isinstance(value, bool) or not isinstance(value, int) or value < 0:
            raise IngestError(f"invalid {name}")
        kwargs[name] = value
    return RawEvent(**kwargs)


def parse_events(stream) -> tuple[list, list]:
    """Parse newline-delimited JSON events from a text stream or iterable.

    Returns (events, diagnostics).  Header lines (objects carrying a
    "header" key) and blank lines are skipped; unknown extra fields are
    tolerated.
    """
    events: list = []
    diagnostics: list = []
    for line_no, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            diagnostics.append(Diagnostic(line_no, f"invalid JSON: {exc.msg}"))
            continue
        if not isinstance(obj, dict):
            diagnostics.append(Diagnostic(line_no, "record is not an object"))
            continue
        if "header" in obj:
            continue
        try:
            events.append(_parse_record(obj))
        except IngestError as exc:
            diagnostics.append(Diagnostic(line_no, str(exc)))
    return events, diagnostics


def event_to_json(event: RawEvent) -> str:
    """One events.jsonl line; field order fixed for reproducible output."""
    obj = {
        "session_id": event.session_id,
        "machine_id": event.machine_id,
        "enterprise_id": event.enterprise_id,
        "timestamp": event.timestamp,
        "signature": event.signature,
        "command_line": event.command_line,
        "file_path": event.file_path,
        "process_name": event.process_name,
        "signer_subject": event.signer_subject,
        "entropy": event.entropy,
        "remote": event.remote,
        "admin": event.admin,
        "idle": event.idle,
        "file_hash": event.file_hash,
        "import_count": event.import_count,
        "section_count": event.section_count,
        "export_count": event.export_count,
    }
    return json.dumps(obj)


def group_sessions(events: list) -> list:
    """Partition events into per-(session_id, UTC day) groups.

    Groups come back sorted by key; events within a group are sorted by
    timestamp.  The member counts always sum to the input size.
    """
    buckets: dict = {}
    for event in events:
        buckets.setdefault((event.session_id, event.day), []).append(event)
    return [SessionGroup(session_id=sid, day=day, events=evs)
            for (sid, day), evs in sorted(buckets.items())]


@dataclass
class MitreMapping:
    """Ordered (pattern, technique) pairs; first match wins.

    Matching is a case-insensitive prefix test against the signature.
    Unmatched signatures map to the "Unmapped" sentinel so technique
    sequences stay aligned with events.
    """

    rules: list = field(default_factory=list)

    @classmethod
    def from_lines(cls, lines) -> "MitreMapping":
        rules = []
        for raw in lines:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise IngestError(
                    f"bad mapping line (want 2 tab-separated columns): {line!r}")
            rules.append((parts[0].lower(), parts[1]))
        return cls(rules=rules)

    @classmethod
    def from_file(cls, path) -> "MitreMapping":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_lines(fh)

    @classmethod
    def default(cls) -> "MitreMapping":
        ref = resources.files("sessiongad").joinpath("data/mitre_map.tsv")
        return cls.from_lines(ref.read_text(encoding="utf-8").splitlines())

    @property
    def techniques(self) -> list:
        seen: dict = {}
        for _, technique in self.rules:
            seen.setdefault(technique, None)
        return list(seen)


def mitre_map(signature: str, mapping: MitreMapping) -> str:
    lowered = signature.lower()
    for pattern, technique in mapping.rules:
        if lowered.startswith(pattern):
            return technique
    return UNMAPPED


def technique_sequence(group: SessionGroup, mapping: MitreMapping) -> list:
    """One technique per event in timestamp order; length = member count."""
    return [mitre_map(e.signature, mapping) for e in group.events]
