"""Normalized events and the three line-oriented log parsers.

Supported source formats:

``audit-kv``
    space separated ``key=value`` tokens; a value is either a double-quoted
    string without embedded quotes or a run of non-space characters.
``dns-tsv``
    exactly five tab separated fields ``ts host pid exe query``.
``jsonl``
    one canonical event object per line (see :func:`event_to_json`).

:func:`ingest_sources` merges any number of sources into one stream sorted by
``(ts, input index, line number)``.
"""
from __future__ import annotations

import enum
import io
import json
import math
import os
import re
from dataclasses import dataclass, field
from typing import Any


class Action(str, enum.Enum):
    FORK = "FORK"
    EXEC = "EXEC"
    READ = "READ"
    WRITE = "WRITE"
    CONNECT = "CONNECT"
    SEND = "SEND"
    RECV = "RECV"
    RESOLVE = "RESOLVE"
    INSTALL = "INSTALL"
    CHMOD = "CHMOD"


class ObjectKind(str, enum.Enum):
    PROCESS = "PROCESS"
    FILE = "FILE"
    SOCKET = "SOCKET"
    DOMAIN = "DOMAIN"
    PACKAGE = "PACKAGE"


class Label(str, enum.Enum):
    BENIGN = "BENIGN"
    STAGE1 = "STAGE1"
    STAGE2 = "STAGE2"
    STAGE3 = "STAGE3"
    STAGE4 = "STAGE4"
    STAGE5 = "STAGE5"
    STAGE6 = "STAGE6"


ACTION_OBJECT_KIND = {
    Action.FORK: ObjectKind.PROCESS,
    Action.EXEC: ObjectKind.FILE,
    Action.READ: ObjectKind.FILE,
    Action.WRITE: ObjectKind.FILE,
    Action.CHMOD: ObjectKind.FILE,
    Action.CONNECT: ObjectKind.SOCKET,
    Action.SEND: ObjectKind.SOCKET,
    Action.RECV: ObjectKind.SOCKET,
    Action.RESOLVE: ObjectKind.DOMAIN,
    Action.INSTALL: ObjectKind.PACKAGE,
}

_KEY_PATTERNS = {
    ObjectKind.FILE: re.compile(r"[^:\s]+:/\S*(?: \S+)*"),
    ObjectKind.SOCKET: re.compile(r"\S+:(\d{1,5})"),
    ObjectKind.DOMAIN: re.compile(r"[^\s:/]+"),
    ObjectKind.PACKAGE: re.compile(r"[A-Za-z0-9_.-]+:\S+"),
    ObjectKind.PROCESS: re.compile(r"[^:\s]+:\d+"),
}


# -- errors -----------------------------------------------------------------


class ParseError(ValueError):
    """Base class for a rejected input line; ``detail`` names the offending token."""

    def __init__(self, detail: str = ""):
        super().__init__(f"{type(self).__name__}({detail!r})")
        self.detail = detail

    @property
    def code(self) -> str:
        return type(self).__name__


class MissingKey(ParseError):
    pass


class BadNumber(ParseError):
    pass


class UnknownAction(ParseError):
    pass


class MalformedQuote(ParseError):
    pass


class MalformedToken(ParseError):
    """A token without ``=``, with an empty value, or a repeated key."""


class FieldCount(ParseError):
    def __init__(self, got: int):
        super().__init__(str(got))
        self.got = got


class EventSyntaxError(ParseError):
    """JSON syntax error; ``offset`` is the character position reported by the decoder."""

    def __init__(self, offset: int):
        super().__init__(str(offset))
        self.offset = offset


class TypeMismatch(ParseError):
    pass


class InvalidValue(ParseError):
    """Well-typed value that violates an event invariant (relative exe, bad key format, kind/action clash)."""


class IngestIOError(OSError):
    def __init__(self, source: str, cause: BaseException | None = None):
        super().__init__(f"cannot read source {source}: {cause}")
        self.source = source


# -- types ------------------------------------------------------------------


def valid_key(kind: ObjectKind, key: str) -> bool:
    if not key:
        return False
    m = _KEY_PATTERNS[ObjectKind(kind)].fullmatch(key)
    if m is None:
        return False
    if kind == ObjectKind.SOCKET and int(m.group(1)) > 65535:
        return False
    return True


@dataclass(frozen=True)
class ObjectRef:
    kind: ObjectKind
    key: str

    def __post_init__(self):
        object.__setattr__(self, "kind", ObjectKind(self.kind))
        if not valid_key(self.kind, self.key):
            raise InvalidValue(f"{self.kind.value}:{self.key}")


@dataclass
class NormalizedEvent:
    ts: float
    host: str
    action: Action
    pid: int
    exe: str
    object: ObjectRef
    attrs: dict[str, str] = field(default_factory=dict)
    label: Label | None = None

    def __post_init__(self):
        self.action = Action(self.action)
        if self.label is not None:
            self.label = Label(self.label)
        if not (isinstance(self.ts, (int, float)) and math.isfinite(self.ts) and self.ts >= 0):
            raise BadNumber("ts")
        self.ts = float(self.ts)
        if not self.host or any(c.isspace() for c in self.host) or ":" in self.host:
            raise InvalidValue("host")
        if self.pid < 0:
            raise BadNumber("pid")
        if not self.exe.startswith("/"):
            raise InvalidValue("exe")
        if ACTION_OBJECT_KIND[self.action] != self.object.kind:
            raise InvalidValue("object")

    @property
    def process_key(self) -> str:
        return f"{self.host}:{self.pid}"

    def strip_label(self) -> NormalizedEvent:
        return NormalizedEvent(self.ts, self.host, self.action, self.pid, self.exe,
                               self.object, dict(self.attrs), None)


# -- audit-kv ---------------------------------------------------------------

_AUDIT_CANONICAL = ("ts", "host", "pid", "exe", "action")
_AUDIT_OBJECT_KEYS = {
    Action.EXEC: ("path",),
    Action.READ: ("path",),
    Action.WRITE: ("path",),
    Action.CHMOD: ("path",),
    Action.CONNECT: ("daddr", "dport"),
    Action.SEND: ("daddr", "dport"),
    Action.RECV: ("daddr", "dport"),
    Action.RESOLVE: ("domain",),
    Action.INSTALL: ("package",),
    Action.FORK: ("child_pid",),
}


def tokenize_kv(line: str) -> dict[str, str]:
    """Split an audit-kv record into an ordered ``key -> value`` map."""
    out: dict[str, str] = {}
    i, n = 0, len(line)
    while i < n:
        if line[i] == " ":
            i += 1
            continue
        eq = line.find("=", i)
        sp = line.find(" ", i)
        if eq < 0 or (0 <= sp < eq):
            end = n if sp < 0 else sp
            raise MalformedToken(line[i:end])
        key = line[i:eq]
        if not key or '"' in key:
            raise MalformedToken(line[i:eq + 1])
        j = eq + 1
        if j < n and line[j] == '"':
            close = line.find('"', j + 1)
            if close < 0:
                raise MalformedQuote(line[i:])
            if close + 1 < n and line[close + 1] != " ":
                sp = line.find(" ", close)
                raise MalformedQuote(line[i:n if sp < 0 else sp])
            value = line[j + 1:close]
            i = close + 1
        else:
            sp = line.find(" ", j)
            end = n if sp < 0 else sp
            value = line[j:end]
            if not value:
                raise MalformedToken(line[i:end])
            if '"' in value:
                raise MalformedQuote(line[i:end])
            i = end
        if key in out:
            raise MalformedToken(key)
        out[key] = value
    return out


def _parse_float(value: str, name: str) -> float:
    try:
        x = float(value)
    except ValueError:
        raise BadNumber(name) from None
    if not math.isfinite(x) or x < 0:
        raise BadNumber(name)
    return x


def _parse_int(value: str, name: str) -> int:
    if not re.fullmatch(r"\d+", value):
        raise BadNumber(name)
    return int(value)


def _make_event(ts, host, pid, exe, action, obj, attrs, label=None) -> NormalizedEvent:
    try:
        return NormalizedEvent(ts, host, action, pid, exe, obj, attrs, label)
    except ParseError:
        raise
    except ValueError as exc:
        raise InvalidValue(str(exc)) from None


def _object_from_kv(action: Action, host: str, kv: dict[str, str]) -> ObjectRef:
    for name in _AUDIT_OBJECT_KEYS[action]:
        if name not in kv:
            raise MissingKey(name)
    kind = ACTION_OBJECT_KIND[action]
    if kind == ObjectKind.FILE:
        key = f"{host}:{kv['path']}"
        if not kv["path"].startswith("/"):
            raise InvalidValue("path")
    elif kind == ObjectKind.SOCKET:
        port = _parse_int(kv['dport'], 'dport')
        if port > 65535:
            raise InvalidValue("dport")
        key = f"{kv['daddr']}:{port}"
    elif kind == ObjectKind.DOMAIN:
        key = kv["domain"]
    elif kind == ObjectKind.PACKAGE:
        key = kv["package"]
    else:
        key = f"{host}:{_parse_int(kv['child_pid'], 'child_pid')}"
    if not valid_key(kind, key):
        raise InvalidValue(_AUDIT_OBJECT_KEYS[action][0])
    return ObjectRef(kind, key)


def parse_audit_kv_line(line: str) -> NormalizedEvent:
    kv = tokenize_kv(line)
    for name in _AUDIT_CANONICAL:
        if name not in kv:
            raise MissingKey(name)
    ts = _parse_float(kv["ts"], "ts")
    pid = _parse_int(kv["pid"], "pid")
    if ":" in kv["host"]:
        raise InvalidValue("host")  # would otherwise surface as a bad object key
    try:
        action = Action(kv["action"])
    except ValueError:
        raise UnknownAction(kv["action"]) from None
    obj = _object_from_kv(action, kv["host"], kv)
    consumed = set(_AUDIT_CANONICAL) | set(_AUDIT_OBJECT_KEYS[action])
    attrs = {k: v for k, v in kv.items() if k not in consumed}
    return _make_event(ts, kv["host"], pid, kv["exe"], action, obj, attrs)


def _kv_value(value: str) -> str:
    if value == "" or " " in value or value.startswith("/"):
        return f'"{value}"'
    return value


def event_to_audit_kv(event: NormalizedEvent) -> str:
    """Inverse of :func:`parse_audit_kv_line` for events whose attrs avoid canonical key names."""
    parts = [f"ts={event.ts!r}", f"host={event.host}", f"pid={event.pid}",
             f"exe={_kv_value(event.exe)}", f"action={event.action.value}"]
    key = event.object.key
    a = event.action
    if ACTION_OBJECT_KIND[a] == ObjectKind.FILE:
        parts.append(f"path={_kv_value(key.split(':', 1)[1])}")
    elif ACTION_OBJECT_KIND[a] == ObjectKind.SOCKET:
        addr, port = key.rsplit(":", 1)
        parts += [f"daddr={addr}", f"dport={port}"]
    elif a == Action.RESOLVE:
        parts.append(f"domain={_kv_value(key)}")
    elif a == Action.INSTALL:
        parts.append(f"package={_kv_value(key)}")
    else:
        parts.append(f"child_pid={key.rsplit(':', 1)[1]}")
    parts += [f"{k}={_kv_value(v)}" for k, v in event.attrs.items()]
    return " ".join(parts)


# -- dns-tsv ----------------------------------------------------------------


def parse_dns_tsv_line(line: str) -> NormalizedEvent:
    fields = line.split("\t")
    if len(fields) != 5:
        raise FieldCount(len(fields))
    ts_s, host, pid_s, exe, query = fields
    ts = _parse_float(ts_s, "ts")
    pid = _parse_int(pid_s, "pid")
    if not valid_key(ObjectKind.DOMAIN, query):
        raise InvalidValue("query")
    return _make_event(ts, host, pid, exe, Action.RESOLVE, ObjectRef(ObjectKind.DOMAIN, query), {})


def event_to_dns_tsv(event: NormalizedEvent) -> str:
    return "\t".join([repr(event.ts), event.host, str(event.pid), event.exe, event.object.key])


# -- jsonl ------------------------------------------------------------------

_JSON_REQUIRED = ("ts", "host", "pid", "exe", "action", "object")


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def parse_json_event_line(line: str) -> NormalizedEvent:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise EventSyntaxError(exc.pos) from None
    if not isinstance(obj, dict):
        raise TypeMismatch("<root>")
    for name in _JSON_REQUIRED:
        if name not in obj:
            raise MissingKey(name)
    if not _is_number(obj["ts"]):
        raise TypeMismatch("ts")
    if not math.isfinite(obj["ts"]) or obj["ts"] < 0:
        raise BadNumber("ts")
    for name in ("host", "exe", "action"):
        if not isinstance(obj[name], str):
            raise TypeMismatch(name)
    if not isinstance(obj["pid"], int) or isinstance(obj["pid"], bool):
        raise TypeMismatch("pid")
    if obj["pid"] < 0:
        raise BadNumber("pid")
    try:
        action = Action(obj["action"])
    except ValueError:
        raise UnknownAction(obj["action"]) from None
    ref = obj["object"]
    if not isinstance(ref, dict):
        raise TypeMismatch("object")
    for name in ("kind", "key"):
        if name not in ref:
            raise MissingKey(f"object.{name}")
        if not isinstance(ref[name], str):
            raise TypeMismatch(f"object.{name}")
    try:
        kind = ObjectKind(ref["kind"])
    except ValueError:
        raise InvalidValue("object.kind") from None
    if not valid_key(kind, ref["key"]):
        raise InvalidValue("object.key")
    attrs = obj.get("attrs", {})
    if not isinstance(attrs, dict) or not all(isinstance(v, str) for v in attrs.values()):
        raise TypeMismatch("attrs")
    label = obj.get("label")
    if label is not None:
        if not isinstance(label, str):
            raise TypeMismatch("label")
        try:
            label = Label(label)
        except ValueError:
            raise InvalidValue("label") from None
    return _make_event(obj["ts"], obj["host"], obj["pid"], obj["exe"], action,
                       ObjectRef(kind, ref["key"]), dict(attrs), label)


def event_to_dict(event: NormalizedEvent) -> dict[str, Any]:
    d: dict[str, Any] = {
        "ts": event.ts,
        "host": event.host,
        "pid": event.pid,
        "exe": event.exe,
        "action": event.action.value,
        "object": {"kind": event.object.kind.value, "key": event.object.key},
        "attrs": {k: event.attrs[k] for k in sorted(event.attrs)},
    }
    if event.label is not None:
        d["label"] = event.label.value
    return d


def event_to_json(event: NormalizedEvent) -> str:
    """Canonical single-line JSON encoding (stable key order, no whitespace)."""
    return json.dumps(event_to_dict(event), separators=(",", ":"), ensure_ascii=False)


def write_jsonl(events, stream) -> None:
    for ev in events:
        stream.write(event_to_json(ev) + "\n")


def dumps_jsonl(events) -> bytes:
    return "".join(event_to_json(ev) + "\n" for ev in events).encode("utf-8")


PARSERS = {
    "audit-kv": parse_audit_kv_line,
    "dns-tsv": parse_dns_tsv_line,
    "jsonl": parse_json_event_line,
}


# -- merge ------------------------------------------------------------------


@dataclass
class IngestResult:
    events: list[NormalizedEvent]
    origins: list[tuple[int, int]]
    skipped: list[int]
    errors: list[tuple[int, int, ParseError]]

    def summary(self) -> dict[str, Any]:
        return {
            "events": len(self.events),
            "skipped": list(self.skipped),
            "errors": [
                {"source": s, "line": n, "error": e.code, "detail": e.detail}
                for s, n, e in self.errors
            ],
        }


def _read_source(source, index: int) -> str:
    try:
        if isinstance(source, (bytes, bytearray, memoryview)):
            data = bytes(source)
        elif isinstance(source, (str, os.PathLike)):
            with open(source, "rb") as fh:
                data = fh.read()
        elif isinstance(source, io.TextIOBase):
            return source.read()
        else:
            data = source.read()
        return data.decode("utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise IngestIOError(str(source) if isinstance(source, (str, os.PathLike)) else f"#{index}",
                            exc) from exc


def ingest_sources(inputs, strict: bool = False, keep_labels: bool = False) -> IngestResult:
    """Parse and merge ``(format, source)`` pairs.

    ``source`` may be bytes, a path, or a readable stream. Blank lines are
    ignored. In lenient mode malformed lines are skipped and counted; in strict
    mode the first :class:`ParseError` propagates. Labels are dropped unless
    ``keep_labels`` is set.
    """
    rows: list[tuple[float, int, int, NormalizedEvent]] = []
    skipped: list[int] = []
    errors: list[tuple[int, int, ParseError]] = []
    for idx, (fmt, source) in enumerate(inputs):
        if fmt not in PARSERS:
            raise ValueError(f"unknown input format {fmt!r}")
        parse = PARSERS[fmt]
        text = _read_source(source, idx)
        bad = 0
        for lineno, line in enumerate(text.split("\n"), start=1):
            if not line.strip():
                continue
            try:
                ev = parse(line)
            except ParseError as exc:
                if strict:
                    raise
                bad += 1
                errors.append((idx, lineno, exc))
                continue
            if not keep_labels and ev.label is not None:
                ev = ev.strip_label()
            rows.append((ev.ts, idx, lineno, ev))
        skipped.append(bad)
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    return IngestResult(
        events=[r[3] for r in rows],
        origins=[(r[1], r[2]) for r in rows],
        skipped=skipped,
        errors=errors,
    )


def read_jsonl_events(path, keep_labels: bool = True) -> list[NormalizedEvent]:
    return ingest_sources([("jsonl", path)], strict=True, keep_labels=keep_labels).events
