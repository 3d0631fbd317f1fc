"""Regenerate the parser golden corpus.

Expected outputs are written from the same records the input lines are
rendered from (valid lines) or by hand (error lines); the parsers are never
run here. Run from the repository root: ``python tests/data/make_corpus.py``.
"""
import json
import random
from pathlib import Path

HERE = Path(__file__).parent / "corpus"

HOSTS = ["web01", "build02", "dev03"]
EXES = ["/usr/bin/pip3", "/usr/bin/python3", "/bin/sh", "/usr/bin/curl", "/usr/bin/npm",
        "/opt/app/bin/server", "/usr/local/bin/node"]
PATHS = ["/tmp/x.py", "/etc/passwd", "/home/dev/.ssh/id_rsa", "/var/tmp/.cache",
         "/home/dev/My Documents/notes.txt", "/usr/lib/python3/site-packages/six/utils.py", "/"]
DOMAINS = ["pypi.org", "registry.npmjs.org", "evil.example", "cdn-pypi-mirror.net", "localhost"]
PACKAGES = ["pypi:requests", "npm:lodash", "pypi:atttrs-a54a", "npm:left-pad"]
ADDRS = ["10.0.0.9", "151.101.0.223", "fe80--1", "203.0.113.5"]
ATTR_VALUES = ["ok", "a b c", "x=y", "", "/usr/bin/env", "0"]
LABELS = ["BENIGN", "STAGE1", "STAGE3", "STAGE6"]

FILE_ACTIONS = ["EXEC", "READ", "WRITE", "CHMOD"]
SOCK_ACTIONS = ["CONNECT", "SEND", "RECV"]
ALL_ACTIONS = FILE_ACTIONS + SOCK_ACTIONS + ["RESOLVE", "INSTALL", "FORK"]


def random_event(rng, action=None):
    action = action or rng.choice(ALL_ACTIONS)
    host = rng.choice(HOSTS)
    ev = {"ts": round(rng.uniform(0, 90000), 3), "host": host, "pid": rng.randint(0, 70000),
          "exe": rng.choice(EXES), "action": action}
    if action in FILE_ACTIONS:
        path = rng.choice(PATHS)
        ev["object"], raw = {"kind": "FILE", "key": f"{host}:{path}"}, {"path": path}
    elif action in SOCK_ACTIONS:
        addr, port = rng.choice(ADDRS), rng.choice([0, 22, 443, 4444, 65535])
        ev["object"], raw = {"kind": "SOCKET", "key": f"{addr}:{port}"}, {"daddr": addr, "dport": str(port)}
    elif action == "RESOLVE":
        d = rng.choice(DOMAINS)
        ev["object"], raw = {"kind": "DOMAIN", "key": d}, {"domain": d}
    elif action == "INSTALL":
        p = rng.choice(PACKAGES)
        ev["object"], raw = {"kind": "PACKAGE", "key": p}, {"package": p}
    else:
        child = rng.randint(0, 70000)
        ev["object"], raw = {"kind": "PROCESS", "key": f"{host}:{child}"}, {"child_pid": str(child)}
    attrs = {}
    for _ in range(rng.randint(0, 3)):
        attrs[rng.choice(["comm", "uid", "cwd", "note", "ppid"])] = rng.choice(ATTR_VALUES)
    ev["attrs"] = dict(sorted(attrs.items()))
    return ev, raw


def kv_token(key, value, rng):
    if value == "" or " " in value or '"' in value:
        return f'{key}="{value}"'
    return f'{key}="{value}"' if rng.random() < 0.3 else f"{key}={value}"


def audit_line(ev, raw, rng):
    toks = [("ts", repr(ev["ts"]) if rng.random() < 0.5 else f"{ev['ts']:.3f}"), ("host", ev["host"]),
            ("pid", str(ev["pid"])), ("exe", ev["exe"]), ("action", ev["action"])]
    toks += list(raw.items()) + list(ev["attrs"].items())
    rng.shuffle(toks)
    sep = "  " if rng.random() < 0.1 else " "
    return sep.join(kv_token(k, v, rng) for k, v in toks)


def ok(ev):
    return {"event": ev}


def err(code, detail):
    return {"error": code, "detail": detail}


AUDIT_ERRORS = [
    ('ts=1 host=h pid=1 exe="/a" action=NOPE', err("UnknownAction", "NOPE")),
    ("host=h pid=1 exe=/a action=EXEC path=/x", err("MissingKey", "ts")),
    ("ts=1 host=h pid=1 action=EXEC path=/x", err("MissingKey", "exe")),
    ("ts=1 host=h pid=1 exe=/a action=EXEC", err("MissingKey", "path")),
    ("ts=1 host=h pid=1 exe=/a action=CONNECT daddr=10.0.0.1", err("MissingKey", "dport")),
    ("ts=1 host=h pid=1 exe=/a action=FORK", err("MissingKey", "child_pid")),
    ("ts=abc host=h pid=1 exe=/a action=EXEC path=/x", err("BadNumber", "ts")),
    ("ts=-1 host=h pid=1 exe=/a action=EXEC path=/x", err("BadNumber", "ts")),
    ("ts=inf host=h pid=1 exe=/a action=EXEC path=/x", err("BadNumber", "ts")),
    ("ts=nan host=h pid=1 exe=/a action=EXEC path=/x", err("BadNumber", "ts")),
    ("ts=1 host=h pid=4x exe=/a action=EXEC path=/x", err("BadNumber", "pid")),
    ("ts=1 host=h pid=-2 exe=/a action=EXEC path=/x", err("BadNumber", "pid")),
    ("ts=1 host=h pid=1 exe=/a action=SEND daddr=10.0.0.1 dport=http", err("BadNumber", "dport")),
    ("ts=1 host=h pid=1 exe=/a action=FORK child_pid=-3", err("BadNumber", "child_pid")),
    ('ts=1 host=h pid=1 exe="/usr/bin/x action=EXEC path=/x', err("MalformedQuote", 'exe="/usr/bin/x action=EXEC path=/x')),
    ('ts=1 host=h pid=1 exe="/a"b action=EXEC path=/x', err("MalformedQuote", 'exe="/a"b')),
    ('ts=1 host=h pid=1 exe=/a"b action=EXEC path=/x', err("MalformedQuote", 'exe=/a"b')),
    ('ts=1 host=h pid=1 exe=/a action=EXEC path="/x', err("MalformedQuote", 'path="/x')),
    ("ts=1 host=h garbage pid=1 exe=/a action=EXEC path=/x", err("MalformedToken", "garbage")),
    ("ts= host=h pid=1 exe=/a action=EXEC path=/x", err("MalformedToken", "ts=")),
    ("ts=1 host=h pid=1 pid=2 exe=/a action=EXEC path=/x", err("MalformedToken", "pid")),
    ("ts=1 host=h pid=1 exe=/a action=EXEC path=/x =v", err("MalformedToken", "=")),
    ("ts=1 host=h pid=1 exe=bin/sh action=EXEC path=/x", err("InvalidValue", "exe")),
    ("ts=1 host=h pid=1 exe=/a action=WRITE path=tmp/x", err("InvalidValue", "path")),
    ("ts=1 host=h pid=1 exe=/a action=CONNECT daddr=10.0.0.1 dport=70000", err("InvalidValue", "dport")),
    ("ts=1 host=a:b pid=1 exe=/a action=EXEC path=/x", err("InvalidValue", "host")),
    ("ts=1 host=h pid=1 exe=/a action=RESOLVE domain=bad/domain", err("InvalidValue", "domain")),
    ("ts=1 host=h pid=1 exe=/a action=INSTALL package=noscheme", err("InvalidValue", "package")),
]

DNS_ERRORS = [
    ("3.0\th1\t9\t/x", err("FieldCount", "4")),
    ("3.0\th1\t9\t/x\ta.example\textra", err("FieldCount", "6")),
    ("just some text", err("FieldCount", "1")),
    ("x\th\t1\t/a\td", err("BadNumber", "ts")),
    ("-5\th\t1\t/a\td", err("BadNumber", "ts")),
    ("1.5\th\tpid\t/a\td", err("BadNumber", "pid")),
    ("1.5\th\t1\t/a\tbad/query", err("InvalidValue", "query")),
    ("1.5\th\t1\t/a\t", err("InvalidValue", "query")),
    ("1.5\th\t1\trelative/exe\td.example", err("InvalidValue", "exe")),
    ("1.5\t\t1\t/a\td.example", err("InvalidValue", "host")),
]

_J = '"host":"h1","pid":3,"exe":"/bin/sh","action":"EXEC","object":{"kind":"FILE","key":"h1:/bin/sh"}'
JSON_ERRORS = [
    ('{"ts":5}', err("MissingKey", "host")),
    ('{"ts":5,"host":"h1","pid":3,"exe":"/bin/sh","action":"EXEC"}', err("MissingKey", "object")),
    ('{"ts":"late",' + _J + "}", err("TypeMismatch", "ts")),
    ('{"ts":true,' + _J + "}", err("TypeMismatch", "ts")),
    ('{"ts":5,', err("EventSyntaxError", "8")),
    ('{"ts":5 "host":"h"}', err("EventSyntaxError", "8")),
    ("not json", err("EventSyntaxError", "0")),
    ("[1,2]", err("TypeMismatch", "<root>")),
    ('{"ts":-2,' + _J + "}", err("BadNumber", "ts")),
    ('{"ts":NaN,' + _J + "}", err("BadNumber", "ts")),
    ('{"ts":5,' + _J.replace('"pid":3', '"pid":"3"') + "}", err("TypeMismatch", "pid")),
    ('{"ts":5,' + _J.replace('"pid":3', '"pid":true') + "}", err("TypeMismatch", "pid")),
    ('{"ts":5,' + _J.replace('"pid":3', '"pid":-1') + "}", err("BadNumber", "pid")),
    ('{"ts":5,' + _J.replace('"host":"h1"', '"host":7') + "}", err("TypeMismatch", "host")),
    ('{"ts":5,' + _J.replace('"EXEC"', '"nope"') + "}", err("UnknownAction", "nope")),
    ('{"ts":5,' + _J.replace('"kind":"FILE",', "") + "}", err("MissingKey", "object.kind")),
    ('{"ts":5,' + _J.replace('"FILE"', '"THING"') + "}", err("InvalidValue", "object.kind")),
    ('{"ts":5,' + _J.replace('"FILE"', '"SOCKET"') + "}", err("InvalidValue", "object.key")),
    ('{"ts":5,' + _J.replace('"FILE","key":"h1:/bin/sh"', '"SOCKET","key":"1.2.3.4:80"') + "}",
     err("InvalidValue", "object")),
    ('{"ts":5,' + _J + ',"attrs":{"uid":0}}', err("TypeMismatch", "attrs")),
    ('{"ts":5,' + _J + ',"attrs":[]}', err("TypeMismatch", "attrs")),
    ('{"ts":5,' + _J + ',"label":"STAGE9"}', err("InvalidValue", "label")),
    ('{"ts":5,' + _J + ',"label":3}', err("TypeMismatch", "label")),
    ('{"ts":5,' + _J.replace('"key":"h1:/bin/sh"', '"key":1') + "}", err("TypeMismatch", "object.key")),
    ('{"ts":5,' + _J.replace('"exe":"/bin/sh"', '"exe":"sh"') + "}", err("InvalidValue", "exe")),
]


def interleave(rng, valid, errors):
    rows = valid + errors
    rng.shuffle(rows)
    return rows


def main():
    rng = random.Random(20240611)
    HERE.mkdir(exist_ok=True)
    sources = {}

    valid = []
    for i in range(110):
        action = ALL_ACTIONS[i % len(ALL_ACTIONS)] if i < 40 else None
        ev, raw = random_event(rng, action)
        valid.append((audit_line(ev, raw, rng), ok(ev)))
    sources["audit.kv"] = ("audit-kv", interleave(rng, valid, AUDIT_ERRORS))

    valid = []
    for _ in range(40):
        ev, _raw = random_event(rng, "RESOLVE")
        ev["attrs"] = {}
        ts = repr(ev["ts"])
        valid.append(("\t".join([ts, ev["host"], str(ev["pid"]), ev["exe"], ev["object"]["key"]]), ok(ev)))
    sources["dns.tsv"] = ("dns-tsv", interleave(rng, valid, DNS_ERRORS))

    valid = []
    for _ in range(60):
        ev, _raw = random_event(rng)
        if rng.random() < 0.5:
            ev["label"] = rng.choice(LABELS)
        body = dict(ev)
        if not body["attrs"] and rng.random() < 0.5:
            del body["attrs"]
        keys = list(body)
        rng.shuffle(keys)
        valid.append((json.dumps({k: body[k] for k in keys}, ensure_ascii=False), ok(ev)))
    sources["events.jsonl"] = ("jsonl", interleave(rng, valid, JSON_ERRORS))

    golden = []
    for name, (fmt, rows) in sources.items():
        (HERE / name).write_text("".join(line + "\n" for line, _ in rows), encoding="utf-8")
        for lineno, (_, expect) in enumerate(rows, start=1):
            golden.append({"source": name, "format": fmt, "line": lineno, **expect})
    with open(HERE / "golden.jsonl", "w", encoding="utf-8") as fh:
        for rec in golden:
            fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")
    print(f"{len(golden)} golden records")


if __name__ == "__main__":
    main()
