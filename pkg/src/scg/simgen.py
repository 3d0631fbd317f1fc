"""Seeded generator of labeled benign activity and multi-stage supply-chain attacks.

Benign background is a set of per-host Poisson processes, one per template;
each arrival expands into a short, causally consistent sequence of events.
Attack chains follow a fixed six-stage template run by a package manager
process and two descendants (hook script, dropper), so every chain
contributes exactly :data:`EVENTS_PER_CHAIN` labeled events.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .events import Action, Label, NormalizedEvent, ObjectKind, ObjectRef
from .features import fnv1a_64

TEMPLATES = ("package_install", "build_job", "web_activity", "cron")
DEFAULT_RATES = {"package_install": 2.0, "build_job": 4.0, "web_activity": 20.0, "cron": 6.0}
EVENTS_PER_CHAIN = 8
STAGES = (Label.STAGE1, Label.STAGE2, Label.STAGE3, Label.STAGE4, Label.STAGE5, Label.STAGE6)


class BadConfig(ValueError):
    pass


class BadFraction(ValueError):
    pass


@dataclass
class ScenarioConfig:
    seed: int = 0
    n_hosts: int = 5
    duration: float = 86400.0
    rates: dict = field(default_factory=lambda: dict(DEFAULT_RATES))
    n_attack_chains: int = 3
    phase_b: bool = False

    def __post_init__(self):
        self.rates = {**DEFAULT_RATES, **dict(self.rates)}
        unknown = set(self.rates) - set(TEMPLATES)
        if unknown:
            raise BadConfig(f"unknown templates {sorted(unknown)}")
        if not (self.duration >= 0 and np.isfinite(self.duration)):
            raise BadConfig("duration must be >= 0")
        if any(not (r >= 0 and np.isfinite(r)) for r in self.rates.values()):
            raise BadConfig("rates must be >= 0")
        if self.n_attack_chains < 0:
            raise BadConfig("n_attack_chains must be >= 0")
        if self.n_hosts < 1:
            raise BadConfig("n_hosts must be >= 1")


# ecosystems: (exe, registry domain, registry ip, package scheme, install dir, runtime, popular packages)
_PYPI = ("/usr/bin/pip3", "pypi.org", "151.101.0.223", "pypi", "/usr/lib/python3/site-packages",
         "/usr/bin/python3", ".py",
         ("requests", "numpy", "urllib3", "six", "certifi", "idna", "pyyaml", "click", "jinja2", "attrs"))
_NPM = ("/usr/bin/npm", "registry.npmjs.org", "104.16.24.35", "npm", "/usr/lib/node_modules",
        "/usr/bin/node", ".js",
        ("lodash", "react", "express", "chalk", "axios", "debug", "commander", "moment", "uuid", "semver"))
_MODULES = ("__init__", "core", "utils", "compat", "api", "models", "version")

_WEB_A = ("github.com", "stackoverflow.com", "docs.python.org", "google.com", "wikipedia.org",
          "news.ycombinator.com", "mail.example.com", "cdn.jsdelivr.net")
_WEB_B = ("gitlab.com", "developer.mozilla.org", "nodejs.org", "npmjs.com", "duckduckgo.com",
          "reddit.com", "slack.com", "unpkg.com")

# attack families: (ecosystem, hook script, dropper dir, sensitive file, c2 domains)
_FAMILY_A = (_PYPI, "setup_hook.py", "/tmp", "/home/dev/.ssh/id_rsa",
             ("cdn-pypi-mirror.net", "pyupdate.io", "telemetry-pkg.com"))
_FAMILY_B = (_NPM, "postinstall.js", "/var/tmp", "/home/dev/.aws/credentials",
             ("npm-stats.org", "jsdelivr-cache.net", "registry-sync.io"))

SHELL_PID, CRON_PID, BROWSER_PID = 500, 300, 700


def domain_ip(domain: str) -> str:
    h = fnv1a_64(domain.encode())
    return f"{11 + h % 200}.{(h >> 8) % 256}.{(h >> 16) % 256}.{1 + (h >> 24) % 254}"


class _Host:
    def __init__(self, name: str, rng: np.random.Generator):
        self.name = name
        self.rng = rng
        self.next_pid = 1000

    def pid(self) -> int:
        self.next_pid += int(self.rng.integers(1, 8))
        return self.next_pid

    def file(self, path: str) -> ObjectRef:
        return ObjectRef(ObjectKind.FILE, f"{self.name}:{path}")

    def proc(self, pid: int) -> ObjectRef:
        return ObjectRef(ObjectKind.PROCESS, f"{self.name}:{pid}")


class _Seq:
    """Accumulates one template's events with small increasing time steps."""

    def __init__(self, host: _Host, t: float):
        self.host = host
        self.t = t
        self.out: list[NormalizedEvent] = []

    def step(self, lo=0.01, hi=2.0):
        self.t += float(self.host.rng.uniform(lo, hi))

    def emit(self, pid, exe, action, obj, comm, label=Label.BENIGN, advance=True):
        if advance:
            self.step()
        self.out.append(NormalizedEvent(round(self.t, 3), self.host.name, action, pid, exe, obj,
                                        {"comm": comm}, label))


def _sock(ip: str, port: int) -> ObjectRef:
    return ObjectRef(ObjectKind.SOCKET, f"{ip}:{port}")


def _fetch_package(seq: _Seq, pid: int, eco) -> None:
    exe, registry, ip, *_ = eco
    comm = exe.rsplit("/", 1)[1]
    seq.emit(SHELL_PID, "/bin/bash", Action.FORK, seq.host.proc(pid), "bash", advance=False)
    seq.emit(pid, exe, Action.EXEC, seq.host.file(exe), comm)
    seq.emit(pid, exe, Action.RESOLVE, ObjectRef(ObjectKind.DOMAIN, registry), comm)
    seq.emit(pid, exe, Action.CONNECT, _sock(ip, 443), comm)
    seq.emit(pid, exe, Action.RECV, _sock(ip, 443), comm)


def _package_install(seq: _Seq, eco) -> None:
    exe, _, _, scheme, root, runtime, ext, popular = eco
    rng, host = seq.host.rng, seq.host
    pid = host.pid()
    comm = exe.rsplit("/", 1)[1]
    _fetch_package(seq, pid, eco)
    pkg = popular[int(rng.zipf(1.6) - 1) % len(popular)]
    seq.emit(pid, exe, Action.INSTALL, ObjectRef(ObjectKind.PACKAGE, f"{scheme}:{pkg}"), comm)
    m = int(rng.integers(2, 6))
    for mod in rng.choice(len(_MODULES), size=m, replace=False):
        seq.emit(pid, exe, Action.WRITE, host.file(f"{root}/{pkg}/{_MODULES[mod]}{ext}"), comm)
    # byte-compile step in a child interpreter
    child = host.pid()
    rcomm = runtime.rsplit("/", 1)[1]
    seq.emit(pid, exe, Action.FORK, host.proc(child), comm)
    seq.emit(child, runtime, Action.EXEC, host.file(runtime), rcomm)
    seq.emit(child, runtime, Action.READ, host.file(f"{root}/{pkg}/__init__{ext}"), rcomm)
    seq.emit(child, runtime, Action.WRITE, host.file(f"{root}/{pkg}/__pycache__/__init__.cache"), rcomm)


def _build_job(seq: _Seq) -> None:
    rng, host = seq.host.rng, seq.host
    make, cc = host.pid(), host.pid()
    proj = "/home/dev/project"
    seq.emit(SHELL_PID, "/bin/bash", Action.FORK, host.proc(make), "bash", advance=False)
    seq.emit(make, "/usr/bin/make", Action.EXEC, host.file("/usr/bin/make"), "make")
    seq.emit(make, "/usr/bin/make", Action.READ, host.file(f"{proj}/Makefile"), "make")
    seq.emit(make, "/usr/bin/make", Action.FORK, host.proc(cc), "make")
    seq.emit(cc, "/usr/bin/cc", Action.EXEC, host.file("/usr/bin/cc"), "cc")
    seq.emit(cc, "/usr/bin/cc", Action.READ, host.file("/usr/include/stdio.h"), "cc")
    units = ("main", "io", "net", "parse", "util", "log")
    for u in sorted(rng.choice(len(units), size=int(rng.integers(1, 4)), replace=False)):
        seq.emit(cc, "/usr/bin/cc", Action.READ, host.file(f"{proj}/src/{units[u]}.c"), "cc")
        seq.emit(cc, "/usr/bin/cc", Action.WRITE, host.file(f"{proj}/build/{units[u]}.o"), "cc")
    seq.emit(make, "/usr/bin/make", Action.WRITE, host.file(f"{proj}/build/app"), "make")
    seq.emit(make, "/usr/bin/make", Action.CHMOD, host.file(f"{proj}/build/app"), "make")


def _web_activity(seq: _Seq, pool) -> None:
    rng = seq.host.rng
    exe = "/usr/lib/firefox/firefox"
    domain = pool[int(rng.zipf(1.5) - 1) % len(pool)]
    sock = _sock(domain_ip(domain), 443)
    seq.emit(BROWSER_PID, exe, Action.RESOLVE, ObjectRef(ObjectKind.DOMAIN, domain), "firefox", advance=False)
    seq.emit(BROWSER_PID, exe, Action.CONNECT, sock, "firefox")
    seq.emit(BROWSER_PID, exe, Action.SEND, sock, "firefox")
    for _ in range(int(rng.integers(1, 3))):
        seq.emit(BROWSER_PID, exe, Action.RECV, sock, "firefox")


def _cron(seq: _Seq) -> None:
    host = seq.host
    sh = host.pid()
    seq.emit(CRON_PID, "/usr/sbin/cron", Action.FORK, host.proc(sh), "cron", advance=False)
    seq.emit(sh, "/usr/sbin/logrotate", Action.EXEC, host.file("/usr/sbin/logrotate"), "logrotate")
    seq.emit(sh, "/usr/sbin/logrotate", Action.READ, host.file("/etc/logrotate.conf"), "logrotate")
    seq.emit(sh, "/usr/sbin/logrotate", Action.READ, host.file("/var/log/syslog"), "logrotate")
    seq.emit(sh, "/usr/sbin/logrotate", Action.WRITE, host.file("/var/log/syslog.1"), "logrotate")


def _typosquat(rng: np.random.Generator, popular) -> str:
    base = popular[int(rng.integers(len(popular)))]
    i = int(rng.integers(1, len(base)))
    mutated = base[:i] + base[i - 1] + base[i:]
    return f"{mutated}-{int(rng.integers(16 ** 4)):04x}"


def _attack_chain(seq: _Seq, family) -> None:
    """Six labeled stages along pip -> hook child -> dropper grandchild; forks carry no stage label."""
    eco, hook, drop_dir, secret, c2_pool = family
    exe, _, _, scheme, root, runtime, _, popular = eco
    rng, host = seq.host.rng, seq.host
    pid = host.pid()
    comm = exe.rsplit("/", 1)[1]
    _fetch_package(seq, pid, eco)
    pkg = _typosquat(rng, popular)
    hook_path = f"{root}/{pkg}/{hook}"
    dropper = f"{drop_dir}/.{int(rng.integers(16 ** 8)):08x}"
    c2 = c2_pool[int(rng.integers(len(c2_pool)))]
    c2_sock = _sock(domain_ip(c2), int(rng.choice([443, 8443, 4444])))

    def gap():
        seq.step(10.0, 300.0)

    seq.emit(pid, exe, Action.INSTALL, ObjectRef(ObjectKind.PACKAGE, f"{scheme}:{pkg}"), comm, Label.STAGE1)
    gap()
    child = host.pid()
    seq.emit(pid, exe, Action.FORK, host.proc(child), comm, advance=False)
    seq.emit(child, runtime, Action.EXEC, host.file(hook_path), hook, Label.STAGE2)
    gap()
    seq.emit(child, runtime, Action.WRITE, host.file(dropper), hook, Label.STAGE3, advance=False)
    gap()
    grandchild = host.pid()
    name = dropper.rsplit("/", 1)[1]
    seq.emit(child, runtime, Action.FORK, host.proc(grandchild), hook, advance=False)
    seq.emit(grandchild, dropper, Action.EXEC, host.file(dropper), name, Label.STAGE4)
    gap()
    seq.emit(grandchild, dropper, Action.RESOLVE, ObjectRef(ObjectKind.DOMAIN, c2), name, Label.STAGE5,
             advance=False)
    seq.emit(grandchild, dropper, Action.CONNECT, c2_sock, name, Label.STAGE5)
    gap()
    seq.emit(grandchild, dropper, Action.READ, host.file(secret), name, Label.STAGE6, advance=False)
    seq.emit(grandchild, dropper, Action.SEND, c2_sock, name, Label.STAGE6)


def generate(config: ScenarioConfig) -> list[NormalizedEvent]:
    """Labeled, time-sorted event stream; a pure function of ``config``."""
    if not isinstance(config, ScenarioConfig):
        raise BadConfig("expected ScenarioConfig")
    rng = np.random.default_rng(config.seed)
    dur = float(config.duration)
    hosts = [_Host(f"host{i + 1:02d}", rng) for i in range(config.n_hosts)]
    half = dur / 2
    seqs: list[list[NormalizedEvent]] = []

    arrivals = []
    for h, host in enumerate(hosts):
        for j, name in enumerate(TEMPLATES):
            rate = config.rates[name] / 3600.0
            n = int(rng.poisson(rate * dur)) if rate > 0 and dur > 0 else 0
            for t in np.sort(rng.uniform(0.0, dur, size=n)):
                arrivals.append((float(t), h, j))
    arrivals.sort()
    for t, h, j in arrivals:
        seq = _Seq(hosts[h], t)
        late = config.phase_b and t >= half
        name = TEMPLATES[j]
        if name == "package_install":
            _package_install(seq, _NPM if late else _PYPI)
        elif name == "build_job":
            _build_job(seq)
        elif name == "web_activity":
            _web_activity(seq, _WEB_B if late else _WEB_A)
        else:
            _cron(seq)
        seqs.append(seq.out)

    if dur > 0:
        for _ in range(config.n_attack_chains):
            start = float(rng.uniform(0.1 * dur, 0.9 * dur))
            host = hosts[int(rng.integers(len(hosts)))]
            seq = _Seq(host, start)
            _attack_chain(seq, _FAMILY_B if config.phase_b and start >= half else _FAMILY_A)
            seqs.append(seq.out)

    flat = [(ev.ts, i, k, ev) for i, s in enumerate(seqs) for k, ev in enumerate(s)]
    flat.sort(key=lambda r: r[:3])
    return [r[3] for r in flat]


def split_by_time(events, fraction: float):
    """Cut a time-sorted stream at the ``fraction`` quantile of its timestamps.

    Events sharing the cut timestamp all go to the eval side, so train is
    strictly earlier than eval.
    """
    if not 0.0 < fraction < 1.0:
        raise BadFraction(fraction)
    events = list(events)
    if not events:
        return [], []
    cut = events[min(int(fraction * len(events)), len(events) - 1)].ts
    k = next(i for i, ev in enumerate(events) if ev.ts >= cut)
    return events[:k], events[k:]
