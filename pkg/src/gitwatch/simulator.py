"""Synthetic upstream/fork timelines with known port times.

A :class:`SimScript` lists timed actions: upstream pushes (optionally
carrying a patch label), fork pushes, rebases of the fork onto a later
upstream commit, and tags.  :func:`simulate` replays them through the git
model and records what actually happened in a :class:`TruthLedger`, which is
the ground truth the heuristics are checked against.

Timeline conventions:

* a push at time ``t`` of ``n`` commits creates commits stamped
  ``t-n+1 .. t``; a patch label names the last commit of its push;
* a rebase at ``t`` stamps the rewritten commits with ``t`` and is published
  as a push event at ``t`` listing them (or the new base when nothing
  diverges);
* a tag at ``t`` targets the named repo's head and is published at ``t``;
* per-identity skew shifts commit timestamps only; event and tag times are
  service-side and never skewed.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from . import model
from .archive import PUSH, TAG, EventRecord, write_archive  # noqa: F401  (re-exported)
from .model import Commit, RepoHistory, TagRecord

DEFAULT_EPOCH = 1_300_000_000
DAY = 86_400


class InvalidScript(ValueError):
    pass


@dataclass
class SimScript:
    seed: int = 0
    upstream_schedule: list = field(default_factory=list)  # (t, count, label|None)
    fork_point: int = 0  # index into the upstream commit sequence
    fork_schedule: list = field(default_factory=list)  # (t, count)
    rebase_schedule: list = field(default_factory=list)  # (t, upstream commit index)
    tag_schedule: list = field(default_factory=list)  # (t, label, "fork" | "upstream")
    skew: dict = field(default_factory=dict)  # identity -> seconds
    event_loss_rate: float = 0.0
    drop_event_times: list = field(default_factory=list)
    max_skew: int = DAY
    upstream_repo: str = "upstream/project"
    fork_repo: str = "fork/project"
    upstream_maintainer: str = "upstream-dev"
    fork_maintainer: str = "fork-dev"

    @classmethod
    def from_dict(cls, d: dict) -> "SimScript":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise InvalidScript(f"unknown script keys: {sorted(unknown)}")
        s = cls(**d)
        s.upstream_schedule = [_entry(e, 3, pad=True) for e in s.upstream_schedule]
        s.fork_schedule = [_entry(e, 2) for e in s.fork_schedule]
        s.rebase_schedule = [_entry(e, 2) for e in s.rebase_schedule]
        s.tag_schedule = [_entry(e, 3, pad=True) for e in s.tag_schedule]
        s.tag_schedule = [(t, lab, where or "fork") for t, lab, where in s.tag_schedule]
        s.skew = {str(k): int(v) for k, v in (s.skew or {}).items()}
        return s

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "upstream_repo": self.upstream_repo,
            "fork_repo": self.fork_repo,
            "upstream_maintainer": self.upstream_maintainer,
            "fork_maintainer": self.fork_maintainer,
            "upstream_schedule": [list(e) for e in self.upstream_schedule],
            "fork_point": self.fork_point,
            "fork_schedule": [list(e) for e in self.fork_schedule],
            "rebase_schedule": [list(e) for e in self.rebase_schedule],
            "tag_schedule": [list(e) for e in self.tag_schedule],
            "skew": dict(self.skew),
            "max_skew": self.max_skew,
            "event_loss_rate": self.event_loss_rate,
            "drop_event_times": list(self.drop_event_times),
        }

    @classmethod
    def load(cls, path) -> "SimScript":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise InvalidScript(f"cannot read script {path}: {exc}") from exc
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise InvalidScript(f"{path}: {exc}") from exc
        if not isinstance(data, dict):
            raise InvalidScript(f"{path}: script must be a mapping")
        return cls.from_dict(data)


def _entry(e, n, pad=False):
    e = list(e) if isinstance(e, (list, tuple)) else [e]
    if pad:
        e = e + [None] * (n - len(e))
    if len(e) != n:
        raise InvalidScript(f"schedule entry {e!r} should have {n} fields")
    return tuple(e)


@dataclass
class PatchTruth:
    label: str
    commit: str
    upstream_index: int
    author_ts: int
    port_ts: int | None
    tag_ts: int | None
    predates_fork: bool = False

    @property
    def delay(self) -> int | None:
        return None if self.port_ts is None else self.port_ts - self.author_ts


@dataclass
class TruthLedger:
    patches: dict[str, PatchTruth] = field(default_factory=dict)

    def __getitem__(self, label: str) -> PatchTruth:
        return self.patches[label]

    def __iter__(self):
        return iter(self.patches.values())

    def __len__(self) -> int:
        return len(self.patches)

    def to_tsv(self) -> str:
        rows = ["label\tupstream_author_ts\tport_ts\ttag_ts"]
        for p in self.patches.values():
            port = "NA" if p.predates_fork else _cell(p.port_ts)
            rows.append(f"{p.label}\t{p.author_ts}\t{port}\t{_cell(p.tag_ts)}")
        return "\n".join(rows) + "\n"

    @classmethod
    def from_tsv(cls, text: str) -> "TruthLedger":
        """Parse a ledger written by :meth:`to_tsv` (commit ids are not kept)."""
        ledger = cls()
        for line in text.splitlines()[1:]:
            label, a, port, tagt = line.split("\t")
            ledger.patches[label] = PatchTruth(
                label, "", -1, int(a),
                None if port in ("-", "NA") else int(port),
                None if tagt == "-" else int(tagt),
                predates_fork=(port == "NA"),
            )
        return ledger


def _cell(v):
    return "-" if v is None else str(v)


@dataclass
class SimResult:
    script: SimScript
    upstream: RepoHistory
    fork: RepoHistory
    events: list[EventRecord]
    truth: TruthLedger
    all_events: list[EventRecord]
    patch_commits: dict[str, str]
    rebase_mappings: list[dict[str, str]]

    @property
    def tags(self) -> list[TagRecord]:
        return list(self.upstream.tags) + list(self.fork.tags)

    def all_commits(self) -> dict[str, Commit]:
        out = dict(self.upstream.commits)
        out.update(self.fork.commits)
        return out


# ordering of simultaneous actions: upstream first, then the fork side
_ORDER = {"upstream": 0, "rebase": 1, "fork": 2, "tag": 3}


def validate(script: SimScript) -> None:
    def increasing(name, times):
        for a, b in zip(times, times[1:]):
            if not b > a:
                raise InvalidScript(f"{name} must be strictly increasing in time ({a} then {b})")

    for name, sched in (("upstream_schedule", script.upstream_schedule),
                        ("fork_schedule", script.fork_schedule),
                        ("rebase_schedule", script.rebase_schedule),
                        ("tag_schedule", script.tag_schedule)):
        for e in sched:
            if not isinstance(e[0], int) or isinstance(e[0], bool):
                raise InvalidScript(f"{name}: time {e[0]!r} is not an integer")
        increasing(name, [e[0] for e in sched])

    if not script.upstream_schedule:
        raise InvalidScript("upstream_schedule is empty")
    if not 0.0 <= script.event_loss_rate <= 1.0:
        raise InvalidScript("event_loss_rate must lie in [0, 1]")
    for who, s in script.skew.items():
        if abs(s) > script.max_skew:
            raise InvalidScript(f"skew for {who} exceeds max_skew ({s} > {script.max_skew})")
    if script.upstream_maintainer == script.fork_maintainer:
        raise InvalidScript("upstream and fork maintainers must differ")

    labels = [e[2] for e in script.upstream_schedule if e[2] is not None]
    if len(labels) != len(set(labels)):
        raise InvalidScript("patch labels must be unique")
    tag_labels = [e[1] for e in script.tag_schedule]
    if len(tag_labels) != len(set(tag_labels)) or not all(tag_labels):
        raise InvalidScript("tag labels must be unique and non-empty")
    for e in script.tag_schedule:
        if e[2] not in ("fork", "upstream"):
            raise InvalidScript(f"tag {e[1]!r}: target must be 'fork' or 'upstream'")

    prev_end = None
    total = 0
    for t, count, _ in script.upstream_schedule:
        if not isinstance(count, int) or count < 1:
            raise InvalidScript(f"upstream push at {t}: count must be a positive integer")
        start = t - count + 1
        if prev_end is not None and start <= prev_end:
            raise InvalidScript(f"upstream push at {t} overlaps the previous push")
        prev_end = t
        total += count
    if not 0 <= script.fork_point < total:
        raise InvalidScript(f"fork_point {script.fork_point} outside upstream history of {total} commits")

    bases = [b for _, b in script.rebase_schedule]
    for a, b in zip(bases, bases[1:]):
        if b < a:
            raise InvalidScript("rebase bases must advance monotonically")
    for b in bases:
        if not script.fork_point <= b < total:
            raise InvalidScript(f"rebase base {b} outside [fork_point, {total})")


def _upstream_commit_times(script: SimScript) -> list[int]:
    times = []
    for t, count, _ in script.upstream_schedule:
        times.extend(range(t - count + 1, t + 1))
    return times


def simulate(script: SimScript) -> SimResult:
    validate(script)
    rng = random.Random(script.seed)
    up_name, fk_name = script.upstream_repo, script.fork_repo
    up_dev, fk_dev = script.upstream_maintainer, script.fork_maintainer
    skew_up = script.skew.get(up_dev, 0)
    skew_fk = script.skew.get(fk_dev, 0)
    commit_times = _upstream_commit_times(script)

    actions = []
    for e in script.upstream_schedule:
        actions.append((e[0], _ORDER["upstream"], "upstream", e))
    for e in script.fork_schedule:
        actions.append((e[0], _ORDER["fork"], "fork", e))
    for e in script.rebase_schedule:
        actions.append((e[0], _ORDER["rebase"], "rebase", e))
    for e in script.tag_schedule:
        actions.append((e[0], _ORDER["tag"], "tag", e))
    actions.sort(key=lambda a: (a[0], a[1]))

    fork_side = sorted(a[0] for a in actions if a[2] in ("fork", "rebase") or
                       (a[2] == "tag" and a[3][2] == "fork"))
    if fork_side and commit_times[script.fork_point] >= fork_side[0]:
        raise InvalidScript("fork point commit is created after the first fork action")

    upstream = RepoHistory(up_name)
    up_seq: list[str] = []  # upstream commits in creation order
    fork: RepoHistory | None = None
    fork_base_index = script.fork_point
    last_fork_time = None
    events: list[EventRecord] = []
    patch_commits: dict[str, str] = {}
    patch_index: dict[str, int] = {}
    mappings = []
    payload_n = 0
    event_n = 0

    def payload():
        nonlocal payload_n
        payload_n += 1
        return model.payload_digest_for(f"{script.seed}:{payload_n}")

    def emit(repo, kind, ids, t, label=None):
        nonlocal event_n
        event_n += 1
        events.append(EventRecord(str(1_000_000_000 + event_n), repo, kind, tuple(ids), t, label))

    def ensure_fork(t):
        nonlocal fork
        if fork is None:
            if len(up_seq) <= script.fork_point:
                raise InvalidScript(f"fork point not yet pushed at t={t}")
            fork = model.fork(upstream, up_seq[script.fork_point], fk_name)
        return fork

    def check_fork_time(t, start):
        nonlocal last_fork_time
        if last_fork_time is not None and start <= last_fork_time:
            raise InvalidScript(f"fork action at {t} overlaps the previous fork action")
        last_fork_time = t

    for t, _, kind, e in actions:
        if kind == "upstream":
            _, count, label = e
            batch = []
            parent = up_seq[-1] if up_seq else None
            for k in range(count):
                ts = t - count + 1 + k + skew_up
                if ts < 0:
                    raise InvalidScript(f"upstream commit time {ts} is negative")
                c = model.make_commit((parent,) if parent else (), up_dev, up_dev, ts, ts, payload())
                batch.append(c)
                parent = c.hash
            upstream = model.push(upstream, batch, up_dev)
            up_seq.extend(c.hash for c in batch)
            emit(up_name, PUSH, [c.hash for c in batch], t)
            if label is not None:
                patch_commits[label] = batch[-1].hash
                patch_index[label] = len(up_seq) - 1

        elif kind == "fork":
            _, count = e
            check_fork_time(t, t - count + 1)
            fk = ensure_fork(t)
            parent = fk.head
            batch = []
            for k in range(count):
                ts = t - count + 1 + k + skew_fk
                if ts < 0:
                    raise InvalidScript(f"fork commit time {ts} is negative")
                c = model.make_commit((parent,), fk_dev, fk_dev, ts, ts, payload())
                batch.append(c)
                parent = c.hash
            fork = model.push(fk, batch, fk_dev)
            emit(fk_name, PUSH, [c.hash for c in batch], t)

        elif kind == "rebase":
            _, base_index = e
            check_fork_time(t, t)
            fk = ensure_fork(t)
            if base_index >= len(up_seq):
                raise InvalidScript(f"rebase at {t} targets upstream commit {base_index} not yet pushed")
            now = t + skew_fk
            if now < 0:
                raise InvalidScript(f"rebase time {now} is negative")
            fork, mapping, _ = model.rebase(fk, upstream, up_seq[base_index], now, committer=fk_dev)
            mappings.append(mapping)
            fork_base_index = base_index
            listed = list(mapping.values()) or [up_seq[base_index]]
            emit(fk_name, PUSH, listed, t)

        else:
            _, label, where = e
            if where == "fork":
                check_fork_time(t, t)
                fk = ensure_fork(t)
                fork = model.tag(fk, label, fk.head, t)
                emit(fk_name, TAG, [fk.head], t, label)
            else:
                if not up_seq:
                    raise InvalidScript(f"upstream tag at {t} before any upstream commit")
                upstream = model.tag(upstream, label, up_seq[-1], t)
                emit(up_name, TAG, [up_seq[-1]], t, label)

    if fork is None:
        fork = model.fork(upstream, up_seq[script.fork_point], fk_name)

    truth = _truth(script, patch_commits, patch_index, commit_times, fork, upstream)
    published = _drop_events(events, script, rng)
    return SimResult(script, upstream, fork, published, truth, events, patch_commits, mappings)


def _drop_events(events: list[EventRecord], script: SimScript, rng: random.Random) -> list[EventRecord]:
    drop = set(script.drop_event_times)
    kept = []
    for e in events:
        lost = rng.random() < script.event_loss_rate if script.event_loss_rate > 0 else False
        if lost or e.event_ts in drop:
            continue
        kept.append(e)
    return kept


def _truth(script, patch_commits, patch_index, commit_times, fork, upstream) -> TruthLedger:
    upstream_labels = upstream.tag_labels()
    rebases = list(script.rebase_schedule)
    ledger = TruthLedger()
    tag_ancestry: dict[str, set[str]] = {}
    for label, cid in patch_commits.items():
        idx = patch_index[label]
        author_ts = commit_times[idx]
        if idx <= script.fork_point:
            ledger.patches[label] = PatchTruth(label, cid, idx, author_ts, None, None, predates_fork=True)
            continue
        port = next((t for t, base in rebases if base >= idx), None)
        tag_ts = None
        if port is not None:
            for tg in fork.tags:
                if tg.timestamp < port or tg.label in upstream_labels:
                    continue
                if tg.target in upstream.commits:
                    continue
                if tg.target not in tag_ancestry:
                    tag_ancestry[tg.target] = fork.ancestry([tg.target])
                if cid in tag_ancestry[tg.target]:
                    tag_ts = tg.timestamp
                    break
        ledger.patches[label] = PatchTruth(label, cid, idx, author_ts, port, tag_ts)
    return ledger


def random_script(seed: int, *, n_rebases: tuple[int, int] = (1, 3), max_commits: int = 500,
                  skew: int = 0, tags: bool = True, epoch: int = DEFAULT_EPOCH) -> SimScript:
    """A random but valid script: at least one fork push precedes every rebase."""
    rng = random.Random(seed)
    budget = max_commits
    n_up = rng.randint(4, 12)
    t = epoch
    upstream = []
    total = 0
    for i in range(n_up):
        count = rng.randint(1, 15)
        t += rng.randint(1, 20) * DAY + rng.randint(count, 3600)
        label = f"P{i:02d}" if rng.random() < 0.6 else None
        upstream.append((t, count, label))
        total += count
    budget -= total
    fork_point = rng.randint(0, max(0, upstream[0][1] + (upstream[1][1] if n_up > 1 else 0) - 1))
    fork_point = min(fork_point, total - 1)
    fork_start = _time_of(upstream, fork_point) + rng.randint(1, 5) * DAY

    n_reb = rng.randint(*n_rebases)
    fork_sched, rebase_sched, tag_sched = [], [], []
    ft = fork_start
    divergent = 0
    first_count = rng.randint(1, 5)
    fork_sched.append((ft + first_count, first_count))
    divergent += first_count
    ft += first_count
    base = fork_point
    horizon = upstream[-1][0] + 30 * DAY
    step = max(DAY, (horizon - ft) // (n_reb + 1))
    tag_n = 0
    for r in range(n_reb):
        ft += rng.randint(step // 2, step)
        pushed = sum(1 for x in _upstream_commit_times_from(upstream) if x <= ft)
        base = rng.randint(base, max(base, pushed - 1))
        rebase_sched.append((ft, base))
        budget -= divergent
        # the fork keeps working between rebases
        if rng.random() < 0.7 and budget > 20:
            c = rng.randint(1, 4)
            ft += rng.randint(1, 3) * DAY + c
            fork_sched.append((ft, c))
            divergent += c
            budget -= c
        if tags and rng.random() < 0.8:
            ft += rng.randint(1, 10) * DAY
            tag_sched.append((ft, f"fork-v{tag_n}", "fork"))
            tag_n += 1
    if tags:
        ut = upstream[rng.randrange(len(upstream))][0] + 1
        tag_sched.append((ut, "v-upstream-1", "upstream"))
        tag_sched.sort()

    if budget < 0:
        return random_script(seed + 10_007, n_rebases=n_rebases, max_commits=max_commits,
                             skew=skew, tags=tags, epoch=epoch)
    script = SimScript(seed=seed, upstream_schedule=upstream, fork_point=fork_point,
                       fork_schedule=fork_sched, rebase_schedule=rebase_sched,
                       tag_schedule=tag_sched)
    if skew:
        script.skew = {script.fork_maintainer: skew}
        script.max_skew = max(script.max_skew, abs(skew))
    return script


def _upstream_commit_times_from(upstream):
    out = []
    for t, count, _ in upstream:
        out.extend(range(t - count + 1, t + 1))
    return out


def _time_of(upstream, index) -> int:
    return _upstream_commit_times_from(upstream)[index]


def commits_to_jsonl(commits) -> str:
    rows = sorted(commits, key=lambda c: c.hash)
    return "".join(json.dumps(c.to_dict(), sort_keys=True, separators=(",", ":")) + "\n" for c in rows)


def write_outputs(result: SimResult, out_dir) -> dict[str, Any]:
    """Archive files, commit store and truth ledger for one simulation."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = write_archive(result.events, out / "archive")
    (out / "commits.jsonl").write_text(commits_to_jsonl(result.all_commits().values()), encoding="utf-8")
    (out / "truth.tsv").write_text(result.truth.to_tsv(), encoding="utf-8")
    patches = [{"label": p.label, "commits": [p.commit]} for p in result.truth]
    (out / "patches.yaml").write_text(yaml.safe_dump(patches, sort_keys=False), encoding="utf-8")
    return {"archive": files, "commits": out / "commits.jsonl", "truth": out / "truth.tsv",
            "patches": out / "patches.yaml"}


def scale_script(n_patches: int = 50, push_size: int = 1000, fork_commits: int = 2500,
                 n_rebases: int = 20, seed: int = 1, epoch: int = DEFAULT_EPOCH) -> SimScript:
    """A large linear scenario: one patch per upstream push, rebases spread across them.

    The defaults give roughly 100,000 commits (50,000 upstream plus the fork's
    divergent suffix copied once per rebase).
    """
    upstream = []
    t = epoch
    for i in range(n_patches):
        t += 10 * DAY
        upstream.append((t, push_size, f"S{i:03d}"))
    first = upstream[0][0] + DAY + fork_commits
    fork_sched = [(first, fork_commits)]
    rebases = []
    n_rebases = min(n_rebases, n_patches)
    for r in range(n_rebases):
        k = (r + 1) * n_patches // n_rebases  # pushes visible at this rebase
        t_r = upstream[k - 1][0] + 2 * DAY
        rebases.append((t_r, k * push_size - 1))
    tags = [(t_r + DAY, f"release-{r}", "fork") for r, (t_r, _) in enumerate(rebases)]
    return SimScript(seed=seed, upstream_schedule=upstream, fork_point=push_size - 1,
                     fork_schedule=fork_sched, rebase_schedule=rebases, tag_schedule=tags)
