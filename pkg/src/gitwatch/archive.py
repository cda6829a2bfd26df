"""Reading and writing hourly event-archive files.

Files follow the public GH-archive layout: one JSON object per line, gzip
compressed, named ``YYYY-MM-DD-H.json.gz`` after the UTC hour they cover.
Only ``PushEvent`` and tag ``CreateEvent`` records are kept.
"""

from __future__ import annotations

import gzip
import io
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

from .model import is_commit_id

log = logging.getLogger(__name__)

PUSH = "push"
TAG = "tag-create"

# The service lists at most this many commits per push event.
PUSH_COMMIT_LIMIT = 20


class IoFailure(OSError):
    pass


@dataclass(frozen=True)
class EventRecord:
    event_id: str
    repo_name: str
    kind: str
    commit_ids: tuple[str, ...]
    event_ts: int
    label: str | None = None

    def to_dict(self) -> dict:
        return {
            "event_id": self.event_id,
            "repo_name": self.repo_name,
            "kind": self.kind,
            "commit_ids": list(self.commit_ids),
            "event_ts": self.event_ts,
            "label": self.label,
        }

    @classmethod
    def from_dict(cls, d) -> "EventRecord":
        return cls(d["event_id"], d["repo_name"], d["kind"], tuple(d["commit_ids"]),
                   int(d["event_ts"]), d.get("label"))


@dataclass
class IngestStats:
    lines: int = 0
    matched: int = 0
    skipped_malformed: int = 0
    skipped_other_kind: int = 0
    skipped_other_repo: int = 0
    skipped_empty: int = 0
    skipped_duplicate: int = 0
    truncated_pushes: int = 0
    files: int = 0

    @property
    def skipped(self) -> int:
        return (self.skipped_malformed + self.skipped_other_kind + self.skipped_other_repo
                + self.skipped_empty + self.skipped_duplicate)

    def merge(self, other: "IngestStats") -> "IngestStats":
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))
        return self

    def summary(self) -> str:
        return (f"files={self.files} lines={self.lines} matched={self.matched} "
                f"malformed={self.skipped_malformed} other_kind={self.skipped_other_kind} "
                f"other_repo={self.skipped_other_repo} empty={self.skipped_empty} "
                f"duplicate={self.skipped_duplicate} truncated_pushes={self.truncated_pushes}")


def iso_to_ts(text: str) -> int:
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def ts_to_iso(ts: int) -> str:
    return datetime.fromtimestamp(ts, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def hour_filename(ts: int) -> str:
    dt = datetime.fromtimestamp(ts, tz=timezone.utc)
    return f"{dt:%Y-%m-%d}-{dt.hour}.json.gz"


class _Malformed(ValueError):
    pass


def parse_line(line: str) -> dict:
    try:
        raw = json.loads(line)
    except json.JSONDecodeError as exc:
        raise _Malformed(str(exc)) from None
    if not isinstance(raw, dict):
        raise _Malformed("record is not an object")
    return raw


def _event_from_raw(raw: dict) -> EventRecord | str:
    """Convert one archive object; returns a skip reason string for unusable records."""
    try:
        event_id = str(raw["id"])
        etype = raw["type"]
        repo = raw["repo"]["name"]
        ts = iso_to_ts(raw["created_at"])
        payload = raw.get("payload") or {}
    except (KeyError, TypeError, ValueError) as exc:
        raise _Malformed(f"missing or bad field: {exc}") from None
    if not isinstance(repo, str) or "/" not in repo:
        raise _Malformed(f"bad repo name {repo!r}")

    if etype == "PushEvent":
        entries = payload.get("commits")
        if not isinstance(entries, list):
            raise _Malformed("push payload without commit list")
        ids = []
        for entry in entries:
            sha = entry.get("sha") if isinstance(entry, dict) else None
            if not is_commit_id(sha):
                raise _Malformed(f"bad commit id {sha!r}")
            ids.append(sha)
        if not ids:
            return "empty"
        return EventRecord(event_id, repo, PUSH, tuple(ids), ts)

    if etype == "CreateEvent" and payload.get("ref_type") == "tag":
        label = payload.get("ref")
        if not isinstance(label, str) or not label:
            raise _Malformed("tag event without ref")
        # "head" is not part of the public schema; the simulator adds it and
        # real tag events leave the target to be resolved later.
        head = payload.get("head")
        if head is not None and not is_commit_id(head):
            raise _Malformed(f"bad tag target {head!r}")
        return EventRecord(event_id, repo, TAG, (head,) if head else (), ts, label)

    return "other_kind"


def _open_text(path: Path) -> io.TextIOBase:
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic == b"\x1f\x8b":
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8", errors="replace")
    return open(path, "r", encoding="utf-8", errors="replace")


def ingest_file(path, repo_filter: Iterable[str] | None = None) -> tuple[list[EventRecord], IngestStats]:
    path = Path(path)
    wanted = set(repo_filter) if repo_filter is not None else None
    stats = IngestStats(files=1)
    events: list[EventRecord] = []
    seen: set[str] = set()
    try:
        fh = _open_text(path)
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    with fh:
        try:
            for line in fh:
                if not line.strip():
                    continue
                stats.lines += 1
                try:
                    raw = parse_line(line)
                    repo = (raw.get("repo") or {}).get("name") if isinstance(raw.get("repo"), dict) else None
                    if wanted is not None and repo is not None and repo not in wanted:
                        stats.skipped_other_repo += 1
                        continue
                    rec = _event_from_raw(raw)
                except _Malformed as exc:
                    log.debug("%s:%d malformed: %s", path, stats.lines, exc)
                    stats.skipped_malformed += 1
                    continue
                if rec == "other_kind":
                    stats.skipped_other_kind += 1
                elif rec == "empty":
                    stats.skipped_empty += 1
                elif rec.event_id in seen:
                    stats.skipped_duplicate += 1
                else:
                    seen.add(rec.event_id)
                    if rec.kind == PUSH:
                        size = raw["payload"].get("size")
                        if len(rec.commit_ids) > PUSH_COMMIT_LIMIT or (
                                isinstance(size, int) and size > len(rec.commit_ids)):
                            stats.truncated_pushes += 1
                    stats.matched += 1
                    events.append(rec)
        except (OSError, EOFError) as exc:
            # Truncated gzip stream: keep what was read, count the tail as one bad line.
            log.warning("%s: stream ended early: %s", path, exc)
            stats.lines += 1
            stats.skipped_malformed += 1
    return events, stats


def archive_files(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise IoFailure(f"not a directory: {directory}")
    return sorted(p for p in directory.iterdir()
                  if p.is_file() and (p.name.endswith(".json.gz") or p.name.endswith(".json")))


def _ingest_one(args):
    path, repos = args
    return ingest_file(path, repos)


def ingest_files(paths: Sequence, repo_filter: Iterable[str] | None = None,
                 workers: int = 1) -> tuple[list[EventRecord], IngestStats]:
    repos = set(repo_filter) if repo_filter is not None else None
    jobs = [(p, repos) for p in paths]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_ingest_one, jobs))
    else:
        results = [_ingest_one(j) for j in jobs]
    events: list[EventRecord] = []
    total = IngestStats()
    for evs, st in results:
        events.extend(evs)
        total.merge(st)
    return events, total


@dataclass
class EventIndex:
    """Per-repo time-ordered events plus the commit -> events reverse map."""

    by_repo: dict[str, list[EventRecord]] = field(default_factory=dict)
    by_id: dict[str, EventRecord] = field(default_factory=dict)
    by_commit: dict[str, list[str]] = field(default_factory=dict)

    def events(self, repo: str) -> list[EventRecord]:
        return self.by_repo.get(repo, [])

    def repos(self) -> list[str]:
        return sorted(self.by_repo)

    def __len__(self) -> int:
        return len(self.by_id)

    def phi(self, commit_id: str) -> list[EventRecord]:
        return [self.by_id[e] for e in self.by_commit.get(commit_id, ())]

    def to_dict(self) -> dict:
        evs = sorted(self.by_id.values(), key=_event_order)
        return {"schema": "gitwatch-event-index/1", "events": [e.to_dict() for e in evs]}

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(json.dumps(self.to_dict(), separators=(",", ":")), encoding="utf-8")
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> "EventIndex":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if data.get("schema") != "gitwatch-event-index/1":
            raise ValueError(f"{path}: unknown event index schema {data.get('schema')!r}")
        return build_event_index(EventRecord.from_dict(d) for d in data["events"])


def _event_order(e: EventRecord):
    return (e.event_ts, e.event_id)


def build_event_index(events: Iterable[EventRecord]) -> EventIndex:
    by_id: dict[str, EventRecord] = {}
    for e in events:
        by_id.setdefault(e.event_id, e)
    ordered = sorted(by_id.values(), key=_event_order)
    by_repo: dict[str, list[EventRecord]] = {}
    by_commit: dict[str, list[str]] = {}
    for e in ordered:
        by_repo.setdefault(e.repo_name, []).append(e)
        for cid in dict.fromkeys(e.commit_ids):
            by_commit.setdefault(cid, []).append(e.event_id)
    return EventIndex(by_repo, by_id, by_commit)


def event_to_raw(e: EventRecord) -> dict:
    """Render an event as a GH-archive object."""
    owner = e.repo_name.split("/", 1)[0]
    if e.kind == PUSH:
        payload = {
            "push_id": int(e.event_id) if e.event_id.isdigit() else 0,
            "size": len(e.commit_ids),
            "distinct_size": len(e.commit_ids),
            "ref": "refs/heads/master",
            "head": e.commit_ids[-1],
            "commits": [
                {"sha": cid, "author": {"name": owner, "email": f"{owner}@users.noreply"},
                 "message": "", "distinct": True,
                 "url": f"https://api.github.com/repos/{e.repo_name}/commits/{cid}"}
                for cid in e.commit_ids
            ],
        }
        etype = "PushEvent"
    elif e.kind == TAG:
        payload = {"ref": e.label, "ref_type": "tag", "master_branch": "master",
                   "description": None, "pusher_type": "user"}
        if e.commit_ids:
            payload["head"] = e.commit_ids[0]
        etype = "CreateEvent"
    else:
        raise ValueError(f"unknown event kind {e.kind!r}")
    return {
        "id": e.event_id,
        "type": etype,
        "actor": {"login": owner},
        "repo": {"name": e.repo_name, "url": f"https://api.github.com/repos/{e.repo_name}"},
        "payload": payload,
        "public": True,
        "created_at": ts_to_iso(e.event_ts),
    }


def write_archive(events: Sequence[EventRecord], directory) -> list[Path]:
    """Write events into hourly gzip files; output bytes depend only on the events."""
    directory = Path(directory)
    ordered = list(events)
    for a, b in zip(ordered, ordered[1:]):
        if a.event_ts > b.event_ts:
            raise ValueError("events must be sorted by timestamp")
    buckets: dict[str, list[str]] = {}
    for e in ordered:
        line = json.dumps(event_to_raw(e), sort_keys=True, separators=(",", ":"))
        buckets.setdefault(hour_filename(e.event_ts), []).append(line)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        written = []
        for name, lines in buckets.items():
            path = directory / name
            data = ("\n".join(lines) + "\n").encode("utf-8")
            with open(path, "wb") as raw, gzip.GzipFile(filename="", mode="wb", fileobj=raw, mtime=0) as gz:
                gz.write(data)
            written.append(path)
    except OSError as exc:
        raise IoFailure(f"cannot write archive into {directory}: {exc}") from exc
    return written
