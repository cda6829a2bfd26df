"""In-memory model of the Git operations GitWatch reasons about.

Commits carry metadata only; the committed changes are represented by an
opaque ``payload_digest``.  Histories are immutable snapshots: every
operation returns a new :class:`RepoHistory` and leaves its input intact.
Commits replaced by a rebase stay in ``commits`` but drop out of the set
reachable from ``heads``, the way the hosting service keeps unreferenced
commits queryable by id.
"""

from __future__ import annotations

import hashlib
import re
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

HEX40 = re.compile(r"[0-9a-f]{40}\Z")


class GitModelError(Exception):
    pass


class PreconditionViolation(GitModelError):
    pass


class UnknownCommit(GitModelError):
    pass


class UnknownParent(UnknownCommit):
    pass


class AmbiguousBase(GitModelError):
    pass


class DuplicateLabel(GitModelError):
    pass


def is_commit_id(value: object) -> bool:
    return isinstance(value, str) and HEX40.match(value) is not None


def _check_identity(name: str) -> None:
    if not name or "\n" in name:
        raise ValueError(f"invalid identity {name!r}")


@dataclass(frozen=True)
class Commit:
    hash: str
    parents: tuple[str, ...]
    author: str
    committer: str
    author_ts: int
    committer_ts: int
    payload_digest: str

    def __post_init__(self):
        if not is_commit_id(self.hash):
            raise ValueError(f"malformed commit id {self.hash!r}")
        if len(self.parents) > 2:
            raise ValueError(f"{self.hash}: more than two parents")
        if self.hash in self.parents:
            raise ValueError(f"{self.hash}: lists itself as parent")
        for p in self.parents:
            if not is_commit_id(p):
                raise ValueError(f"{self.hash}: malformed parent id {p!r}")
        _check_identity(self.author)
        _check_identity(self.committer)

    @property
    def id_is_consistent(self) -> bool:
        """True when ``hash`` is the model digest of the other fields.

        Commits fetched from a real hosting service carry Git's own SHA-1 and
        never satisfy this; only simulator-made commits do.
        """
        return self.hash == compute_commit_id(
            self.parents, self.author, self.committer,
            self.author_ts, self.committer_ts, self.payload_digest,
        )

    def to_dict(self) -> dict:
        return {
            "hash": self.hash,
            "parents": list(self.parents),
            "author": self.author,
            "committer": self.committer,
            "author_ts": self.author_ts,
            "committer_ts": self.committer_ts,
            "payload_digest": self.payload_digest,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Commit":
        return cls(
            hash=d["hash"],
            parents=tuple(d["parents"]),
            author=d["author"],
            committer=d["committer"],
            author_ts=int(d["author_ts"]),
            committer_ts=int(d["committer_ts"]),
            payload_digest=d["payload_digest"],
        )


@dataclass(frozen=True)
class TagRecord:
    label: str
    timestamp: int
    target: str

    def __post_init__(self):
        if not self.label:
            raise ValueError("tag label must be non-empty")


def compute_commit_id(parents: Sequence[str], author: str, committer: str,
                      author_ts: int, committer_ts: int, payload_digest: str) -> str:
    # Line-oriented encoding; identities cannot contain newlines, so it is injective.
    lines = [f"parent {p}" for p in parents]
    lines.append(f"author {author} {int(author_ts)}")
    lines.append(f"committer {committer} {int(committer_ts)}")
    lines.append(f"payload {payload_digest}")
    return hashlib.sha1(("\n".join(lines) + "\n").encode("utf-8")).hexdigest()


def make_commit(parents: Sequence[str], author: str, committer: str,
                author_ts: int, committer_ts: int, payload_digest: str) -> Commit:
    parents = tuple(parents)
    h = compute_commit_id(parents, author, committer, author_ts, committer_ts, payload_digest)
    return Commit(h, parents, author, committer, int(author_ts), int(committer_ts), payload_digest)


def payload_digest_for(text: str) -> str:
    return hashlib.sha1(text.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class RepoHistory:
    repo_name: str
    commits: Mapping[str, Commit] = field(default_factory=dict)
    heads: frozenset = frozenset()
    tags: tuple = ()

    def __contains__(self, commit_id: str) -> bool:
        return commit_id in self.commits

    def __len__(self) -> int:
        return len(self.commits)

    def get(self, commit_id: str) -> Commit:
        try:
            return self.commits[commit_id]
        except KeyError:
            raise UnknownCommit(commit_id) from None

    @property
    def head(self) -> str:
        if len(self.heads) != 1:
            raise AmbiguousBase(f"{self.repo_name} has {len(self.heads)} heads")
        return next(iter(self.heads))

    def ancestry(self, start: Iterable[str]) -> set[str]:
        """All commits reachable from ``start`` along parent links, inclusive."""
        seen: set[str] = set()
        stack = [c for c in start if c in self.commits]
        while stack:
            cid = stack.pop()
            if cid in seen:
                continue
            seen.add(cid)
            stack.extend(p for p in self.commits[cid].parents if p not in seen)
        return seen

    def live(self) -> set[str]:
        return self.ancestry(self.heads)

    def dangling(self) -> set[str]:
        return set(self.commits) - self.live()

    def tag_labels(self) -> set[str]:
        return {t.label for t in self.tags}


def topological_order(history: RepoHistory) -> list[str]:
    """Kahn's algorithm, parents first; raises if the parent relation has a cycle."""
    indeg = {}
    children: dict[str, list[str]] = {}
    for cid, c in history.commits.items():
        ps = [p for p in c.parents if p in history.commits]
        indeg[cid] = len(ps)
        for p in ps:
            children.setdefault(p, []).append(cid)
    queue = deque(sorted(c for c, d in indeg.items() if d == 0))
    order = []
    while queue:
        cid = queue.popleft()
        order.append(cid)
        for ch in children.get(cid, ()):
            indeg[ch] -= 1
            if indeg[ch] == 0:
                queue.append(ch)
    if len(order) != len(indeg):
        raise GitModelError(f"{history.repo_name}: parent relation has a cycle")
    return order


def check_closed(history: RepoHistory) -> None:
    for cid, c in history.commits.items():
        for p in c.parents:
            if p not in history.commits:
                raise UnknownParent(f"{cid} references missing parent {p}")


def push(history: RepoHistory, batch: Sequence[Commit], pusher: str) -> RepoHistory:
    if not batch:
        return history
    prev = None
    for i, c in enumerate(batch, 1):
        if c.author != pusher or c.committer != pusher:
            raise PreconditionViolation(f"commit {i}: author and committer must be the pusher {pusher!r}")
        if c.author_ts != c.committer_ts:
            raise PreconditionViolation(f"commit {i}: author_ts must equal committer_ts")
        if not c.id_is_consistent:
            raise PreconditionViolation(f"commit {i}: hash does not match its metadata")
        if c.hash in history.commits:
            raise PreconditionViolation(f"commit {i}: {c.hash} already in history")
        if prev is not None:
            if not c.parents or c.parents[0] != prev.hash:
                raise PreconditionViolation(f"commit {i}: first parent must be the previous batch commit")
            if c.committer_ts <= prev.committer_ts:
                raise PreconditionViolation(f"commit {i}: committer timestamps must strictly increase")
            for p in c.parents[1:]:
                if p not in history.commits:
                    raise UnknownParent(p)
        prev = c

    first = batch[0]
    if first.parents:
        for p in first.parents:
            if p not in history.commits:
                raise UnknownParent(p)
    elif history.commits:
        raise PreconditionViolation("commit 1: root commit pushed onto a non-empty history")

    commits = dict(history.commits)
    for c in batch:
        commits[c.hash] = c
    heads = set(history.heads)
    heads.difference_update(first.parents[:1])
    heads.add(batch[-1].hash)
    return replace(history, commits=commits, heads=frozenset(heads))


def fork(history: RepoHistory, base: str, new_name: str) -> RepoHistory:
    if base not in history.commits:
        raise UnknownCommit(base)
    keep = history.ancestry([base])
    commits = {cid: history.commits[cid] for cid in keep}
    tags = tuple(t for t in history.tags if t.target in keep)
    return RepoHistory(new_name, commits, frozenset([base]), tags)


def divergent_suffix(fork_history: RepoHistory, upstream: RepoHistory) -> tuple[str, list[str]]:
    """Return ``(base, [C1..Cr])`` for a fork whose head chain leaves upstream once."""
    head = fork_history.head
    suffix = []
    cur = head
    while cur not in upstream.commits:
        c = fork_history.get(cur)
        if len(c.parents) != 1:
            raise AmbiguousBase(f"divergent commit {cur} has {len(c.parents)} parents")
        suffix.append(cur)
        cur = c.parents[0]
    suffix.reverse()
    return cur, suffix


def rebase(fork_history: RepoHistory, upstream: RepoHistory, new_base: str, now: int,
           committer: str | None = None) -> tuple[RepoHistory, dict[str, str], set[str]]:
    """Replay the fork's divergent commits on top of ``new_base``.

    ``committer`` defaults to each commit's existing committer.
    """
    if new_base not in upstream.commits:
        raise UnknownCommit(new_base)
    _, suffix = divergent_suffix(fork_history, upstream)

    commits = dict(fork_history.commits)
    for cid in upstream.ancestry([new_base]):
        commits.setdefault(cid, upstream.commits[cid])

    mapping: dict[str, str] = {}
    parent = new_base
    for cid in suffix:
        old = fork_history.commits[cid]
        if now < old.author_ts:
            raise PreconditionViolation(f"rebase time {now} precedes author_ts of {cid}")
        new = make_commit((parent,), old.author, committer or old.committer,
                          old.author_ts, now, old.payload_digest)
        if new.hash in commits:
            raise PreconditionViolation(f"rebase of {cid} reproduces an existing id")
        commits[new.hash] = new
        mapping[cid] = new.hash
        parent = new.hash

    history = replace(fork_history, commits=commits, heads=frozenset([parent]))
    return history, mapping, set(mapping)


def tag(history: RepoHistory, label: str, target: str, at: int) -> RepoHistory:
    if target not in history.commits:
        raise UnknownCommit(target)
    if label in history.tag_labels():
        raise DuplicateLabel(label)
    return replace(history, tags=history.tags + (TagRecord(label, int(at), target),))
