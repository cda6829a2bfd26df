"""Per-fork commit graph over live and dangling commits.

Vertices are numbered in sorted commit-id order, so "lowest index" and
"lexicographically smallest id" coincide and kernels can break ties on the
index alone.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from . import _kernels as K
from .archive import EventIndex
from .model import Commit, UnknownCommit
from .provider import FOUND, ProviderError

log = logging.getLogger(__name__)

GRAPH_SCHEMA = "gitwatch-graph/1"


class GraphBuildError(Exception):
    pass


@dataclass
class BuildReport:
    resolved: int = 0
    requested: int = 0
    missing_event_ids: list = field(default_factory=list)
    errors: dict = field(default_factory=dict)

    def summary(self) -> str:
        return (f"resolved={self.resolved} requested={self.requested} "
                f"missing_event_commits={len(self.missing_event_ids)} errors={sum(self.errors.values())}")


class CommitGraph:
    def __init__(self, vertices: Mapping[str, Commit], upstream_set: Iterable[str],
                 fork_set: Iterable[str], frontier: Mapping[str, int] | None = None,
                 report: BuildReport | None = None):
        self.vertices = dict(vertices)
        self.ids = sorted(self.vertices)
        self.index = {cid: i for i, cid in enumerate(self.ids)}
        self.frontier = dict(frontier or {})
        self.report = report or BuildReport(resolved=len(self.vertices))
        n = len(self.ids)

        commits = [self.vertices[c] for c in self.ids]
        self.committer_ts = np.fromiter((c.committer_ts for c in commits), dtype=np.int64, count=n)
        self.author_ts = np.fromiter((c.author_ts for c in commits), dtype=np.int64, count=n)

        src, dst = [], []
        dangling_parent = np.zeros(n, dtype=np.bool_)
        idx = self.index
        for i, c in enumerate(commits):
            for p in c.parents:
                j = idx.get(p)
                if j is None:
                    dangling_parent[i] = True
                else:
                    src.append(j)
                    dst.append(i)
        self.edge_src = np.asarray(src, dtype=np.int64)
        self.edge_dst = np.asarray(dst, dtype=np.int64)
        self.child_ptr, self.child_idx = K.csr_from_edges(self.edge_src, self.edge_dst, n)
        self.parent_ptr, self.parent_idx = K.csr_from_edges(self.edge_dst, self.edge_src, n)
        self.has_frontier_parent = dangling_parent

        self.upstream_mask = self._mask(upstream_set)
        self.fork_mask = self._mask(fork_set)
        self.eligible = self.fork_mask & ~self.upstream_mask
        self._creation_ancestors = None

    @classmethod
    def from_seeds(cls, vertices: Mapping[str, Commit], upstream_seeds: Iterable[str],
                   fork_seeds: Iterable[str], frontier=None, report=None) -> "CommitGraph":
        """Membership sets are the ancestry closures of the seed ids."""
        g = cls(vertices, (), (), frontier, report)
        g.upstream_mask = g.ancestors_mask(upstream_seeds)
        g.fork_mask = g.ancestors_mask(fork_seeds)
        g.eligible = g.fork_mask & ~g.upstream_mask
        return g

    def _mask(self, ids: Iterable[str]) -> np.ndarray:
        m = np.zeros(len(self.ids), dtype=np.bool_)
        pos = [self.index[c] for c in ids if c in self.index]
        if pos:
            m[np.asarray(pos, dtype=np.int64)] = True
        return m

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, commit_id: str) -> bool:
        return commit_id in self.index

    def position(self, commit_id: str) -> int:
        try:
            return self.index[commit_id]
        except KeyError:
            raise UnknownCommit(commit_id) from None

    def _ids_of(self, mask: np.ndarray) -> set[str]:
        return {self.ids[i] for i in np.flatnonzero(mask)}

    @property
    def upstream_set(self) -> set[str]:
        return self._ids_of(self.upstream_mask)

    @property
    def fork_set(self) -> set[str]:
        return self._ids_of(self.fork_mask)

    def edges(self):
        for s, d in zip(self.edge_src.tolist(), self.edge_dst.tolist()):
            yield self.ids[s], self.ids[d]

    def children(self, commit_id: str) -> list[str]:
        i = self.position(commit_id)
        return [self.ids[j] for j in self.child_idx[self.child_ptr[i]:self.child_ptr[i + 1]]]

    def ancestors_mask(self, seeds: Iterable[str]) -> np.ndarray:
        pos = np.asarray([self.index[c] for c in seeds if c in self.index], dtype=np.int64)
        if pos.size == 0:
            return np.zeros(len(self.ids), dtype=np.bool_)
        return K.reach(self.parent_ptr, self.parent_idx, pos, len(self.ids))

    def descendants_mask(self, commit_id: str) -> np.ndarray:
        i = self.position(commit_id)
        return K.reach(self.child_ptr, self.child_idx, np.array([i], dtype=np.int64), len(self.ids))

    def nbcc_mask(self, patch: str) -> np.ndarray:
        return self.descendants_mask(patch) & self.eligible

    def fork_creation_bases(self) -> list[str]:
        """Upstream parents of the earliest fork-only commit that sits directly on upstream."""
        on_upstream = np.zeros(len(self.ids), dtype=np.bool_)
        if self.edge_src.size:
            hits = self.eligible[self.edge_dst] & self.upstream_mask[self.edge_src]
            on_upstream[self.edge_dst[hits]] = True
        first = K.masked_argmin(self.committer_ts, on_upstream)
        if first < 0:
            return []
        c = self.vertices[self.ids[first]]
        return [p for p in c.parents if p in self.index and self.upstream_mask[self.index[p]]]

    def predates_fork(self, commit_id: str) -> bool:
        if self._creation_ancestors is None:
            self._creation_ancestors = self.ancestors_mask(self.fork_creation_bases())
        return bool(self._creation_ancestors[self.position(commit_id)])

    def incomplete(self) -> bool:
        """True when some fork commit has ancestry the build could not resolve."""
        return bool((self.has_frontier_parent & self.fork_mask).any())

    # -- snapshot -----------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "schema": GRAPH_SCHEMA,
            "vertices": [self.vertices[c].to_dict() for c in self.ids],
            "edges": [[p, c] for p, c in self.edges()],
            "upstream_set": sorted(self.upstream_set),
            "fork_set": sorted(self.fork_set),
            "frontier": dict(sorted(self.frontier.items())),
        }

    def save(self, path, fingerprint: str | None = None) -> None:
        data = self.to_dict()
        if fingerprint is not None:
            data["fingerprint"] = fingerprint
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(json.dumps(data, separators=(",", ":")), encoding="utf-8")
        os.replace(tmp, path)

    @classmethod
    def load(cls, path, fingerprint: str | None = None) -> "CommitGraph | None":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if data.get("schema") != GRAPH_SCHEMA:
            raise ValueError(f"{path}: unsupported graph schema {data.get('schema')!r}")
        if fingerprint is not None and data.get("fingerprint") != fingerprint:
            return None
        vertices = {d["hash"]: Commit.from_dict(d) for d in data["vertices"]}
        return cls(vertices, data["upstream_set"], data["fork_set"], data["frontier"])


def nbcc(graph: CommitGraph, patch: str) -> set[str]:
    """Fork-only commits reachable from ``patch`` along parent-to-child edges."""
    return graph._ids_of(graph.nbcc_mask(patch))


def index_fingerprint(index: EventIndex, fork: str, upstream: str) -> str:
    h = hashlib.sha1(f"{fork}\n{upstream}\n".encode())
    for repo in (fork, upstream):
        for e in index.events(repo):
            h.update(f"{e.event_id}:{e.event_ts}:{','.join(e.commit_ids)}\n".encode())
    return h.hexdigest()


def build_graph(index: EventIndex, provider, *, fork: str, upstream: str) -> CommitGraph:
    """Resolve every commit named by either repo's events and follow parents to closure."""
    report = BuildReport()
    vertices: dict[str, Commit] = {}
    attempted: set[str] = set()
    failed: set[str] = set()
    frontier: dict[str, int] = {}

    seeds = {fork: [], upstream: []}
    for repo in (upstream, fork):
        for e in index.events(repo):
            seeds[repo].extend(e.commit_ids)
    seed_set = {r: list(dict.fromkeys(ids)) for r, ids in seeds.items()}

    # fetch through the repo whose event named the id; parents inherit it
    upstream_seeds = set(seed_set[upstream])
    wave: dict[str, list[str]] = {upstream: list(seed_set[upstream]),
                                  fork: [c for c in seed_set[fork] if c not in upstream_seeds]}
    while any(wave.values()):
        nxt: dict[str, list[str]] = {upstream: [], fork: []}
        for repo, ids in wave.items():
            ids = [c for c in ids if c not in attempted]
            if not ids:
                continue
            attempted.update(ids)
            report.requested += len(ids)
            try:
                results = provider.get_commits_bulk(repo, ids)
            except ProviderError as exc:
                name = type(exc).__name__
                report.errors[name] = report.errors.get(name, 0) + len(ids)
                log.warning("provider error while fetching %d commits of %s: %s", len(ids), repo, exc)
                failed.update(ids)
                continue
            for cid, res in results.items():
                if res.status != FOUND:
                    failed.add(cid)
                    report.errors[res.status] = report.errors.get(res.status, 0) + 1
                    continue
                vertices[cid] = res.commit
                for p in res.commit.parents:
                    if p not in attempted and p not in vertices:
                        nxt[repo].append(p)
        wave = {r: list(dict.fromkeys(ids)) for r, ids in nxt.items()}

    if not vertices:
        raise GraphBuildError(f"no commit of {fork} or {upstream} could be resolved")

    for c in vertices.values():
        for p in c.parents:
            if p not in vertices:
                frontier[p] = frontier.get(p, 0) + 1
    report.resolved = len(vertices)
    report.missing_event_ids = sorted(c for r in seed_set.values() for c in r if c not in vertices)
    return CommitGraph.from_seeds(vertices, seed_set[upstream], seed_set[fork], frontier, report)
