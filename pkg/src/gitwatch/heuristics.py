"""Propagation-delay estimators and their combination.

All three estimators look at the fork-only descendants of an upstream patch
commit (see :func:`gitwatch.graph.nbcc`) and measure from the patch's author
timestamp to the earliest of:

* PCF: a descendant's committer timestamp,
* PEF: an archive event listing a descendant,
* PTF: a fork-only tag targeting a descendant.

Deltas are integer seconds; conversion to days happens at presentation.
Ties on the minimal timestamp go to the smallest commit id, event id or tag
label respectively.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import _kernels as K
from .archive import PUSH, TAG, EventIndex, EventRecord
from .graph import CommitGraph
from .model import TagRecord, UnknownCommit

DAY = 86_400

FOUND = "found"
NOT_PORTED = "not_ported"
PREDATES_FORK = "predates_fork"
GRAPH_INCOMPLETE = "graph_incomplete"

HEURISTICS = ("PCF", "PEF", "PTF")


def to_days(seconds: int | None) -> float | None:
    return None if seconds is None else seconds / DAY


def round_days(seconds: int | None) -> int | None:
    """Whole days, halves rounded up (towards +inf)."""
    if seconds is None:
        return None
    return (2 * seconds + DAY) // (2 * DAY)


@dataclass(frozen=True)
class PatchSpec:
    label: str
    upstream_commits: tuple[str, ...]
    published_date: int | None = None
    description: str = ""

    def __post_init__(self):
        if not self.upstream_commits:
            raise ValueError(f"patch {self.label!r} lists no upstream commits")
        object.__setattr__(self, "upstream_commits", tuple(self.upstream_commits))


@dataclass
class PropagationEstimate:
    patch: str
    fork: str
    delta_pcf: int | None = None
    pcf_witness: str | None = None
    delta_pef: int | None = None
    pef_witness: str | None = None
    delta_ptf: int | None = None
    ptf_witness: str | None = None
    combined: int | None = None
    winner: str | None = None
    status: str = NOT_PORTED
    flags: list[str] = field(default_factory=list)
    patch_author_ts: int | None = None
    published_date: int | None = None
    delay_since_publication: int | None = None
    per_commit: list[dict] = field(default_factory=list)

    def deltas(self) -> dict[str, int | None]:
        return {"PCF": self.delta_pcf, "PEF": self.delta_pef, "PTF": self.delta_ptf}

    def days(self, which: str) -> float | None:
        return to_days({**self.deltas(), "combined": self.combined}[which])


def combine(deltas: dict[str, int | None]) -> tuple[int | None, str | None]:
    """Smallest present delta and the heuristic that produced it."""
    best, winner = None, None
    for name in HEURISTICS:
        d = deltas.get(name)
        if d is not None and (best is None or d < best):
            best, winner = d, name
    return best, winner


class HeuristicContext:
    """Per-vertex earliest event and tag ranks, shared by all patches of one fork."""

    def __init__(self, graph: CommitGraph, event_index: EventIndex | None = None,
                 fork_tags: Iterable[TagRecord] = (), upstream_tags: Iterable[TagRecord] = ()):
        self.graph = graph
        n = len(graph)
        # Only pushes publish commits; a tag event naming its target is PTF's business.
        events: list[EventRecord] = []
        if event_index is not None:
            events = sorted((e for e in event_index.by_id.values() if e.kind == PUSH),
                            key=lambda e: (e.event_ts, e.event_id))
        self.events = events
        ev_rank = np.full(n, K.NO_WITNESS, dtype=np.int64)
        for rank, e in enumerate(events):
            for cid in e.commit_ids:
                i = graph.index.get(cid)
                if i is not None and ev_rank[i] == K.NO_WITNESS:
                    ev_rank[i] = rank
        self.ev_rank = ev_rank

        upstream_labels = {t.label for t in upstream_tags}
        tags = sorted((t for t in fork_tags if t.label not in upstream_labels and t.target in graph.index),
                      key=lambda t: (t.timestamp, t.label))
        self.tags = tags
        tag_rank = np.full(n, K.NO_WITNESS, dtype=np.int64)
        for rank, t in enumerate(tags):
            i = graph.index[t.target]
            if tag_rank[i] == K.NO_WITNESS:
                tag_rank[i] = rank
        self.tag_rank = tag_rank

    def witnesses(self, patch: str):
        """``(nbcc size, pcf vertex, pef event rank, ptf tag rank)`` for one patch commit."""
        g = self.graph
        start = g.position(patch)
        count, pcf, pef, ptf = K.witnesses(g.child_ptr, g.child_idx, start, g.eligible,
                                           g.committer_ts, self.ev_rank, self.tag_rank)
        return int(count), int(pcf), int(pef), int(ptf)

    def evaluate(self, patch: str) -> dict:
        g = self.graph
        t_a = int(g.author_ts[g.position(patch)])
        count, pcf, pef, ptf = self.witnesses(patch)
        out = {"commit": patch, "author_ts": t_a, "nbcc": count,
               "PCF": None, "PEF": None, "PTF": None,
               "pcf_witness": None, "pef_witness": None, "ptf_witness": None}
        if pcf >= 0:
            out["PCF"] = int(g.committer_ts[pcf]) - t_a
            out["pcf_witness"] = g.ids[pcf]
        if pef != K.NO_WITNESS:
            e = self.events[pef]
            out["PEF"] = e.event_ts - t_a
            out["pef_witness"] = e.event_id
        if ptf != K.NO_WITNESS:
            t = self.tags[ptf]
            out["PTF"] = t.timestamp - t_a
            out["ptf_witness"] = t.label
        return out

    def estimate(self, spec: PatchSpec, fork: str = "") -> PropagationEstimate:
        g = self.graph
        est = PropagationEstimate(patch=spec.label, fork=fork, published_date=spec.published_date)
        present = [c for c in spec.upstream_commits if c in g]
        for c in spec.upstream_commits:
            if c not in g:
                est.flags.append(f"patch_unresolved:{c[:12]}")
            elif not g.upstream_mask[g.index[c]]:
                est.flags.append(f"patch_not_upstream:{c[:12]}")
        if not present:
            est.status = GRAPH_INCOMPLETE
            return est

        best: dict[str, tuple[int, str, int] | None] = {h: None for h in HEURISTICS}
        witness_key = {"PCF": "pcf_witness", "PEF": "pef_witness", "PTF": "ptf_witness"}
        for c in present:
            r = self.evaluate(c)
            est.per_commit.append(r)
            for h in HEURISTICS:
                d = r[h]
                if d is None:
                    continue
                cur = best[h]
                if cur is None or (d, r[witness_key[h]]) < (cur[0], cur[1]):
                    best[h] = (d, r[witness_key[h]], r["author_ts"])

        for h, attr in (("PCF", "pcf"), ("PEF", "pef"), ("PTF", "ptf")):
            if best[h] is not None:
                setattr(est, f"delta_{attr}", best[h][0])
                setattr(est, f"{attr}_witness", best[h][1])

        est.combined, est.winner = combine(est.deltas())
        est.patch_author_ts = best[est.winner][2] if est.winner else min(r["author_ts"] for r in est.per_commit)
        if est.delta_ptf is not None:
            if est.delta_pcf is not None and est.delta_pcf > est.delta_ptf:
                est.flags.append("pcf_after_ptf")
            if est.delta_pef is not None and est.delta_pef > est.delta_ptf:
                est.flags.append("pef_after_ptf")
        incomplete = g.incomplete()
        if incomplete:
            est.flags.append("graph_incomplete")

        if all(g.predates_fork(c) for c in present):
            est.status = PREDATES_FORK
        elif est.combined is not None:
            est.status = FOUND
        elif incomplete:
            est.status = GRAPH_INCOMPLETE
        else:
            est.status = NOT_PORTED

        if spec.published_date is not None and est.combined is not None:
            est.delay_since_publication = est.combined - (spec.published_date - est.patch_author_ts)
        return est


def pcf(graph: CommitGraph, patch: str) -> tuple[int, str] | None:
    if patch not in graph:
        raise UnknownCommit(patch)
    r = HeuristicContext(graph).evaluate(patch)
    return None if r["PCF"] is None else (r["PCF"], r["pcf_witness"])


def pef(graph: CommitGraph, event_index: EventIndex, patch: str) -> tuple[int, str] | None:
    if patch not in graph:
        raise UnknownCommit(patch)
    r = HeuristicContext(graph, event_index).evaluate(patch)
    return None if r["PEF"] is None else (r["PEF"], r["pef_witness"])


def ptf(graph: CommitGraph, fork_tags: Sequence[TagRecord], upstream_tags: Sequence[TagRecord],
        patch: str) -> tuple[int, str] | None:
    if patch not in graph:
        raise UnknownCommit(patch)
    r = HeuristicContext(graph, None, fork_tags, upstream_tags).evaluate(patch)
    return None if r["PTF"] is None else (r["PTF"], r["ptf_witness"])


def estimate(graph: CommitGraph, event_index: EventIndex, fork_tags: Sequence[TagRecord],
             upstream_tags: Sequence[TagRecord], spec: PatchSpec, fork: str = "") -> PropagationEstimate:
    return HeuristicContext(graph, event_index, fork_tags, upstream_tags).estimate(spec, fork)


def tags_from_index(index: EventIndex, repo: str, resolver=None) -> list[TagRecord]:
    """Tag records of ``repo`` from its tag-creation events, timestamped at the event.

    Events without a target commit are resolved through ``resolver(repo, label)``
    when given, and skipped otherwise.
    """
    out = []
    seen = set()
    for e in index.events(repo):
        if e.kind != TAG or e.label in seen:
            continue
        target = e.commit_ids[0] if e.commit_ids else None
        if target is None and resolver is not None:
            target = resolver(repo, e.label)
        if target is None:
            continue
        seen.add(e.label)
        out.append(TagRecord(e.label, e.event_ts, target))
    return out
