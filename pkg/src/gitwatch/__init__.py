"""Patch propagation delays across forked Git projects, rebases included."""

from .archive import EventIndex, EventRecord, build_event_index, ingest_file
from .graph import CommitGraph, build_graph, nbcc
from .heuristics import PatchSpec, PropagationEstimate, estimate, pcf, pef, ptf
from .model import Commit, RepoHistory, TagRecord
from .simulator import SimScript, simulate

__version__ = "0.1.0"

__all__ = [
    "Commit", "CommitGraph", "EventIndex", "EventRecord", "PatchSpec", "PropagationEstimate",
    "RepoHistory", "SimScript", "TagRecord", "build_event_index", "build_graph", "estimate",
    "ingest_file", "nbcc", "pcf", "pef", "ptf", "simulate",
]
