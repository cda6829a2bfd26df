"""Commit metadata lookup with a persistent per-commit cache.

Three interchangeable backends resolve a commit id to a :class:`Commit`:

* ``remote`` talks to the GitHub REST API (``GET /repos/{repo}/commits/{sha}``);
* ``fixture`` reads a JSON-lines commit store (what ``gitwatch simulate`` writes);
* ``simulator`` serves commits straight from a :class:`SimResult`.

Results are cached one file per commit under
``cache_dir/<owner>/<name>/<first two hex>/<id>``.  Found commits never
expire (ids are content hashes); ``not_found`` answers expire after
``not_found_ttl`` seconds; transient errors are never cached.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping

from .archive import iso_to_ts
from .model import Commit, is_commit_id

log = logging.getLogger(__name__)

TOKEN_ENV = "GITHUB_TOKEN"
CACHE_SCHEMA = "gitwatch-commit/1"

FOUND = "found"
NOT_FOUND = "not_found"
TRANSIENT = "transient_error"


class ProviderError(Exception):
    pass


class RateLimitExhausted(ProviderError):
    def __init__(self, reset_at: float, message: str = ""):
        super().__init__(message or f"rate limit exhausted until {reset_at:.0f}")
        self.reset_at = reset_at


class AuthFailure(ProviderError):
    pass


class TransientError(ProviderError):
    pass


@dataclass
class ProviderConfig:
    backend: str = "fixture"
    cache_dir: Path | None = None
    auth_token: str | None = field(default=None, repr=False)
    rate_limit: int = 5000  # requests per sliding hour
    max_attempts: int = 3
    backoff_base: float = 1.0
    not_found_ttl: int = 3600
    fixture_path: Path | None = None
    api_url: str = "https://api.github.com"
    workers: int = 8

    def __post_init__(self):
        if self.backend not in ("remote", "fixture", "simulator"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.rate_limit <= 0:
            raise ValueError("rate_limit must be positive")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be at least 1")
        if self.cache_dir is not None:
            self.cache_dir = Path(self.cache_dir)
        if self.auth_token is None and self.backend == "remote":
            self.auth_token = os.environ.get(TOKEN_ENV) or None


@dataclass(frozen=True)
class CommitFetchResult:
    status: str
    commit: Commit | None = None
    source: str = "backend"

    def __post_init__(self):
        if (self.status == FOUND) != (self.commit is not None):
            raise ValueError("a commit is present exactly when status is found")


class RateLimiter:
    """Sliding one-hour request budget shared by all threads."""

    def __init__(self, limit: int, window: float = 3600.0,
                 clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        self.limit = limit
        self.window = window
        self._clock = clock
        self._sleep = sleep
        self._stamps: deque[float] = deque()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                while self._stamps and now - self._stamps[0] >= self.window:
                    self._stamps.popleft()
                if len(self._stamps) < self.limit:
                    self._stamps.append(now)
                    return
                wait = self.window - (now - self._stamps[0])
            self._sleep(max(wait, 0.0))

    def in_window(self) -> int:
        with self._lock:
            now = self._clock()
            return sum(1 for s in self._stamps if now - s < self.window)


# -- backends -----------------------------------------------------------------

class FixtureBackend:
    name = "fixture"
    rate_limited = False  # local data; the request budget only guards the remote API

    def __init__(self, commits: Mapping[str, Commit]):
        self._commits = dict(commits)

    @classmethod
    def from_jsonl(cls, path) -> "FixtureBackend":
        commits = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    c = Commit.from_dict(json.loads(line))
                    commits[c.hash] = c
        return cls(commits)

    def fetch(self, repo: str, commit_id: str) -> Commit | None:
        return self._commits.get(commit_id)

    def __len__(self) -> int:
        return len(self._commits)


class SimulatorBackend(FixtureBackend):
    name = "simulator"

    def __init__(self, result):
        super().__init__(result.all_commits())


class RemoteBackend:
    """GitHub REST commit endpoint; only metadata fields are read."""

    name = "remote"
    rate_limited = True

    def __init__(self, api_url: str = "https://api.github.com", token: str | None = None,
                 session=None, timeout: float = 30.0):
        import requests

        self.api_url = api_url.rstrip("/")
        self.session = session or requests.Session()
        self.timeout = timeout
        self._token = token
        self._requests_exc = requests.RequestException

    def _headers(self) -> dict:
        h = {"Accept": "application/vnd.github+json", "User-Agent": "gitwatch"}
        if self._token:
            h["Authorization"] = f"Bearer {self._token}"
        return h

    def _get(self, url: str):
        try:
            resp = self.session.get(url, headers=self._headers(), timeout=self.timeout)
        except self._requests_exc as exc:
            raise TransientError(str(exc)) from exc
        code = resp.status_code
        if code == 401:
            raise AuthFailure("authentication rejected by the API")
        if code in (403, 429):
            remaining = resp.headers.get("X-RateLimit-Remaining")
            if code == 429 or remaining == "0":
                reset = float(resp.headers.get("X-RateLimit-Reset", time.time() + 3600))
                raise RateLimitExhausted(reset)
            raise AuthFailure(f"forbidden: {url}")
        if code in (404, 422):
            return None
        if code >= 500:
            raise TransientError(f"HTTP {code} for {url}")
        if code != 200:
            raise TransientError(f"unexpected HTTP {code} for {url}")
        return resp.json()

    def fetch(self, repo: str, commit_id: str) -> Commit | None:
        data = self._get(f"{self.api_url}/repos/{repo}/commits/{commit_id}")
        if data is None:
            return None
        return commit_from_api(data)

    def resolve_tag(self, repo: str, label: str) -> str | None:
        """Commit id a tag points to, following annotated tag objects."""
        ref = self._get(f"{self.api_url}/repos/{repo}/git/ref/tags/{label}")
        if ref is None:
            return None
        obj = ref["object"]
        while obj["type"] == "tag":
            tag_obj = self._get(f"{self.api_url}/repos/{repo}/git/tags/{obj['sha']}")
            if tag_obj is None:
                return None
            obj = tag_obj["object"]
        return obj["sha"] if obj["type"] == "commit" else None


def commit_from_api(data: dict) -> Commit:
    meta = data["commit"]
    author = (data.get("author") or {}).get("login") or meta["author"]["name"]
    committer = (data.get("committer") or {}).get("login") or meta["committer"]["name"]
    return Commit(
        hash=data["sha"],
        parents=tuple(p["sha"] for p in data.get("parents", ())),
        author=author,
        committer=committer,
        author_ts=iso_to_ts(meta["author"]["date"]),
        committer_ts=iso_to_ts(meta["committer"]["date"]),
        payload_digest=meta["tree"]["sha"],
    )


def make_backend(config: ProviderConfig, sim_result=None, session=None):
    if config.backend == "fixture":
        if config.fixture_path is None:
            raise ValueError("fixture backend needs fixture_path")
        return FixtureBackend.from_jsonl(config.fixture_path)
    if config.backend == "simulator":
        if sim_result is None:
            raise ValueError("simulator backend needs a simulation result")
        return SimulatorBackend(sim_result)
    return RemoteBackend(config.api_url, config.auth_token, session=session)


# -- cache ----------------------------------------------------------------------

class CommitCache:
    """One JSON file per (repo, commit); writes are atomic renames."""

    def __init__(self, root: Path | None, not_found_ttl: int = 3600,
                 clock: Callable[[], float] = time.time):
        self.root = Path(root) if root is not None else None
        self.not_found_ttl = not_found_ttl
        self._clock = clock
        self._memory: dict[tuple[str, str], dict] = {}
        self._lock = threading.Lock()

    def path(self, repo: str, commit_id: str) -> Path:
        return self.root.joinpath(*repo.split("/"), commit_id[:2], commit_id)

    def get(self, repo: str, commit_id: str) -> dict | None:
        key = (repo, commit_id)
        entry = self._memory.get(key)
        if entry is None and self.root is not None:
            try:
                entry = json.loads(self.path(repo, commit_id).read_text(encoding="utf-8"))
            except FileNotFoundError:
                entry = None
            except (OSError, ValueError) as exc:
                log.warning("unreadable cache entry for %s %s: %s", repo, commit_id, exc)
                entry = None
            if entry is not None and entry.get("schema") != CACHE_SCHEMA:
                entry = None
            if entry is not None and entry["status"] == FOUND:
                with self._lock:
                    self._memory[key] = entry
        if entry is None:
            return None
        if entry["status"] == NOT_FOUND and self._clock() - entry["fetched_at"] > self.not_found_ttl:
            return None
        return entry

    def put(self, repo: str, commit_id: str, status: str, commit: Commit | None, source: str) -> None:
        if status == TRANSIENT:
            return
        entry = {
            "schema": CACHE_SCHEMA,
            "repo": repo,
            "id": commit_id,
            "status": status,
            "commit": commit.to_dict() if commit is not None else None,
            "fetched_at": int(self._clock()),
            "backend": source,
        }
        if status == FOUND:
            with self._lock:
                self._memory[(repo, commit_id)] = entry
        if self.root is None:
            if status == NOT_FOUND:
                with self._lock:
                    self._memory[(repo, commit_id)] = entry
            return
        path = self.path(repo, commit_id)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(f".{commit_id}.{threading.get_ident()}.tmp")
        tmp.write_text(json.dumps(entry, indent=1, sort_keys=True) + "\n", encoding="utf-8")
        os.replace(tmp, path)

    def entries(self, repo: str | None = None):
        if self.root is None or not self.root.exists():
            return
        base = self.root.joinpath(*repo.split("/")) if repo else self.root
        for p in sorted(base.rglob("*")):
            if p.is_file() and is_commit_id(p.name):
                try:
                    yield json.loads(p.read_text(encoding="utf-8"))
                except (OSError, ValueError):
                    continue


# -- provider ---------------------------------------------------------------------

class MetadataProvider:
    def __init__(self, config: ProviderConfig, backend=None, *,
                 clock: Callable[[], float] = time.time,
                 sleep: Callable[[float], None] = time.sleep):
        self.config = config
        self.backend = backend if backend is not None else make_backend(config)
        self.cache = CommitCache(config.cache_dir, config.not_found_ttl, clock=clock)
        self.limiter = RateLimiter(config.rate_limit, clock=time.monotonic, sleep=sleep)
        self._limited = getattr(self.backend, "rate_limited", True)
        self._sleep = sleep
        self.backend_requests = 0
        self.cache_hits = 0
        self._count_lock = threading.Lock()
        self._id_locks: dict[tuple[str, str], threading.Lock] = {}
        self._locks_lock = threading.Lock()

    def _id_lock(self, repo: str, commit_id: str) -> threading.Lock:
        with self._locks_lock:
            return self._id_locks.setdefault((repo, commit_id), threading.Lock())

    def _from_cache(self, repo: str, commit_id: str) -> CommitFetchResult | None:
        entry = self.cache.get(repo, commit_id)
        if entry is None:
            return None
        with self._count_lock:
            self.cache_hits += 1
        if entry["status"] == FOUND:
            return CommitFetchResult(FOUND, Commit.from_dict(entry["commit"]), "cache")
        return CommitFetchResult(NOT_FOUND, None, "cache")

    def _fetch_backend(self, repo: str, commit_id: str) -> CommitFetchResult:
        attempt = 0
        while True:
            attempt += 1
            if self._limited:
                self.limiter.acquire()
            with self._count_lock:
                self.backend_requests += 1
            try:
                commit = self.backend.fetch(repo, commit_id)
            except TransientError as exc:
                if attempt >= self.config.max_attempts:
                    log.warning("giving up on %s %s after %d attempts: %s", repo, commit_id, attempt, exc)
                    return CommitFetchResult(TRANSIENT, None, "backend")
                self._sleep(self.config.backoff_base * 2 ** (attempt - 1))
                continue
            if commit is None:
                return CommitFetchResult(NOT_FOUND, None, "backend")
            if commit.hash != commit_id:
                log.warning("backend returned %s for %s; treating as not found", commit.hash, commit_id)
                return CommitFetchResult(NOT_FOUND, None, "backend")
            return CommitFetchResult(FOUND, commit, "backend")

    def get_commit(self, repo: str, commit_id: str) -> CommitFetchResult:
        if not is_commit_id(commit_id):
            raise ValueError(f"malformed commit id {commit_id!r}")
        hit = self._from_cache(repo, commit_id)
        if hit is not None:
            return hit
        with self._id_lock(repo, commit_id):
            hit = self._from_cache(repo, commit_id)
            if hit is not None:
                return hit
            result = self._fetch_backend(repo, commit_id)
            self.cache.put(repo, commit_id, result.status, result.commit, self.backend.name)
            return result

    def get_commits_bulk(self, repo: str, ids: Iterable[str], workers: int | None = None) -> dict[str, CommitFetchResult]:
        ids = list(dict.fromkeys(ids))
        out: dict[str, CommitFetchResult] = {}
        misses = []
        for cid in ids:
            if not is_commit_id(cid):
                raise ValueError(f"malformed commit id {cid!r}")
            hit = self._from_cache(repo, cid)
            if hit is not None:
                out[cid] = hit
            else:
                misses.append(cid)
        workers = workers or self.config.workers
        if len(misses) > 1 and workers > 1 and self.backend.name == "remote":
            with ThreadPoolExecutor(max_workers=workers) as pool:
                for cid, res in zip(misses, pool.map(lambda c: self.get_commit(repo, c), misses)):
                    out[cid] = res
        else:
            for cid in misses:
                out[cid] = self.get_commit(repo, cid)
        return {cid: out[cid] for cid in ids}

    def resolve_tag(self, repo: str, label: str) -> str | None:
        resolver = getattr(self.backend, "resolve_tag", None)
        if resolver is None:
            return None
        if self._limited:
            self.limiter.acquire()
        with self._count_lock:
            self.backend_requests += 1
        return resolver(repo, label)


def open_provider(config: ProviderConfig, sim_result=None, session=None) -> MetadataProvider:
    return MetadataProvider(config, make_backend(config, sim_result, session))
