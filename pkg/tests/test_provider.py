import json

import pytest
import requests

from gitwatch import model
from gitwatch.model import make_commit, payload_digest_for
from gitwatch.provider import (CACHE_SCHEMA, FOUND, NOT_FOUND, TRANSIENT, AuthFailure, CommitCache,
                               FixtureBackend, MetadataProvider, ProviderConfig, RateLimiter,
                               RateLimitExhausted, RemoteBackend, TransientError, commit_from_api)
from gitwatch.simulator import random_script, simulate


def commits(n):
    out, parent = [], None
    for i in range(n):
        c = make_commit((parent,) if parent else (), "dev", "dev", 100 + i, 100 + i, payload_digest_for(str(i)))
        out.append(c)
        parent = c.hash
    return out


class Clock:
    def __init__(self, t=0.0):
        self.t = t
        self.slept = []

    def __call__(self):
        return self.t

    def sleep(self, s):
        self.slept.append(s)
        self.t += s


class Flaky:
    name = "flaky"
    rate_limited = False

    def __init__(self, commits, failures):
        self.commits = {c.hash: c for c in commits}
        self.failures = failures
        self.calls = 0

    def fetch(self, repo, cid):
        self.calls += 1
        if self.failures > 0:
            self.failures -= 1
            raise TransientError("boom")
        return self.commits.get(cid)


def test_bulk_fetch_only_misses(tmp_path):
    cs = commits(10)
    backend = FixtureBackend({c.hash: c for c in cs})
    warm = MetadataProvider(ProviderConfig(cache_dir=tmp_path), backend)
    warm.get_commits_bulk("o/r", [c.hash for c in cs[:3]])
    p = MetadataProvider(ProviderConfig(cache_dir=tmp_path), backend)
    res = p.get_commits_bulk("o/r", [c.hash for c in cs])
    assert p.backend_requests == 7
    assert p.cache_hits == 3
    assert list(res) == [c.hash for c in cs]
    assert all(r.status == FOUND for r in res.values())
    assert [res[c.hash].commit for c in cs] == cs


def test_cache_layout_and_schema(tmp_path):
    c = commits(1)[0]
    p = MetadataProvider(ProviderConfig(cache_dir=tmp_path), FixtureBackend({c.hash: c}))
    p.get_commit("own/name", c.hash)
    path = tmp_path / "own" / "name" / c.hash[:2] / c.hash
    entry = json.loads(path.read_text())
    assert entry["schema"] == CACHE_SCHEMA
    assert entry["status"] == FOUND
    assert model.Commit.from_dict(entry["commit"]) == c
    assert list(p.cache.entries("own/name"))[0]["id"] == c.hash


def test_not_found_ttl(tmp_path):
    clock = Clock(1000.0)
    cfg = ProviderConfig(cache_dir=tmp_path, not_found_ttl=60)
    backend = FixtureBackend({})
    p = MetadataProvider(cfg, backend, clock=clock)
    missing = "f" * 40
    assert p.get_commit("o/r", missing).status == NOT_FOUND
    assert p.get_commit("o/r", missing).source == "cache"
    assert p.backend_requests == 1
    clock.t += 61
    assert p.get_commit("o/r", missing).source == "backend"
    assert p.backend_requests == 2


def test_transient_errors_retry_and_never_cache(tmp_path):
    cs = commits(1)
    clock = Clock()
    backend = Flaky(cs, failures=5)
    cfg = ProviderConfig(cache_dir=tmp_path, max_attempts=3, backoff_base=0.5)
    p = MetadataProvider(cfg, backend, sleep=clock.sleep)
    r = p.get_commit("o/r", cs[0].hash)
    assert r.status == TRANSIENT
    assert backend.calls == 3
    assert clock.slept == [0.5, 1.0]
    assert not any(tmp_path.rglob(cs[0].hash))
    # the next call retries and succeeds once the failures run out
    backend.failures = 2
    r = p.get_commit("o/r", cs[0].hash)
    assert r.status == FOUND and r.commit == cs[0]


def test_malformed_id_rejected():
    p = MetadataProvider(ProviderConfig(), FixtureBackend({}))
    with pytest.raises(ValueError):
        p.get_commit("o/r", "xyz")
    with pytest.raises(ValueError):
        p.get_commits_bulk("o/r", ["a" * 40, "nope"])


def test_wrong_hash_from_backend_is_not_found():
    c = commits(1)[0]
    p = MetadataProvider(ProviderConfig(), FixtureBackend({"a" * 40: c}))
    assert p.get_commit("o/r", "a" * 40).status == NOT_FOUND


def test_unreadable_cache_entry_refetched(tmp_path):
    c = commits(1)[0]
    backend = FixtureBackend({c.hash: c})
    MetadataProvider(ProviderConfig(cache_dir=tmp_path), backend).get_commit("o/r", c.hash)
    path = CommitCache(tmp_path).path("o/r", c.hash)
    path.write_text("{garbage")
    p = MetadataProvider(ProviderConfig(cache_dir=tmp_path), backend)
    assert p.get_commit("o/r", c.hash).commit == c
    assert p.backend_requests == 1


def test_rate_limiter_sliding_window():
    clock = Clock()
    rl = RateLimiter(3, window=10.0, clock=clock, sleep=clock.sleep)
    for t in (0.0, 2.0, 3.0):
        clock.t = t
        rl.acquire()
    assert clock.slept == []
    clock.t = 4.0
    rl.acquire()  # waits until the first stamp leaves the window
    assert clock.slept == [6.0]
    assert clock.t == 10.0
    assert rl.in_window() == 3


def test_remote_backend_respects_rate_limit():
    cs = commits(3)
    clock = Clock()
    backend = FixtureBackend({c.hash: c for c in cs})
    backend.rate_limited = True
    p = MetadataProvider(ProviderConfig(rate_limit=2), backend, sleep=clock.sleep)
    p.limiter = RateLimiter(2, window=100.0, clock=clock, sleep=clock.sleep)
    p.get_commits_bulk("o/r", [c.hash for c in cs])
    assert clock.slept == [100.0]


def test_dangling_commit_keeps_old_committer_ts():
    r = simulate(random_script(1))
    old, new = next(iter(r.rebase_mappings[0].items()))
    p = MetadataProvider(ProviderConfig(), FixtureBackend(r.all_commits()))
    before, after = p.get_commit(r.script.fork_repo, old).commit, p.get_commit(r.script.fork_repo, new).commit
    assert old in r.fork.dangling()
    assert before.payload_digest == after.payload_digest
    assert before.committer_ts < after.committer_ts


def test_token_not_in_repr(monkeypatch):
    monkeypatch.setenv("GITHUB_TOKEN", "sekrit-123")
    cfg = ProviderConfig(backend="remote")
    assert cfg.auth_token == "sekrit-123"
    assert "sekrit" not in repr(cfg)


# -- remote backend over a fake session ---------------------------------------

class Resp:
    def __init__(self, code, body=None, headers=None):
        self.status_code = code
        self._body = body
        self.headers = headers or {}

    def json(self):
        return self._body


class Session:
    def __init__(self, responses):
        self.responses = list(responses)
        self.seen = []

    def get(self, url, headers=None, timeout=None):
        self.seen.append((url, headers))
        r = self.responses.pop(0)
        if isinstance(r, Exception):
            raise r
        return r


def api_commit(sha, parents=()):
    return {
        "sha": sha,
        "parents": [{"sha": p} for p in parents],
        "author": {"login": "alice"},
        "committer": None,
        "commit": {
            "author": {"name": "Alice", "date": "2015-06-01T12:00:00Z"},
            "committer": {"name": "Bob", "date": "2015-06-02T12:00:00Z"},
            "tree": {"sha": "d" * 40},
        },
    }


def test_commit_from_api():
    c = commit_from_api(api_commit("a" * 40, ["b" * 40]))
    assert c.author == "alice" and c.committer == "Bob"
    assert c.committer_ts - c.author_ts == 86400
    assert c.parents == ("b" * 40,)
    assert c.payload_digest == "d" * 40


def test_remote_statuses():
    s = Session([Resp(200, api_commit("a" * 40)), Resp(404), Resp(500)])
    rb = RemoteBackend("https://api.example", token="tok", session=s)
    assert rb.fetch("o/r", "a" * 40).hash == "a" * 40
    assert s.seen[0][0] == "https://api.example/repos/o/r/commits/" + "a" * 40
    assert s.seen[0][1]["Authorization"] == "Bearer tok"
    assert rb.fetch("o/r", "b" * 40) is None
    with pytest.raises(TransientError):
        rb.fetch("o/r", "c" * 40)


def test_remote_auth_and_rate_limit():
    s = Session([Resp(401), Resp(403, headers={"X-RateLimit-Remaining": "0", "X-RateLimit-Reset": "1234"}),
                 Resp(403, headers={"X-RateLimit-Remaining": "10"}), requests.ConnectionError("down")])
    rb = RemoteBackend(session=s)
    with pytest.raises(AuthFailure):
        rb.fetch("o/r", "a" * 40)
    with pytest.raises(RateLimitExhausted) as info:
        rb.fetch("o/r", "a" * 40)
    assert info.value.reset_at == 1234
    with pytest.raises(AuthFailure):
        rb.fetch("o/r", "a" * 40)
    with pytest.raises(TransientError):
        rb.fetch("o/r", "a" * 40)


def test_remote_auth_failure_propagates_from_provider(tmp_path):
    s = Session([Resp(401)])
    p = MetadataProvider(ProviderConfig(backend="remote", cache_dir=tmp_path), RemoteBackend(session=s))
    with pytest.raises(AuthFailure):
        p.get_commit("o/r", "a" * 40)
    assert not any(tmp_path.rglob("a" * 40))


def test_resolve_annotated_tag():
    s = Session([
        Resp(200, {"object": {"type": "tag", "sha": "e" * 40}}),
        Resp(200, {"object": {"type": "commit", "sha": "a" * 40}}),
    ])
    rb = RemoteBackend(session=s)
    assert rb.resolve_tag("o/r", "v1") == "a" * 40
    assert s.seen[0][0].endswith("/repos/o/r/git/ref/tags/v1")
