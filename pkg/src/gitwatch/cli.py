"""Command-line entry point.

Subcommands::

    gitwatch simulate SCRIPT OUT_DIR
    gitwatch ingest  [--config FILE] [flags]
    gitwatch analyze [--config FILE] [flags]
    gitwatch cache-inspect --cache-dir DIR [--repo R] [--commit ID]

Exit codes: 0 success (possibly with flagged estimates), 2 bad input,
3 every estimate failed.  The API token is read only from ``GITHUB_TOKEN``.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import yaml

from . import __version__
from .archive import EventIndex, IoFailure, archive_files, build_event_index, ingest_files
from .graph import CommitGraph, GraphBuildError, build_graph, index_fingerprint
from .heuristics import (GRAPH_INCOMPLETE, HeuristicContext, PatchSpec, PropagationEstimate,
                         tags_from_index)
from .provider import CommitCache, ProviderConfig, open_provider
from .report import csv_text, plot_csv, records_json, render_report
from .simulator import InvalidScript, SimScript, simulate, write_outputs

log = logging.getLogger("gitwatch")

EXIT_OK, EXIT_INPUT, EXIT_ALL_FAILED = 0, 2, 3
FORMATS = ("table", "csv", "json")
INDEX_FILE = "event-index.json"
INDEX_KEY_FILE = "event-index.key"


class ConfigError(ValueError):
    pass


@dataclass
class AnalysisConfig:
    upstream: str = ""
    forks: list = field(default_factory=list)
    patches: list = field(default_factory=list)  # PatchSpec
    archive_dir: Path | None = None
    simulator_script: Path | None = None
    cache_dir: Path = Path(".gitwatch-cache")
    backend: str = "fixture"
    fixture_path: Path | None = None
    rate_limit: int = 5000
    max_attempts: int = 3
    output_dir: Path = Path("gitwatch-out")
    formats: list = field(default_factory=lambda: list(FORMATS))
    workers: int = 1

    def validate(self, need_patches=True) -> None:
        if not self.upstream:
            raise ConfigError("no upstream repository configured")
        if not self.forks:
            raise ConfigError("at least one fork is required")
        if need_patches and not self.patches:
            raise ConfigError("at least one patch is required")
        bad = set(self.formats) - set(FORMATS)
        if bad:
            raise ConfigError(f"unknown output formats: {sorted(bad)}")

    def provider_config(self) -> ProviderConfig:
        return ProviderConfig(backend=self.backend, cache_dir=self.cache_dir / "commits",
                              fixture_path=self.fixture_path, rate_limit=self.rate_limit,
                              max_attempts=self.max_attempts)


def parse_date(value) -> int | None:
    if value is None or value == "":
        return None
    if isinstance(value, int):
        return value
    if hasattr(value, "year") and not isinstance(value, datetime):  # yaml date
        value = datetime(value.year, value.month, value.day, tzinfo=timezone.utc)
    if isinstance(value, datetime):
        dt = value if value.tzinfo else value.replace(tzinfo=timezone.utc)
        return int(dt.timestamp())
    text = str(value)
    if len(text) == 10:
        text += "T00:00:00+00:00"
    dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    return int((dt if dt.tzinfo else dt.replace(tzinfo=timezone.utc)).timestamp())


def parse_patches(items) -> list[PatchSpec]:
    out = []
    if not isinstance(items, list):
        raise ConfigError("patches must be a list")
    for item in items:
        try:
            commits = item.get("commits") or ([item["commit"]] if "commit" in item else [])
            out.append(PatchSpec(str(item["label"]), tuple(commits),
                                 parse_date(item.get("published")), item.get("description", "")))
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise ConfigError(f"bad patch entry {item!r}: {exc}") from exc
    return out


def load_config(path: Path | None, args: argparse.Namespace) -> AnalysisConfig:
    cfg = AnalysisConfig()
    base = Path(".")
    data = {}
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a mapping")
        base = Path(path).parent

    def rel(v):
        return None if v is None else (base / v if not Path(v).is_absolute() else Path(v))

    provider = data.get("provider") or {}
    cfg.upstream = data.get("upstream", "")
    cfg.forks = list(data.get("forks") or [])
    if "patches" in data:
        cfg.patches = parse_patches(data["patches"])
    if "patches_file" in data:
        try:
            cfg.patches += parse_patches(yaml.safe_load(rel(data["patches_file"]).read_text(encoding="utf-8")))
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read patches file: {exc}") from exc
    cfg.archive_dir = rel(data.get("archive_dir"))
    cfg.simulator_script = rel(data.get("simulator_script"))
    # defaults live next to the config file, not in the working directory
    cfg.cache_dir = rel(data.get("cache_dir", cfg.cache_dir))
    cfg.output_dir = rel(data.get("output_dir", cfg.output_dir))
    cfg.backend = provider.get("backend", cfg.backend)
    cfg.fixture_path = rel(provider.get("fixture_path"))
    cfg.rate_limit = int(provider.get("rate_limit", cfg.rate_limit))
    cfg.max_attempts = int(provider.get("max_attempts", cfg.max_attempts))
    cfg.formats = list(data.get("formats", cfg.formats))
    cfg.workers = int(data.get("workers", cfg.workers))

    # command-line flags win over the file
    if getattr(args, "upstream", None):
        cfg.upstream = args.upstream
    if getattr(args, "fork", None):
        cfg.forks = list(args.fork)
    if getattr(args, "patches", None):
        try:
            cfg.patches = parse_patches(yaml.safe_load(Path(args.patches).read_text(encoding="utf-8")))
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read patches file: {exc}") from exc
    for name in ("archive_dir", "simulator_script", "cache_dir", "output_dir", "fixture_path"):
        v = getattr(args, name, None)
        if v:
            setattr(cfg, name, Path(v))
    if getattr(args, "backend", None):
        cfg.backend = args.backend
    if getattr(args, "format", None):
        cfg.formats = list(args.format)
    if getattr(args, "workers", None):
        cfg.workers = args.workers
    return cfg


# -- commands -------------------------------------------------------------------

def cmd_simulate(script_path, out_dir) -> int:
    try:
        script = SimScript.load(script_path)
        result = simulate(script)
    except InvalidScript as exc:
        print(f"error: invalid script: {exc}", file=sys.stderr)
        return EXIT_INPUT
    out = Path(out_dir)
    try:
        paths = write_outputs(result, out)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    config = {
        "upstream": script.upstream_repo,
        "forks": [script.fork_repo],
        "patches_file": "patches.yaml",
        "archive_dir": "archive",
        "cache_dir": "cache",
        "output_dir": "report",
        "provider": {"backend": "fixture", "fixture_path": "commits.jsonl"},
        "formats": list(FORMATS),
    }
    (out / "gitwatch.yaml").write_text(yaml.safe_dump(config, sort_keys=False), encoding="utf-8")
    print(f"wrote {len(paths['archive'])} archive files, {len(result.all_commits())} commits, "
          f"{len(result.truth)} patches to {out}")
    return EXIT_OK


def _ingest(cfg: AnalysisConfig) -> tuple[EventIndex, object]:
    if cfg.archive_dir is None:
        raise ConfigError("no archive_dir configured")
    files = archive_files(cfg.archive_dir)
    if not files:
        raise ConfigError(f"no input files in {cfg.archive_dir}")
    events, stats = ingest_files(files, [cfg.upstream, *cfg.forks], workers=cfg.workers)
    index = build_event_index(events)
    index.save(cfg.cache_dir / INDEX_FILE)
    (cfg.cache_dir / INDEX_KEY_FILE).write_text(_archive_key(cfg, files) + "\n", encoding="utf-8")
    return index, stats


def _archive_key(cfg: AnalysisConfig, files) -> str:
    """Identifies the ingest inputs, so a saved index is only reused for the same archive."""
    h = hashlib.sha1("\n".join(sorted([cfg.upstream, *cfg.forks])).encode())
    for f in files:
        st = f.stat()
        h.update(f"{f.name}:{st.st_size}:{st.st_mtime_ns}\n".encode())
    return h.hexdigest()


def _saved_index(cfg: AnalysisConfig) -> EventIndex | None:
    path, key_path = cfg.cache_dir / INDEX_FILE, cfg.cache_dir / INDEX_KEY_FILE
    if not path.exists():
        return None
    if cfg.archive_dir is not None:
        files = archive_files(cfg.archive_dir)
        if not key_path.exists() or key_path.read_text(encoding="utf-8").strip() != _archive_key(cfg, files):
            return None
    return EventIndex.load(path)


def cmd_ingest(cfg: AnalysisConfig) -> int:
    try:
        cfg.validate(need_patches=False)
        _, stats = _ingest(cfg)
    except (ConfigError, IoFailure) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    print(stats.summary())
    return EXIT_OK


def _graph_path(cfg: AnalysisConfig, fork: str) -> Path:
    return cfg.cache_dir / "graphs" / (fork.replace("/", "__") + ".json")


def cmd_analyze(cfg: AnalysisConfig) -> int:
    try:
        cfg.validate()
        sim = None
        if cfg.simulator_script is not None:
            script = SimScript.load(cfg.simulator_script)
            sim = simulate(script)
            index = build_event_index(sim.events)
            cfg.backend = "simulator"
        else:
            index = _saved_index(cfg)
            if index is None:
                index, stats = _ingest(cfg)
                print(stats.summary(), file=sys.stderr)
        provider = open_provider(cfg.provider_config(), sim_result=sim)
    except (ConfigError, IoFailure, InvalidScript, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    resolver = provider.resolve_tag if cfg.backend == "remote" else None
    upstream_tags = tags_from_index(index, cfg.upstream, resolver)
    estimates = []
    failed = 0
    for fork in cfg.forks:
        fp = index_fingerprint(index, fork, cfg.upstream)
        gpath = _graph_path(cfg, fork)
        graph = None
        if sim is None and gpath.exists():
            try:
                graph = CommitGraph.load(gpath, fingerprint=fp)
            except ValueError as exc:
                log.warning("ignoring graph snapshot %s: %s", gpath, exc)
        if graph is None:
            try:
                graph = build_graph(index, provider, fork=fork, upstream=cfg.upstream)
            except GraphBuildError as exc:
                print(f"warning: {fork}: {exc}", file=sys.stderr)
                graph = None
            if graph is not None and sim is None:
                graph.save(gpath, fingerprint=fp)
        if graph is None:
            for p in cfg.patches:
                estimates.append(PropagationEstimate(p.label, fork, status=GRAPH_INCOMPLETE,
                                                     flags=["graph_build_failed"],
                                                     published_date=p.published_date))
                failed += 1
            continue
        ctx = HeuristicContext(graph, index, tags_from_index(index, fork, resolver), upstream_tags)
        for p in cfg.patches:
            est = ctx.estimate(p, fork)
            failed += est.status == GRAPH_INCOMPLETE
            estimates.append(est)

    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    if "table" in cfg.formats:
        (out / "report.txt").write_text(render_report(cfg.patches, cfg.forks, estimates), encoding="utf-8")
    if "csv" in cfg.formats:
        (out / "estimates.csv").write_text(csv_text(estimates), encoding="utf-8")
        (out / "plot_data.csv").write_text(plot_csv(estimates), encoding="utf-8")
    if "json" in cfg.formats:
        (out / "estimates.json").write_text(records_json(estimates), encoding="utf-8")
    if "table" in cfg.formats:
        sys.stdout.write((out / "report.txt").read_text(encoding="utf-8"))
    return EXIT_ALL_FAILED if estimates and failed == len(estimates) else EXIT_OK


def cmd_cache_inspect(cache_dir, repo=None, commit=None) -> int:
    cache = CommitCache(Path(cache_dir) / "commits")
    if commit:
        if not repo:
            print("error: --commit needs --repo", file=sys.stderr)
            return EXIT_INPUT
        entry = cache.get(repo, commit)
        if entry is None:
            print(f"{commit}: not cached")
            return EXIT_OK
        print(yaml.safe_dump(entry, sort_keys=True), end="")
        return EXIT_OK
    counts: dict[tuple[str, str], int] = {}
    for entry in cache.entries(repo):
        key = (entry.get("repo", "?"), entry.get("status", "?"))
        counts[key] = counts.get(key, 0) + 1
    index_path = Path(cache_dir) / INDEX_FILE
    if index_path.exists():
        idx = EventIndex.load(index_path)
        for r in idx.repos():
            print(f"events {r}: {len(idx.events(r))}")
    for (r, status), n in sorted(counts.items()):
        print(f"commits {r} {status}: {n}")
    graphs = sorted((Path(cache_dir) / "graphs").glob("*.json")) if (Path(cache_dir) / "graphs").exists() else []
    for g in graphs:
        print(f"graph snapshot {g.name}")
    if not counts and not index_path.exists():
        print("cache is empty")
    return EXIT_OK


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--upstream", help="upstream repository owner/name")
    p.add_argument("--fork", action="append", help="fork repository owner/name (repeatable)")
    p.add_argument("--patches", help="YAML file with a list of patches")
    p.add_argument("--archive-dir", dest="archive_dir")
    p.add_argument("--simulator-script", dest="simulator_script")
    p.add_argument("--cache-dir", dest="cache_dir")
    p.add_argument("--backend", choices=["remote", "fixture", "simulator"])
    p.add_argument("--fixture", dest="fixture_path", help="JSON-lines commit store for the fixture backend")
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--format", action="append", choices=FORMATS)
    p.add_argument("--workers", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gitwatch", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"gitwatch {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a simulator script and write archive, commits and truth ledger")
    p.add_argument("script")
    p.add_argument("out_dir")

    _add_config_flags(sub.add_parser("ingest", help="ingest archive files into the event index"))
    _add_config_flags(sub.add_parser("analyze", help="estimate propagation delays and write reports"))

    p = sub.add_parser("cache-inspect", help="summarize the cache directory")
    p.add_argument("--cache-dir", required=True)
    p.add_argument("--repo")
    p.add_argument("--commit")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "simulate":
        return cmd_simulate(args.script, args.out_dir)
    if args.command == "cache-inspect":
        return cmd_cache_inspect(args.cache_dir, args.repo, args.commit)
    try:
        cfg = load_config(Path(args.config) if args.config else None, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if args.command == "ingest":
        return cmd_ingest(cfg)
    return cmd_analyze(cfg)


if __name__ == "__main__":
    sys.exit(main())
