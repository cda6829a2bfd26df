"""Regenerate the five-scenario validation corpus under ``tests/fixtures/validation``.

Each scenario is a simulator script whose timings put the three heuristics at
fixed per-row day counts:

* PCF below PEF comes from committer-clock skew on the fork maintainer;
* PEF above PCF and PTF comes from a withheld rebase publication event, so
  the next push that carries the patch becomes the earliest visible one;
* PTF is the first fork-only release tag after the port.

Run ``python3 tests/fixtures/make_validation.py`` after changing a scenario.
"""

from __future__ import annotations

import sys
from datetime import datetime, timezone
from pathlib import Path

import yaml

from gitwatch.simulator import SimScript, simulate, write_outputs

DAY = 86_400
HERE = Path(__file__).resolve().parent / "validation"

# label, fork repo, patch date, (pcf, pef, ptf) days, release-notes days
ROWS = [
    ("BIP 65", "litecoin-project/litecoin", "2015-11-12", (159, 160, 181), 179),
    ("BIP 65", "dogecoin/dogecoin", "2015-11-12", (244, 147, 958), 958),
    ("BIP 66", "dogecoin/dogecoin", "2015-02-13", (142, 142, 194), 194),
    ("CVE-2013-4627", "litecoin-project/litecoin", "2013-06-01", (17, 45, 18), 33),
    ("CVE-2013-4165", "litecoin-project/litecoin", "2013-07-20", (10, 529, 13), 28),
]


def _ts(date: str) -> int:
    return int(datetime.fromisoformat(date).replace(hour=12, tzinfo=timezone.utc).timestamp())


def slug(label: str, fork: str) -> str:
    return f"{label.replace(' ', '').lower()}__{fork.split('/')[0]}"


def scenario(label: str, fork: str, date: str, triple, seed: int) -> SimScript:
    pcf, pef, ptf = triple
    patch = _ts(date)
    port = min(pcf, pef, ptf) if pef > ptf else pef  # instant the rebase happens, in days
    skew = (pcf - port) * DAY
    upstream = [
        (patch - 400 * DAY, 3, None),
        (patch, 1, label),
        (patch + 3 * DAY, 2, None),
    ]
    fork_sched = [(patch - 300 * DAY, 2)]
    drops = []
    later = []
    if pef > port:
        # the rebase publication is lost; the next fork push reveals the patch
        drops.append(patch + port * DAY)
        later.append((patch + pef * DAY, 1))
    fork_sched += later
    tags = [
        (patch - 200 * DAY, "v-fork-old", "fork"),
        (patch + 1 * DAY, "v-upstream-release", "upstream"),
        (patch + ptf * DAY, f"v-fork-{label.replace(' ', '')}", "fork"),
    ]
    tags.sort()
    return SimScript(
        seed=seed,
        upstream_repo="bitcoin/bitcoin",
        fork_repo=fork,
        upstream_maintainer="bitcoin-dev",
        fork_maintainer=f"{fork.split('/')[0]}-dev",
        upstream_schedule=upstream,
        fork_point=2,
        fork_schedule=sorted(fork_sched),
        rebase_schedule=[(patch + port * DAY, 3)],
        tag_schedule=tags,
        skew={f"{fork.split('/')[0]}-dev": skew} if skew else {},
        max_skew=max(DAY, abs(skew)),
        drop_event_times=drops,
    )


def build(root: Path = HERE) -> list[Path]:
    dirs = []
    for seed, (label, fork, date, triple, truth_days) in enumerate(ROWS, 1):
        script = scenario(label, fork, date, triple, seed)
        d = root / slug(label, fork)
        d.mkdir(parents=True, exist_ok=True)
        (d / "script.yaml").write_text(yaml.safe_dump(script.to_dict(), sort_keys=False), encoding="utf-8")
        result = simulate(script)
        write_outputs(result, d)
        patches = [{"label": label, "commits": [result.patch_commits[label]], "published": date}]
        (d / "patches.yaml").write_text(yaml.safe_dump(patches, sort_keys=False), encoding="utf-8")
        config = {
            "upstream": script.upstream_repo,
            "forks": [fork],
            "patches_file": "patches.yaml",
            "archive_dir": "archive",
            "provider": {"backend": "fixture", "fixture_path": "commits.jsonl"},
        }
        (d / "gitwatch.yaml").write_text(yaml.safe_dump(config, sort_keys=False), encoding="utf-8")
        expected = {"label": label, "fork": fork, "pcf": triple[0], "pef": triple[1], "ptf": triple[2],
                    "release_notes_days": truth_days}
        (d / "expected.yaml").write_text(yaml.safe_dump(expected, sort_keys=False), encoding="utf-8")
        dirs.append(d)
    return dirs


if __name__ == "__main__":
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else HERE
    for d in build(out):
        print(d)
