import csv
import json
import shutil
from pathlib import Path

import jsonschema
import pytest
import yaml

from gitwatch.cli import main
from gitwatch.report import CSV_COLUMNS, RECORD_SCHEMA

DEMO = Path(__file__).resolve().parents[1] / "src" / "gitwatch" / "data" / "demo.yaml"


@pytest.fixture
def demo(tmp_path):
    out = tmp_path / "demo"
    assert main(["simulate", str(DEMO), str(out)]) == 0
    return out


def analyze(d, *extra):
    return main(["analyze", "--config", str(d / "gitwatch.yaml"), *extra])


def test_simulate_writes_outputs(demo):
    for name in ["commits.jsonl", "truth.tsv", "patches.yaml", "gitwatch.yaml"]:
        assert (demo / name).exists()
    assert list((demo / "archive").glob("*.json.gz"))


def test_analyze_end_to_end(demo, capsys):
    assert analyze(demo) == 0
    out = capsys.readouterr().out
    assert "Number of fixes" in out
    report = demo / "report"
    rows = list(csv.reader((report / "estimates.csv").open()))
    assert rows[0] == CSV_COLUMNS
    assert all(r[7] == "found" for r in rows[1:])
    doc = json.loads((report / "estimates.json").read_text())
    jsonschema.validate(doc, RECORD_SCHEMA)
    truth = {line.split("\t")[0]: line.split("\t") for line in (demo / "truth.tsv").read_text().splitlines()[1:]}
    for rec in doc["records"]:
        _, author, port, _ = truth[rec["patch"]]
        assert rec["delta_pef_seconds"] == int(port) - int(author)
    assert (report / "plot_data.csv").read_text().startswith("fork,patch_label,upstream_date,delta_days,heuristic")
    assert (demo / "cache" / "event-index.json").exists()
    assert list((demo / "cache" / "graphs").glob("*.json"))


def test_analyze_is_byte_deterministic(demo, tmp_path):
    other = tmp_path / "again"
    shutil.copytree(demo, other)
    assert analyze(demo) == 0
    assert analyze(other) == 0
    for name in ["report.txt", "estimates.csv", "plot_data.csv", "estimates.json"]:
        assert (demo / "report" / name).read_bytes() == (other / "report" / name).read_bytes()
    # a warm rerun reuses the index and graph snapshot and writes the same bytes
    before = (demo / "report" / "estimates.json").read_bytes()
    assert analyze(demo) == 0
    assert (demo / "report" / "estimates.json").read_bytes() == before


def test_cli_flags_override_config(demo):
    assert analyze(demo, "--format", "csv", "--output-dir", str(demo / "flags")) == 0
    assert (demo / "flags" / "estimates.csv").exists()
    assert not (demo / "flags" / "report.txt").exists()


def test_simulator_script_mode(demo, tmp_path):
    cfg = yaml.safe_load((demo / "gitwatch.yaml").read_text())
    cfg.pop("archive_dir")
    cfg["simulator_script"] = str(DEMO)
    path = demo / "sim.yaml"
    path.write_text(yaml.safe_dump(cfg))
    assert main(["analyze", "--config", str(path), "--output-dir", str(tmp_path / "o")]) == 0
    assert analyze(demo) == 0
    assert (tmp_path / "o" / "estimates.csv").read_text() == (demo / "report" / "estimates.csv").read_text()


def test_missing_script_exit_2(tmp_path, capsys):
    assert main(["simulate", str(tmp_path / "nope.yaml"), str(tmp_path / "o")]) == 2
    assert "invalid script" in capsys.readouterr().err


def test_invalid_script_exit_2(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("seed: 1\nupstream_schedule: []\n")
    assert main(["simulate", str(p), str(tmp_path / "o")]) == 2


def test_empty_archive_dir_exit_2(demo, capsys):
    for f in (demo / "archive").iterdir():
        f.unlink()
    assert analyze(demo) == 2
    assert "no input files" in capsys.readouterr().err
    assert main(["ingest", "--config", str(demo / "gitwatch.yaml")]) == 2


def test_missing_config_values_exit_2(tmp_path, capsys):
    p = tmp_path / "c.yaml"
    p.write_text("forks: [a/b]\n")
    assert main(["analyze", "--config", str(p)]) == 2
    assert main(["analyze", "--config", str(tmp_path / "missing.yaml")]) == 2


def test_corrupted_archive_still_succeeds(demo, capsys):
    f = sorted((demo / "archive").iterdir())[0]
    f.write_bytes(f.read_bytes()[:-8] + b"\x00" * 8)  # broken gzip trailer
    junk = demo / "archive" / "2000-01-01-0.json"
    junk.write_text("{bad line\n")
    assert main(["ingest", "--config", str(demo / "gitwatch.yaml")]) == 0
    out = capsys.readouterr().out
    assert "malformed=" in out and "malformed=0" not in out
    assert analyze(demo) == 0


def test_all_failed_exit_3(demo, capsys):
    (demo / "commits.jsonl").write_text("")
    assert analyze(demo) == 3
    assert "-" in (demo / "report" / "report.txt").read_text()


def test_na_cell_for_predating_patch(tmp_path):
    script = yaml.safe_load(DEMO.read_text())
    sched = script["upstream_schedule"]
    sched[0] = [sched[0][0], sched[0][1], "ANCIENT"]
    p = tmp_path / "s.yaml"
    p.write_text(yaml.safe_dump(script))
    out = tmp_path / "o"
    assert main(["simulate", str(p), str(out)]) == 0
    assert analyze(out) == 0
    report = (out / "report" / "report.txt").read_text()
    assert any(line.startswith("ANCIENT") and line.rstrip().endswith("NA") for line in report.splitlines())
    rows = {r["patch_label"]: r for r in csv.DictReader((out / "report" / "estimates.csv").open())}
    assert rows["ANCIENT"]["status"] == "predates_fork"


def test_cache_inspect(demo, capsys):
    assert analyze(demo) == 0
    capsys.readouterr()
    assert main(["cache-inspect", "--cache-dir", str(demo / "cache")]) == 0
    out = capsys.readouterr().out
    assert "found" in out and "graph snapshot" in out
    assert main(["cache-inspect", "--cache-dir", str(demo / "cache"), "--commit", "a" * 40]) == 2
    assert main(["cache-inspect", "--cache-dir", str(demo / "cache"), "--repo", "x/y",
                 "--commit", "a" * 40]) == 0
    assert "not cached" in capsys.readouterr().out


def test_version(capsys):
    with pytest.raises(SystemExit):
        main(["--version"])
    assert "gitwatch" in capsys.readouterr().out


def test_saved_index_not_reused_for_other_archive(demo, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    cfg = yaml.safe_load((demo / "gitwatch.yaml").read_text())
    cfg.pop("cache_dir")
    (demo / "gitwatch.yaml").write_text(yaml.safe_dump(cfg))
    assert analyze(demo) == 0
    # the default cache sits next to the config, not in the working directory
    assert (demo / ".gitwatch-cache" / "event-index.json").exists()
    assert not (tmp_path / ".gitwatch-cache").exists()
    first = (demo / "report" / "estimates.csv").read_text()
    # dropping the last archive hour must be noticed rather than served from the saved index
    sorted((demo / "archive").iterdir())[-1].unlink()
    assert analyze(demo) == 0
    assert (demo / "report" / "estimates.csv").read_text() != first
