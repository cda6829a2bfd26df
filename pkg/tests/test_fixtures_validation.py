import importlib.util
import sys
from pathlib import Path

import yaml

HERE = Path(__file__).resolve().parent / "fixtures"


def load_builder():
    spec = importlib.util.spec_from_file_location("make_validation", HERE / "make_validation.py")
    mod = importlib.util.module_from_spec(spec)
    sys.modules["make_validation"] = mod
    spec.loader.exec_module(mod)
    return mod


def tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_corpus_regenerates_byte_identical(tmp_path):
    builder = load_builder()
    builder.build(tmp_path)
    assert tree(tmp_path) == tree(HERE / "validation")


def test_corpus_expectations_cover_all_rows():
    rows = [yaml.safe_load(p.read_text()) for p in sorted((HERE / "validation").glob("*/expected.yaml"))]
    assert len(rows) == 5
    assert {(r["pcf"], r["pef"], r["ptf"]) for r in rows} == {
        (159, 160, 181), (244, 147, 958), (142, 142, 194), (17, 45, 18), (10, 529, 13)}
