import json

import pytest

from delpattrib.cli import EXIT_CAP, EXIT_CONFIG, EXIT_DATA, EXIT_OK, main, resolve_settings
from delpattrib.dataset import ConfigError

TINY = ["--set", "n_teams=4", "--set", "n_attacks=800", "--set", "n_trees=5", "--set", "max_depth=6"]


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    import os

    for k in list(os.environ):
        if k.startswith("DELPATTRIB_"):
            monkeypatch.delenv(k)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("c") / "corpus.jsonl"
    assert main(["synth", "--seed", "1", *TINY, "--out", str(out)]) == EXIT_OK
    return out


def test_precedence_flags_config_env(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("k = 4\nn_bins = 5\n")
    got = resolve_settings({"k": 2, "n_bins": 3, "seed": 1}, str(cfg), {"DELPATTRIB_K": "7"})
    assert got == {"k": "7", "n_bins": "5", "seed": "1"}


def test_unknown_setting_rejected():
    with pytest.raises(ConfigError):
        resolve_settings({"colour": "blue"}, None, {})


def test_ingest(corpus, tmp_path, capsys):
    assert main(["ingest", str(corpus)]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc["n_records"] == 800 and len(doc["targets"]) == 4


def test_ingest_bad_data(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"time": "2013-08-03T23:45:17"}\n')
    assert main(["ingest", str(bad)]) == EXIT_DATA
    assert "record 1" in capsys.readouterr().err
    assert main(["ingest", str(tmp_path / "missing.jsonl")]) == EXIT_DATA


def test_evaluate_is_byte_identical(corpus, tmp_path):
    outs = []
    for name in "ab":
        out = tmp_path / name
        assert main(["evaluate", "--seed", "0", "--input", str(corpus), *TINY, "--out", str(out)]) == EXIT_OK
        outs.append(out)
    for p in outs[0].iterdir():
        assert p.read_bytes() == (outs[1] / p.name).read_bytes()
    assert main(["report", str(outs[0] / "report.csv"), "--format", "csv"]) == EXIT_OK


def test_attribute_and_tree(corpus, tmp_path, capsys):
    dot = tmp_path / "t.dot"
    args = ["attribute", "--seed", "0", "--input", str(corpus), *TINY, "--target", "T-1", "--index", "0"]
    assert main([*args, "--dot", str(dot)]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc["predicted_team"] in doc["candidates"]
    assert dot.read_text().startswith(("digraph", "//"))
    assert main([*args[:-1], "9999"]) == EXIT_DATA


def test_env_overrides_and_config_errors(monkeypatch, corpus, tmp_path):
    monkeypatch.setenv("DELPATTRIB_K", "0")
    assert main(["evaluate", "--seed", "0", "--input", str(corpus), "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    monkeypatch.delenv("DELPATTRIB_K")
    assert main(["evaluate", "--input", str(corpus), "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    assert main(["synth", "--seed", "1", "--set", "n_teams=2", "--out", str(tmp_path / "s")]) == EXIT_CONFIG


def test_engine_cap_exit_code(corpus, tmp_path):
    args = ["evaluate", "--seed", "0", "--input", str(corpus), *TINY, "--set", "cap_universe=1"]
    assert main([*args, "--set", "variants=BM", "--out", str(tmp_path / "cap")]) == EXIT_CAP
