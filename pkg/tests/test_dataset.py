import json
import random
from datetime import datetime, timedelta

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from delpattrib.dataset import (
    AttackRecord,
    ConfigError,
    DataError,
    Duplicate,
    SynthConfig,
    deceptive_unique_fraction,
    label_attacks,
    load_records,
    load_synth_config,
    measured_unseen_fraction,
    partition_by_target,
    split_point,
    synth_generate,
    write_records,
)
from delpattrib.rules import deception_delays, replay_delays

T0 = datetime(2013, 8, 2, 9, 0, 0)


def rec(sec, src, dst, key="e", seq=0):
    return AttackRecord(T0 + timedelta(seconds=sec), {1: 1}, {"mov": 1}, src, dst, key, seq)


def jline(**kw):
    base = {"time": "2013-08-03T23:45:17", "byte_hist": {"0": 3}, "inst_hist": {"mov": 1},
            "from_team": "a", "to_team": "b"}
    base.update(kw)
    return json.dumps({k: v for k, v in base.items() if v is not None})


def test_load_round_trip(tmp_path):
    recs = [rec(i, "a", "b", f"k{i}", i) for i in range(5)]
    path = tmp_path / "r.jsonl"
    write_records(recs, path)
    assert load_records(path) == recs


def test_load_json_array(tmp_path):
    path = tmp_path / "r.json"
    path.write_text("[" + jline() + "," + jline(from_team="c") + "]")
    assert [r.from_team for r in load_records(path)] == ["a", "c"]


def test_hex_byte_keys_and_missing_hash(tmp_path):
    path = tmp_path / "r.jsonl"
    path.write_text(jline(byte_hist={"0x1f": 2}) + "\n")
    r = load_records(path)[0]
    assert r.byte_hist == {31: 2} and r.exploit_key.startswith("h")


@pytest.mark.parametrize(
    "bad, needle",
    [
        (jline(from_team="b"), "equals"),
        (jline(byte_hist={"300": 1}), "outside"),
        (jline(byte_hist={"1": -2}), "negative"),
        (jline(time=None), "missing"),
        (jline(byte_hist={}, inst_hist={}), "empty"),
        ("{not json", "invalid JSON"),
    ],
)
def test_validation_errors_carry_line_numbers(tmp_path, bad, needle):
    path = tmp_path / "r.jsonl"
    path.write_text(jline() + "\n\n" + bad + "\n")
    with pytest.raises(DataError) as exc:
        load_records(path)
    pos, msg = exc.value.problems[0]
    assert pos == 3 and needle in msg


def test_split_point():
    assert split_point(10) == 9
    assert split_point(0) == 0
    assert split_point(19) == 17


def test_partition_and_ties():
    recs = [rec(0, "z", "t1", "a", 0), rec(0, "b", "t1", "b", 1), rec(5, "c", "t2"), rec(1, "c", "t3")]
    subs = partition_by_target(recs)
    assert [s.target for s in subs] == ["t1", "t2", "t3"]
    # equal timestamps ordered by attacker name
    assert [r.from_team for r in subs[0].records] == ["b", "z"]


def test_labels():
    recs = [rec(0, "A", "X"), rec(10, "B", "X"), rec(20, "A", "X"), rec(30, "C", "X", "solo")]
    sub = partition_by_target(recs)[0]
    labels = label_attacks(sub)
    assert [l.deceptive for l in labels] == [True, True, True, False]
    assert [l.duplicate for l in labels] == [Duplicate.NONE, Duplicate.DECEPTIVE, Duplicate.NON_DECEPTIVE, Duplicate.NONE]
    assert labels[3].unseen_in_train


@settings(max_examples=50, deadline=None)
@given(st.permutations(list(range(8))))
def test_labels_stable_under_input_order(order):
    base = [rec(i * 7 % 5, "ABC"[i % 3], "X", f"k{i % 3}", i) for i in range(8)]
    canon = label_attacks(partition_by_target(base)[0])
    shuffled = [base[i] for i in order]
    assert label_attacks(partition_by_target(shuffled)[0]) == canon


SMALL = SynthConfig(n_teams=5, n_attacks=2000)


def test_synth_is_deterministic(tmp_path):
    a, sa = synth_generate(SMALL, 3)
    b, sb = synth_generate(SMALL, 3)
    write_records(a, tmp_path / "a")
    write_records(b, tmp_path / "b")
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()
    assert sa == sb
    c, _ = synth_generate(SMALL, 4)
    assert c != a


def test_synth_partition_preserves_records():
    recs, _ = synth_generate(SMALL, 0)
    subs = partition_by_target(recs)
    assert len(subs) == SMALL.n_teams
    assert sorted(r.seq for s in subs for r in s.records) == sorted(r.seq for r in recs)


def test_no_deception_means_no_shared_exploits():
    recs, _ = synth_generate(SynthConfig(n_teams=5, n_attacks=2000, deception_prob=0.0), 1)
    for s in partition_by_target(recs):
        assert deceptive_unique_fraction(s) == 0.0


def test_deceptive_fraction_matches_config():
    recs, _ = synth_generate(SynthConfig(), 0)
    fracs = [deceptive_unique_fraction(s) for s in partition_by_target(recs)]
    assert abs(np.mean(fracs) - 0.35) <= 0.05


def test_unseen_fraction_is_calibrated():
    cfg = SynthConfig(n_teams=5, n_attacks=10_000)
    recs, side = synth_generate(cfg, 0)
    assert abs(measured_unseen_fraction(recs) - cfg.unseen_fraction) < 0.03


def test_full_train_coverage():
    recs, _ = synth_generate(SynthConfig(n_teams=4, n_attacks=1000, full_train_coverage=True), 2)
    for s in partition_by_target(recs):
        seen = {r.exploit_key for r in s.train}
        assert all(r.exploit_key in seen for r in s.test)


def pooled(recs, fn):
    out = {}
    for s in partition_by_target(recs):
        for t, v in fn(s.records).items():
            out.setdefault(t, []).extend(v)
    return {t: float(np.mean(v)) for t, v in out.items()}


def test_deception_delays_reproduce_configuration():
    cfg = SynthConfig(
        n_teams=4, n_attacks=20_000, deception_prob=1.0, deception_delays=(500.0, 5000.0, 500.0, 5000.0)
    )
    recs, side = synth_generate(cfg, 0)
    got = pooled(recs, deception_delays)
    for team, params in side["teams"].items():
        assert got[team] == pytest.approx(params["deception_delay"], rel=0.10)


def test_replay_delays_reproduce_configuration():
    # long exploit lifetimes so that few gaps are cut off by the end of a payload's use
    cfg = SynthConfig(
        n_teams=4, n_attacks=20_000, deception_prob=0.0, unseen_fraction=0.01, replay_delays=(3600.0,) * 4
    )
    recs, _ = synth_generate(cfg, 0)
    for mean in pooled(recs, replay_delays).values():
        assert mean == pytest.approx(3600.0, rel=0.10)


@pytest.mark.parametrize(
    "kw",
    [
        {"n_teams": 2},
        {"deception_prob": 1.5},
        {"deception_delays": (1.0, 2.0)},
        {"replay_delay_range": (10.0, 1.0)},
        {"start": "yesterday"},
    ],
)
def test_invalid_synth_config(kw):
    with pytest.raises(ConfigError):
        synth_generate(SynthConfig(**kw), 0)


def test_flat_config_file(tmp_path):
    path = tmp_path / "synth.cfg"
    path.write_text("# corpus\nn_teams = 6\ndeception_delays = 1, 2, 3, 4, 5, 6\nfull_train_coverage = true\n")
    cfg = load_synth_config(path)
    assert cfg.n_teams == 6 and cfg.deception_delays == (1.0, 2.0, 3.0, 4.0, 5.0, 6.0) and cfg.full_train_coverage
    path.write_text("colour = blue\n")
    with pytest.raises(ConfigError):
        load_synth_config(path)
