import numpy as np
import pytest

from sorl.data import TaggedDataset, TransitionRecord, Transitions, read_jsonl, write_jsonl
from sorl.market import constant_policy, simulate


def test_jsonl_roundtrip(tmp_path, small_market):
    tr = simulate(small_market, constant_policy(10.0), [1]).transitions()
    recs = tr.records("safe")
    write_jsonl(tmp_path / "d.jsonl", recs, header={"kind": "trajectory"})
    header, back = read_jsonl(tmp_path / "d.jsonl")
    assert header == {"kind": "trajectory"}
    assert back == recs
    line = recs[0].to_json()
    for key in ('"t"', '"s"', '"a"', '"r"', '"cost"', '"s\'"', '"done"'):
        assert key in line


def test_transitions_roundtrip_columns(small_market):
    tr = simulate(small_market, constant_policy(10.0), [2]).transitions()
    back = Transitions.from_records(tr.records())
    for name in ("t", "s", "a", "r", "cost", "s2", "done"):
        assert np.array_equal(getattr(back, name), getattr(tr, name))


def test_tagged_dataset_rounds(small_market):
    tr = simulate(small_market, constant_policy(10.0), [1]).transitions()
    ds = TaggedDataset()
    ds.add_round("safe", tr, constant_policy(7.0))
    with pytest.raises(ValueError):
        ds.add_round("safe", tr, constant_policy(7.0))
    with pytest.raises(ValueError):
        ds.add_round("empty", tr.take(np.array([], dtype=int)), constant_policy(7.0))
    ds.add_round("ser_1", tr, constant_policy(9.0))
    data, queries, ids = ds.union()
    assert len(data) == 2 * len(tr) == len(ds)
    assert np.all(queries[ids == 0] == 7.0) and np.all(queries[ids == 1] == 9.0)
    assert ds.tags == ["safe", "ser_1"]
    assert ds.subset(["ser_1"]).tags == ["ser_1"]


def test_record_from_json_accepts_tagless():
    r = TransitionRecord.from_json('{"t": 0, "s": [1, 2, 0], "a": 3, "r": 0.5, "cost": 1, "s\'": [0, 1, 1], "done": true}')
    assert r.tag == "" and r.done and r.s2 == (0, 1, 1)
