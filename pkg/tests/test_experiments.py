from __future__ import annotations

import json

import pytest

from statenet.config import ConfigError, acceptance_names, acceptance_spec, spec_from_dict
from statenet.experiments import Table, run_experiment


def spec(kind, axis, values, sim=None, **extra):
    d = {"kind": kind, "sim": sim or {}, "sweep": {"axis": axis, "values": values}}
    d.update(extra)
    return spec_from_dict(d)


def test_table_csv_and_manifest(tmp_path):
    t = Table("demo", ["x", "ratio", "ok"], provenance={"seed": 3, "experiment": "demo"})
    t.add(1, 0.5, True)
    t.add(2, 1 / 3, False)
    with pytest.raises(ValueError):
        t.add(1, 2)
    assert t.to_csv() == (
        "# statenet-table/1 experiment=demo seed=3\n"
        "x,ratio,ok\n"
        "1,0.5,1\n"
        "2,0.333333,0\n"
    )
    csv_path, man_path = t.write(tmp_path)
    man = json.loads(man_path.read_text())
    assert man["rows"] == 2 and man["table"] == "demo.csv"
    assert csv_path.read_text() == t.to_csv()
    assert t.where(x=2)[0]["ok"] is False
    assert t.column("x") == [1, 2]


def test_provenance_header():
    s = spec("search-iterations", "k", [4], {"nodes": 10, "prefix_lens": 0, "width": 16, "seed": 2}, options={"lookups": 5})
    t = run_experiment(s)
    head = t.to_csv().splitlines()[0]
    assert head.startswith("# statenet-table/1 ")
    assert f"config={s.digest()}" in head and "seed=2" in head and "experiment=search-iterations" in head


def test_single_node_search_takes_no_rounds():
    s = spec("search-iterations", "nodes", [1], {"prefix_lens": 3, "width": 16}, options={"lookups": 50})
    row = run_experiment(s).where(nodes=1)[0]
    assert row["mean_iterations"] == 0 and row["failure_rate"] == 0


def test_full_replication_saves_nothing():
    s = spec("storage-savings", "prefix_len", [0], {"nodes": 50}, options={"trials": 1000, "replication_items": 100})
    d = run_experiment(s).where(prefix_len=0)[0]
    assert d["savings"] == 0 and d["loss_probability"] == 0


def test_spec_digest_is_stable():
    a = spec("storage-savings", "prefix_len", [3, 4])
    b = spec("storage-savings", "prefix_len", [3, 4])
    c = spec("storage-savings", "prefix_len", [3, 5])
    assert a.digest() == b.digest() != c.digest()


@pytest.mark.parametrize(
    "d, match",
    [
        ({"kind": "bogus", "sweep": {"axis": "k", "values": [1]}}, "unknown experiment kind"),
        ({"kind": "search-iterations", "sweep": {"axis": "fanout", "values": [1]}}, "sweeps over"),
        ({"kind": "search-iterations", "sweep": {"axis": "k", "values": []}}, "at least one value"),
        ({"kind": "search-iterations", "sweep": {"axis": "k", "values": [1]}, "options": {"nope": 1}}, "unknown options"),
        ({"kind": "search-iterations", "sweep": {"axis": "k"}}, "axis' and 'values"),
        ({"kind": "search-iterations", "sweep": {"axis": "k", "values": [1]}, "extra": 1}, "top-level"),
        ({"schema": "other/2", "kind": "search-iterations", "sweep": {"axis": "k", "values": [1]}}, "schema"),
        ({"sweep": {"axis": "k", "values": [1]}}, "missing 'kind'"),
    ],
)
def test_config_errors(d, match):
    with pytest.raises(ConfigError, match=match):
        spec_from_dict(d)


def test_search_needs_uniform_prefix():
    s = spec("search-iterations", "k", [4], {"prefix_lens": [2, 3]})
    with pytest.raises(ConfigError):
        run_experiment(s)


def test_shipped_acceptance_configs_load():
    names = acceptance_names()
    assert "c1_storage" in names and "c8_protocol" in names
    for n in names:
        assert acceptance_spec(n).name
    with pytest.raises(ConfigError):
        acceptance_spec("missing")
