from __future__ import annotations

import json

from statenet.cli import main


def test_help_and_bad_usage(capsys):
    assert main(["--help"]) == 0
    assert main(["frobnicate"]) == 1
    assert main(["run", "search"]) == 1  # no sweep values
    assert "error" in capsys.readouterr().err


def test_run_search_writes_table(tmp_path, capsys):
    rc = main([
        "run", "search", "--axis", "k", "--values", "2,4", "--nodes", "30", "--width", "16",
        "--prefix-len", "2", "--option", "lookups=20", "--out-dir", str(tmp_path),
    ])
    assert rc == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("# statenet-table/1") and out[1].startswith("nodes,k,")
    assert len(out) == 4
    man = json.loads((tmp_path / "search-iterations.manifest.json").read_text())
    assert man["rows"] == 2
    assert (tmp_path / "search-iterations.csv").read_text().splitlines() == out


def test_config_file_and_group_mismatch(tmp_path, capsys):
    cfg = tmp_path / "s.toml"
    cfg.write_text('kind = "storage-savings"\nname = "st"\n[sweep]\naxis = "prefix_len"\nvalues = [2]\n'
                   '[options]\ntrials = 1000\nreplication_items = 50\n')
    assert main(["run", "storage", "-c", str(cfg), "--out-dir", str(tmp_path)]) == 0
    assert (tmp_path / "st.csv").exists()
    assert main(["run", "latency", "-c", str(cfg), "--out-dir", str(tmp_path)]) == 1
    assert main(["inspect", "config", str(cfg)]) == 0
    assert '"digest"' in capsys.readouterr().out
    bad = tmp_path / "bad.toml"
    bad.write_text("kind = [")
    assert main(["inspect", "config", str(bad)]) == 1


def test_gen_and_inspect_trace(tmp_path, capsys):
    path = tmp_path / "t.csv"
    rc = main(["gen-trace", "--accounts", "1000", "--blocks", "5", "--txs-per-block", "10", "--no-locality-check", "-o", str(path)])
    assert rc == 0
    capsys.readouterr()
    assert main(["inspect", "trace", str(path)]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["blocks"] == 5
    assert main(["inspect", "trace", str(tmp_path / "missing.csv")]) == 1
