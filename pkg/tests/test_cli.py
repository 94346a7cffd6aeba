import csv
import json
import subprocess
import sys

import pytest
from test_config import with_

from stosign.cli import BOUNDS_COLUMNS, METRIC_COLUMNS, main


def write(tmp_path, cfg, name="c.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def read_rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_run_writes_csv_and_summary(tmp_path):
    out = tmp_path / "o"
    assert main(["run", write(tmp_path, with_(rounds=5)), "--out", str(out)]) == 0
    rows = read_rows(out / "metrics.csv")
    assert tuple(rows[0]) == METRIC_COLUMNS
    assert [r[0] for r in rows[1:]] == ["1", "2", "3", "4", "5"]
    # d bits per voter per round
    assert {r[METRIC_COLUMNS.index("uplink_bits")] for r in rows[1:]} == {"3"}
    summary = json.loads((out / "summary.json").read_text())
    assert summary["compression_ratio"] == 32


def test_rerun_is_byte_identical(tmp_path):
    cfg = write(tmp_path, with_(rounds=30))
    main(["run", cfg, "--out", str(tmp_path / "a")])
    main(["run", cfg, "--out", str(tmp_path / "b")])
    assert (tmp_path / "a/metrics.csv").read_bytes() == (tmp_path / "b/metrics.csv").read_bytes()


def test_output_env_var(tmp_path, monkeypatch):
    monkeypatch.setenv("STOSIGN_OUTPUT_DIR", str(tmp_path / "env"))
    assert main(["run", write(tmp_path, with_(rounds=2))]) == 0
    assert (tmp_path / "env/metrics.csv").exists()


def test_config_output_dir_beats_env(tmp_path, monkeypatch):
    monkeypatch.setenv("STOSIGN_OUTPUT_DIR", str(tmp_path / "env"))
    cfg = with_(rounds=2, output={"dir": str(tmp_path / "cfg"), "csv": "m.csv"})
    assert main(["run", write(tmp_path, cfg)]) == 0
    assert (tmp_path / "cfg/m.csv").exists() and not (tmp_path / "env").exists()


def test_invalid_config_exit_1(tmp_path, capsys):
    assert main(["run", write(tmp_path, with_(M=0))]) == 1
    assert "M must be ≥ 1" in capsys.readouterr().err


def test_runtime_error_exit_2(tmp_path, capsys):
    # scalar-quadratic with 2-dimensional targets fails when the data is built
    cfg = with_(dataset={"kind": "quadratic", "targets": [[1.0, 2.0], [0.0, 1.0], [1.0, 1.0]]})
    assert main(["run", write(tmp_path, cfg)]) == 2
    assert capsys.readouterr().err.startswith("error:")


def test_bounds_csv(tmp_path):
    sweep = {"seed": 1, "M": [3, 7], "b": [1.0, 1.5], "ensembles": 2, "trials": 2000}
    out = tmp_path / "b.csv"
    assert main(["bounds", write(tmp_path, sweep, "s.json"), "--out", str(out)]) == 0
    rows = read_rows(out)
    assert tuple(rows[0]) == BOUNDS_COLUMNS
    assert len(rows) == 1 + 2 * 2 * 2
    for r in rows[1:]:
        exact, cor1, thm1 = (float(r[BOUNDS_COLUMNS.index(c)]) for c in ("exact", "cor1", "thm1"))
        assert exact <= cor1 and cor1 == pytest.approx(thm1, rel=1e-12)


def test_bounds_rejects_small_b(tmp_path, capsys):
    sweep = {"M": [3], "b": [0.5]}
    assert main(["bounds", write(tmp_path, sweep, "s.json")]) == 1
    assert "b:" in capsys.readouterr().err


def test_privacy_verb(capsys):
    assert main(["privacy", "--sigma", "10", "--clip", "4", "--rounds", "200"]) == 0
    out = capsys.readouterr().out
    assert "mu = 5.65685" in out and "epsilon = 39.38" in out


def test_privacy_bad_args():
    assert main(["privacy", "--sigma", "-1", "--clip", "4", "--rounds", "200"]) == 1


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "stosign", "privacy", "--sigma", "80", "--clip", "4",
                           "--rounds", "200"], capture_output=True, text=True)
    assert proc.returncode == 0 and "mu = 0.707107" in proc.stdout
