import json
import os
import subprocess
import sys

import numpy as np
import pytest
from conftest import DATA, GOLDEN, run_pipeline

from egolink import __version__
from egolink.cli import main
from egolink.report import metric_table, plot_cmc


def stderr_json(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    return json.loads(err[-1])


def test_help_and_version(capsys):
    assert main(["--help"]) == 0
    assert "simulate" in capsys.readouterr().out
    assert main(["--version"]) == 0
    assert __version__ in capsys.readouterr().out


def test_missing_input_is_io_error(tmp_path, capsys):
    missing = tmp_path / "nope.jsonl"
    code = main(["evaluate", "--tracklets", str(missing), "--cameras", str(tmp_path),
                 "--out", str(tmp_path / "r.json")])
    assert code == 2
    err = stderr_json(capsys)
    assert err["path"] == str(missing)


def test_invalid_config_is_validation_error(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("num_cameras = 0\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "w")]) == 1
    assert stderr_json(capsys)["error"] == "InvalidConfig"
    cfg.write_text("this is not toml\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "w")]) == 1
    assert stderr_json(capsys)["path"] == str(cfg)


def test_usage_error(capsys):
    assert main(["evaluate"]) == 1
    assert stderr_json(capsys)["error"] == "UsageError"


def test_output_collision(tmp_path, capsys):
    out = tmp_path / "w"
    out.mkdir()
    (out / "keep.txt").write_text("x")
    assert main(["simulate", "--config", str(DATA / "scenario.toml"), "--out", str(out)]) == 2
    assert stderr_json(capsys)["path"] == str(out)
    assert (out / "keep.txt").exists()


def test_pipeline_matches_golden_and_writes_manifests(tmp_path):
    outputs = run_pipeline(tmp_path)
    assert outputs["report.json"] == (GOLDEN / "report.json").read_bytes()
    assert outputs["cmc.svg"] == (GOLDEN / "cmc.svg").read_bytes()
    for name in ("world", "curated.jsonl", "affinity.json", "report.json", "cmc.svg"):
        manifest = json.loads((tmp_path / f"{name}.manifest.json").read_text())
        assert manifest["version"] == __version__
        assert manifest["duration_s"] >= 0
        assert all(len(v["sha256"]) for v in manifest["inputs"].values())
    evaluate_manifest = json.loads((tmp_path / "report.json.manifest.json").read_text())
    assert evaluate_manifest["config"]["arrival_slack"] == 0.9
    assert evaluate_manifest["subcommand"] == "evaluate"


def test_report_golden_svg(tmp_path):
    report = json.loads((GOLDEN / "report.json").read_text())
    plot_cmc(report, tmp_path / "a.svg")
    assert (tmp_path / "a.svg").read_bytes() == (GOLDEN / "cmc.svg").read_bytes()


def test_report_flat_curve_and_empty(tmp_path, capsys):
    flat = {"protocol": "cross-camera", "cmc": [1.0, 1.0, 1.0], "map": 1.0,
            "per_query": [{"query_id": "q"}]}
    path = tmp_path / "r.json"
    path.write_text(json.dumps(flat))
    assert main(["report", "--in", str(path), "--plot", str(tmp_path / "p.svg")]) == 0
    table = capsys.readouterr().out
    assert "rank-1" in table and "100.00" in table
    assert metric_table(flat).count("100.00") == 4
    path.write_text(json.dumps({**flat, "per_query": []}))
    assert main(["report", "--in", str(path), "--plot", str(tmp_path / "p.svg")]) == 1
    assert stderr_json(capsys)["error"] == "ParseError"


def test_module_entry_point_and_log_env(tmp_path):
    env = {**os.environ, "EGOLINK_LOG": "info"}
    proc = subprocess.run([sys.executable, "-m", "egolink", "simulate", "--config",
                           str(DATA / "scenario.toml"), "--out", str(tmp_path / "w")],
                          capture_output=True, text=True, env=env)
    assert proc.returncode == 0
    assert "INFO egolink" in proc.stderr


@pytest.mark.parametrize("threads", [1, 3])
def test_associate_with_query_file(tmp_path, threads):
    run_pipeline(tmp_path / "base")
    ids = tmp_path / "ids.txt"
    aff = json.loads((tmp_path / "base" / "affinity.json").read_text())
    ids.write_text("\n".join(aff["query_ids"][:3]) + "\n")
    out = tmp_path / "a.json"
    code = main(["--threads", str(threads), "associate", "--tracklets",
                 str(tmp_path / "base/curated.jsonl"), "--cameras", str(tmp_path / "base/world/cameras"),
                 "--config", str(DATA / "association.toml"), "--queries", str(ids), "--out", str(out)])
    assert code == 0
    sub = json.loads(out.read_text())
    assert sub["query_ids"] == aff["query_ids"][:3]
    # rows come from a different matrix-product block shape, so compare to rounding
    assert np.allclose(sub["scores"], aff["scores"][:3], rtol=0, atol=1e-12)
    assert sub["masked"] == aff["masked"][:3]
