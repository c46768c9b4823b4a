"""`forge` command-line client: subcommands, config file, exit codes."""
import json

import pytest

from embodied_forge import cli


def run_cli(capsys, *argv):
    code = cli.main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_usage_error_exits_2(capsys):
    with pytest.raises(SystemExit) as err:
        cli.main(["gen"])  # missing --out-dir
    assert err.value.code == 2


def test_unknown_command_exits_2(capsys):
    with pytest.raises(SystemExit) as err:
        cli.main(["transmogrify"])
    assert err.value.code == 2


def test_rope_command(capsys):
    code, out, _ = run_cli(capsys, "rope", "--method", "linear",
                           "--scale", "4", "--positions", "100")
    assert code == 0
    body = json.loads(out)
    assert body["remappedPositions"]["100.0"] == 25.0


def test_ringcheck_command(capsys):
    code, out, _ = run_cli(capsys, "ringcheck", "--lengths", "64",
                           "--dims", "16", "--workers", "1,2",
                           "--causal", "0,1", "--seeds", "0")
    assert code == 0
    body = json.loads(out)
    assert body["passed"]
    assert len(body["cases"]) == 4


def test_domain_error_exits_1_with_machine_readable_record(capsys, tmp_path):
    code, out, err = run_cli(capsys, "stats", "--traj-dir",
                             str(tmp_path / "missing"))
    assert code == 1 and out == ""
    record = json.loads(err)
    assert record["error"] == "ConfigError"


def test_stats_command(capsys, small_dataset):
    code, out, _ = run_cli(capsys, "stats", "--traj-dir", str(small_dataset))
    assert code == 0
    assert json.loads(out)["stats"]["# trajectory"] == 3


def test_gen_twice_is_byte_identical(capsys, tmp_path):
    for d in ("a", "b"):
        code, _, _ = run_cli(capsys, "gen", "--n-traj", "1",
                             "--max-subgoals", "2", "--seed", "11",
                             "--out-dir", str(tmp_path / d))
    assert code == 0
    files_a = sorted((tmp_path / "a").iterdir())
    files_b = sorted((tmp_path / "b").iterdir())
    assert [f.name for f in files_a] == [f.name for f in files_b]
    for fa, fb in zip(files_a, files_b):
        assert fa.read_bytes() == fb.read_bytes()


def test_qa_eval_pipeline(capsys, small_dataset, tmp_path):
    qa_file = tmp_path / "qa.jsonl"
    code, out, _ = run_cli(capsys, "qa", "--traj-dir", str(small_dataset),
                           "--target-count", "20", "--seed", "1",
                           "--out-file", str(qa_file))
    assert code == 0 and qa_file.exists()
    code, out, _ = run_cli(capsys, "eval", "--traj-dir", str(small_dataset),
                           "--agent", "oracle", "--final")
    assert code == 0
    body = json.loads(out)
    assert body["meanReward"] == 1.0


def test_forge_config_supplies_defaults(capsys, tmp_path, monkeypatch):
    cfg = tmp_path / "forge.json"
    cfg.write_text(json.dumps({"rope": {"scale": 4.0, "positions": [100]}}))
    monkeypatch.setenv("FORGE_CONFIG", str(cfg))
    code, out, _ = run_cli(capsys, "rope", "--method", "linear")
    assert code == 0
    assert json.loads(out)["remappedPositions"]["100.0"] == 25.0
    # Explicit flags beat config-file defaults.
    code, out, _ = run_cli(capsys, "rope", "--method", "linear",
                           "--scale", "2")
    assert json.loads(out)["remappedPositions"]["100.0"] == 50.0


def test_bad_forge_config_rejected(tmp_path, monkeypatch):
    cfg = tmp_path / "forge.json"
    cfg.write_text("[1, 2]")
    monkeypatch.setenv("FORGE_CONFIG", str(cfg))
    with pytest.raises(SystemExit):
        cli.main(["rope", "--method", "none"])
