"""End-to-end checks against the evaluator, strictly over its external
interfaces: the `forge` command line and the stdio wire protocol."""
import json
import pathlib
import subprocess
import sys

import pytest

FUZZ_TIMEOUT = 10  # seconds; anything slower counts as a hang


def run_forge(*argv, timeout=300):
    return subprocess.run(["forge", *argv], capture_output=True, text=True,
                          timeout=timeout)


@pytest.fixture(scope="module")
def traj_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("loopback")
    result = run_forge("gen", "--n-traj", "1", "--max-subgoals", "2",
                       "--seed", "11", "--out-dir", str(out))
    assert result.returncode == 0, result.stderr
    return out


def _traj_file(traj_dir) -> pathlib.Path:
    return next(traj_dir.glob("traj-*.jsonl"))


def test_oracle_agent_completes_episode_over_wire(traj_dir):
    agent = (f"forge-agent --policy oracle --strict-context "
             f"--trajectory {_traj_file(traj_dir)}")
    result = run_forge("eval", "--traj-dir", str(traj_dir), "--agent", agent)
    assert result.returncode == 0, result.stderr
    report = json.loads(result.stdout)["reports"][0]
    assert all(o["success"] for o in report["planOutcomes"])
    assert report["totalReward"] == len(report["planOutcomes"])


def test_random_agent_runs_without_protocol_failures(traj_dir):
    result = run_forge("eval", "--traj-dir", str(traj_dir),
                       "--agent", "forge-agent --policy random --seed 3")
    assert result.returncode == 0, result.stderr
    report = json.loads(result.stdout)["reports"][0]
    for outcome in report["planOutcomes"]:
        assert outcome["failureReason"] != "ProtocolError"


def test_misbehaving_agent_yields_protocol_error_not_crash(traj_dir):
    # An agent that closes its stream immediately.
    result = run_forge("eval", "--traj-dir", str(traj_dir),
                       "--agent", f"{sys.executable} -c pass")
    assert result.returncode == 0, result.stderr
    report = json.loads(result.stdout)["reports"][0]
    assert report["planOutcomes"][0]["failureReason"] == "ProtocolError"
    assert report["totalReward"] == 0.0


TRUNCATED_STREAMS = [
    b'{"type": "init", "protocol": "1.0"',          # cut mid-message
    b'{"type": "init", "protocol": "1.0"}\n{"ty',   # cut on the second line
    b'{"type": "observe"}\n',                        # observe before init
    b'{"type": "init", "protocol": "9.9", "config": {}}\n',  # wrong major
    b"\x00\xff\xfe garbage\n",
    b"",                                             # immediate EOF
]


@pytest.mark.parametrize("stream", TRUNCATED_STREAMS)
def test_fuzzed_input_never_hangs_the_agent(stream):
    proc = subprocess.Popen(["forge-agent", "--policy", "random"],
                            stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                            stderr=subprocess.PIPE)
    try:
        out, err = proc.communicate(stream, timeout=FUZZ_TIMEOUT)
    except subprocess.TimeoutExpired:
        proc.kill()
        pytest.fail("agent hung on truncated input")
    assert proc.returncode == 1
    # The failure is explained on stderr or via an error message on stdout.
    assert err.strip() or b'"error"' in out


def test_fuzzed_mid_episode_truncation(traj_dir):
    """Valid init, then the stream dies mid-observe."""
    payload = (b'{"type": "init", "protocol": "1.0", "goal": "g", '
               b'"config": {"planKey": 0, "tokenBudget": 1000}}\n'
               b'{"type": "observe", "contextTok')
    proc = subprocess.Popen(
        ["forge-agent", "--policy", "oracle", "--trajectory",
         str(_traj_file(traj_dir))],
        stdin=subprocess.PIPE, stdout=subprocess.PIPE, stderr=subprocess.PIPE)
    try:
        out, err = proc.communicate(payload, timeout=FUZZ_TIMEOUT)
    except subprocess.TimeoutExpired:
        proc.kill()
        pytest.fail("agent hung on mid-episode truncation")
    assert proc.returncode == 1
    assert out.splitlines()[0] == b'{"type": "ready"}'
