import json

import pytest

from popkit import experiments
from popkit.main import main

QUIET = ["--quiet", "--no-timestamp"]


def _run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def _body(csv_text):
    return [line for line in csv_text.splitlines() if not line.startswith("#")]


def test_sac_csv(capsys):
    code, out, _ = _run(capsys, "sac", "--size", "4", "--hw", "2", "--instances", "3",
                        "--challenges", "100", *QUIET)
    assert code == 0
    body = _body(out)
    assert body[0] == "shift,prob,stderr"
    assert len(body) == 1 + 3
    assert "# command: sac" in out


def test_auth_sim_zero_ber(capsys):
    code, out, _ = _run(capsys, "auth-sim", "--ber", "0", "--crps", "100", "--trials", "1000",
                        "--format", "json", *QUIET)
    assert code == 0
    doc = json.loads(out)
    row = dict(zip(doc["columns"], doc["rows"][0]))
    assert row["failure"] == 0
    assert row["exact"] == 0
    assert row["threshold"] == 95


def test_unknown_flag_is_usage_error(capsys):
    code, _, err = _run(capsys, "sac", "--bogus")
    assert code == 1
    assert "--bogus" in err


def test_invalid_value_names_flag(capsys):
    code, out, err = _run(capsys, "gen-instance", "--votes", "4", *QUIET)
    assert code == 1
    assert out == ""
    assert "--votes" in err


def test_gen_instance_lists_weights(capsys):
    code, out, _ = _run(capsys, "gen-instance", "--kind", "apuf", "--size", "8", *QUIET)
    assert code == 0
    body = _body(out)
    assert body[0] == "param,value"
    assert sum(line.startswith("w") for line in body) == 9


def test_reproduce_is_byte_identical(capsys):
    argv = ["reproduce", "fig9b", "--instances", "4", "--challenges", "200", "--seed", "1",
            *QUIET]
    _, first, _ = _run(capsys, *argv)
    _, second, _ = _run(capsys, *argv)
    code, threaded, _ = _run(capsys, *argv, "--threads", "4")
    assert code == 0
    assert first == second == threaded
    assert _body(first)[0] == "size,instances,challenges,prob,stderr,analytic"


TINY_RUNS = {
    "fig4": ["--trials", "2000"],
    "fig9a": ["--instances", "2", "--challenges", "50"],
    "fig9b": ["--instances", "2", "--challenges", "50"],
    "fig10": ["--instances", "2", "--crps", "100"],
    "fig11a": ["--instances", "2", "--challenges", "50"],
    "fig11b": ["--instances", "2", "--challenges", "50"],
    "table2": ["--crps", "200"],
    "quality": ["--instances", "2", "--challenges", "50", "--reevals", "2"],
}


def test_every_target_has_a_tiny_run():
    assert set(TINY_RUNS) == set(experiments.TARGETS)


@pytest.mark.parametrize("target", sorted(TINY_RUNS))
def test_reproduce_ignores_thread_count(target, capsys):
    argv = ["reproduce", target, *TINY_RUNS[target], "--seed", "3", *QUIET]
    code, single, _ = _run(capsys, *argv, "--threads", "1")
    assert code == 0
    _, threaded, _ = _run(capsys, *argv, "--threads", "8")
    assert single == threaded


def test_unknown_reproduce_target(capsys):
    code, _, err = _run(capsys, "reproduce", "fig99", *QUIET)
    assert code == 1
    assert "fig99" in err


def test_gen_crps_then_attack(tmp_path, capsys):
    base = tmp_path / "crps"
    code, _, _ = _run(capsys, "gen-crps", "--kind", "apuf", "--size", "16", "--crps", "2000",
                      "--out", str(base), *QUIET)
    assert code == 0
    assert (tmp_path / "crps.json").is_file()
    assert (tmp_path / "crps.csv").is_file()

    code, out, _ = _run(capsys, "attack-lr", "--input", str(base), "--format", "json", *QUIET)
    assert code == 0
    report = json.loads(out)
    assert report["kind"] == "lr"
    assert report["crp_count"] == 2000
    assert report["target"]["n_stages"] == 16
    assert "training_seconds" not in report
    assert report["test_accuracy"] > 0.8


def test_saved_config_reproduces_output(tmp_path, capsys):
    saved = tmp_path / "run.env"
    _, first, _ = _run(capsys, "stage-bias", "--size", "4", "--instances", "5", "--crps", "300",
                       "--seed", "7", "--save-config", str(saved), *QUIET)
    code, second, _ = _run(capsys, "stage-bias", "--config", str(saved), "--quiet")
    assert code == 0
    assert saved.is_file()
    assert first == second


def test_gen_crps_needs_out(capsys):
    code, _, err = _run(capsys, "gen-crps", "--kind", "apuf", "--size", "8", *QUIET)
    assert code == 1
    assert "--out" in err


def test_missing_input_is_runtime_failure(tmp_path, capsys):
    code, _, _ = _run(capsys, "attack-lr", "--input", str(tmp_path / "nothing"), *QUIET)
    assert code == 2


def test_malformed_crp_file(tmp_path, capsys):
    base = tmp_path / "crps"
    _run(capsys, "gen-crps", "--kind", "apuf", "--size", "8", "--crps", "20",
         "--out", str(base), *QUIET)
    body = tmp_path / "crps.csv"
    body.write_text(body.read_text().replace(",0\n", ",7\n", 1).replace(",1\n", ",7\n", 1))
    code, _, err = _run(capsys, "attack-lr", "--input", str(base), *QUIET)
    assert code == 1
    assert "crps.csv" in err


@pytest.mark.parametrize("command", ["metrics", "hd-rounds"])
def test_small_runs_succeed(command, capsys):
    code, out, _ = _run(capsys, command, "--k", "2", "--width", "8", "--instances", "2",
                        "--challenges", "50", *QUIET)
    assert code == 0
    assert len(_body(out)) > 1


def test_auth_sim_true_ber_defaults_to_policy_ber(capsys):
    code, out, _ = _run(capsys, "auth-sim", "--ber", "0.1", "--crps", "200", "--trials", "1000",
                        "--format", "json", *QUIET)
    assert code == 0
    doc = json.loads(out)
    row = dict(zip(doc["columns"], doc["rows"][0]))
    assert row["true_ber"] == row["ber"] == 0.1
    assert row["exact"] == pytest.approx(0.0097, abs=0.0005)


def test_auth_sim_perfect_device_never_fails(capsys):
    code, out, _ = _run(capsys, "auth-sim", "--ber", "0.1", "--true-ber", "0", "--crps", "200",
                        "--trials", "1000", "--format", "json", *QUIET)
    assert code == 0
    doc = json.loads(out)
    row = dict(zip(doc["columns"], doc["rows"][0]))
    assert row["threshold"] == 170
    assert row["true_ber"] == 0
    assert row["failure"] == 0
    assert row["exact"] == 0


def test_auth_sim_rejects_true_ber_above_one(capsys):
    code, _, err = _run(capsys, "auth-sim", "--true-ber", "1.5", *QUIET)
    assert code == 1
    assert "--true-ber" in err


def test_metrics_default_noise_gives_errors(capsys):
    code, out, _ = _run(capsys, "metrics", "--kind", "apuf", "--size", "16", "--instances", "2",
                        "--challenges", "2000", "--reevals", "5", "--format", "json", *QUIET)
    assert code == 0
    rows = {row[0]: row for row in json.loads(out)["rows"]}
    assert rows["ber"][1] == "apuf noise=0.1"
    assert rows["ber"][2] > 0


def test_attack_mlp_rejects_unknown_preset(capsys):
    code, _, err = _run(capsys, "attack-mlp", "--preset", "huge", *QUIET)
    assert code == 1
    assert "--preset" in err
