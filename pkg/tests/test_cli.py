import json

import pytest

from hybridmpc import cli, io

TINY = {
    "race": {"n_laps": 6, "fuel_budget": 30.0},
    "sac": {"episodes": 4, "warmup_steps": 10, "batch_size": 8, "buffer_capacity": 1000,
            "cost_offset": 90.0, "discount": 0.9999, "actor_hidden": [8], "critic_hidden": [8, 8]},
    "controller": {"horizon": 3, "horizons": [2]},
    "enumeration": {"max_stops": 1},
    "checkpoint": "ckpt",
}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "tiny.json").write_text(json.dumps(TINY))
    rc = cli.main(["train", "--config", str(d / "tiny.json"), "--out", str(d / "train"),
                   "--checkpoint", str(d / "ckpt")])
    assert rc == 0
    return d


def run(d, *argv):
    return cli.main([*argv, "--config", str(d / "tiny.json")])


def test_train_outputs(workdir):
    meta, rows = io.read_csv(workdir / "train" / "training_log.csv")
    assert meta["schema"] == "training_log v1" and len(rows) == 4
    assert (workdir / "ckpt" / "actor.json").is_file()


def test_eval_and_hybrid(workdir):
    out = workdir / "runs"
    assert run(workdir, "eval-rl", "--out", str(out)) == 0
    assert run(workdir, "run-hybrid", "--out", str(out), "--horizon", "3") == 0
    meta, rows = io.read_csv(out / "hybrid_N3.csv")
    assert meta["schema"] == "closed_loop v1" and len(rows) == 6
    summary = json.loads((out / "hybrid_N3.json").read_text())
    assert summary["manifest"]["hash"] == meta["manifest"]


def test_rerun_is_byte_identical(workdir):
    out = workdir / "rerun"
    assert run(workdir, "run-hybrid", "--out", str(out)) == 0
    first = (out / "hybrid_N3.csv").read_bytes()
    assert run(workdir, "run-hybrid", "--out", str(out)) == 0
    assert (out / "hybrid_N3.csv").read_bytes() == first


def test_oracle_then_benchmark(workdir):
    out = workdir / "bench"
    assert run(workdir, "run-oracle", "--out", str(out)) == 0
    assert run(workdir, "benchmark", "--out", str(out), "--oracle-summary", str(out / "oracle.json")) == 0
    _, rows = io.read_csv(out / "benchmark.csv")
    assert [r["method"] for r in rows] == ["oracle", "rl", "hybrid", "hybrid"]
    assert [int(r["horizon"]) for r in rows[2:]] == [2, 6]
    assert all(r["status"] == "ok" for r in rows)
    best = json.loads((out / "oracle.json").read_text())["best_time"]
    for r in rows[1:]:
        assert float(r["gap"]) == pytest.approx(float(r["race_time"]) - best)


def test_traffic_and_critic_trace(workdir):
    out = workdir / "extra"
    assert run(workdir, "traffic-compare", "--out", str(out)) == 0
    assert run(workdir, "critic-trace", "--out", str(out)) == 0
    assert io.read_csv(out / "traffic_trace.csv")[0]["schema"] == "traffic_trace v1"
    assert len(io.read_csv(out / "critic_trace.csv")[1]) == 6


def test_missing_config_names_path(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    assert cli.main(["eval-rl", "--config", str(missing), "--out", str(tmp_path)]) == 2
    assert str(missing) in capsys.readouterr().err


def test_bad_field_reports_path(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"race": {"n_laps": 6, "fuel_budget": 30.0}, "sac": {"episodez": 3}}))
    assert cli.main(["validate-config", str(p)]) == 2
    assert "sac.episodez" in capsys.readouterr().err


def test_validate_config_ok(workdir, capsys):
    assert cli.main(["validate-config", str(workdir / "tiny.json")]) == 0
    assert "ok" in capsys.readouterr().out


def test_missing_checkpoint_is_config_error(tmp_path):
    cfg = dict(TINY, checkpoint=None)
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg))
    assert cli.main(["eval-rl", "--config", str(p), "--out", str(tmp_path)]) == 2


def test_schema_self_test():
    assert cli.main(["schema-self-test"]) == 0


def test_unknown_verb_exits_with_usage():
    with pytest.raises(SystemExit) as e:
        cli.main(["fly"])
    assert e.value.code == 2
