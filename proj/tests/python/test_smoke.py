import math
import os

import pytest

import mesa


def test_climb_rewards():
    assert mesa.stage_reward(2, 1, 0, 0.5, [0, 1]) == 1.0
    assert mesa.stage_reward(2, 1, 0, 0.5, [1, 2]) == 0.5
    assert mesa.stage_reward(2, 1, 0, 0.5, [0, 0]) == 0.0


def test_equilibria():
    eq = mesa.classify_equilibria(2, 3, 2, 1)
    assert eq["optimal"] == [[1, 1]]
    assert len(eq["suboptimal_ne"]) == 4


def test_densify():
    out = mesa.densify([0.0, 0.0, 1.0], 0.05)
    assert out == pytest.approx([0.0025, 0.05, 1.0])


def test_uniform_threshold():
    assert mesa.min_exploration_steps("uniform", 3, 1.0 / 6) == (24, False)
    assert mesa.uniform_lambda_threshold(3, 1.0 / 6) == pytest.approx(24.0)
    assert mesa.criterion_holds(1, 4, 4, 3, 24.0, 1.0 / 6)
    assert not mesa.criterion_holds(1, 4, 4, 3, 23.0, 1.0 / 6)


def test_errors_carry_kind(tmp_path):
    bad = tmp_path / "bad.conf"
    bad.write_text("gamm = 0.9\n")
    with pytest.raises(mesa.MesaError) as info:
        mesa.parse_config(str(bad))
    assert info.value.kind == "invalid-config"
    assert "gamm" in str(info.value)
    with pytest.raises(mesa.MesaError):
        mesa.min_exploration_steps("greedy", 3, 0.1)


def test_config_defaults(tmp_path):
    cfg = tmp_path / "min.conf"
    cfg.write_text("space.variant = one_step\nseeds = 1\n")
    doc = mesa.parse_config(str(cfg))
    assert doc["meta.relabel_gamma"] == "0.050000000000000003"
    assert doc["meta.fd_exponent"] == "5"
    assert doc["seeds"] == "1"


def test_theory_run(tmp_path):
    cfg = tmp_path / "t.conf"
    cfg.write_text("theory.U = 3\ntheory.delta = 0.16666666666666666\n")
    out = tmp_path / "out"
    assert mesa.run("theory", str(cfg), out=str(out)) == []
    rows = (out / "theory_thresholds.csv").read_text().splitlines()
    uniform = [r for r in rows if r.startswith("uniform,")]
    assert uniform[0].split(",")[4] == "24"
    assert os.path.exists(out / "config.conf")


def test_tiny_reproduce(tmp_path):
    cfg = tmp_path / "r.conf"
    cfg.write_text(
        "\n".join(
            [
                "space.U = 3",
                "tasks.train = 2",
                "tasks.test = 1",
                "meta.E = 1",
                "meta.collection_steps = 400",
                "meta.training_steps = 400",
                "meta.min_training_steps = 400",
                "meta.clusters = 2",
                "meta.collect.warmup_steps = 400",
                "meta.explore.warmup_steps = 100",
                "test.steps = 300",
                "test.eval_interval = 100",
                "test.learner.warmup_steps = 100",
            ]
        )
        + "\n"
    )
    rows = mesa.run("reproduce", str(cfg), seed=3, out=str(tmp_path / "o"))
    finals = {r["arm"]: r for r in rows if r["metric"] == "final_return"}
    assert set(finals) == {"mesa", "vanilla"}
    assert finals["mesa"]["seeds"] == [3]
    assert all(0.0 <= r["mean"] <= 1.0 and not math.isnan(r["std"]) for r in finals.values())
