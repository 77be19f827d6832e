import json
import math

import numpy as np
import pytest

import latentplan as lp


def test_two_hot_round_trip():
    rng = np.random.default_rng(0)
    for x in rng.uniform(-2000, 2000, size=200):
        assert abs(lp.categorical_to_scalar(lp.scalar_to_categorical(float(x))) - x) < 1e-4


def test_contract_inverse():
    for y in (-10.0, -0.5, 0.0, 0.25, 7.0):
        assert math.isclose(lp.contract(lp.expand(y)), y, abs_tol=1e-9)


def test_bad_distribution_raises():
    with pytest.raises(ValueError):
        lp.categorical_to_scalar([0.5] + [0.0] * 100)


def test_simnorm_groups_sum_to_one():
    x = np.random.default_rng(1).normal(size=(4, 64))
    y = lp.simnorm(x, group=8)
    assert y.shape == (4, 64)
    np.testing.assert_allclose(y.reshape(4, 8, 8).sum(axis=2), 1.0, atol=1e-12)


def test_visual_match_episode():
    env = lp.VisualMatch(memory_length=2)
    obs = env.reset(seed=3)
    assert obs.shape == (3, 5, 5)
    assert env.max_episode_steps == 18
    done = False
    steps = 0
    while not done:
        obs, reward, done, truncated = env.step(4)
        steps += 1
    assert steps <= 18
    with pytest.raises(RuntimeError):
        env.step(0)


def test_oracle_search_solves_chain():
    env = lp.ChainMdp(length=4)
    env.reset(seed=0)
    result = lp.oracle_search(env, num_simulations=200)
    assert sum(result["visits"]) == 200
    assert int(np.argmax(result["policy"])) == 1


def test_resolve_config_rejects_unknown_keys():
    with pytest.raises(ValueError):
        lp.resolve_config(json.dumps({"env": {"kind": "chain"}, "bogus": 1}))
    resolved = json.loads(lp.resolve_config(json.dumps({"env": {"kind": "chain"}, "model": {"encoder": "mlp"}})))
    assert resolved["search"]["c1"] == 1.25


def test_run_and_evaluate(tmp_path):
    cfg = {
        "seed": 1,
        "out": str(tmp_path / "run"),
        "env": {"kind": "chain", "length": 3},
        "model": {"latent_dim": 16, "layers": 1, "heads": 2, "encoder": "mlp",
                  "mlp_hidden": 16, "head_hidden": 16, "bins": 11},
        "search": {"num_simulations": 6},
        "train": {"total_env_steps": 120, "episodes_per_collect": 4, "batch_size": 4},
        "eval": {"interval": 60, "episodes": 4},
    }
    summary = lp.run_experiment(json.dumps(cfg))
    assert summary["status"] == "completed"
    assert summary["env_steps"] >= 120
    ckpts = sorted((tmp_path / "run" / "checkpoints").glob("ckpt_*.bin"))
    assert ckpts
    result = lp.evaluate_checkpoint(str(ckpts[-1]), episodes=5)
    assert 0.0 <= result["success_rate"] <= 1.0
