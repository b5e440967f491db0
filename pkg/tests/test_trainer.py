from dataclasses import replace

import numpy as np
import pytest

from pbl.belief import BeliefConfig
from pbl.core import DeckSpec
from pbl.data import gen_deals, score_deals, train_test_seeds
from pbl.matrix import default_matrix_spec
from pbl.neural import load_params
from pbl.scoring import DDAConfig
from pbl.tasks import DISTRIBUTED, BridgeTask, MatrixTask
from pbl.trainer import LOG_COLUMNS, ConfigError, TrainerConfig, desk_profile, read_log, run_pbl, write_log

SMALL_BELIEF = BeliefConfig(episodes=200, batch_size=64, max_epochs=3, hidden=(16,))


def small(**kw):
    base = TrainerConfig(episodes_per_update=32, minibatch_episodes=16, pg_updates=3, pbl_iters=2,
                         eval_every=1, policy_lr=1e-3, belief=SMALL_BELIEF)
    return replace(base, **kw)


@pytest.fixture(scope="module")
def bridge_task():
    deck = DeckSpec.mini()
    s_train, s_test = train_test_seeds(11)
    cfg = DDAConfig(samples=2, seed=0)
    train = score_deals(gen_deals(deck, 120, s_train), cfg)
    test = score_deals(gen_deals(deck, 30, s_test, exclude=train), cfg)
    return BridgeTask(deck, train, test, hidden=(16,), belief_hidden=(16,))


@pytest.mark.parametrize("changes", [
    dict(mode=DISTRIBUTED, baseline="IP"),
    dict(baseline="XYZ"),
    dict(alpha0=-1.0),
    dict(pbl_iters=0),
    dict(gamma=0.0),
    dict(tau=0.0),
])
def test_config_errors(changes):
    with pytest.raises(ConfigError):
        replace(TrainerConfig(), **changes).validate()


def test_alpha_schedule_and_switches():
    cfg = TrainerConfig()
    assert cfg.alpha(0) == 5.0
    assert cfg.alpha(2) == pytest.approx(5.0 * 0.49)
    assert replace(cfg, baseline="NCR").alpha(0) == 0.0
    assert replace(cfg, baseline="IP").belief_input_zeroed
    assert replace(cfg, baseline="NPBI").uses_comm_reward


def test_desk_profile():
    d = desk_profile()
    assert (d.episodes_per_update, d.minibatch_episodes, d.pbl_iters) == (512, 256, 4)
    assert d.pg_updates == 200 and d.alpha0 == 5.0


def test_zero_updates_keep_pretrained_policy(bridge_task):
    rng = np.random.default_rng(0)
    cfg = small(pbl_iters=1, pg_updates=0)
    agents = bridge_task.init_agents(rng)
    bridge_task.pretrain(agents, 5, cfg.tau, 1e-3, 32, rng)
    before = [p.copy() for p in agents.policies["bid"].params]
    res = run_pbl(bridge_task, cfg, rng, agents=agents)
    assert all(np.array_equal(a, b) for a, b in zip(before, res.agents.policies["bid"].params))
    assert len(res.belief_fits) == 1
    assert res.agents.beliefs["shared"] is res.belief_fits[0].net


def test_pretraining_lowers_loss(bridge_task):
    cfg = small(pretrain_steps=40, pretrain_batch=64, pretrain_lr=3e-3, pg_updates=0, pbl_iters=1)
    res = run_pbl(bridge_task, cfg, np.random.default_rng(1))
    assert np.mean(res.pretrain_losses[-5:]) < np.mean(res.pretrain_losses[:5])


def test_npbi_matches_update_count(bridge_task):
    pbl = run_pbl(bridge_task, small(), np.random.default_rng(2))
    npbi = run_pbl(bridge_task, small(baseline="NPBI"), np.random.default_rng(2))
    assert pbl.log[-1]["pg_update"] == npbi.log[-1]["pg_update"] == 6
    assert len(pbl.belief_fits) == 2
    assert len(npbi.belief_fits) == 1
    # NPBI keeps its first belief for the whole run
    assert len({row["belief_val_loss"] for row in npbi.log}) == 1


def test_distributed_fits_two_models(bridge_task):
    res = run_pbl(bridge_task, small(mode=DISTRIBUTED, pbl_iters=1, pg_updates=1), np.random.default_rng(3))
    assert set(res.agents.beliefs) == {"N", "S"}
    assert res.agents.beliefs["N"] is not res.agents.beliefs["S"]


def test_runs_are_reproducible():
    task = MatrixTask(default_matrix_spec(), hidden=(8,), belief_hidden=(8,))
    a = run_pbl(task, small(), np.random.default_rng(5))
    b = run_pbl(task, small(), np.random.default_rng(5))
    assert a.log == b.log
    assert all(row["wallclock"] == 0.0 for row in a.log)


def test_ip_degeneracy_on_matrix():
    task = MatrixTask(default_matrix_spec(), hidden=(8,), belief_hidden=(8,))
    a = run_pbl(task, small(alpha0=0.0, zero_belief=True), np.random.default_rng(6))
    b = run_pbl(task, small(baseline="IP"), np.random.default_rng(6))
    assert a.log == b.log


def test_log_roundtrip_and_checkpoints(tmp_path):
    task = MatrixTask(default_matrix_spec(), hidden=(8,), belief_hidden=(8,))
    res = run_pbl(task, small(), np.random.default_rng(7), out_dir=tmp_path)
    write_log(tmp_path / "log.csv", res.log)
    assert (tmp_path / "log.csv").read_text().splitlines()[0] == ",".join(LOG_COLUMNS)
    back = read_log(tmp_path / "log.csv")
    assert back == res.log
    for k in range(2):
        nets, meta = load_params(tmp_path / f"checkpoint_iter{k}.bin")
        assert meta["pbl_iter"] == k
        assert {"policy.p1", "policy.p2", "belief.p2"} <= set(nets)
