import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import MINI_MODEL
from vapors.config import Config, PlateConfig, PolicyConfig, TrainSchedule
from vapors.dynamics import ModelParams, load_checkpoint
from vapors.planner import run_acquire_only_episode, run_heuristic_episode
from vapors.platesim import PlateSim, Spread
from vapors.trainer import (
    OptimizerState,
    ReplayStore,
    adam_step,
    clip_by_global_norm,
    exploration_rate,
    global_norm,
    n_collections,
    plate_symmetry,
    read_metrics,
    train,
)


def scalar_params(value=0.0):
    p = ModelParams.init(MINI_MODEL, 0)
    return ModelParams(p.cfg, {k: np.full_like(v, value) for k, v in p.tensors.items()})


def single_entry_grads(params, value):
    g = params.zeros_like()
    g["rnn.b"][0] = value
    return g


# -- Adam -----------------------------------------------------------------------


def test_first_adam_step_by_hand():
    params = scalar_params()
    new, opt = adam_step(params, single_entry_grads(params, 1.0), OptimizerState.for_params(params))
    # m_hat = v_hat = 1, so the step is lr / (1 + eps)
    assert new["rnn.b"][0] == pytest.approx(-1e-3 / (1 + 1e-4), rel=1e-12)
    assert new["rnn.b"][0] == pytest.approx(-9.999e-4, rel=1e-4)
    assert opt.step == 1


def test_zero_gradient_only_decays_moments():
    params = scalar_params(0.5)
    opt = OptimizerState.for_params(params)
    opt.m["rnn.b"][:] = 0.2
    opt.v["rnn.b"][:] = 0.04
    _, opt2 = adam_step(params, params.zeros_like(), dataclasses.replace(opt, step=5))
    np.testing.assert_allclose(opt2.m["rnn.b"], 0.9 * 0.2)
    np.testing.assert_allclose(opt2.v["rnn.b"], 0.999 * 0.04)
    fresh, _ = adam_step(params, params.zeros_like(), OptimizerState.for_params(params))
    for k in params.tensors:
        np.testing.assert_array_equal(fresh[k], params[k])


def test_clipping_halves_a_gradient_of_norm_2000():
    params = scalar_params()
    g = single_entry_grads(params, 2000.0)
    clipped, norm = clip_by_global_norm(g, 1000.0)
    assert norm == 2000.0
    assert clipped["rnn.b"][0] == pytest.approx(1000.0)
    _, opt = adam_step(params, g, OptimizerState.for_params(params))
    assert opt.m["rnn.b"][0] == pytest.approx(0.1 * 1000.0)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=6), st.floats(1.0, 1e4))
def test_post_clip_norm_bounded(values, clip):
    params = scalar_params()
    g = params.zeros_like()
    g["rnn.b"][: len(values)] = values
    clipped, _ = clip_by_global_norm(g, clip)
    assert global_norm(clipped) <= clip + 1e-6


def test_non_finite_gradient_skips_update():
    params = scalar_params(0.3)
    opt = OptimizerState.for_params(params)
    g = single_entry_grads(params, np.nan)
    new, opt2 = adam_step(params, g, opt)
    assert opt2.last_skipped and opt2.skipped == 1 and opt2.step == 0
    for k in params.tensors:
        np.testing.assert_array_equal(new[k], params[k])


def test_adam_rejects_mismatched_shapes():
    params = scalar_params()
    g = params.zeros_like()
    g["rnn.b"] = np.zeros(3)
    with pytest.raises(ValueError):
        adam_step(params, g, OptimizerState.for_params(params))


@given(st.integers(0, 2**31), st.floats(1e-8, 1e8))
def test_adam_keeps_parameters_finite(seed, scale):
    rng = np.random.default_rng(seed)
    params = ModelParams.init(MINI_MODEL, seed)
    opt = OptimizerState.for_params(params)
    for _ in range(3):
        g = {k: rng.normal(0, scale, v.shape) for k, v in params.tensors.items()}
        params, opt = adam_step(params, g, opt)
    assert params.all_finite()


# -- replay ---------------------------------------------------------------------


@pytest.fixture(scope="module")
def replay():
    sim = PlateSim(PlateConfig(acquire_prob=1.0, acquire_radius_frac=0.3), budget=8)
    store = ReplayStore(seq_len=4)
    for seed in range(4):
        store.append(run_acquire_only_episode(sim, PolicyConfig(), seed, spread=Spread.CLUSTERED))
        store.append(run_heuristic_episode(sim, PolicyConfig(heuristic_threshold=0.05), seed))
    return store


def test_short_episodes_are_padded_with_absorbing_steps(replay):
    short = [i for i, ep in enumerate(replay.episodes) if ep.cleared and len(ep) + 1 < replay.seq_len]
    for i in short:
        arr = replay._arrays[i]
        assert len(arr.obs) == replay.seq_len
        assert not arr.obs[len(replay.episodes[i]) + 1 :].any()
        assert (arr.rewards[len(replay.episodes[i]) + 1 :] == 0).all()


def test_windows_stay_inside_episodes(replay):
    for e, s in replay.sample_windows(np.random.default_rng(0), 200):
        assert 0 <= s and s + replay.seq_len <= len(replay._arrays[e].obs)


def test_windows_match_their_episode(replay):
    windows = replay.sample_windows(np.random.default_rng(1), 16)
    batch = replay.make_batch(windows, np.zeros((16, 4, 30)))
    for b, (e, s) in enumerate(windows):
        np.testing.assert_array_equal(batch.obs[b], replay._arrays[e].obs[s : s + 4])
        assert not batch.actions[b, 0].any()
        np.testing.assert_array_equal(batch.actions[b, 1:], replay._arrays[e].actions[s + 1 : s + 4])


def test_sampling_is_reproducible(replay):
    a = replay.sample_windows(np.random.default_rng(7), 50)
    b = replay.sample_windows(np.random.default_rng(7), 50)
    assert a == b


def test_empty_replay_cannot_sample():
    with pytest.raises(ValueError):
        ReplayStore(4).sample_windows(np.random.default_rng(0), 1)


@pytest.mark.parametrize("code", range(8))
def test_plate_symmetries_match_mirrored_plates(code):
    sim = PlateSim(PlateConfig())
    state = sim.reset(5, 15, Spread.FULL_SPREAD)

    def transform(x, y):
        if code & 1:
            x = -x
        if code & 2:
            y = -y
        if code & 4:
            x, y = y, x
        return x, y

    mirrored = sim.state_from_positions([transform(*it.position) for it in state.items])
    np.testing.assert_array_equal(plate_symmetry(sim.render_mask(state), code), sim.render_mask(mirrored))


# -- schedule -------------------------------------------------------------------


def test_default_schedule_collects_fifteen_episodes():
    assert n_collections(2250, 150) == 15


def test_exploration_decays_linearly():
    assert exploration_rate(0, 15, 0.3, 0.1) == 0.3
    assert exploration_rate(14, 15, 0.3, 0.1) == pytest.approx(0.1)


def _tiny_config():
    return Config(
        train=TrainSchedule(
            updates=12, collect_every=5, seed_episodes=2, batch_size=4, seq_len=4,
            checkpoint_every=5, episode_budget=4,
        ),
        policy=PolicyConfig(horizon=2, budget=4),
    )


def test_training_run_is_deterministic(tmp_path):
    cfg = _tiny_config()
    a = train(cfg, 3, tmp_path / "a")
    b = train(cfg, 3, tmp_path / "b")
    assert a.episodes_collected == 3 == n_collections(12, 5)
    assert len(a.replay) == 5
    for name in ["metrics.csv", "ckpt_0.bin", "ckpt_5.bin", "ckpt_10.bin", "ckpt_12.bin"]:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    rows = read_metrics(a.metrics_path)
    assert [r["step"] for r in rows] == list(range(1, 13))
    assert all(set(r) == {"step", "recon", "kl", "reward_mse", "total"} for r in rows)
    params, step = load_checkpoint(a.checkpoint, cfg.model)
    assert step == 12
    for k in params.tensors:
        np.testing.assert_array_equal(params[k], a.params[k])


def test_training_seed_changes_results(tmp_path):
    cfg = _tiny_config()
    train(cfg, 1, tmp_path / "a")
    train(cfg, 2, tmp_path / "b")
    assert (tmp_path / "a" / "metrics.csv").read_bytes() != (tmp_path / "b" / "metrics.csv").read_bytes()


def test_non_finite_loss_aborts_and_keeps_checkpoint(tmp_path, monkeypatch):
    import vapors.trainer as trainer_mod
    from vapors.dynamics.model import TrainingError

    real = trainer_mod.loss_and_grad
    calls = {"n": 0}

    def flaky(batch, params, weights):
        calls["n"] += 1
        if calls["n"] == 8:
            raise TrainingError("non-finite loss nan", batch.batch_id)
        return real(batch, params, weights)

    monkeypatch.setattr(trainer_mod, "loss_and_grad", flaky)
    with pytest.raises(TrainingError) as err:
        train(_tiny_config(), 0, tmp_path)
    assert err.value.batch_id == 8
    assert (tmp_path / "ckpt_5.bin").exists() and not (tmp_path / "ckpt_10.bin").exists()
    assert len(read_metrics(tmp_path / "metrics.csv")) == 7
