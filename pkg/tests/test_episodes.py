import json

import numpy as np
import pytest

from vapors.config import PlateConfig, PolicyConfig
from vapors.episodes import EpisodeLog
from vapors.planner import run_acquire_only_episode
from vapors.platesim import PlateSim


@pytest.fixture
def episode():
    return run_acquire_only_episode(PlateSim(PlateConfig(), budget=8), PolicyConfig(), 3)


def test_jsonl_layout(episode):
    lines = episode.to_jsonl().splitlines()
    assert json.loads(lines[0])["type"] == "episode"
    assert len(lines) == 1 + len(episode)
    assert all(json.loads(line)["type"] == "transition" for line in lines[1:])


def test_round_trip_is_exact(episode):
    back = EpisodeLog.from_jsonl(episode.to_jsonl())
    assert back.to_jsonl() == episode.to_jsonl()
    for a, b in zip(back.transitions, episode.transitions):
        assert a.reward == b.reward
        np.testing.assert_array_equal(a.obs_after, b.obs_after)


def test_stored_rewards_recompute_bit_exactly(episode):
    for t in episode.transitions:
        assert episode.recompute_reward(t) == t.reward


def test_cumulative_fraction_is_monotone_and_carried_forward(episode):
    curve = episode.cumulative_pickup_fraction(12)
    assert curve[0] == 0.0
    assert np.all(np.diff(curve) >= 0)
    assert curve[-1] == episode.total_pickup / episode.initial_count
    assert 0.0 <= curve.max() <= 1.0


def test_header_count_must_match(episode):
    lines = episode.to_jsonl().splitlines()
    with pytest.raises(ValueError):
        EpisodeLog.from_jsonl("\n".join(lines[:-1]))
    with pytest.raises(ValueError):
        EpisodeLog.from_jsonl("\n".join(lines[1:]))
