"""Acceptance suite: one test per headline criterion.

Each test prints a single ``PASS``/``FAIL`` line (visible even when pytest
captures output) before asserting, so ``pytest tests/test_acceptance.py -s``
or the plain run doubles as a report.  The trained model is produced once
per session with the default configuration and shared by the training-health
and policy-ordering checks.
"""

import dataclasses
import math
import time

import numpy as np
import pytest

from conftest import MINI_MODEL
from gradcheck import check_gradients, random_batch, random_params
from oracles import (
    TableModel,
    brute_hull_area,
    direct_blur,
    enumerate_best,
    random_table,
    scan_argmax,
    scan_masked_argmin,
)
from vapors.cli import main as cli_main
from vapors.config import Config, PolicyConfig
from vapors.dynamics.layers import gaussian_kl
from vapors.dynamics.model import loss
from vapors.geometry import hull_area
from vapors.grids import write_pbm, write_pgm
from vapors.harness import ExperimentConfig, run_experiment
from vapors.perception import background_subtract_label, densest_pixel, dice_loss, furthest_pixel, gaussian_blur
from vapors.planner import plan, run_random_episode
from vapors.platesim import EpisodeOver, LowLevelAction, PlateSim, PrimitiveKind, Spread
from vapors.trainer import reward_predictions, train

TRAIN_SEED = 0
HELD_OUT_EPISODES = 60


@pytest.fixture
def report(capsys):
    def _report(name: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        assert ok, f"{name}: {detail}"

    return _report


@pytest.fixture(scope="session")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("trained")
    start = time.perf_counter()
    result = train(Config(), TRAIN_SEED, out)
    return result, time.perf_counter() - start


# -- policy ordering ------------------------------------------------------------


def test_policy_ordering(trained, tmp_path, report):
    result, _ = trained
    start = time.perf_counter()
    seeds = tuple(range(20))
    half = run_experiment(
        ExperimentConfig(seeds=seeds, spread="half", out_dir=str(tmp_path / "half"), checkpoint=str(result.checkpoint))
    )
    full = run_experiment(
        ExperimentConfig(
            seeds=seeds, spread="full", policies=("vapors", "acquire"),
            out_dir=str(tmp_path / "full"), checkpoint=str(result.checkpoint),
        )
    )
    elapsed = time.perf_counter() - start
    final = {p: c.mean[-1] for p, c in half.curves.items()}
    v_full, a_full = full.curves["vapors"].mean[-1], full.curves["acquire"].mean[-1]
    ok = (
        final["vapors"] >= final["heuristic"]
        and final["vapors"] >= final["acquire"]
        and v_full >= 1.1 * a_full
        and elapsed < 600
    )
    detail = (
        f"half: vapors {final['vapors']:.3f} heuristic {final['heuristic']:.3f} acquire {final['acquire']:.3f}; "
        f"full: vapors {v_full:.3f} vs 1.1 x acquire {1.1 * a_full:.3f}; {elapsed:.0f}s"
    )
    report("policy ordering", ok, detail)


# -- planner exactness ----------------------------------------------------------


def test_planner_exactness(report):
    rng = np.random.default_rng(2024)
    obs = [np.zeros((8, 8))]
    mismatches = 0
    start = time.perf_counter()
    for i in range(100):
        k, h = 2, 1 + i % 5
        table = random_table(rng, k, h, discrete=i % 4 == 1)
        result = plan(obs, [], TableModel(table, k), PolicyConfig(horizon=h))
        best, _ = enumerate_best(table, k, h)
        mismatches += tuple(int(p) for p in result.best_sequence) != best
    elapsed = time.perf_counter() - start
    report("planner exactness", mismatches == 0 and elapsed < 1.0, f"{mismatches}/100 mismatches in {elapsed:.3f}s")


# -- gradient correctness -------------------------------------------------------


def test_gradient_correctness(report):
    rng = np.random.default_rng(11)
    start = time.perf_counter()
    worst = 0.0
    for point in range(50):
        params = random_params(MINI_MODEL, rng)
        batch = random_batch(MINI_MODEL, rng)
        # one exhaustive point, sampled entries elsewhere to stay within budget
        errors = check_gradients(params, batch, max_entries=None if point == 0 else 6, rng=rng)
        worst = max(worst, max(errors.values()))
    elapsed = time.perf_counter() - start
    report("gradient correctness", worst < 1e-4 and elapsed < 60, f"max relative error {worst:.2e} in {elapsed:.1f}s")


# -- training health ------------------------------------------------------------


def test_training_health(trained, report):
    result, elapsed = trained
    totals = np.array([row["total"] for row in result.metrics])
    assert len(totals) == 2250 and result.episodes_collected == 15
    ratio = totals[-1] / totals[:50].mean()

    sim = PlateSim(budget=8)
    rng = np.random.default_rng(999)
    spreads = list(Spread)
    held_out = [
        run_random_episode(sim, 8, 10_000 + i, rng, 15, spreads[i % len(spreads)]) for i in range(HELD_OUT_EPISODES)
    ]
    predicted, actual = reward_predictions(result.params, held_out)
    r = float(np.corrcoef(predicted, actual)[0, 1])
    ok = ratio < 0.5 and r >= 0.7 and elapsed < 1800
    detail = f"final/initial loss {ratio:.3f}; held-out reward Pearson r {r:.3f} over {len(actual)} transitions; {elapsed:.0f}s"
    report("training health", ok, detail)


# -- labeler fidelity -----------------------------------------------------------


def test_labeler_fidelity(report):
    sim = PlateSim()
    spreads = list(Spread)
    start = time.perf_counter()
    dices = []
    for i in range(50):
        state = sim.reset(500 + i, 15 if i % 2 else 40, spreads[i % len(spreads)])
        label = background_subtract_label(sim.background(noise_seed=2 * i), sim.render_gray(state, noise_seed=2 * i + 1), 20)
        dices.append(1.0 - dice_loss(label, sim.render_mask(state)))
    elapsed = time.perf_counter() - start
    ok = min(dices) >= 0.95 and elapsed < 10
    report("labeler fidelity", ok, f"min Dice {min(dices):.4f}, mean {np.mean(dices):.4f} in {elapsed:.2f}s")


# -- geometry oracles -----------------------------------------------------------


def test_geometry_oracles(report):
    rng = np.random.default_rng(5)
    worst = 0.0
    for i in range(200):
        n = int(rng.integers(3, 25))
        pts = rng.uniform(-1, 1, (n, 2))
        if i % 5 == 0:  # lattice points produce collinear and duplicate vertices
            pts = rng.integers(-3, 4, (n, 2)).astype(float)
        got, want = hull_area(pts), brute_hull_area(pts)
        worst = max(worst, abs(got - want) / max(abs(want), 1e-300) if want else abs(got))

    pixel_mismatches = 0
    for i in range(50):
        mask = (rng.random((32, 32)) < rng.uniform(0.02, 0.4)).astype(np.uint8)
        if not mask.any():
            mask[int(rng.integers(32)), int(rng.integers(32))] = 1
        sigma = float(rng.choice([1.0, 2.0, 3.0]))
        fast, slow = gaussian_blur(mask, sigma), direct_blur(mask, sigma)
        pixel_mismatches += densest_pixel(fast) != scan_argmax(slow)
        pixel_mismatches += furthest_pixel(fast, mask) != scan_masked_argmin(slow, mask)
    ok = worst <= 1e-9 and pixel_mismatches == 0
    report("geometry oracles", ok, f"hull max relative error {worst:.1e} on 200 sets; {pixel_mismatches} keypoint mismatches on 50 masks")


# -- determinism ----------------------------------------------------------------


def _tree(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_cli_determinism(tmp_path, report):
    sim = PlateSim()
    state = sim.reset(3, 15)
    write_pgm(tmp_path / "empty.pgm", sim.background(noise_seed=1))
    write_pgm(tmp_path / "current.pgm", sim.render_gray(state, noise_seed=2))
    write_pbm(tmp_path / "obs.pbm", sim.render_mask(state))
    (tmp_path / "tiny.toml").write_text(
        "[train]\nupdates = 8\ncollect_every = 4\nseed_episodes = 2\nbatch_size = 4\n"
        "seq_len = 4\ncheckpoint_every = 4\nepisode_budget = 4\n[policy]\nhorizon = 2\n"
    )
    cfg = str(tmp_path / "tiny.toml")
    invocations = {
        "sim-collect": ["sim-collect", "--episodes", "3", "--seed", "5", "--spread", "full"],
        "train": ["train", "--config", cfg, "--seed", "9"],
        "eval": ["eval", "--seeds", "0..3", "--policy", "acquire", "--policy", "heuristic"],
        "label": ["label", "--empty", str(tmp_path / "empty.pgm"), "--current", str(tmp_path / "current.pgm")],
    }
    differing = []
    for name, argv in invocations.items():
        trees = []
        for run in ("a", "b"):
            out = tmp_path / name / run
            assert cli_main(argv + ["--out", str(out)]) == 0
            trees.append(_tree(out))
        if trees[0] != trees[1] or not trees[0]:
            differing.append(name)

    ckpt = next((tmp_path / "train" / "a").glob("ckpt_8.bin"))
    for run in ("a", "b"):
        argv = ["plan", "--config", cfg, "--ckpt", str(ckpt), "--obs", str(tmp_path / "obs.pbm"),
                "--out", str(tmp_path / "plan" / run)]
        assert cli_main(argv) == 0
    if _tree(tmp_path / "plan" / "a") != _tree(tmp_path / "plan" / "b"):
        differing.append("plan")
    report("determinism", not differing, f"{len(invocations) + 1} subcommands rerun; differing: {differing or 'none'}")


# -- invariant suites -----------------------------------------------------------


def test_invariant_suites(report):
    rng = np.random.default_rng(77)
    failures = []

    for _ in range(200):  # hull area never shrinks when a point is added
        pts = rng.uniform(-1, 1, (int(rng.integers(1, 12)), 2))
        extra = rng.uniform(-1, 1, (1, 2))
        if hull_area(np.vstack([pts, extra])) < hull_area(pts) - 1e-12:
            failures.append("hull monotonicity")
            break

    for _ in range(200):  # closed-form KL is non-negative
        mq, lq, mp, lp = (rng.normal(0, 2, (4, 5)) for _ in range(4))
        if (gaussian_kl(mq, np.clip(lq, -5, 2), mp, np.clip(lp, -5, 2))[0] < -1e-12).any():
            failures.append("KL >= 0")
            break
    for _ in range(20):
        _, (_, kl, _) = loss(random_batch(MINI_MODEL, rng), random_params(MINI_MODEL, rng))
        if kl < 0:
            failures.append("model KL >= 0")
            break

    for _ in range(200):  # Dice loss is symmetric
        a = rng.random((12, 12)) < rng.random()
        b = rng.random((12, 12)) < rng.random()
        if not math.isclose(dice_loss(a, b), dice_loss(b, a), rel_tol=0, abs_tol=1e-15):
            failures.append("Dice symmetry")
            break

    for i in range(100):  # argmax unchanged by positive scaling and shifting
        table = random_table(rng, 2, 3)
        scale, shift = float(rng.uniform(0.1, 10)), float(rng.normal())
        base = plan([np.zeros((4, 4))], [], TableModel(table, 2), PolicyConfig(horizon=3)).best_sequence
        scaled = plan(
            [np.zeros((4, 4))], [], TableModel(lambda s, j: scale * table(s, j) + shift, 2), PolicyConfig(horizon=3)
        ).best_sequence
        if base != scaled:
            failures.append("argmax scaling invariance")
            break

    sim = PlateSim(budget=4)
    for seed in range(20):  # budget enforcement
        ep = run_random_episode(sim, 4, seed, np.random.default_rng(seed), 40)
        exhausted = dataclasses.replace(sim.reset(seed, 15), step_index=4)
        try:
            sim.step(exhausted, LowLevelAction(PrimitiveKind.ACQUIRE, (0.0, 0.0, 0.0), roll=0.0, pitch=80.0))
            failures.append("budget exhaustion")
            break
        except EpisodeOver:
            pass
        if len(ep) > 4:
            failures.append("budget")
            break

    report("invariant suites", not failures, f"violations: {failures or 'none'}")
