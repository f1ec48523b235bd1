"""End-to-end gates for the whole pipeline, one test per gate.

Run with `pytest -v tests/test_acceptance.py`; the verbose listing gives one
pass/fail line per gate.  The heavy fixtures (demonstration corpus, trained
checkpoints) are session-scoped and shared by the closed-loop, transfer,
robustness, latency and teleop gates, so this file trains the full-size model
exactly twice (edge input and raw-pixel ablation).
"""

import asyncio
import json
import os

import numpy as np
import pytest

from edgeracer import data, imaging, mixer, runtime, simworld, trainer
from edgeracer.imaging import PipelineParams

from canny_reference import ref_pipeline
from test_imaging import CORPUS
from test_mixer import TINY, mean_ce
from test_service import free_port, recv_typed, with_server

TRACKS = ("oval", "serpentine", "hairpin")
STYLES = ("sim", "real")
EPISODES_PER_CELL = 2
COLLECT_JITTER = 0.08
MAX_STEPS = 600

# lr is part of the training contract; batch size and epoch count are free.
# Batch 1 maximizes SGD updates per core-second here (per-frame cost is flat
# in batch size on one core) and clears the 0.90 bar with margin by epoch 8.
TRAIN_CONFIG = trainer.TrainConfig(learning_rate=1e-4, batch_size=1,
                                   epochs=8, seed=0, val_fraction=0.1)

SMALL = mixer.MixerConfig(dim=16, depth=1, token_hidden=8, channel_hidden=32)


def lap_rate(policy, n_trials, seed0, style="sim", corruption_p=0.0):
    track = simworld.make_track("oval")
    done = 0
    for k in range(n_trials):
        ep = simworld.run_episode(policy, track, style=style,
                                  corruption_p=corruption_p,
                                  max_steps=MAX_STEPS, seed=seed0 + k,
                                  start_jitter=0.05)
        done += ep.terminal == "lap-complete"
    return done / n_trials


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    """2 expert episodes per track per style, through the on-disk dataset
    and filter so the file formats are exercised, not just the objects."""
    root = tmp_path_factory.mktemp("corpus")
    os.makedirs(root / "raw")
    raw = data.Dataset(str(root / "raw"))
    for ti, name in enumerate(TRACKS):
        track = simworld.make_track(name)
        policy = simworld.OraclePolicy(track)
        for si, style in enumerate(STYLES):
            for i in range(EPISODES_PER_CELL):
                seed = 1000 * ti + 100 * si + i
                ep = simworld.run_episode(policy, track, style=style,
                                          max_steps=MAX_STEPS, seed=seed,
                                          start_jitter=COLLECT_JITTER)
                data.add_episode(raw, ep, f"{name}_{style}_{i:04d}.ep")
    filtered, report = data.filter_dataset(str(root / "raw"),
                                           str(root / "filtered"))
    episodes = filtered.episodes()
    assert len(episodes) == len(TRACKS) * len(STYLES) * EPISODES_PER_CELL, \
        f"expert went off track during collection: {report}"
    return episodes


@pytest.fixture(scope="session")
def edge_ckpt(corpus):
    ckpt, history = trainer.train(corpus, mixer.MixerConfig(), TRAIN_CONFIG,
                                  log=print)
    return ckpt, history


@pytest.fixture(scope="session")
def raw_ckpt(corpus):
    """Same recipe, Canny disabled: the model sees raw resized pixels."""
    ckpt, _ = trainer.train(corpus, mixer.MixerConfig(), TRAIN_CONFIG,
                            pipeline=PipelineParams(edges=False), log=print)
    return ckpt


@pytest.fixture(scope="session")
def camera_frame():
    track = simworld.make_track("oval")
    return simworld.render_camera(simworld.start_state(track), track)


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(11)
    params = {k: v.astype(np.float64)
              for k, v in mixer.init_params(TINY, seed=5).items()}
    grids = rng.random((4, 16, 16))
    targets = np.array([0, 2, 3, 4])
    _, tape = mixer.forward(params, grids, TINY, dtype=np.float64)
    grads = mixer.backward(params, tape, targets)
    h = 1e-5
    checked = 0
    names = list(params)
    sizes = np.array([params[n].size for n in names])
    draws = rng.integers(0, sizes.sum(), size=260)
    for d in draws:
        j = int(np.searchsorted(np.cumsum(sizes), d, side="right"))
        name = names[j]
        i = int(d - np.concatenate([[0], np.cumsum(sizes)])[j])
        flat = params[name].reshape(-1)
        orig = flat[i]
        flat[i] = orig + h
        up = mean_ce(params, grids, targets, TINY)
        flat[i] = orig - h
        dn = mean_ce(params, grids, targets, TINY)
        flat[i] = orig
        fd = (up - dn) / (2 * h)
        an = grads[name].reshape(-1)[i]
        if max(abs(an), abs(fd)) < 1e-7:
            # flat direction (e.g. last token-MLP bias, cancelled by the
            # following LayerNorm): both sides are below the FD noise floor
            checked += 1
            continue
        assert abs(an - fd) / max(abs(an), abs(fd), 1e-8) < 1e-5, \
            (name, i, an, fd)
        checked += 1
    assert checked >= 200


def test_edge_chain_bit_exact_vs_brute_force(camera_frame):
    assert len(CORPUS) >= 20
    for img in CORPUS:
        fast = imaging.preprocess(img, PipelineParams(crop_fraction=0.0))
        slow = ref_pipeline(img, crop_fraction=0.0)
        assert np.array_equal(fast, slow)
    # production geometry with the default sky crop
    for style_seed in range(4):
        track = simworld.make_track("oval")
        state = simworld.start_state(
            track, jitter=0.1, rng=np.random.default_rng(style_seed))
        frame = simworld.render_camera(state, track, style="real",
                                       episode_seed=style_seed)
        assert np.array_equal(imaging.preprocess(frame), ref_pipeline(frame))


def test_filter_matches_running_max_oracle():
    rng = np.random.default_rng(3)
    blank = np.zeros((2, 2), np.uint8)
    for _ in range(1000):
        n = int(rng.integers(1, 40))
        # quantized rewards so exact ties occur
        rewards = rng.integers(0, 12, size=n) / 10.0
        steps = [data.Step(t=i, action=2, reward=float(r), frame=blank)
                 for i, r in enumerate(rewards)]
        ep = data.Episode(header={}, steps=steps, terminal="timeout")
        kept, best = [0], rewards[0]
        for i in range(1, n):
            if rewards[i] > best:
                kept.append(i)
                best = rewards[i]
        assert data.filter_episode(ep) == kept


def test_training_reaches_holdout_accuracy(corpus, edge_ckpt):
    _, history = edge_ckpt
    _, va_idx = trainer.split_episodes(len(corpus), TRAIN_CONFIG.val_fraction,
                                       TRAIN_CONFIG.seed)
    assert len(va_idx) >= 1
    ckpt = edge_ckpt[0]
    accs = []
    for i in va_idx:
        result = trainer.evaluate(ckpt, [corpus[i]])
        accs.append(result["accuracy"])
        print(f"held-out episode {i} ({corpus[i].header['track']}/"
              f"{corpus[i].header['style']}): accuracy {accs[-1]:.3f}")
    assert history[-1].get("val_acc", 0.0) == pytest.approx(np.mean(accs))
    assert min(accs) >= 0.90


def test_closed_loop_lap_completion(edge_ckpt):
    policy = runtime.ModelPolicy(edge_ckpt[0])
    rate = lap_rate(policy, n_trials=10, seed0=0)
    print(f"oval sim-style completion: {rate:.0%}")
    assert rate >= 0.9


def test_transfer_to_real_style_beats_raw_pixels(edge_ckpt, raw_ckpt):
    edge_rate = lap_rate(runtime.ModelPolicy(edge_ckpt[0]), 10, seed0=100,
                         style="real")
    raw_rate = lap_rate(runtime.ModelPolicy(raw_ckpt), 10, seed0=100,
                        style="real")
    print(f"real-style completion: edge input {edge_rate:.0%}, "
          f"raw pixels {raw_rate:.0%}")
    assert edge_rate >= 0.8
    assert raw_rate < edge_rate


def test_corrupted_command_robustness(edge_ckpt):
    track = simworld.make_track("oval")
    model_rate = lap_rate(runtime.ModelPolicy(edge_ckpt[0]), 20, seed0=200,
                          corruption_p=0.5)
    oracle_rate = lap_rate(simworld.OraclePolicy(track), 20, seed0=200,
                           corruption_p=0.5)
    print(f"completion with half the commands scrambled: "
          f"model {model_rate:.0%}, expert {oracle_rate:.0%}")
    # the model must hold up as well as the expert does ...
    assert abs(model_rate - oracle_rate) <= 0.20
    # ... and clear an absolute bar.  Under these dynamics (15 deg max
    # effective steering at 1 m/s, 0.38 m of lateral margin, a 0.24 rad
    # heading kick from every scrambled tick) no policy measured here --
    # including the expert and far more aggressive pursuit variants -- gets
    # near 0.7, so this clause is expected to fail and is left failing
    # rather than quietly weakened.  See the project notes for the sweep.
    assert model_rate >= 0.7


def test_inference_latency_budget(edge_ckpt, camera_frame):
    report = runtime.bench(edge_ckpt[0], camera_frame, iterations=100)
    med_ms = report.total_us["median"] / 1000.0
    print(report.format())
    print(f"median {med_ms:.2f} ms/frame on one core "
          f"(the race-car hardware did 2-3 ms)")
    assert med_ms <= 10.0


def test_rerun_determinism(tmp_path):
    track = simworld.make_track("hairpin")
    policy = simworld.OraclePolicy(track)

    def collect(path):
        ep = simworld.run_episode(policy, track, corruption_p=0.2,
                                  max_steps=200, seed=9, start_jitter=0.05)
        data.write_episode(ep, path)
        return ep

    a = collect(tmp_path / "a.ep")
    b = collect(tmp_path / "b.ep")
    assert (tmp_path / "a.ep").read_bytes() == (tmp_path / "b.ep").read_bytes()

    tc = trainer.TrainConfig(learning_rate=1e-3, batch_size=8, epochs=2,
                             seed=4, val_fraction=0.0)
    for name in ("m1.ckpt", "m2.ckpt"):
        ckpt, _ = trainer.train([a], SMALL, tc)
        trainer.save_checkpoint(ckpt, tmp_path / name)
    m1 = (tmp_path / "m1.ckpt").read_bytes()
    assert m1 == (tmp_path / "m2.ckpt").read_bytes()

    model = runtime.ModelPolicy(trainer.load_checkpoint(tmp_path / "m1.ckpt"))
    runs = [simworld.run_episode(model, track, max_steps=60, seed=2,
                                 start_jitter=0.05) for _ in range(2)]
    assert [s.action for s in runs[0].steps] == \
           [s.action for s in runs[1].steps]
    assert runs[0].terminal == runs[1].terminal


def test_scripted_teleop_records_and_trains(tmp_path):
    """Drive the live service by wire for 100 recorded ticks, save, retrain.

    The client steers with the same pursuit law as the expert, computed from
    the telemetry in each frame, and only sends an action when it changes --
    exactly what a human at a keyboard amounts to.  The saved episode must
    hold the latched action stream, one step per tick.
    """
    save_path = str(tmp_path / "teleop.ep")
    track = simworld.make_track("oval")
    expert = simworld.OraclePolicy(track)
    sent = [2]  # the server's default before any action message

    async def client(ws):
        await ws.send(json.dumps({"type": "start", "track": "oval",
                                  "mode": "teleop", "seed": 0}))
        await recv_typed(ws, "ack")
        await ws.send(json.dumps({"type": "record", "on": True,
                                  "ticks": 100}))
        await recv_typed(ws, "ack")
        first_t = None
        while True:
            msg = await recv_typed(ws, "frame", timeout=30.0)
            if first_t is None:
                first_t = msg["t"]
            st = msg["state"]
            state = simworld.VehicleState(
                x=st["x"], y=st["y"], heading=st["heading"],
                arc_progress=st["progress"] * track.length)
            action = expert(None, state)
            if action != sent[-1]:
                sent.append(action)
                await ws.send(json.dumps({"type": "action",
                                          "action": action}))
            if msg["t"] - first_t >= 110 or "terminal" in msg:
                break
        await ws.send(json.dumps({"type": "save", "path": save_path}))
        ack = await recv_typed(ws, "ack")
        assert ack["steps"] == 100

    with_server(client)

    ep = data.read_episode(save_path)
    assert len(ep.steps) == 100
    assert ep.header["policy"] == "teleop"
    assert [s.t for s in ep.steps] == list(range(ep.steps[0].t,
                                                 ep.steps[0].t + 100))
    # latching: the recorded actions are a piecewise-constant replay of the
    # sent stream -- runs appear in send order, none invented, none reordered
    recorded_runs = [a for i, a in enumerate(s.action for s in ep.steps)
                     if i == 0 or ep.steps[i].action != ep.steps[i - 1].action]
    it = iter(range(len(sent)))
    for run in recorded_runs:
        assert any(sent[j] == run for j in it), (recorded_runs, sent)
    assert len(sent) > 2  # the scripted driver actually steered

    tc = trainer.TrainConfig(learning_rate=1e-3, batch_size=8, epochs=1,
                             seed=0, val_fraction=0.0)
    ckpt, history = trainer.train([ep], SMALL, tc)
    assert np.isfinite(history[-1]["train_loss"])
