import numpy as np
import pytest
import torch

from dart.frames import FrameLayout, canonicalize, decanonicalize
from dart.gaitgen import (
    FPS,
    GaitSpec,
    LABELS,
    build_dataset,
    default_specs,
    default_transitions,
    load_dataset,
    sample_batch,
    sample_consecutive,
    save_dataset,
    synthesize_clip,
    synthesize_transition,
)
from dart.skeleton import toy_skeleton

LAYOUT = FrameLayout(13)


def test_unknown_label_rejected():
    with pytest.raises(ValueError):
        GaitSpec("moonwalk")


def test_determinism_bit_identical():
    spec = GaitSpec("walk", speed=1.1, cadence=0.9, turn_rate=0.2, seed=42)
    a = synthesize_clip(spec, 40)
    b = synthesize_clip(spec, 40)
    assert torch.equal(a, b)


def test_stand_root_displacement_small():
    clip = synthesize_clip(GaitSpec("stand", seed=3), 60)
    t = clip[:, LAYOUT.t]
    # sway model bound: amplitude 3 mm per horizontal axis
    assert float((t - t[0]).norm(dim=-1).max()) < 0.02


def test_walk_advance_matches_path_integral():
    spec = GaitSpec("walk", speed=1.2, cadence=0.9, turn_rate=0.0, seed=1)
    n = 30
    clip = synthesize_clip(spec, n)
    advance = clip[-1, LAYOUT.t] - clip[0, LAYOUT.t]
    # independent oracle: Euler path integral of the trajectory model
    expected_y = spec.speed * (n - 1) / FPS
    assert abs(float(advance[1]) - expected_y) < 1e-6
    assert abs(float(advance[0])) < 1e-6


def test_turning_path_integral():
    spec = GaitSpec("walk", speed=1.0, cadence=0.9, turn_rate=0.5, seed=2)
    n = 45
    clip = synthesize_clip(spec, n)
    k = np.arange(n)
    heading = spec.turn_rate * k / FPS
    step = np.stack([-np.sin(heading), np.cos(heading)], axis=-1) * spec.speed / FPS
    expected = step[:-1].sum(axis=0)
    got = (clip[-1, LAYOUT.t] - clip[0, LAYOUT.t]).numpy()[:2]
    assert np.allclose(got, expected, atol=1e-6)


def test_too_few_frames_rejected():
    with pytest.raises(ValueError):
        synthesize_clip(GaitSpec("walk", speed=1.0), 5)


def test_window_counts():
    ds = build_dataset([GaitSpec("walk", speed=1.0, seed=0)], frames_per_clip=100)
    assert ds.window_count == 91  # 100 - 10 + 1
    ds2 = build_dataset(
        [GaitSpec("walk", speed=1.0, seed=0), GaitSpec("run", speed=2.0, cadence=1.4, seed=1)],
        frames_per_clip=50,
    )
    assert ds2.window_count == 82  # 2 * (50 - 10 + 1)


def test_empty_specs_rejected():
    with pytest.raises(ValueError):
        build_dataset([])


def test_balanced_sampling_equalizes_labels():
    # 9:1 imbalance between walk and hop windows
    specs = [GaitSpec("walk", speed=1.0, seed=i) for i in range(9)]
    specs.append(GaitSpec("hop_left", speed=0.3, cadence=1.8, seed=99))
    ds = build_dataset(specs, frames_per_clip=60)
    rng = np.random.default_rng(0)
    draws = sample_batch(ds, 10_000, rng, balanced=True)
    hop_freq = np.mean([p.label_id == 3 for p in draws])
    assert abs(hop_freq - 0.5) < 0.02

    rng = np.random.default_rng(1)
    draws = sample_batch(ds, 10_000, rng, balanced=False)
    hop_freq = np.mean([p.label_id == 3 for p in draws])
    assert abs(hop_freq - 0.1) < 0.02


def test_empty_batch():
    ds = build_dataset([GaitSpec("walk", speed=1.0, seed=0)], frames_per_clip=30)
    assert sample_batch(ds, 0, np.random.default_rng(0)) == []


def test_sampled_primitives_are_canonical():
    ds = build_dataset([GaitSpec("walk", speed=1.0, turn_rate=0.3, seed=0)], frames_per_clip=60)
    rng = np.random.default_rng(5)
    for prim in sample_batch(ds, 8, rng):
        joints0 = LAYOUT.joints_of(prim.frames[0].to(torch.float64))
        assert joints0[0].norm() < 1e-5
        hip = joints0[ds.skeleton.right_hip] - joints0[ds.skeleton.left_hip]
        assert abs(float(hip[1])) < 1e-5
        assert abs(float(hip[2])) < 1e-5


def test_consecutive_span_and_overlap():
    ds = build_dataset([GaitSpec("walk", speed=1.0, seed=0)], frames_per_clip=80)
    rng = np.random.default_rng(7)
    sample = sample_consecutive(ds, 4, rng)
    assert sample.world.shape[0] == 2 + 4 * 8  # H + N*F
    skel = ds.skeleton
    # future tail of primitive 0 re-canonicalized == history of primitive 1
    p0, p1 = sample.primitive(0), sample.primitive(1)
    w0 = decanonicalize(p0.frames, p0.transform, skel)
    w1 = decanonicalize(p1.frames, p1.transform, skel)
    assert torch.allclose(w0[-2:], w1[:2], atol=1e-9)


def test_consecutive_requires_long_clip():
    ds = build_dataset([GaitSpec("walk", speed=1.0, seed=0)], frames_per_clip=20)
    with pytest.raises(ValueError):
        sample_consecutive(ds, 4, np.random.default_rng(0))  # needs 34 frames


def test_single_rollout_equals_window():
    ds = build_dataset([GaitSpec("walk", speed=1.0, seed=0)], frames_per_clip=30)
    sample = sample_consecutive(ds, 1, np.random.default_rng(0))
    assert sample.world.shape[0] == 10


def test_transition_clip_smooth_and_tracked():
    frames, track = synthesize_transition(
        GaitSpec("walk", speed=1.0, cadence=0.9, seed=0),
        GaitSpec("stand", seed=1),
        60, 60,
    )
    assert frames.shape[0] == 120
    assert track == [(1, 0, 60), (0, 60, 120)]
    # no teleporting at the seam
    step = frames[1:, LAYOUT.t] - frames[:-1, LAYOUT.t]
    assert float(step.norm(dim=-1).max()) < 0.12


def test_dataset_roundtrip(tmp_path):
    specs = default_specs()[:4]
    ds = build_dataset(specs, frames_per_clip=40, transitions=default_transitions(specs)[:1])
    save_dataset(ds, tmp_path)
    ds2 = load_dataset(tmp_path / "manifest.json")
    assert len(ds2.clips) == len(ds.clips)
    assert ds2.window_count == ds.window_count
    for a, b in zip(ds.clips, ds2.clips):
        assert torch.equal(a.frames, b.frames)
        assert a.label_track == b.label_track


def test_foot_contact_plausibility():
    # the drop-to-floor pass should keep the lower foot near the ground
    for label, speed, cadence in (("walk", 1.0, 0.9), ("run", 2.0, 1.4)):
        clip = synthesize_clip(GaitSpec(label, speed=speed, cadence=cadence, seed=0), 90)
        joints = LAYOUT.joints_of(clip)
        foot_z = joints[:, [5, 8], 2]
        lower = foot_z.min(dim=-1).values
        assert float(lower.min()) > -1e-4
        assert float(lower.median()) < 0.06
