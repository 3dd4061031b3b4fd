import math

import pytest
import torch

from dart.control import (
    Box,
    JointTargetGoal,
    KeyframeGoal,
    ObjectiveBundle,
    SceneSDF,
    WaypointGoal,
    cons_coll,
    cons_cont,
    goal_objective,
    load_goal,
    load_scene,
    objective_keyframe,
    optimize_latents,
    save_scene,
    sdf_query,
)
from dart.frames import FrameLayout
from dart.nets import grad_check

LAYOUT = FrameLayout(13)


def test_sdf_floor():
    scene = SceneSDF(floor_height=0.0)
    p = torch.tensor([[0.0, 0.0, 0.5], [1.0, 2.0, 0.0], [0.0, 0.0, -0.2]])
    d = sdf_query(scene, p)
    assert torch.allclose(d, torch.tensor([0.5, 0.0, -0.2]))


def test_sdf_box_inside_and_outside():
    scene = SceneSDF(floor_height=-10.0, boxes=[Box((0, 0, 0), (1.0, 1.0, 1.0))])
    # inside, 0.1 from the +x face
    assert abs(float(sdf_query(scene, torch.tensor([0.9, 0.0, 0.0]))) - (-0.1)) < 1e-7
    # outside along +x
    assert abs(float(sdf_query(scene, torch.tensor([1.5, 0.0, 0.0]))) - 0.5) < 1e-7
    # outside at a corner: euclidean distance
    d = float(sdf_query(scene, torch.tensor([2.0, 2.0, 0.0])))
    assert abs(d - math.sqrt(2.0)) < 1e-6


def test_cons_coll_values():
    scene = SceneSDF(floor_height=0.0, joint_threshold=0.05)
    joints = torch.full((2, 3, 3), 1.0)  # all joints 1 m up: clearance positive
    assert float(cons_coll(joints, scene)) == 0.0
    # one joint penetrating: sdf = -0.02, clearance = -0.07 -> contribution 0.07
    joints[0, 1, 2] = -0.02
    assert abs(float(cons_coll(joints, scene)) - 0.07) < 1e-7


def test_cons_coll_monotone():
    scene = SceneSDF(floor_height=0.0)
    joints = torch.zeros(1, 1, 3)
    vals = []
    for z in (-0.10, -0.05, 0.0, 0.03, 0.10):
        joints[0, 0, 2] = z
        vals.append(float(cons_coll(joints, scene)))
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_cons_cont_values():
    scene = SceneSDF(floor_height=0.0, foot_threshold=0.03)
    joints = torch.zeros(3, 13, 3)
    joints[..., 2] = 1.0
    feet = (5, 8)
    # one foot on the floor every frame
    joints[:, 5, 2] = 0.0
    assert float(cons_cont(joints, scene, feet)) == 0.0
    # both feet hovering at 0.10: per frame penalty 0.07
    joints[:, 5, 2] = 0.10
    joints[:, 8, 2] = 0.10
    assert abs(float(cons_cont(joints, scene, feet)) - 3 * 0.07) < 1e-6


def test_cons_cont_hop_integral():
    # airborne frames contribute their positive lower-foot clearance
    scene = SceneSDF(floor_height=0.0, foot_threshold=0.03)
    heights = torch.tensor([0.0, 0.02, 0.05, 0.10, 0.04, 0.0])
    joints = torch.zeros(6, 13, 3)
    joints[:, 5, 2] = heights
    joints[:, 8, 2] = heights + 0.5  # other foot always higher
    expected = sum(max(h - 0.03, 0.0) for h in heights.tolist())
    assert abs(float(cons_cont(joints, scene, (5, 8))) - expected) < 1e-6


def test_objective_keyframe_values():
    motion = torch.zeros(10, LAYOUT.dim)
    target = torch.zeros(13, 3)
    goal = KeyframeGoal(target_joints=target, frame_index=4)
    assert float(objective_keyframe(motion, LAYOUT, goal)) == 0.0
    moved = motion.clone()
    jt = LAYOUT.joints_of(moved[4]) + torch.tensor([0.01, 0.0, 0.0])
    moved[4, LAYOUT.joints] = jt.reshape(-1)
    assert abs(float(objective_keyframe(moved, LAYOUT, goal)) - 1e-4) < 1e-10
    with pytest.raises(IndexError):
        objective_keyframe(motion, LAYOUT, KeyframeGoal(target, frame_index=99))


def test_objective_keyframe_gradient():
    gen = torch.Generator().manual_seed(0)
    motion = (torch.randn(6, LAYOUT.dim, generator=gen, dtype=torch.float64) * 0.1).requires_grad_(True)
    target = torch.randn(13, 3, generator=gen, dtype=torch.float64)
    goal = KeyframeGoal(target_joints=target, frame_index=3)
    err = grad_check(lambda: objective_keyframe(motion, LAYOUT, goal), [motion], epsilon=1e-5)
    assert err < 1e-6


def test_bundle_additivity_and_zero_weights():
    gen = torch.Generator().manual_seed(1)
    motion = torch.randn(6, LAYOUT.dim, generator=gen) * 0.1
    goal = WaypointGoal(torch.tensor([1.0, 2.0]))
    scene = SceneSDF(floor_height=0.0)
    full = ObjectiveBundle(goal, scene, foot_joints=(5, 8))
    goal_only = ObjectiveBundle(goal, scene, foot_joints=(5, 8), coll_weight=0.0, cont_weight=0.0)
    t_full, parts = full(motion, LAYOUT)
    t_goal, parts_goal = goal_only(motion, LAYOUT)
    assert abs(float(t_goal) - parts["goal"]) < 1e-6
    expected = parts["goal"] + parts["coll"] + parts["cont"]
    assert abs(float(t_full) - expected) < 1e-5


def test_optimize_latents_zero_objective_keeps_motion(untrained_stack, stand_seed):
    bundle = ObjectiveBundle(goal=None)  # identically zero objective
    z0 = torch.randn(2, 8, generator=torch.Generator().manual_seed(2))
    result = optimize_latents(untrained_stack, bundle, stand_seed, [1, 1], z_init=z0, steps=3)
    assert torch.equal(result.z_noises, z0)
    from dart.rollout import rollout

    with torch.no_grad():
        ref, _ = rollout(untrained_stack, stand_seed, [1, 1], w=1.0, sampler="ddim", z_noises=z0)
    assert torch.equal(result.motion, ref)


def test_optimize_latents_reduces_waypoint_loss(untrained_stack, stand_seed):
    goal = WaypointGoal(torch.tensor([0.5, 0.5]))
    bundle = ObjectiveBundle(goal)
    result = optimize_latents(
        untrained_stack, bundle, stand_seed, [1, 1], steps=20, lr=0.1,
        generator=torch.Generator().manual_seed(3),
    )
    assert result.best_loss <= result.initial_loss
    assert len(result.loss_trace) == 20


def test_optimize_latents_best_iterate_property(untrained_stack, stand_seed):
    goal = WaypointGoal(torch.tensor([2.0, 0.0]))
    bundle = ObjectiveBundle(goal)
    result = optimize_latents(
        untrained_stack, bundle, stand_seed, [1], steps=15, lr=0.5,
        generator=torch.Generator().manual_seed(4),
    )
    assert result.best_loss <= min(p["total"] for p in result.loss_trace) + 1e-9


def test_small_variance_init_supported(untrained_stack, stand_seed):
    goal = WaypointGoal(torch.tensor([0.5, 0.0]))
    bundle = ObjectiveBundle(goal)
    result = optimize_latents(
        untrained_stack, bundle, stand_seed, [1], steps=2, init_std=0.1,
        generator=torch.Generator().manual_seed(5),
    )
    assert result.z_noises.shape == (1, 8)


def test_scene_goal_files(tmp_path):
    scene = SceneSDF(floor_height=0.1, boxes=[Box((1, 2, 0.5), (0.5, 0.5, 0.5))])
    save_scene(tmp_path / "scene.json", scene)
    loaded = load_scene(tmp_path / "scene.json")
    assert loaded.floor_height == 0.1
    assert loaded.boxes[0].center == (1, 2, 0.5)

    (tmp_path / "goal.json").write_text('{"kind": "waypoint", "xy": [1.5, -2.0]}')
    goal = load_goal(tmp_path / "goal.json")
    assert isinstance(goal, WaypointGoal)
    (tmp_path / "goal2.json").write_text('{"kind": "joint_target", "joint": 2, "point": [0,0,1], "frame_index": 5}')
    goal2 = load_goal(tmp_path / "goal2.json")
    assert isinstance(goal2, JointTargetGoal)


def test_goal_objective_joint_target():
    motion = torch.zeros(8, LAYOUT.dim)
    goal = JointTargetGoal(joint=2, point=torch.tensor([0.0, 0.0, 2.0]), frame_index=3)
    assert abs(float(goal_objective(motion, LAYOUT, goal)) - 4.0) < 1e-6
