"""Optimization-based spatial control over the diffusion noise stack.

Task objectives and scene constraints are differentiable functions of the
generated motion; gradients flow back through decode, the deterministic DDIM
loop, and the rollout re-canonicalization into the per-primitive noises Z_T,
which Adam updates with a normalized gradient and a linearly annealed lr.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .frames import FrameLayout
from .rollout import GeneratorStack, rollout


@dataclass
class Box:
    center: tuple[float, float, float]
    half_extents: tuple[float, float, float]

    def __post_init__(self):
        if any(h <= 0 for h in self.half_extents):
            raise ValueError("box half-extents must be positive")


@dataclass
class SceneSDF:
    floor_height: float = 0.0
    boxes: list[Box] = field(default_factory=list)
    joint_threshold: float = 0.05  # tau, per-joint contact clearance
    foot_threshold: float = 0.03   # tau_f, foot contact clearance

    def __post_init__(self):
        if self.joint_threshold <= 0 or self.foot_threshold <= 0:
            raise ValueError("contact thresholds must be positive")


def sdf_query(scene: SceneSDF, p: torch.Tensor) -> torch.Tensor:
    """Signed distance of points (..., 3) to the scene; negative inside geometry."""
    d = p[..., 2] - scene.floor_height
    for box in scene.boxes:
        center = torch.tensor(box.center, dtype=p.dtype, device=p.device)
        half = torch.tensor(box.half_extents, dtype=p.dtype, device=p.device)
        q = (p - center).abs() - half
        outside = torch.clamp(q, min=0.0).norm(dim=-1)
        inside = torch.clamp(q.amax(dim=-1), max=0.0)
        d = torch.minimum(d, outside + inside)
    return d


def cons_coll(joints: torch.Tensor, scene: SceneSDF) -> torch.Tensor:
    """Collision penalty: negated sum of negative joint clearances, >= 0.

    joints: (T, J, 3). Only joints penetrating past their threshold contribute.
    """
    clearance = sdf_query(scene, joints) - scene.joint_threshold
    return -torch.clamp(clearance, max=0.0).sum()


def cons_cont(joints: torch.Tensor, scene: SceneSDF, foot_joints: tuple[int, ...]) -> torch.Tensor:
    """Contact penalty: per frame, positive clearance of the lowest foot, >= 0."""
    feet = sdf_query(scene, joints[:, list(foot_joints)])
    lowest = feet.min(dim=-1).values
    return torch.clamp(lowest - scene.foot_threshold, min=0.0).sum()


@dataclass
class KeyframeGoal:
    target_joints: torch.Tensor  # (J, 3) world
    frame_index: int


@dataclass
class JointTargetGoal:
    joint: int
    point: torch.Tensor  # (3,) world
    frame_index: int


@dataclass
class WaypointGoal:
    xy: torch.Tensor  # (2,) world floor point


Goal = KeyframeGoal | JointTargetGoal | WaypointGoal


def objective_keyframe(motion: torch.Tensor, layout: FrameLayout, goal: KeyframeGoal) -> torch.Tensor:
    """Mean squared joint distance at the goal frame (positional channels only)."""
    if goal.frame_index >= motion.shape[0]:
        raise IndexError(f"goal frame {goal.frame_index} outside motion of {motion.shape[0]} frames")
    joints = layout.joints_of(motion[goal.frame_index])
    return (joints - goal.target_joints.to(motion.dtype)).pow(2).sum(dim=-1).mean()


def goal_objective(motion: torch.Tensor, layout: FrameLayout, goal: Goal) -> torch.Tensor:
    if isinstance(goal, KeyframeGoal):
        return objective_keyframe(motion, layout, goal)
    if isinstance(goal, JointTargetGoal):
        if goal.frame_index >= motion.shape[0]:
            raise IndexError("goal frame outside motion")
        j = layout.joints_of(motion[goal.frame_index])[goal.joint]
        return (j - goal.point.to(motion.dtype)).pow(2).sum()
    if isinstance(goal, WaypointGoal):
        pelvis = layout.joints_of(motion[-1])[0]
        return (pelvis[:2] - goal.xy.to(motion.dtype)).pow(2).sum()
    raise TypeError(f"unknown goal {type(goal)}")


@dataclass
class ObjectiveBundle:
    goal: Goal | None
    scene: SceneSDF | None = None
    foot_joints: tuple[int, ...] = ()
    goal_weight: float = 1.0
    coll_weight: float = 1.0
    cont_weight: float = 1.0

    def __call__(self, motion: torch.Tensor, layout: FrameLayout) -> tuple[torch.Tensor, dict[str, float]]:
        total = motion.new_zeros(())
        parts: dict[str, float] = {}
        if self.goal is not None and self.goal_weight != 0.0:
            g = goal_objective(motion, layout, self.goal)
            total = total + self.goal_weight * g
            parts["goal"] = float(g.detach())
        if self.scene is not None:
            joints = layout.joints_of(motion)
            if self.coll_weight != 0.0:
                c = cons_coll(joints, self.scene)
                total = total + self.coll_weight * c
                parts["coll"] = float(c.detach())
            if self.cont_weight != 0.0 and self.foot_joints:
                c = cons_cont(joints, self.scene, self.foot_joints)
                total = total + self.cont_weight * c
                parts["cont"] = float(c.detach())
        parts["total"] = float(total.detach())
        return total, parts


@dataclass
class OptimizationResult:
    z_noises: torch.Tensor
    motion: torch.Tensor
    loss_trace: list[dict]
    best_loss: float
    initial_loss: float


def optimize_latents(
    stack: GeneratorStack,
    objective: ObjectiveBundle,
    seed_history: torch.Tensor,
    labels: list[int],
    z_init: torch.Tensor | None = None,
    steps: int = 100,
    lr: float = 0.05,
    w: float = 1.0,
    init_std: float = 1.0,
    generator: torch.Generator | None = None,
) -> OptimizationResult:
    """Adam over the latent noise list through the deterministic DDIM rollout.

    The gradient is normalized over the concatenated noise stack, the learning
    rate anneals linearly to 0, and the best iterate (not the last) is returned.
    """
    n = len(labels)
    if z_init is None:
        z_init = init_std * torch.randn(n, stack.latent_dim, generator=generator)
    z = z_init.clone().detach().requires_grad_(True)
    opt = torch.optim.Adam([z], lr=lr)
    sched = torch.optim.lr_scheduler.LambdaLR(opt, lambda i: max(0.0, 1.0 - i / steps))
    layout = stack.layout

    best_loss = float("inf")
    best_z = z.detach().clone()
    initial_loss = None
    trace = []
    for i in range(steps):
        motion, _ = rollout(stack, seed_history, labels, w=w, sampler="ddim", z_noises=z)
        loss, parts = objective(motion, layout)
        if not torch.isfinite(loss):
            break
        val = float(loss.detach())
        if initial_loss is None:
            initial_loss = val
        if val < best_loss:
            best_loss = val
            best_z = z.detach().clone()
        parts["step"] = i
        parts["lr"] = sched.get_last_lr()[0]
        trace.append(parts)

        if loss.requires_grad:
            (grad,) = torch.autograd.grad(loss, z, allow_unused=True)
        else:
            grad = None  # objective constant in the noises
        norm = 0.0 if grad is None else float(grad.norm())
        opt.zero_grad()
        if norm >= 1e-12:
            z.grad = grad / norm
            opt.step()
        sched.step()

    with torch.no_grad():
        motion, _ = rollout(stack, seed_history, labels, w=w, sampler="ddim", z_noises=best_z)
        final_loss, _ = objective(motion, layout)
    final_val = float(final_loss)
    if final_val < best_loss:
        best_loss = final_val
    return OptimizationResult(
        z_noises=best_z,
        motion=motion,
        loss_trace=trace,
        best_loss=best_loss,
        initial_loss=initial_loss if initial_loss is not None else float("nan"),
    )


# ---------------------------------------------------------------------------
# Scene / goal files
# ---------------------------------------------------------------------------

def load_scene(path) -> SceneSDF:
    d = json.loads(Path(path).read_text())
    return SceneSDF(
        floor_height=d.get("floor_height", 0.0),
        boxes=[Box(tuple(b["center"]), tuple(b["half_extents"])) for b in d.get("boxes", [])],
    )


def save_scene(path, scene: SceneSDF) -> None:
    d = {
        "floor_height": scene.floor_height,
        "boxes": [{"center": list(b.center), "half_extents": list(b.half_extents)} for b in scene.boxes],
    }
    Path(path).write_text(json.dumps(d, indent=2))


def load_goal(path) -> Goal:
    d = json.loads(Path(path).read_text())
    kind = d["kind"]
    if kind == "keyframe":
        return KeyframeGoal(torch.tensor(d["target_joints"], dtype=torch.float64), d["frame_index"])
    if kind == "joint_target":
        return JointTargetGoal(d["joint"], torch.tensor(d["point"], dtype=torch.float64), d["frame_index"])
    if kind == "waypoint":
        return WaypointGoal(torch.tensor(d["xy"], dtype=torch.float64))
    raise ValueError(f"unknown goal kind {kind!r}")
