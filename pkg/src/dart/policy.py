"""Goal-reaching control as an MDP over the latent noise space.

The policy emits the initial diffusion noise for the next primitive; the
frozen denoiser+decoder turn it into motion (deterministic DDIM, so an
environment step is a pure function of state and action). Rewards follow the
goal-distance / success / orientation / skate / floor decomposition with
label-dependent floor weight.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoint import load_module_tensors, save_module
from .frames import FrameLayout, canonicalize_batch, decanonicalize_batch
from .gaitgen import GaitSpec, LABELS, synthesize_clip
from .metrics import floor_distance, skate
from .nets import ResidualMLP, near_zero_init
from .diffusion import ddim_sample
from .rollout import GeneratorStack

GOAL_DISTANCE_CAP = 5.0          # meters
GOAL_FOV_HALF_ANGLE = math.pi / 3.0  # 120-degree forward field of view
SUCCESS_RADIUS = 0.3             # meters
CONTACT_HEIGHT = 0.03            # meters
ACTION_BOUND = 4.0

REWARD_WEIGHTS = {"dist": 1.0, "succ": 1.0, "ori": 0.1, "skate": 100.0}


def floor_weight_for_label(label_id: int) -> float:
    """100 for walking; 10 for the flight-phase gaits (run, hop)."""
    name = LABELS[label_id] if 0 <= label_id < len(LABELS) else ""
    return 10.0 if name in ("run", "hop_left") else 100.0


# ---------------------------------------------------------------------------
# Observation
# ---------------------------------------------------------------------------

def build_observation(
    history: torch.Tensor,       # (B, H, D) canonical
    goal_local_xy: torch.Tensor,  # (B, 2) in the same canonical frame
    floor_height_rel: torch.Tensor,  # (B,)
    text_emb: torch.Tensor,      # (B, E)
    layout: FrameLayout,
    pelvis: int = 0,
) -> torch.Tensor:
    """[text | history | floor | clamped distance | FOV-clamped unit direction]."""
    b = history.shape[0]
    pelvis_xy = layout.joints_of(history[:, -1])[:, pelvis, :2]
    delta = goal_local_xy - pelvis_xy
    dist_raw = delta.norm(dim=-1)
    dist = torch.clamp(dist_raw, max=GOAL_DISTANCE_CAP)
    # body forward is +y in the canonical frame; signed angle measured from it
    angle = torch.atan2(delta[:, 0], delta[:, 1])
    angle = torch.clamp(angle, -GOAL_FOV_HALF_ANGLE, GOAL_FOV_HALF_ANGLE)
    direction = torch.stack([torch.sin(angle), torch.cos(angle), torch.zeros_like(angle)], dim=-1)
    forward = torch.tensor([0.0, 1.0, 0.0], dtype=history.dtype).expand(b, 3)
    degenerate = (dist_raw < 1e-9).unsqueeze(-1)
    direction = torch.where(degenerate, forward, direction)
    return torch.cat(
        [
            text_emb,
            history.reshape(b, -1),
            floor_height_rel.unsqueeze(-1),
            dist.unsqueeze(-1),
            direction,
        ],
        dim=-1,
    )


def observation_dim(layout: FrameLayout, history_len: int, embed_dim: int) -> int:
    return embed_dim + history_len * layout.dim + 5


# ---------------------------------------------------------------------------
# Reward
# ---------------------------------------------------------------------------

@dataclass
class RewardBreakdown:
    r_dist: torch.Tensor
    r_succ: torch.Tensor
    r_ori: torch.Tensor
    r_skate: torch.Tensor
    r_floor: torch.Tensor
    w_floor: float

    @property
    def weighted_total(self) -> torch.Tensor:
        return (
            REWARD_WEIGHTS["dist"] * self.r_dist
            + REWARD_WEIGHTS["succ"] * self.r_succ
            + REWARD_WEIGHTS["ori"] * self.r_ori
            + REWARD_WEIGHTS["skate"] * self.r_skate
            + self.w_floor * self.r_floor
        )


def compute_reward(
    prev_last_frame: torch.Tensor,  # (B, D) world, frame before the new step
    new_frames: torch.Tensor,       # (B, F, D) world frames of the step
    goal_xy: torch.Tensor,          # (B, 2) world
    layout: FrameLayout,
    foot_joints: tuple[int, ...],
    w_floor: float,
    pelvis: int = 0,
    floor_height: float = 0.0,
) -> RewardBreakdown:
    prev_pelvis = layout.joints_of(prev_last_frame)[:, pelvis, :2]
    cur_pelvis = layout.joints_of(new_frames[:, -1])[:, pelvis, :2]
    d_prev = (goal_xy - prev_pelvis).norm(dim=-1)
    d_cur = (goal_xy - cur_pelvis).norm(dim=-1)
    r_dist = d_prev - d_cur
    r_succ = (d_cur < SUCCESS_RADIUS).to(new_frames.dtype)

    move = cur_pelvis - prev_pelvis
    to_goal = goal_xy - prev_pelvis
    move_n = move.norm(dim=-1)
    goal_n = to_goal.norm(dim=-1)
    cos = (move * to_goal).sum(dim=-1) / torch.clamp(move_n * goal_n, min=1e-12)
    r_ori = (cos + 1.0) / 2.0
    degenerate = (move_n < 1e-8) | (goal_n < 1e-8)
    r_ori = torch.where(degenerate, torch.full_like(r_ori, 0.5), r_ori)

    # skate over consecutive pairs including the seam with the previous step
    ext = torch.cat([prev_last_frame.unsqueeze(1), new_frames], dim=1)
    feet = layout.joints_of(ext)[:, :, list(foot_joints)]  # (B, F+1, nf, 3)
    prev_f, cur_f = feet[:, :-1], feet[:, 1:]
    disp = (cur_f[..., :2] - prev_f[..., :2]).norm(dim=-1)
    h = torch.maximum(prev_f[..., 2], cur_f[..., 2]) - floor_height
    contact = h < CONTACT_HEIGHT
    scaled = disp * (2.0 - torch.pow(2.0, h / CONTACT_HEIGHT))
    r_skate = -(scaled * contact).sum(dim=(1, 2))

    lower = layout.joints_of(new_frames)[:, :, list(foot_joints), 2].min(dim=-1).values - floor_height
    r_floor = -torch.clamp(lower.abs() - CONTACT_HEIGHT, min=0.0).mean(dim=-1)

    return RewardBreakdown(
        r_dist=r_dist, r_succ=r_succ, r_ori=r_ori, r_skate=r_skate, r_floor=r_floor, w_floor=w_floor
    )


# ---------------------------------------------------------------------------
# Actor-critic
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PolicyConfig:
    obs_dim: int
    action_dim: int
    hidden: int = 512
    layers: int = 4
    head_init_scale: float = 1e-5  # keeps |4*tanh(mean)| under 0.01 at init
    log_std_init: float = -1.0


class ActorCritic(nn.Module):
    def __init__(self, cfg: PolicyConfig):
        super().__init__()
        self.cfg = cfg
        self.actor = ResidualMLP(cfg.obs_dim, cfg.action_dim, hidden=cfg.hidden, layers=cfg.layers)
        self.critic = ResidualMLP(cfg.obs_dim, 1, hidden=cfg.hidden, layers=cfg.layers)
        near_zero_init(self.actor, scale=cfg.head_init_scale)
        self.log_std = nn.Parameter(torch.full((cfg.action_dim,), cfg.log_std_init))

    def value(self, obs: torch.Tensor) -> torch.Tensor:
        return self.critic(obs).squeeze(-1)


def _log1m_tanh_sq(x: torch.Tensor) -> torch.Tensor:
    # log(1 - tanh(x)^2) = 2 * (log 2 - x - softplus(-2x)), numerically stable
    return 2.0 * (math.log(2.0) - x - F.softplus(-2.0 * x))


def act(
    policy: ActorCritic,
    obs: torch.Tensor,
    deterministic: bool = False,
    generator: torch.Generator | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Sample (or take the mean of) the squashed Gaussian policy.

    Actions live in [-4, 4] via 4*tanh(x); the log-probability includes the
    change-of-variables correction for the squashing.
    """
    mean = policy.actor(obs)
    if deterministic:
        x = mean
    else:
        std = policy.log_std.exp()
        noise = torch.randn(mean.shape, generator=generator, dtype=mean.dtype, device=mean.device)
        x = mean + std * noise
    action = ACTION_BOUND * torch.tanh(x)
    logp = gaussian_tanh_log_prob(policy, obs, x)
    return action, logp


def gaussian_tanh_log_prob(policy: ActorCritic, obs: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    """Log-density of action = 4*tanh(x) where x ~ N(actor(obs), exp(log_std))."""
    mean = policy.actor(obs)
    log_std = policy.log_std.clamp(-5.0, 2.0)
    var = torch.exp(2.0 * log_std)
    base = -0.5 * ((x - mean) ** 2 / var + 2.0 * log_std + math.log(2.0 * math.pi))
    correction = math.log(ACTION_BOUND) + _log1m_tanh_sq(x)
    return (base - correction).sum(dim=-1)


def pre_squash(action: torch.Tensor) -> torch.Tensor:
    ratio = torch.clamp(action / ACTION_BOUND, -1.0 + 1e-6, 1.0 - 1e-6)
    return torch.atanh(ratio)


# ---------------------------------------------------------------------------
# Vectorized goal-reaching environment
# ---------------------------------------------------------------------------

@dataclass
class EnvConfig:
    n_envs: int = 32
    episode_frames: int = 900  # 30 s at 30 fps
    goal_radius: tuple[float, float] = (1.0, 4.0)
    floor_height: float = 0.0
    guidance: float = 1.0  # CFG weight used inside env steps


class GoalReachEnv:
    """Batch of goal-reaching episodes over a frozen generative stack."""

    def __init__(self, stack: GeneratorStack, label_id: int, cfg: EnvConfig, seed: int = 0):
        self.stack = stack
        self.label_id = label_id
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)
        self.layout = stack.layout
        self.skel = stack.skeleton
        self.h = stack.history_len
        self.f = stack.future_len
        self.w_floor = floor_weight_for_label(label_id)
        self.max_steps = cfg.episode_frames // self.f
        seed_pose = synthesize_clip(GaitSpec("stand", seed=0), 10, self.skel)[: self.h]
        self._seed_pose = seed_pose
        with torch.no_grad():
            emb = stack.denoiser.text_embed(torch.tensor([label_id]))
        self.text_emb = emb.detach()
        b = cfg.n_envs
        self.tails = torch.zeros(b, self.h, self.layout.dim)
        self.goals = torch.zeros(b, 2)
        self.steps = torch.zeros(b, dtype=torch.long)
        self.episode_return = torch.zeros(b)
        self.reset()

    @property
    def obs_dim(self) -> int:
        return observation_dim(self.layout, self.h, self.text_emb.shape[-1])

    def _sample_goal(self, pelvis_xy: np.ndarray) -> np.ndarray:
        r = self.rng.uniform(*self.cfg.goal_radius)
        ang = self.rng.uniform(0.0, 2.0 * math.pi)
        return pelvis_xy + r * np.array([math.cos(ang), math.sin(ang)])

    def reset(self, indices: list[int] | None = None) -> torch.Tensor:
        idx = range(self.cfg.n_envs) if indices is None else indices
        for i in idx:
            yaw = self.rng.uniform(0.0, 2.0 * math.pi)
            from .rotations import yaw_matrix
            from .frames import decanonicalize, CanonicalTransform, canonicalize

            local, _ = canonicalize(self._seed_pose.to(torch.float64), self.skel)
            tf = CanonicalTransform(
                rotation=yaw_matrix(yaw, dtype=torch.float64),
                translation=torch.zeros(3, dtype=torch.float64),
            )
            self.tails[i] = decanonicalize(local, tf, self.skel).to(torch.float32)
            pelvis = self.layout.joints_of(self.tails[i, -1])[0, :2].numpy()
            self.goals[i] = torch.from_numpy(self._sample_goal(pelvis)).float()
            self.steps[i] = 0
            self.episode_return[i] = 0.0
        return self.observe()

    def observe(self) -> torch.Tensor:
        local, rot, trans, _ = canonicalize_batch(self.tails, self.skel)
        goal3 = torch.cat([self.goals, trans[:, 2:3]], dim=-1)
        goal_local = torch.einsum("bj,bjk->bk", goal3 - trans, rot)[:, :2]
        floor_rel = torch.full((self.cfg.n_envs,), self.cfg.floor_height) - trans[:, 2]
        text = self.text_emb.expand(self.cfg.n_envs, -1)
        return build_observation(local, goal_local, floor_rel, text, self.layout)

    def transition(self, tails: torch.Tensor, actions: torch.Tensor) -> torch.Tensor:
        """Pure (state, action) -> new world frames; deterministic via DDIM."""
        with torch.no_grad():
            local, rot, trans, _ = canonicalize_batch(tails, self.skel)
            labels = torch.full((tails.shape[0],), self.label_id, dtype=torch.long)
            zhat0 = ddim_sample(
                self.stack.denoiser, actions, local, labels, self.stack.schedule, w=self.cfg.guidance
            )
            future = self.stack.vae.decode(local, zhat0 * self.stack.latent_scale)
            return decanonicalize_batch(future, rot, trans, self.skel)

    def step(self, actions: torch.Tensor):
        """Returns (obs, reward breakdown, done, info). Done envs auto-reset."""
        world = self.transition(self.tails, actions)
        if not torch.isfinite(world).all():
            raise FloatingPointError("environment produced non-finite frames")
        rewards = compute_reward(
            self.tails[:, -1], world, self.goals, self.layout,
            self.skel.foot_joints, self.w_floor, floor_height=self.cfg.floor_height,
        )
        self.tails = world[:, -self.h:]
        self.steps += 1
        success = rewards.r_succ > 0.5
        budget = self.steps >= self.max_steps
        done = success | budget
        total = rewards.weighted_total
        self.episode_return += total
        info = {
            "success": success.clone(),
            "episode_return": self.episode_return.clone(),
            "steps": self.steps.clone(),
        }
        done_idx = done.nonzero(as_tuple=True)[0].tolist()
        if done_idx:
            self.reset(done_idx)
        return self.observe(), rewards, done, info


# ---------------------------------------------------------------------------
# PPO
# ---------------------------------------------------------------------------

@dataclass
class PPOConfig:
    updates: int = 150
    horizon: int = 64
    epochs: int = 4
    minibatch_size: int = 512
    clip: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    lr: float = 3e-4
    value_coef: float = 0.5
    entropy_coef: float = 0.001
    kl_limit: float = 0.05
    max_grad_norm: float = 1.0
    log_every: int = 5


def ppo_train(
    env: GoalReachEnv,
    policy: ActorCritic | None = None,
    cfg: PPOConfig | None = None,
    seed: int = 0,
) -> tuple[ActorCritic, list[dict]]:
    """Clipped-surrogate PPO with GAE, entropy bonus, and a KL early-stop guard."""
    cfg = cfg or PPOConfig()
    torch.manual_seed(seed)
    gen = torch.Generator().manual_seed(seed + 7)
    if policy is None:
        policy = ActorCritic(PolicyConfig(obs_dim=env.obs_dim, action_dim=env.stack.latent_dim))
    opt = torch.optim.Adam(policy.parameters(), lr=cfg.lr)
    b = env.cfg.n_envs
    curves: list[dict] = []
    best_return = -float("inf")
    best_state = {k: v.clone() for k, v in policy.state_dict().items()}
    finished_returns: list[float] = []
    finished_success: list[float] = []

    obs = env.observe()
    for update in range(cfg.updates):
        obs_buf = torch.zeros(cfg.horizon, b, env.obs_dim)
        act_buf = torch.zeros(cfg.horizon, b, env.stack.latent_dim)
        x_buf = torch.zeros_like(act_buf)  # pre-squash samples for exact log-probs
        logp_buf = torch.zeros(cfg.horizon, b)
        rew_buf = torch.zeros(cfg.horizon, b)
        val_buf = torch.zeros(cfg.horizon, b)
        done_buf = torch.zeros(cfg.horizon, b)

        policy.eval()
        with torch.no_grad():
            for t in range(cfg.horizon):
                mean = policy.actor(obs)
                std = policy.log_std.clamp(-5.0, 2.0).exp()
                x = mean + std * torch.randn(mean.shape, generator=gen)
                action = ACTION_BOUND * torch.tanh(x)
                logp = gaussian_tanh_log_prob(policy, obs, x)
                value = policy.value(obs)
                next_obs, rewards, done, info = env.step(action)
                obs_buf[t] = obs
                act_buf[t] = action
                x_buf[t] = x
                logp_buf[t] = logp
                val_buf[t] = value
                rew_buf[t] = rewards.weighted_total
                done_buf[t] = done.float()
                obs = next_obs
                for i in done.nonzero(as_tuple=True)[0].tolist():
                    # episode stats were accumulated before the auto-reset
                    finished_returns.append(float(info["episode_return"][i] ))
                    finished_success.append(float(info["success"][i]))
            last_value = policy.value(obs)

        # GAE; done bootstraps to zero (success or truncation at budget)
        adv = torch.zeros_like(rew_buf)
        last_gae = torch.zeros(b)
        for t in reversed(range(cfg.horizon)):
            next_v = last_value if t == cfg.horizon - 1 else val_buf[t + 1]
            mask = 1.0 - done_buf[t]
            delta = rew_buf[t] + cfg.gamma * next_v * mask - val_buf[t]
            last_gae = delta + cfg.gamma * cfg.gae_lambda * mask * last_gae
            adv[t] = last_gae
        returns = adv + val_buf

        flat = lambda x: x.reshape(-1, *x.shape[2:])
        obs_f, x_f, logp_f = flat(obs_buf), flat(x_buf), flat(logp_buf)
        adv_f, ret_f = flat(adv), flat(returns)
        adv_f = (adv_f - adv_f.mean()) / (adv_f.std() + 1e-8)

        policy.train()
        n = obs_f.shape[0]
        stop = False
        pi_loss = v_loss = kl_val = 0.0
        for epoch in range(cfg.epochs):
            if stop:
                break
            perm = torch.randperm(n, generator=gen)
            for lo in range(0, n, cfg.minibatch_size):
                idx = perm[lo: lo + cfg.minibatch_size]
                new_logp = gaussian_tanh_log_prob(policy, obs_f[idx], x_f[idx])
                ratio = torch.exp(new_logp - logp_f[idx])
                surr1 = ratio * adv_f[idx]
                surr2 = torch.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * adv_f[idx]
                pi = -torch.min(surr1, surr2).mean()
                value = policy.value(obs_f[idx])
                v = F.mse_loss(value, ret_f[idx])
                entropy = (policy.log_std.clamp(-5.0, 2.0) + 0.5 * math.log(2 * math.pi * math.e)).sum()
                loss = pi + cfg.value_coef * v - cfg.entropy_coef * entropy
                if not torch.isfinite(loss):
                    policy.load_state_dict(best_state)
                    policy.eval()
                    return policy, curves
                opt.zero_grad()
                loss.backward()
                nn.utils.clip_grad_norm_(policy.parameters(), cfg.max_grad_norm)
                opt.step()
                pi_loss, v_loss = float(pi.detach()), float(v.detach())
                with torch.no_grad():
                    kl_val = float((logp_f[idx] - gaussian_tanh_log_prob(policy, obs_f[idx], x_f[idx])).mean())
                if kl_val > cfg.kl_limit:
                    stop = True
                    break

        window_ret = float(np.mean(finished_returns[-50:])) if finished_returns else float("nan")
        window_succ = float(np.mean(finished_success[-50:])) if finished_success else 0.0
        if finished_returns and window_ret > best_return:
            best_return = window_ret
            best_state = {k: v.clone() for k, v in policy.state_dict().items()}
        if update % cfg.log_every == 0 or update == cfg.updates - 1:
            curves.append(
                {
                    "update": update,
                    "mean_return": window_ret,
                    "success_rate": window_succ,
                    "pi_loss": pi_loss,
                    "v_loss": v_loss,
                    "kl": kl_val,
                    "reward_mean": float(rew_buf.mean()),
                    "log_std": float(policy.log_std.mean()),
                }
            )
    policy.load_state_dict(best_state)
    policy.eval()
    return policy, curves


# ---------------------------------------------------------------------------
# Waypoint evaluation
# ---------------------------------------------------------------------------

def generate_waypoint_paths(
    n_paths: int, rng: np.random.Generator, n_waypoints: tuple[int, int] = (2, 3),
    spacing: tuple[float, float] = (1.5, 3.0),
) -> list[list[tuple[float, float]]]:
    paths = []
    for _ in range(n_paths):
        k = int(rng.integers(n_waypoints[0], n_waypoints[1] + 1))
        pos = np.zeros(2)
        pts = []
        heading = rng.uniform(0, 2 * math.pi)
        for _ in range(k):
            heading += rng.uniform(-0.8, 0.8)
            pos = pos + rng.uniform(*spacing) * np.array([math.cos(heading), math.sin(heading)])
            pts.append((float(pos[0]), float(pos[1])))
        paths.append(pts)
    return paths


def waypoint_eval(
    policy: ActorCritic,
    stack: GeneratorStack,
    paths: list[list[tuple[float, float]]],
    label_id: int,
    budget_frames: int = 900,
    floor_height: float = 0.0,
) -> dict:
    """Walk each waypoint list with the deterministic policy; goals switch on
    success. Reports reach time, success rate, skate, and floor distance."""
    layout = stack.layout
    skel = stack.skeleton
    h, f = stack.history_len, stack.future_len
    env = GoalReachEnv(
        stack, label_id,
        EnvConfig(n_envs=len(paths), episode_frames=budget_frames, guidance=1.0, floor_height=floor_height),
        seed=0,
    )
    b = len(paths)
    wp_index = [0] * b
    reached_final = [False] * b
    reach_time_s: list[float | None] = [None] * b
    env.goals = torch.tensor([p[0] for p in paths], dtype=torch.float32)
    env.steps = torch.zeros(b, dtype=torch.long)
    motions = [env.tails.clone()[i] for i in range(b)]
    max_steps = budget_frames // f

    with torch.no_grad():
        for step in range(max_steps):
            obs = env.observe()
            action, _ = act(policy, obs, deterministic=True)
            world = env.transition(env.tails, action)
            env.tails = world[:, -h:]
            for i in range(b):
                motions[i] = torch.cat([motions[i], world[i]], dim=0)
                if reached_final[i]:
                    continue
                pelvis = layout.joints_of(world[i, -1])[0, :2]
                d = float((env.goals[i] - pelvis).norm())
                if d < SUCCESS_RADIUS:
                    if wp_index[i] + 1 < len(paths[i]):
                        wp_index[i] += 1
                        env.goals[i] = torch.tensor(paths[i][wp_index[i]])
                    else:
                        reached_final[i] = True
                        reach_time_s[i] = (step + 1) * f / 30.0
            if all(reached_final):
                break

    times = [t for t in reach_time_s if t is not None]
    skates = [skate(m, skel.foot_joints, 30.0, layout, floor_height) for m in motions]
    floors = [floor_distance(m, skel.foot_joints, layout, floor_height) for m in motions]
    return {
        "success_rate": sum(reached_final) / b,
        "reach_time_s": float(np.mean(times)) if times else float("nan"),
        "skate_cm_s": float(np.mean(skates)),
        "floor_distance_cm": float(np.mean(floors)),
        "per_path_success": reached_final,
    }


POLICY_KIND = "goal-policy"


def save_policy(path, policy: ActorCritic, label_id: int, extra: dict | None = None) -> None:
    config = {"policy": asdict(policy.cfg), "label_id": label_id, **(extra or {})}
    save_module(path, POLICY_KIND, config, policy)


def load_policy(path) -> tuple[ActorCritic, int, dict]:
    config, params, _ = load_module_tensors(path, POLICY_KIND)
    cfg = PolicyConfig(**config["policy"])
    policy = ActorCritic(cfg)
    policy.load_state_dict(params)
    policy.eval()
    return policy, config["label_id"], config
