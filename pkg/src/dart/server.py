"""Real-time streaming service: newline-delimited JSON over TCP.

Per connection the server sends a hello describing the skeleton and vocab,
then emits frame_batch messages paced at the configured fps (or as fast as
possible with pacing off). Clients may send set_prompt at any time (applied
at the next primitive boundary) and set_goal to switch the session into
policy-driven goal reaching. Malformed messages get an error reply but keep
the connection open.
"""

from __future__ import annotations

import asyncio
import json
import time

import torch

from .config import RunConfig
from .frames import canonicalize_batch, decanonicalize_batch
from .gaitgen import LABELS, LABEL_IDS
from .policy import SUCCESS_RADIUS, ActorCritic, act, build_observation
from .rollout import GeneratorStack, StreamSession

KNOWN_TYPES = {"hello", "set_prompt", "set_goal", "frame_batch", "metrics", "error", "stop"}
METRICS_EVERY = 10  # batches


class PolicyDriver:
    """Deterministic goal-reaching steps over the session's world history."""

    def __init__(self, stack: GeneratorStack, policy: ActorCritic, label_id: int, goal_xy):
        self.stack = stack
        self.policy = policy
        self.label_id = label_id
        self.goal = torch.tensor([goal_xy[0], goal_xy[1]], dtype=torch.float32)
        with torch.no_grad():
            self.text_emb = stack.denoiser.text_embed(torch.tensor([label_id])).detach()

    def step(self, world_tail: torch.Tensor) -> tuple[torch.Tensor, bool]:
        """(H, D) world history -> (F, D) world frames and success flag."""
        from .diffusion import ddim_sample

        layout = self.stack.layout
        skel = self.stack.skeleton
        with torch.no_grad():
            tails = world_tail.unsqueeze(0).to(torch.float32)
            local, rot, trans, _ = canonicalize_batch(tails, skel)
            goal3 = torch.cat([self.goal, trans[0, 2:3]])
            goal_local = ((goal3 - trans[0]) @ rot[0])[:2].unsqueeze(0)
            floor_rel = -trans[:, 2]
            obs = build_observation(local, goal_local, floor_rel, self.text_emb, layout)
            action, _ = act(self.policy, obs, deterministic=True)
            labels = torch.tensor([self.label_id], dtype=torch.long)
            zhat0 = ddim_sample(self.stack.denoiser, action, local, labels, self.stack.schedule, w=1.0)
            future = self.stack.vae.decode(local, zhat0 * self.stack.latent_scale)
            world = decanonicalize_batch(future, rot, trans, skel)[0]
            pelvis = layout.joints_of(world[-1])[0, :2]
            success = bool((pelvis - self.goal).norm() < SUCCESS_RADIUS)
        return world, success


class ClientSession:
    def __init__(self, stack: GeneratorStack, cfg: RunConfig, policy_bundle, pacing: bool, session_id: int):
        self.stack = stack
        self.cfg = cfg
        self.pacing = pacing
        self.session_id = session_id
        self.policy_bundle = policy_bundle  # (ActorCritic, label_id, config) or None
        self.stream = StreamSession(
            stack, label_id=LABEL_IDS["walk"], w=cfg.guidance, sampler=cfg.sampler,
            fps=cfg.fps, seed=cfg.seed + session_id,
        )
        self.driver: PolicyDriver | None = None
        self.frame_index = self.stream.world.shape[0]
        self.stopped = False

    def handle(self, msg: dict) -> list[dict]:
        kind = msg.get("type")
        if kind == "set_prompt":
            label = msg.get("label")
            if label not in LABEL_IDS:
                return [{"type": "error", "message": f"unknown label {label!r}"}]
            self.driver = None  # back to label streaming
            self.stream.set_label(LABEL_IDS[label])
            return []
        if kind == "set_goal":
            if self.policy_bundle is None:
                return [{"type": "error", "message": "no policy loaded; set_goal unavailable"}]
            try:
                x, y = float(msg["x"]), float(msg["y"])
            except (KeyError, TypeError, ValueError):
                return [{"type": "error", "message": "set_goal needs numeric x and y"}]
            policy, label_id, _ = self.policy_bundle
            self.driver = PolicyDriver(self.stack, policy, label_id, (x, y))
            return []
        if kind == "stop":
            self.stopped = True
            return [{"type": "stop"}]
        return [{"type": "error", "message": f"unknown message type {kind!r}"}]

    def next_batch(self) -> tuple[dict, float]:
        t0 = time.perf_counter()
        if self.driver is not None:
            world, success = self.driver.step(self.stream.world[-self.stack.history_len:])
            self.stream.world = torch.cat([self.stream.world, world.to(torch.float64)], dim=0)
            frames = world
            label_id = self.driver.label_id
            extra = {"goal_reached": success}
        else:
            frames, metrics = self.stream.stream_step()
            label_id = metrics["label_id"]
            extra = {}
        latency = time.perf_counter() - t0
        batch = {
            "type": "frame_batch",
            "frame_index": self.frame_index,
            "fps": self.cfg.fps,
            "frames": [[float(v) for v in row] for row in frames],
            "labels": [LABELS[label_id]] * frames.shape[0],
            **extra,
        }
        self.frame_index += frames.shape[0]
        return batch, latency


async def _send(writer: asyncio.StreamWriter, msg: dict) -> None:
    writer.write((json.dumps(msg) + "\n").encode("utf-8"))
    await writer.drain()


async def handle_connection(
    reader: asyncio.StreamReader,
    writer: asyncio.StreamWriter,
    stack: GeneratorStack,
    cfg: RunConfig,
    policy_bundle,
    pacing: bool,
    session_counter: list[int],
) -> None:
    session_counter[0] += 1
    session = ClientSession(stack, cfg, policy_bundle, pacing, session_counter[0])
    skel = stack.skeleton
    await _send(writer, {
        "type": "hello",
        "skeleton": skel.to_dict(),
        "vocab": list(LABELS),
        "fps": cfg.fps,
        "feature_dim": stack.layout.dim,
        "history_len": stack.history_len,
        "future_len": stack.future_len,
    })

    inbox: asyncio.Queue = asyncio.Queue()

    async def read_loop():
        while True:
            line = await reader.readline()
            if not line:
                await inbox.put(None)
                return
            await inbox.put(line)

    reader_task = asyncio.create_task(read_loop())
    batch_count = 0
    latencies: list[float] = []
    window_start = time.perf_counter()
    window_frames = 0
    try:
        while not session.stopped:
            # drain pending client messages
            while not inbox.empty():
                line = inbox.get_nowait()
                if line is None:
                    return
                try:
                    msg = json.loads(line.decode("utf-8"))
                    if not isinstance(msg, dict):
                        raise ValueError("message must be an object")
                except (json.JSONDecodeError, UnicodeDecodeError, ValueError) as e:
                    await _send(writer, {"type": "error", "message": f"malformed message: {e}"})
                    continue
                for reply in session.handle(msg):
                    await _send(writer, reply)
            if session.stopped:
                break
            try:
                batch, latency = session.next_batch()
            except Exception as e:
                await _send(writer, {"type": "error", "message": f"generation failure: {e}"})
                await _send(writer, {"type": "stop"})
                return
            await _send(writer, batch)
            latencies.append(latency)
            window_frames += len(batch["frames"])
            batch_count += 1
            if batch_count % METRICS_EVERY == 0:
                elapsed = time.perf_counter() - window_start
                await _send(writer, {
                    "type": "metrics",
                    "fps_measured": window_frames / elapsed if elapsed > 0 else 0.0,
                    "latency_ms": 1000.0 * sum(latencies[-METRICS_EVERY:]) / METRICS_EVERY,
                })
                window_start = time.perf_counter()
                window_frames = 0
            if pacing:
                target = len(batch["frames"]) / cfg.fps
                sleep_for = max(0.0, target - latency)
                await asyncio.sleep(sleep_for)
            else:
                await asyncio.sleep(0)
    finally:
        reader_task.cancel()
        writer.close()
        try:
            await writer.wait_closed()
        except (ConnectionError, BrokenPipeError):
            pass


async def serve_forever(stack, cfg: RunConfig, port: int, policy=None, pacing: bool = True, ready: asyncio.Event | None = None, port_holder: list | None = None):
    counter = [0]

    async def handler(reader, writer):
        try:
            await handle_connection(reader, writer, stack, cfg, policy, pacing, counter)
        except (ConnectionError, BrokenPipeError, asyncio.IncompleteReadError):
            pass

    server = await asyncio.start_server(handler, host="127.0.0.1", port=port)
    actual_port = server.sockets[0].getsockname()[1]
    if port_holder is not None:
        port_holder.append(actual_port)
    if ready is not None:
        ready.set()
    print(f"dartd serving on 127.0.0.1:{actual_port}")
    async with server:
        await server.serve_forever()
