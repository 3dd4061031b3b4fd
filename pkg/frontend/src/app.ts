// Browser entry point: connect over WebSocket (through the bridge), render
// the stream, and wire label buttons + click-to-goal.
//
// URL query: ?endpoint=ws://host:port&fps=30

import { FrameClock, StreamClient } from "./client.js";
import { FrameBatch } from "./protocol.js";
import { SkeletonViewer, unprojectToFloor } from "./viewer.js";
import { WebSocketTransport } from "./transport.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function main() {
  const params = new URLSearchParams(window.location.search);
  const endpoint = params.get("endpoint") ?? "ws://127.0.0.1:8708";
  const fpsOverride = params.get("fps");

  const canvas = el<HTMLCanvasElement>("stage");
  const ctx = canvas.getContext("2d")!;
  const status = el<HTMLDivElement>("status");
  const buttons = el<HTMLDivElement>("buttons");
  const metricsBox = el<HTMLDivElement>("metrics");
  const reconnectBtn = el<HTMLButtonElement>("reconnect");

  let viewer: SkeletonViewer | null = null;
  let client: StreamClient | null = null;
  let clock: FrameClock | null = null;
  let currentFrame: number[] | null = null;
  let currentLabel = "";
  let goal: { x: number; y: number; reached: boolean } | null = null;

  function connect() {
    status.textContent = `connecting to ${endpoint} ...`;
    const ws = new WebSocket(endpoint);
    ws.onopen = () => {
      status.textContent = "connected";
    };
    const transport = new WebSocketTransport(ws);
    client = new StreamClient(transport, {
      onState: (st) => {
        if (st.hello && !viewer) {
          viewer = new SkeletonViewer(ctx, st.hello.skeleton, canvas.width, canvas.height);
          clock = new FrameClock(fpsOverride ? Number(fpsOverride) : st.hello.fps);
          buttons.innerHTML = "";
          for (const label of st.hello.vocab) {
            const b = document.createElement("button");
            b.textContent = label;
            b.onclick = () => client?.sendPrompt(label);
            buttons.appendChild(b);
          }
        }
        if (!st.connected) {
          status.textContent = "disconnected";
        }
        if (st.lastError) {
          showToast(st.lastError);
          st.lastError = null;
        }
        if (st.goalReached && goal) goal.reached = true;
        const m = st.lastMetrics;
        metricsBox.textContent =
          `label ${st.activeLabel ?? "-"}${st.pendingLabel ? " (pending " + st.pendingLabel + ")" : ""} | ` +
          `frames ${st.framesReceived} dropped ${st.framesDropped}` +
          (m ? ` | server ${m.fps_measured.toFixed(1)} fps, ${m.latency_ms.toFixed(0)} ms` : "");
      },
      onBatch: (_b: FrameBatch) => undefined,
    });
  }

  function showToast(message: string) {
    const toast = document.createElement("div");
    toast.className = "toast";
    toast.textContent = message;
    document.body.appendChild(toast);
    setTimeout(() => toast.remove(), 4000);
  }

  canvas.onclick = (ev) => {
    if (!viewer || !client) return;
    const rect = canvas.getBoundingClientRect();
    const [wx, wy] = unprojectToFloor(viewer.cam, ev.clientX - rect.left, ev.clientY - rect.top);
    goal = { x: wx, y: wy, reached: false };
    client.sendGoal(wx, wy);
  };

  reconnectBtn.onclick = () => {
    client?.close();
    viewer = null;
    connect();
  };

  let lastTime = performance.now();
  function renderLoop(now: number) {
    const dt = now - lastTime;
    lastTime = now;
    if (client && clock) {
      const n = clock.tick(dt);
      for (let i = 0; i < n; i++) {
        const item = client.frameBuffer.shift();
        if (!item) break;
        currentFrame = item.frame;
        currentLabel = item.label;
      }
    }
    viewer?.render(currentFrame, currentLabel, goal);
    requestAnimationFrame(renderLoop);
  }

  connect();
  requestAnimationFrame(renderLoop);
}

main();
