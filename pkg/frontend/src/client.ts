// Session state machine: parses the stream, keeps a bounded frame buffer,
// and never lets a malformed message take the reader down.

import {
  ClientMessage,
  FrameBatch,
  Hello,
  MetricsMsg,
  encodeClientMessage,
  parseServerLine,
} from "./protocol.js";
import { Transport } from "./transport.js";

export interface ViewState {
  connected: boolean;
  hello: Hello | null;
  activeLabel: string | null;
  pendingLabel: string | null;
  pendingGoal: { x: number; y: number } | null;
  lastMetrics: MetricsMsg | null;
  lastError: string | null;
  framesReceived: number;
  framesDropped: number;
  goalReached: boolean;
}

export interface StreamClientOptions {
  bufferCap?: number; // frames kept before drop-oldest kicks in
  onBatch?: (batch: FrameBatch) => void;
  onState?: (state: ViewState) => void;
}

export class StreamClient {
  readonly state: ViewState = {
    connected: false,
    hello: null,
    activeLabel: null,
    pendingLabel: null,
    pendingGoal: null,
    lastMetrics: null,
    lastError: null,
    framesReceived: 0,
    framesDropped: 0,
    goalReached: false,
  };

  /** Ring buffer of frames awaiting the render clock. */
  readonly frameBuffer: { frame: number[]; label: string; index: number }[] = [];
  private readonly bufferCap: number;

  constructor(private transport: Transport, private opts: StreamClientOptions = {}) {
    this.bufferCap = opts.bufferCap ?? 240;
    transport.onLine((line) => this.handleLine(line));
    transport.onClose(() => {
      this.state.connected = false;
      this.emit();
    });
    this.state.connected = true;
  }

  private emit() {
    this.opts.onState?.(this.state);
  }

  private handleLine(line: string) {
    const parsed = parseServerLine(line);
    if (!parsed.ok) {
      this.state.lastError = `protocol: ${parsed.error}`;
      this.emit();
      return;
    }
    const msg = parsed.message;
    switch (msg.type) {
      case "hello":
        this.state.hello = msg;
        break;
      case "frame_batch": {
        for (let i = 0; i < msg.frames.length; i++) {
          this.frameBuffer.push({
            frame: msg.frames[i],
            label: msg.labels[i] ?? "",
            index: msg.frame_index + i,
          });
        }
        while (this.frameBuffer.length > this.bufferCap) {
          this.frameBuffer.shift();
          this.state.framesDropped += 1;
        }
        this.state.framesReceived += msg.frames.length;
        this.state.activeLabel = msg.labels[0] ?? this.state.activeLabel;
        if (this.state.pendingLabel && this.state.activeLabel === this.state.pendingLabel) {
          this.state.pendingLabel = null;
        }
        if (msg.goal_reached) {
          this.state.goalReached = true;
          this.state.pendingGoal = null;
        }
        this.opts.onBatch?.(msg);
        break;
      }
      case "metrics":
        this.state.lastMetrics = msg;
        break;
      case "error":
        this.state.lastError = msg.message;
        break;
      case "stop":
        this.state.connected = false;
        break;
    }
    this.emit();
  }

  private send(msg: ClientMessage) {
    this.transport.sendLine(encodeClientMessage(msg));
  }

  sendPrompt(label: string) {
    const vocab = this.state.hello?.vocab ?? [];
    if (!vocab.includes(label)) {
      this.state.lastError = `label ${label} not in vocab`;
      this.emit();
      return;
    }
    this.state.pendingLabel = label;
    this.send({ type: "set_prompt", label });
    this.emit();
  }

  sendGoal(x: number, y: number) {
    this.state.pendingGoal = { x, y };
    this.state.goalReached = false;
    this.send({ type: "set_goal", x, y });
    this.emit();
  }

  stop() {
    this.send({ type: "stop" });
  }

  close() {
    this.transport.close();
  }
}

/** Consumes buffered frames at the advertised fps; tolerant of jitter. */
export class FrameClock {
  private carry = 0;
  consumed = 0;

  constructor(private fps: number) {}

  /** Returns how many frames to consume after `dtMs` elapsed. */
  tick(dtMs: number): number {
    this.carry += (dtMs / 1000) * this.fps;
    const n = Math.floor(this.carry);
    this.carry -= n;
    this.consumed += n;
    return n;
  }
}
