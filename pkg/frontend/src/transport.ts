// Duplex line transports over the same NDJSON protocol: a WebSocket flavor
// for the browser (via the bridge) and a raw TCP flavor for node tests.

import { LineSplitter } from "./protocol.js";

export interface Transport {
  sendLine(line: string): void;
  onLine(cb: (line: string) => void): void;
  onClose(cb: () => void): void;
  close(): void;
}

export class WebSocketTransport implements Transport {
  private splitter = new LineSplitter();
  private lineCb: ((line: string) => void) | null = null;
  private closeCb: (() => void) | null = null;

  constructor(private ws: WebSocket) {
    ws.onmessage = (ev) => {
      const data = typeof ev.data === "string" ? ev.data : "";
      for (const line of this.splitter.push(data)) {
        this.lineCb?.(line);
      }
    };
    ws.onclose = () => this.closeCb?.();
    ws.onerror = () => this.closeCb?.();
  }

  sendLine(line: string): void {
    this.ws.send(line);
  }

  onLine(cb: (line: string) => void): void {
    this.lineCb = cb;
  }

  onClose(cb: () => void): void {
    this.closeCb = cb;
  }

  close(): void {
    this.ws.close();
  }
}

export async function connectTcp(host: string, port: number): Promise<Transport> {
  const net = await import("node:net");
  const socket = net.createConnection({ host, port });
  await new Promise<void>((resolve, reject) => {
    socket.once("connect", () => resolve());
    socket.once("error", reject);
  });
  const splitter = new LineSplitter();
  let lineCb: ((line: string) => void) | null = null;
  let closeCb: (() => void) | null = null;
  socket.on("data", (chunk: Buffer) => {
    for (const line of splitter.push(chunk.toString("utf-8"))) {
      lineCb?.(line);
    }
  });
  socket.on("close", () => closeCb?.());
  socket.on("error", () => closeCb?.());
  return {
    sendLine(line: string) {
      socket.write(line.endsWith("\n") ? line : line + "\n");
    },
    onLine(cb) {
      lineCb = cb;
    },
    onClose(cb) {
      closeCb = cb;
    },
    close() {
      socket.destroy();
    },
  };
}
