// WebSocket <-> TCP bridge: browsers cannot open raw sockets, so this relay
// forwards NDJSON lines verbatim between a ws client and the dartd port.
//
//   node dist/bridge.js [--dartd-port 8707] [--ws-port 8708]

import net from "node:net";
import { WebSocketServer, WebSocket } from "ws";
import { LineSplitter } from "./protocol.js";

function arg(name: string, fallback: number): number {
  const i = process.argv.indexOf(`--${name}`);
  return i >= 0 ? Number(process.argv[i + 1]) : fallback;
}

const dartdPort = arg("dartd-port", Number(process.env.DARTD_PORT ?? 8707));
const wsPort = arg("ws-port", 8708);

const wss = new WebSocketServer({ port: wsPort });
console.log(`bridge: ws://127.0.0.1:${wsPort} <-> tcp 127.0.0.1:${dartdPort}`);

wss.on("connection", (ws: WebSocket) => {
  const tcp = net.createConnection({ host: "127.0.0.1", port: dartdPort });
  const splitter = new LineSplitter();

  tcp.on("data", (chunk) => {
    for (const line of splitter.push(chunk.toString("utf-8"))) {
      if (ws.readyState === WebSocket.OPEN) ws.send(line + "\n");
    }
  });
  tcp.on("close", () => ws.close());
  tcp.on("error", () => ws.close());

  ws.on("message", (data) => {
    const text = data.toString();
    tcp.write(text.endsWith("\n") ? text : text + "\n");
  });
  ws.on("close", () => tcp.destroy());
  ws.on("error", () => tcp.destroy());
});
