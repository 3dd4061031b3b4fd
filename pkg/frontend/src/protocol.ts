// Wire protocol of the dartd stream: one JSON object per line, both ways.
// Every outgoing message is validated against these schemas before sending;
// incoming messages that fail to parse are surfaced as protocol errors, not
// crashes.

import { z } from "zod";

export const SkeletonSchema = z.object({
  name: z.string(),
  parent: z.array(z.number().int()),
  rest_offsets: z.array(z.array(z.number()).length(3)),
  joint_names: z.array(z.string()),
  left_hip: z.number().int(),
  right_hip: z.number().int(),
  foot_joints: z.array(z.number().int()),
});

export const HelloSchema = z.object({
  type: z.literal("hello"),
  skeleton: SkeletonSchema,
  vocab: z.array(z.string()),
  fps: z.number().positive(),
  feature_dim: z.number().int().positive(),
  history_len: z.number().int().positive(),
  future_len: z.number().int().positive(),
});

export const FrameBatchSchema = z.object({
  type: z.literal("frame_batch"),
  frame_index: z.number().int().nonnegative(),
  fps: z.number().positive(),
  frames: z.array(z.array(z.number())),
  labels: z.array(z.string()),
  goal_reached: z.boolean().optional(),
});

export const MetricsSchema = z.object({
  type: z.literal("metrics"),
  fps_measured: z.number(),
  latency_ms: z.number(),
});

export const ErrorSchema = z.object({
  type: z.literal("error"),
  message: z.string(),
});

export const StopSchema = z.object({ type: z.literal("stop") });

export const ServerMessageSchema = z.discriminatedUnion("type", [
  HelloSchema,
  FrameBatchSchema,
  MetricsSchema,
  ErrorSchema,
  StopSchema,
]);

export const SetPromptSchema = z.object({
  type: z.literal("set_prompt"),
  label: z.string(),
});

export const SetGoalSchema = z.object({
  type: z.literal("set_goal"),
  x: z.number(),
  y: z.number(),
});

export const ClientMessageSchema = z.discriminatedUnion("type", [
  SetPromptSchema,
  SetGoalSchema,
  StopSchema,
]);

export type Skeleton = z.infer<typeof SkeletonSchema>;
export type Hello = z.infer<typeof HelloSchema>;
export type FrameBatch = z.infer<typeof FrameBatchSchema>;
export type MetricsMsg = z.infer<typeof MetricsSchema>;
export type ServerMessage = z.infer<typeof ServerMessageSchema>;
export type ClientMessage = z.infer<typeof ClientMessageSchema>;

export function encodeClientMessage(msg: ClientMessage): string {
  // throws if the message does not satisfy the schema
  return JSON.stringify(ClientMessageSchema.parse(msg)) + "\n";
}

export type ParseResult =
  | { ok: true; message: ServerMessage }
  | { ok: false; error: string };

export function parseServerLine(line: string): ParseResult {
  let raw: unknown;
  try {
    raw = JSON.parse(line);
  } catch (e) {
    return { ok: false, error: `not JSON: ${String(e)}` };
  }
  const result = ServerMessageSchema.safeParse(raw);
  if (!result.success) {
    return { ok: false, error: result.error.message };
  }
  return { ok: true, message: result.data };
}

/** Splits a byte stream into complete lines, buffering partial tails. */
export class LineSplitter {
  private tail = "";

  push(chunk: string): string[] {
    this.tail += chunk;
    const parts = this.tail.split("\n");
    this.tail = parts.pop() ?? "";
    return parts.filter((p) => p.length > 0);
  }
}
