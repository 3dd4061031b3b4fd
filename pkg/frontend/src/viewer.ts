// 2.5D stick-figure rendering on a canvas: bones between joint positions
// under a fixed-pitch orbit camera, plus floor grid and goal marker.

import { Skeleton } from "./protocol.js";

export interface Camera {
  yaw: number;   // radians, orbit about world +z
  pitch: number; // radians, 0 = side view
  scale: number; // pixels per meter
  cx: number;    // screen center offset
  cy: number;
  targetX: number; // world point the camera tracks
  targetY: number;
}

export function defaultCamera(width: number, height: number): Camera {
  return {
    yaw: Math.PI / 6,
    pitch: Math.PI / 5,
    scale: 140,
    cx: width / 2,
    cy: height * 0.62,
    targetX: 0,
    targetY: 0,
  };
}

/** World (x, y, z) -> screen pixels; z is up. */
export function project(cam: Camera, x: number, y: number, z: number): [number, number] {
  const dx = x - cam.targetX;
  const dy = y - cam.targetY;
  const rx = Math.cos(cam.yaw) * dx + Math.sin(cam.yaw) * dy;
  const ry = -Math.sin(cam.yaw) * dx + Math.cos(cam.yaw) * dy;
  const sx = cam.cx + cam.scale * rx;
  const sy = cam.cy + cam.scale * (Math.sin(cam.pitch) * ry - Math.cos(cam.pitch) * z);
  return [sx, sy];
}

/** Screen pixels -> world (x, y) on the floor plane z = 0. */
export function unprojectToFloor(cam: Camera, sx: number, sy: number): [number, number] {
  const rx = (sx - cam.cx) / cam.scale;
  const ry = (sy - cam.cy) / (cam.scale * Math.sin(cam.pitch));
  const dx = Math.cos(cam.yaw) * rx - Math.sin(cam.yaw) * ry;
  const dy = Math.sin(cam.yaw) * rx + Math.cos(cam.yaw) * ry;
  return [cam.targetX + dx, cam.targetY + dy];
}

/** Joint positions are packed as the fourth block of the feature vector. */
export function jointsOfFrame(frame: number[], jointCount: number): [number, number, number][] {
  const start = 3 + 6 + 6 * (jointCount - 1);
  const joints: [number, number, number][] = [];
  for (let j = 0; j < jointCount; j++) {
    joints.push([frame[start + 3 * j], frame[start + 3 * j + 1], frame[start + 3 * j + 2]]);
  }
  return joints;
}

export interface GoalMarker {
  x: number;
  y: number;
  reached: boolean;
}

export class SkeletonViewer {
  cam: Camera;

  constructor(
    private ctx: CanvasRenderingContext2D,
    private skeleton: Skeleton,
    width: number,
    height: number,
  ) {
    this.cam = defaultCamera(width, height);
  }

  render(frame: number[] | null, label: string, goal: GoalMarker | null) {
    const ctx = this.ctx;
    const { width, height } = ctx.canvas;
    ctx.fillStyle = "#10141a";
    ctx.fillRect(0, 0, width, height);

    const joints = frame ? jointsOfFrame(frame, this.skeleton.parent.length) : null;
    if (joints) {
      // camera follows the pelvis on the floor plane
      this.cam.targetX += 0.08 * (joints[0][0] - this.cam.targetX);
      this.cam.targetY += 0.08 * (joints[0][1] - this.cam.targetY);
    }

    this.drawGrid();
    if (goal) this.drawGoal(goal);
    if (joints) this.drawSkeleton(joints);

    ctx.fillStyle = "#9fd6ff";
    ctx.font = "16px monospace";
    ctx.fillText(label || "(no stream)", 12, 24);
  }

  private drawGrid() {
    const ctx = this.ctx;
    ctx.strokeStyle = "#22303c";
    ctx.lineWidth = 1;
    const n = 8;
    const cx = Math.round(this.cam.targetX);
    const cy = Math.round(this.cam.targetY);
    for (let i = -n; i <= n; i++) {
      let [x1, y1] = project(this.cam, cx + i, cy - n, 0);
      let [x2, y2] = project(this.cam, cx + i, cy + n, 0);
      ctx.beginPath(); ctx.moveTo(x1, y1); ctx.lineTo(x2, y2); ctx.stroke();
      [x1, y1] = project(this.cam, cx - n, cy + i, 0);
      [x2, y2] = project(this.cam, cx + n, cy + i, 0);
      ctx.beginPath(); ctx.moveTo(x1, y1); ctx.lineTo(x2, y2); ctx.stroke();
    }
  }

  private drawGoal(goal: GoalMarker) {
    const ctx = this.ctx;
    const [sx, sy] = project(this.cam, goal.x, goal.y, 0);
    ctx.strokeStyle = goal.reached ? "#67e06a" : "#ff5f56";
    ctx.lineWidth = 2;
    ctx.beginPath();
    ctx.arc(sx, sy, 10, 0, 2 * Math.PI);
    ctx.stroke();
    ctx.beginPath();
    ctx.moveTo(sx - 14, sy); ctx.lineTo(sx + 14, sy);
    ctx.moveTo(sx, sy - 14); ctx.lineTo(sx, sy + 14);
    ctx.stroke();
  }

  private drawSkeleton(joints: [number, number, number][]) {
    const ctx = this.ctx;
    ctx.strokeStyle = "#e8f2ff";
    ctx.lineWidth = 3;
    ctx.lineCap = "round";
    const parent = this.skeleton.parent;
    for (let j = 1; j < parent.length; j++) {
      const [x1, y1] = project(this.cam, ...joints[parent[j]]);
      const [x2, y2] = project(this.cam, ...joints[j]);
      ctx.beginPath(); ctx.moveTo(x1, y1); ctx.lineTo(x2, y2); ctx.stroke();
    }
    const [hx, hy] = project(this.cam, ...joints[0]);
    ctx.fillStyle = "#ffd166";
    ctx.beginPath();
    ctx.arc(hx, hy, 4, 0, 2 * Math.PI);
    ctx.fill();
  }
}
