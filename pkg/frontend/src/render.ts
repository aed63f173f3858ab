// Canvas world view: green pedestrians, blue user, robot with a velocity
// arrow, red star target, dashed social-distance ring, recent robot trail.

import { AgentRecord } from './protocol.js';
import { ViewModel } from './state.js';

const ARENA_MARGIN = 1.5; // meters shown past the arena edge

export interface Transform {
  scale: number;
  cx: number;
  cy: number;
}

export function worldTransform(canvas: HTMLCanvasElement, arenaRadius: number): Transform {
  const extent = 2 * (arenaRadius + ARENA_MARGIN);
  const scale = Math.min(canvas.width, canvas.height) / extent;
  return { scale, cx: canvas.width / 2, cy: canvas.height / 2 };
}

export function toScreen(t: Transform, x: number, y: number): [number, number] {
  return [t.cx + x * t.scale, t.cy - y * t.scale]; // world y points up
}

function circle(ctx: CanvasRenderingContext2D, t: Transform, pos: [number, number], radius: number,
                fill: string, stroke?: string): void {
  const [sx, sy] = toScreen(t, pos[0], pos[1]);
  ctx.beginPath();
  ctx.arc(sx, sy, radius * t.scale, 0, 2 * Math.PI);
  ctx.fillStyle = fill;
  ctx.fill();
  if (stroke) {
    ctx.strokeStyle = stroke;
    ctx.lineWidth = 1.5;
    ctx.stroke();
  }
}

function star(ctx: CanvasRenderingContext2D, t: Transform, pos: [number, number], size: number): void {
  const [sx, sy] = toScreen(t, pos[0], pos[1]);
  const r = size * t.scale;
  ctx.beginPath();
  for (let i = 0; i < 10; i++) {
    const angle = (Math.PI / 5) * i - Math.PI / 2;
    const radius = i % 2 === 0 ? r : r * 0.45;
    const px = sx + radius * Math.cos(angle);
    const py = sy + radius * Math.sin(angle);
    if (i === 0) ctx.moveTo(px, py);
    else ctx.lineTo(px, py);
  }
  ctx.closePath();
  ctx.fillStyle = '#d8342c';
  ctx.fill();
}

function arrow(ctx: CanvasRenderingContext2D, t: Transform, from: [number, number],
               vel: [number, number]): void {
  const speed = Math.hypot(vel[0], vel[1]);
  if (speed < 1e-3) return;
  const to: [number, number] = [from[0] + vel[0], from[1] + vel[1]];
  const [x0, y0] = toScreen(t, from[0], from[1]);
  const [x1, y1] = toScreen(t, to[0], to[1]);
  ctx.beginPath();
  ctx.moveTo(x0, y0);
  ctx.lineTo(x1, y1);
  ctx.strokeStyle = '#222';
  ctx.lineWidth = 2;
  ctx.stroke();
  const angle = Math.atan2(y1 - y0, x1 - x0);
  ctx.beginPath();
  ctx.moveTo(x1, y1);
  ctx.lineTo(x1 - 7 * Math.cos(angle - 0.4), y1 - 7 * Math.sin(angle - 0.4));
  ctx.lineTo(x1 - 7 * Math.cos(angle + 0.4), y1 - 7 * Math.sin(angle + 0.4));
  ctx.closePath();
  ctx.fillStyle = '#222';
  ctx.fill();
}

export function renderFrame(canvas: HTMLCanvasElement, vm: ViewModel, arenaRadius = 6.0): void {
  const ctx = canvas.getContext('2d');
  if (!ctx || !vm.snapshot) return; // skip the frame until a snapshot arrives
  const t = worldTransform(canvas, arenaRadius);
  ctx.clearRect(0, 0, canvas.width, canvas.height);

  // arena boundary
  ctx.beginPath();
  const [ax, ay] = toScreen(t, 0, 0);
  ctx.arc(ax, ay, arenaRadius * t.scale, 0, 2 * Math.PI);
  ctx.strokeStyle = '#ccc';
  ctx.lineWidth = 1;
  ctx.stroke();

  // robot trail
  ctx.beginPath();
  vm.trail.forEach((p, i) => {
    const [sx, sy] = toScreen(t, p[0], p[1]);
    if (i === 0) ctx.moveTo(sx, sy);
    else ctx.lineTo(sx, sy);
  });
  ctx.strokeStyle = 'rgba(60, 60, 60, 0.35)';
  ctx.lineWidth = 1.5;
  ctx.stroke();

  if (vm.target) star(ctx, t, vm.target, 0.35);

  const robot: AgentRecord = vm.snapshot.robot;
  // social-distance ring (surface distance d => ring radius robot.radius + d)
  ctx.setLineDash([6, 4]);
  ctx.beginPath();
  const [rx, ry] = toScreen(t, robot.pos[0], robot.pos[1]);
  ctx.arc(rx, ry, (robot.radius + vm.socialDistance) * t.scale, 0, 2 * Math.PI);
  ctx.strokeStyle = '#7a4fd0';
  ctx.stroke();
  ctx.setLineDash([]);

  for (const p of vm.snapshot.pedestrians) {
    circle(ctx, t, p.pos, p.radius, '#49a24e');
  }
  if (vm.snapshot.user) {
    circle(ctx, t, vm.snapshot.user.pos, vm.snapshot.user.radius, '#2a6fd6');
  }
  circle(ctx, t, robot.pos, robot.radius, '#333', '#000');
  arrow(ctx, t, robot.pos, robot.vel);

  if (vm.connection !== 'open') {
    ctx.fillStyle = 'rgba(255, 255, 255, 0.6)';
    ctx.fillRect(0, 0, canvas.width, canvas.height);
  }
}
