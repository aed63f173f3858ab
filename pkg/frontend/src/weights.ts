// Stacked area chart of the fusion weights (s1 under, s2 above); hovering a
// step reveals its thought-graph summary.

import { ViewModel, WeightPoint } from './state.js';

export function renderWeights(canvas: HTMLCanvasElement, vm: ViewModel): void {
  const ctx = canvas.getContext('2d');
  if (!ctx) return;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const points = vm.weights;
  if (points.length === 0) {
    ctx.fillStyle = '#888';
    ctx.font = '12px sans-serif';
    ctx.fillText('no fusion weights yet', 8, canvas.height / 2);
    return;
  }
  const w = canvas.width / Math.max(points.length, 1);
  // s1 band from the bottom, s2 stacked on top (they sum to 1)
  ctx.fillStyle = '#6d9ec9';
  points.forEach((p, i) => {
    const h = p.s1 * canvas.height;
    ctx.fillRect(i * w, canvas.height - h, Math.ceil(w), h);
  });
  ctx.fillStyle = '#e2b25a';
  points.forEach((p, i) => {
    const h1 = p.s1 * canvas.height;
    const h2 = p.s2 * canvas.height;
    ctx.fillRect(i * w, canvas.height - h1 - h2, Math.ceil(w), h2);
  });
}

export function pointAt(vm: ViewModel, canvas: HTMLCanvasElement, offsetX: number): WeightPoint | null {
  if (vm.weights.length === 0) return null;
  const index = Math.floor((offsetX / canvas.width) * vm.weights.length);
  return vm.weights[Math.min(Math.max(index, 0), vm.weights.length - 1)] ?? null;
}

export function describePoint(p: WeightPoint): string {
  const parts = [`step ${p.step}: s1=${p.s1.toFixed(2)} s2=${p.s2.toFixed(2)}`];
  if (p.got) {
    parts.push(`graph: ${p.got.vertex_count} vertices`);
  }
  return parts.join('  ');
}
