// Minimal dependency-free trace plot on a 2D canvas. Autoscales by
// default; a manual y-range can be pinned per axis.

import { TracePoint } from "./state.js";

export interface TraceSpec {
  label: string;
  color: string;
  pick: (p: TracePoint) => number;
}

export interface ManualRange {
  min: number;
  max: number;
}

export function drawTraces(
  ctx: CanvasRenderingContext2D,
  width: number,
  height: number,
  points: TracePoint[],
  traces: TraceSpec[],
  manual: ManualRange | null = null,
): void {
  ctx.clearRect(0, 0, width, height);
  ctx.fillStyle = "#101418";
  ctx.fillRect(0, 0, width, height);
  if (points.length < 2) return;

  let lo = Infinity;
  let hi = -Infinity;
  if (manual) {
    lo = manual.min;
    hi = manual.max;
  } else {
    for (const trace of traces) {
      for (const p of points) {
        const v = trace.pick(p);
        if (v < lo) lo = v;
        if (v > hi) hi = v;
      }
    }
    const pad = (hi - lo) * 0.08 || Math.abs(hi) * 0.08 || 1;
    lo -= pad;
    hi += pad;
  }
  const t0 = points[0].t;
  const t1 = points[points.length - 1].t;
  const xOf = (t: number) => ((t - t0) / Math.max(t1 - t0, 1e-9)) * width;
  const yOf = (v: number) => height - ((v - lo) / Math.max(hi - lo, 1e-12)) * height;

  ctx.strokeStyle = "#2a3440";
  ctx.lineWidth = 1;
  for (let g = 1; g < 5; g++) {
    const y = (g / 5) * height;
    ctx.beginPath();
    ctx.moveTo(0, y);
    ctx.lineTo(width, y);
    ctx.stroke();
  }

  for (const trace of traces) {
    ctx.strokeStyle = trace.color;
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    points.forEach((p, i) => {
      const x = xOf(p.t);
      const y = yOf(trace.pick(p));
      if (i === 0) ctx.moveTo(x, y);
      else ctx.lineTo(x, y);
    });
    ctx.stroke();
  }

  ctx.fillStyle = "#9ab";
  ctx.font = "11px monospace";
  ctx.fillText(hi.toPrecision(4), 4, 12);
  ctx.fillText(lo.toPrecision(4), 4, height - 4);
  traces.forEach((trace, i) => {
    ctx.fillStyle = trace.color;
    ctx.fillText(trace.label, width - 70, 14 + 14 * i);
  });
}
