// Pure pixel/telemetry helpers, kept DOM-free so they run under the test
// runner.  The app feeds grayToRgba into an ImageData and lets the canvas
// scale it with smoothing off.

import type { VehicleTelemetry } from "./protocol.js";

export function grayToRgba(
    gray: Uint8ClampedArray): Uint8ClampedArray<ArrayBuffer> {
  const out = new Uint8ClampedArray(new ArrayBuffer(gray.length * 4));
  for (let i = 0; i < gray.length; i++) {
    const v = gray[i];
    out[4 * i] = v;
    out[4 * i + 1] = v;
    out[4 * i + 2] = v;
    out[4 * i + 3] = 255;
  }
  return out;
}

export function formatTelemetry(state: VehicleTelemetry, t: number,
                                dt: number): string {
  const lapTime = (t + 1) * dt;
  return [
    `progress ${(state.progress * 100).toFixed(1)}%`,
    `reward ${state.reward.toFixed(3)}`,
    `lap time ${lapTime.toFixed(1)} s`,
    `pose (${state.x.toFixed(2)}, ${state.y.toFixed(2)}) ` +
      `heading ${((state.heading * 180) / Math.PI).toFixed(0)} deg`,
  ].join("  |  ");
}

// Latest-wins slot mirroring the server's: the render loop always draws the
// newest frame and stale (out-of-order) frames are never shown.
export class FrameSlot<T extends { seq: number }> {
  private slot: T | null = null;
  private lastSeq = -Infinity;

  offer(frame: T): boolean {
    if (frame.seq <= this.lastSeq) return false;
    this.lastSeq = frame.seq;
    this.slot = frame;
    return true;
  }

  take(): T | null {
    const f = this.slot;
    this.slot = null;
    return f;
  }
}
