// Wire schema for the edgeracer WebSocket service.  Everything shown in the
// UI comes out of parseServerMessage; everything sent goes through the
// builders below, so the schema lives in exactly one place.

export interface VehicleTelemetry {
  x: number;
  y: number;
  heading: number;
  progress: number; // fraction of the lap, 0..1
  reward: number;
}

export interface FrameMessage {
  type: "frame";
  seq: number;
  t: number;
  width: number;
  height: number;
  pixels: string; // base64 grayscale, width*height bytes
  edge: string;   // base64 grayscale, 64*64 bytes
  state: VehicleTelemetry;
  terminal?: string;
}

export interface AckMessage {
  type: "ack";
  seq: number;
  of: string;
  steps?: number;
}

export interface ErrorMessage {
  type: "error";
  seq: number;
  code: string;
  message: string;
}

export type ServerMessage = FrameMessage | AckMessage | ErrorMessage;

export const EDGE_SIZE = 64;

function isNum(v: unknown): v is number {
  return typeof v === "number" && Number.isFinite(v);
}

export function parseServerMessage(raw: string): ServerMessage {
  let msg: any;
  try {
    msg = JSON.parse(raw);
  } catch {
    throw new Error("server sent invalid JSON");
  }
  if (typeof msg !== "object" || msg === null || !isNum(msg.seq)) {
    throw new Error("server message missing seq");
  }
  switch (msg.type) {
    case "frame": {
      const st = msg.state;
      if (!isNum(msg.t) || !isNum(msg.width) || !isNum(msg.height) ||
          typeof msg.pixels !== "string" || typeof msg.edge !== "string" ||
          typeof st !== "object" || st === null ||
          !isNum(st.x) || !isNum(st.y) || !isNum(st.heading) ||
          !isNum(st.progress) || !isNum(st.reward)) {
        throw new Error("malformed frame message");
      }
      return msg as FrameMessage;
    }
    case "ack":
      if (typeof msg.of !== "string") throw new Error("malformed ack");
      return msg as AckMessage;
    case "error":
      if (typeof msg.code !== "string" || typeof msg.message !== "string") {
        throw new Error("malformed error message");
      }
      return msg as ErrorMessage;
    default:
      throw new Error(`unknown server message type ${String(msg.type)}`);
  }
}

// atob exists in browsers; Buffer covers the test runner.
function fromBase64(b64: string): Uint8ClampedArray {
  if (typeof atob === "function") {
    const bin = atob(b64);
    const out = new Uint8ClampedArray(bin.length);
    for (let i = 0; i < bin.length; i++) out[i] = bin.charCodeAt(i);
    return out;
  }
  return new Uint8ClampedArray(Buffer.from(b64, "base64"));
}

export function decodeGray(b64: string, width: number,
                           height: number): Uint8ClampedArray {
  const bytes = fromBase64(b64);
  if (bytes.length !== width * height) {
    throw new Error(`expected ${width * height} pixels, got ${bytes.length}`);
  }
  return bytes;
}

// -- client -> server ------------------------------------------------------

export interface StartOptions {
  track: string;
  style: string;
  mode: "teleop" | "policy";
  seed: number;
  model?: string;
}

export function startMessage(opts: StartOptions): string {
  const msg: Record<string, unknown> = {
    type: "start", track: opts.track, style: opts.style,
    mode: opts.mode, seed: opts.seed,
  };
  if (opts.mode === "policy") msg.model = opts.model;
  return JSON.stringify(msg);
}

export function actionMessage(action: number): string {
  if (!Number.isInteger(action) || action < 0 || action > 4) {
    throw new Error(`action ${action} out of range`);
  }
  return JSON.stringify({ type: "action", action });
}

export function recordMessage(on: boolean): string {
  return JSON.stringify({ type: "record", on });
}

export function saveMessage(path: string): string {
  return JSON.stringify({ type: "save", path });
}

export function stopMessage(): string {
  return JSON.stringify({ type: "stop" });
}
