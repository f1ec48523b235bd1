// Single-page client for the edgeracer service: drive the simulated car with
// the keyboard to record demonstrations, or watch a trained policy drive.
// Left canvas shows the camera, right canvas shows the 64x64 edge map the
// model actually sees.

import {
  EDGE_SIZE, FrameMessage, ServerMessage, actionMessage, decodeGray,
  parseServerMessage, recordMessage, saveMessage, startMessage, stopMessage,
} from "./protocol.js";
import { ActionLatch, ActionThrottle, FRONT } from "./keys.js";
import { FrameSlot, formatTelemetry, grayToRgba } from "./render.js";

const TICK_MS = 1000 / 15;

function byId<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
}

class App {
  socket: WebSocket | null = null;
  mode: "teleop" | "policy" = "teleop";
  dt = 1 / 15;
  latch = new ActionLatch();
  throttle = new ActionThrottle(TICK_MS);
  frames = new FrameSlot<FrameMessage>();
  recording = false; // mirrors server acks, not local intent
  pendingRecord: boolean | null = null;
  sendTimer: number | null = null;

  banner = byId<HTMLDivElement>("banner");
  telemetry = byId<HTMLDivElement>("telemetry");
  recordDot = byId<HTMLSpanElement>("record-dot");
  camera = byId<HTMLCanvasElement>("camera");
  edges = byId<HTMLCanvasElement>("edges");

  connect(): void {
    this.disconnect();
    const url = byId<HTMLInputElement>("server-url").value;
    this.mode = byId<HTMLSelectElement>("mode").value as "teleop" | "policy";
    let ws: WebSocket;
    try {
      ws = new WebSocket(url);
    } catch (e) {
      this.showBanner(`cannot open ${url}: ${e}`);
      return;
    }
    ws.onopen = () => {
      this.hideBanner();
      ws.send(startMessage({
        track: byId<HTMLSelectElement>("track").value,
        style: byId<HTMLSelectElement>("style").value,
        mode: this.mode,
        seed: Number(byId<HTMLInputElement>("seed").value) || 0,
        model: byId<HTMLInputElement>("model-path").value || undefined,
      }));
    };
    ws.onmessage = (ev) => this.onMessage(String(ev.data));
    ws.onclose = () => this.showBanner("connection closed — reconnect to retry");
    ws.onerror = () => this.showBanner("connection failed — is the service running?");
    this.socket = ws;
    this.sendTimer = window.setInterval(() => this.sendAction(), TICK_MS);
    window.requestAnimationFrame(() => this.draw());
  }

  disconnect(): void {
    if (this.sendTimer !== null) window.clearInterval(this.sendTimer);
    this.sendTimer = null;
    if (this.socket) {
      this.socket.onclose = null;
      this.socket.close();
    }
    this.socket = null;
    this.recording = false;
    this.latch.releaseAll();
  }

  onMessage(raw: string): void {
    let msg: ServerMessage;
    try {
      msg = parseServerMessage(raw);
    } catch (e) {
      this.showBanner(String(e));
      return;
    }
    if (msg.type === "error") {
      this.showBanner(`${msg.code}: ${msg.message}`);
      this.pendingRecord = null;
    } else if (msg.type === "ack") {
      if (msg.of === "record" && this.pendingRecord !== null) {
        this.recording = this.pendingRecord;
        this.pendingRecord = null;
        this.recordDot.classList.toggle("on", this.recording);
      }
      if (msg.of === "save" && msg.steps !== undefined) {
        this.showBanner(`saved ${msg.steps} steps`);
      }
    } else {
      this.frames.offer(msg);
    }
  }

  // keyboard -> latched action, streamed at most once per tick
  sendAction(): void {
    if (!this.socket || this.socket.readyState !== WebSocket.OPEN) return;
    if (this.mode !== "teleop") return; // action keys disabled in policy mode
    if (!this.throttle.shouldSend(performance.now())) return;
    this.socket.send(actionMessage(this.latch.current()));
  }

  draw(): void {
    const frame = this.frames.take();
    if (frame) {
      this.paint(this.camera, decodeGray(frame.pixels, frame.width,
                                         frame.height),
                 frame.width, frame.height);
      this.paint(this.edges, decodeGray(frame.edge, EDGE_SIZE, EDGE_SIZE),
                 EDGE_SIZE, EDGE_SIZE);
      this.telemetry.textContent = formatTelemetry(frame.state, frame.t,
                                                   this.dt);
      if (frame.terminal) this.showBanner(`episode over: ${frame.terminal}`);
    }
    if (this.socket) window.requestAnimationFrame(() => this.draw());
  }

  paint(canvas: HTMLCanvasElement, gray: Uint8ClampedArray,
        w: number, h: number): void {
    const ctx = canvas.getContext("2d");
    if (!ctx) return;
    const img = new ImageData(grayToRgba(gray), w, h);
    const off = new OffscreenCanvas(w, h);
    const offCtx = off.getContext("2d")!;
    offCtx.putImageData(img, 0, 0);
    ctx.imageSmoothingEnabled = false;
    ctx.drawImage(off, 0, 0, canvas.width, canvas.height);
  }

  toggleRecord(): void {
    if (!this.socket || this.socket.readyState !== WebSocket.OPEN) return;
    this.pendingRecord = !this.recording;
    this.socket.send(recordMessage(this.pendingRecord));
  }

  save(): void {
    if (!this.socket || this.socket.readyState !== WebSocket.OPEN) return;
    this.socket.send(saveMessage(byId<HTMLInputElement>("save-path").value));
  }

  stop(): void {
    if (this.socket && this.socket.readyState === WebSocket.OPEN) {
      this.socket.send(stopMessage());
    }
  }

  showBanner(text: string): void {
    this.banner.textContent = text;
    this.banner.style.display = "block";
  }

  hideBanner(): void {
    this.banner.style.display = "none";
  }
}

function main(): void {
  const app = new App();
  byId<HTMLButtonElement>("connect").onclick = () => app.connect();
  byId<HTMLButtonElement>("stop").onclick = () => app.stop();
  byId<HTMLButtonElement>("record").onclick = () => app.toggleRecord();
  byId<HTMLButtonElement>("save").onclick = () => app.save();
  document.addEventListener("keydown", (ev) => {
    if ((ev.target as HTMLElement)?.tagName === "INPUT") return;
    if (app.mode !== "teleop") return;
    app.latch.keyDown(ev.key, ev.shiftKey);
    ev.preventDefault();
  });
  document.addEventListener("keyup", (ev) => {
    app.latch.keyUp(ev.key, ev.shiftKey);
  });
  window.addEventListener("blur", () => app.latch.releaseAll());
}

document.addEventListener("DOMContentLoaded", main);
