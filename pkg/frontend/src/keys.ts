// Keyboard -> action latch.  Actions: 0 left-high, 1 left-med, 2 front,
// 3 right-med, 4 right-high.  Arrow keys steer (Shift = hard), the number
// row picks an action directly, and releasing everything reverts to front.

export const FRONT = 2;

const DIGITS: Record<string, number> = {
  "1": 0, "2": 1, "3": 2, "4": 3, "5": 4,
};

export function keyToAction(key: string, shift: boolean): number | null {
  if (key === "ArrowUp") return FRONT;
  if (key === "ArrowLeft") return shift ? 0 : 1;
  if (key === "ArrowRight") return shift ? 4 : 3;
  if (key in DIGITS) return DIGITS[key];
  return null;
}

export class ActionLatch {
  private held: string[] = [];
  private shift = false;

  keyDown(key: string, shift: boolean): void {
    this.shift = shift;
    if (key === "Shift") return;
    if (keyToAction(key, shift) === null) return;
    this.keyUp(key, shift); // re-press moves it to most-recent
    this.held.push(key);
  }

  keyUp(key: string, shift: boolean): void {
    this.shift = shift;
    this.held = this.held.filter((k) => k !== key);
  }

  releaseAll(): void {
    this.held = [];
    this.shift = false;
  }

  // Most recently pressed key wins; nothing held means front.
  current(): number {
    if (this.held.length === 0) return FRONT;
    const key = this.held[this.held.length - 1];
    return keyToAction(key, this.shift) ?? FRONT;
  }
}

// Caps the outgoing action stream at the simulation tick rate.  The server
// latches the latest action anyway, so dropped repeats are harmless.
export class ActionThrottle {
  private lastSent = -Infinity;

  constructor(private minIntervalMs: number = 1000 / 15) {}

  shouldSend(nowMs: number): boolean {
    if (nowMs - this.lastSent < this.minIntervalMs) return false;
    this.lastSent = nowMs;
    return true;
  }
}
