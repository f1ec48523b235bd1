"""Episode file format and reward-monotone dataset filtering.

An episode file (`*.ep`) is line-delimited JSON with sorted keys: a header
line, one line per step (frame pixels base64-encoded), and a closing terminal
line.  A dataset is a directory of episode files plus an `index.txt` listing
them in canonical order.
"""

import base64
import json
import os
from dataclasses import dataclass, field

import numpy as np

TERMINALS = ("lap-complete", "off-track", "timeout")
ACTION_NAMES = ("left-high", "left-med", "front", "right-med", "right-high")
NUM_ACTIONS = 5
INDEX_NAME = "index.txt"


@dataclass
class Step:
    t: int
    action: int
    reward: float
    frame: np.ndarray
    state: dict | None = None  # x, y, heading, arc_progress, lap_count

    def __post_init__(self):
        if not (0 <= self.action < NUM_ACTIONS):
            raise ValueError(f"action {self.action} out of range")
        if not np.isfinite(self.reward):
            raise ValueError("reward must be finite")


@dataclass
class Episode:
    header: dict  # track, style, width, height, dt, policy, seed
    steps: list
    terminal: str

    def __post_init__(self):
        if self.terminal not in TERMINALS:
            raise ValueError(f"unknown terminal {self.terminal!r}")
        if not self.steps:
            raise ValueError("episode has no steps")


def _dumps(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_episode(episode, path):
    w, h = episode.header["width"], episode.header["height"]
    with open(path, "w", encoding="utf-8") as f:
        f.write(_dumps(episode.header) + "\n")
        for s in episode.steps:
            if s.frame.shape != (h, w):
                raise ValueError(f"step {s.t}: frame shape {s.frame.shape} "
                                 f"does not match header {h}x{w}")
            rec = {
                "t": s.t,
                "action": s.action,
                "reward": s.reward,
                "state": s.state,
                "frame": base64.b64encode(s.frame.tobytes()).decode("ascii"),
            }
            f.write(_dumps(rec) + "\n")
        f.write(_dumps({"terminal": episode.terminal}) + "\n")


def read_episode(path):
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty episode file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise ValueError(f"{path}: line 1: {e}") from None
    w, h = header["width"], header["height"]
    steps = []
    terminal = None
    prev_t = None
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise ValueError(f"{path}: line {lineno}: {e}") from None
        if "terminal" in rec:
            terminal = rec["terminal"]
            break
        raw = base64.b64decode(rec["frame"])
        if len(raw) != w * h:
            raise ValueError(f"{path}: line {lineno}: frame has {len(raw)} "
                             f"bytes, header says {w}x{h}")
        if prev_t is not None and rec["t"] <= prev_t:
            raise ValueError(f"{path}: line {lineno}: step index not "
                             f"strictly increasing")
        prev_t = rec["t"]
        steps.append(Step(
            t=rec["t"], action=rec["action"], reward=rec["reward"],
            frame=np.frombuffer(raw, dtype=np.uint8).reshape(h, w).copy(),
            state=rec.get("state"),
        ))
    if terminal is None:
        raise ValueError(f"{path}: unterminated episode")
    return Episode(header=header, steps=steps, terminal=terminal)


def filter_episode(episode):
    """Indices of steps whose reward improves on every previously kept one.

    Step 0 is always kept; thereafter a step survives only when its reward
    strictly exceeds the running maximum of kept rewards, so the kept
    subsequence is strictly increasing.
    """
    kept = [0]
    best = episode.steps[0].reward
    for i, s in enumerate(episode.steps[1:], start=1):
        if s.reward > best:
            kept.append(i)
            best = s.reward
    return kept


@dataclass
class Dataset:
    """A directory of episode files listed by its index."""

    root: str
    files: list = field(default_factory=list)

    @classmethod
    def open(cls, root):
        index = os.path.join(root, INDEX_NAME)
        if os.path.exists(index):
            with open(index) as f:
                files = [ln.strip() for ln in f if ln.strip()]
        else:
            files = sorted(n for n in os.listdir(root) if n.endswith(".ep"))
        return cls(root=root, files=files)

    def paths(self):
        return [os.path.join(self.root, n) for n in self.files]

    def episodes(self):
        return [read_episode(p) for p in self.paths()]

    def write_index(self):
        with open(os.path.join(self.root, INDEX_NAME), "w") as f:
            for n in self.files:
                f.write(n + "\n")


def add_episode(dataset, episode, name):
    """Write one episode into the dataset directory and extend the index."""
    write_episode(episode, os.path.join(dataset.root, name))
    dataset.files.append(name)
    dataset.write_index()


def filter_dataset(in_root, out_root):
    """Filter every episode; off-track episodes are dropped wholesale.

    Returns a report dict with per-episode and per-class kept/dropped counts.
    """
    src = Dataset.open(in_root)
    os.makedirs(out_root, exist_ok=True)
    out = Dataset(root=out_root)
    report = {"episodes": [], "kept_per_class": [0] * NUM_ACTIONS,
              "dropped_per_class": [0] * NUM_ACTIONS}
    for name, path in zip(src.files, src.paths()):
        try:
            ep = read_episode(path)
        except (OSError, ValueError) as e:
            raise ValueError(f"{path}: {e}") from e
        if ep.terminal == "off-track":
            kept_idx = []
        else:
            kept_idx = filter_episode(ep)
        kept_set = set(kept_idx)
        for i, s in enumerate(ep.steps):
            key = "kept_per_class" if i in kept_set else "dropped_per_class"
            report[key][s.action] += 1
        report["episodes"].append({
            "file": name, "kept": len(kept_idx),
            "dropped": len(ep.steps) - len(kept_idx),
            "terminal": ep.terminal,
        })
        if kept_idx:
            filtered = Episode(header=dict(ep.header),
                               steps=[ep.steps[i] for i in kept_idx],
                               terminal=ep.terminal)
            add_episode(out, filtered, name)
    return out, report


def class_balance(episodes):
    """Per-action counts and inverse-frequency weights total/(5*count)."""
    counts = np.zeros(NUM_ACTIONS, dtype=np.int64)
    for ep in episodes:
        for s in ep.steps:
            counts[s.action] += 1
    total = counts.sum()
    weights = np.where(counts > 0, total / (NUM_ACTIONS * np.maximum(counts, 1)),
                       0.0)
    return counts, weights
