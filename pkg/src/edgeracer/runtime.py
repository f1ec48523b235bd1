"""End-to-end low-latency inference: frame -> pipeline -> logits -> action.

A loaded checkpoint is immutable; predict allocates only per-call temporaries
so repeated calls do not grow resident memory.
"""

import time
from dataclasses import dataclass

import numpy as np

from . import mixer
from .imaging import model_input


@dataclass
class Prediction:
    action: int
    probs: np.ndarray
    logits: np.ndarray
    preprocess_us: float
    forward_us: float


@dataclass
class LatencyReport:
    iterations: int
    total_us: dict      # min/median/p95/max
    preprocess_us: dict
    forward_us: dict

    def format(self):
        lines = [f"latency over {self.iterations} iterations (microseconds),"
                 " single-threaded:"]
        for label, st in (("total", self.total_us),
                          ("preprocess", self.preprocess_us),
                          ("forward", self.forward_us)):
            lines.append(f"  {label:10s} min {st['min']:9.1f}  "
                         f"median {st['median']:9.1f}  "
                         f"p95 {st['p95']:9.1f}  max {st['max']:9.1f}")
        lines.append("  reference: the original report quotes 2-3 ms total"
                     " on a modern CPU")
        return "\n".join(lines)


def predict(checkpoint, frame):
    """Classify one camera frame; ties go to the lowest action index."""
    frame = np.asarray(frame)
    t0 = time.perf_counter()
    net_in = model_input(frame, checkpoint.pipeline)
    t1 = time.perf_counter()
    logits = mixer.forward_infer(checkpoint.params, net_in, checkpoint.config)
    t2 = time.perf_counter()
    probs = mixer.score_actions(logits)
    return Prediction(action=int(np.argmax(probs)), probs=probs, logits=logits,
                      preprocess_us=(t1 - t0) * 1e6,
                      forward_us=(t2 - t1) * 1e6)


class ModelPolicy:
    """Adapter so a checkpoint drives the simulator loop (ignores state)."""

    label = "model"

    def __init__(self, checkpoint):
        self.checkpoint = checkpoint

    def __call__(self, frame, state=None):
        return predict(self.checkpoint, frame).action


def _stats(us):
    us = np.asarray(us)
    return {"min": float(us.min()),
            "median": float(np.median(us)),
            "p95": float(np.percentile(us, 95)),
            "max": float(us.max())}


def bench(checkpoint, frame, iterations=100, warmup=3):
    """Time full predict calls on one thread with a monotonic clock."""
    if iterations < 10:
        raise ValueError("need at least 10 iterations")
    totals, pres, fwds = [], [], []
    for i in range(warmup + iterations):
        t0 = time.perf_counter()
        p = predict(checkpoint, frame)
        t1 = time.perf_counter()
        if i >= warmup:
            totals.append((t1 - t0) * 1e6)
            pres.append(p.preprocess_us)
            fwds.append(p.forward_us)
    return LatencyReport(iterations=iterations, total_us=_stats(totals),
                         preprocess_us=_stats(pres), forward_us=_stats(fwds))
