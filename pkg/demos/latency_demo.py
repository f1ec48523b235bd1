"""Measure single-frame control latency at the full network size.

The whole point of edge maps + a small all-MLP network is that one
frame -> action decision fits comfortably inside a 15 Hz control tick on
one CPU core.  This prints the measured numbers.
"""

from edgeracer import mixer, runtime, simworld, trainer
from edgeracer.imaging import PipelineParams

config = mixer.MixerConfig()
print(f"network: patch {config.patch_size}, dim {config.dim}, "
      f"depth {config.depth} -> {mixer.count_params(config):,} parameters")

ckpt = trainer.Checkpoint(config, PipelineParams(),
                          mixer.init_params(config, seed=0))

track = simworld.make_track("oval")
frame = simworld.render_camera(simworld.start_state(track), track)

report = runtime.bench(ckpt, frame, iterations=100)
print(report.format())

budget_ms = 1000.0 / 15.0
median_ms = report.total_us["median"] / 1000.0
print(f"\ncontrol tick budget at 15 Hz: {budget_ms:.1f} ms; "
      f"median decision time: {median_ms:.1f} ms "
      f"({100 * median_ms / budget_ms:.0f}% of budget)")
