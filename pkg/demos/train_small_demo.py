"""Train a small copy of the network on two oracle episodes.

Uses a shrunken model (dim 16, depth 1) so the whole script runs in well
under a minute; the full-size recipe is the `edgeracer train` command.
"""

import os
import tempfile

from edgeracer import mixer, runtime, simworld, trainer

track = simworld.make_track("hairpin")
policy = simworld.OraclePolicy(track)
episodes = [simworld.run_episode(policy, track, max_steps=300, seed=s,
                                 start_jitter=0.05)
            for s in (0, 1)]
print(f"collected {sum(len(e.steps) for e in episodes)} frames "
      f"from {len(episodes)} hairpin episodes")

config = mixer.MixerConfig(dim=16, depth=1, token_hidden=8, channel_hidden=32)
tc = trainer.TrainConfig(learning_rate=1e-3, batch_size=8, epochs=5, seed=0,
                         val_fraction=0.5)
ckpt, history = trainer.train(episodes, config, tc, log=print)

result = trainer.evaluate(ckpt, episodes)
print(f"\naccuracy on its own data: {result['accuracy']:.3f}")
print("confusion matrix (rows=true, cols=predicted):")
print(result["confusion"])

with tempfile.TemporaryDirectory() as d:
    path = os.path.join(d, "small.ckpt")
    trainer.save_checkpoint(ckpt, path)
    back = trainer.load_checkpoint(path)
    print(f"\ncheckpoint round trip: {os.path.getsize(path)} bytes, "
          f"{mixer.count_params(back.config)} parameters")

# drive the freshly trained model one step, just to close the loop
frame = simworld.render_camera(simworld.start_state(track), track)
pred = runtime.predict(ckpt, frame)
print(f"first action from the start line: {pred.action} "
      f"(probs {[round(float(p), 3) for p in pred.probs]})")
