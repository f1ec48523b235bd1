"""Drive the pure-pursuit expert around each built-in track.

Runs one episode per track, prints lap statistics, then shows what the
reward-monotone filter would keep from a corrupted episode.
"""

from edgeracer import data, simworld

for name in ("oval", "serpentine", "hairpin"):
    track = simworld.make_track(name)
    policy = simworld.OraclePolicy(track)
    ep = simworld.run_episode(policy, track, max_steps=600, seed=0)
    lap_time = len(ep.steps) * simworld.DT
    actions = [s.action for s in ep.steps]
    counts = {a: actions.count(a) for a in sorted(set(actions))}
    print(f"{name:10s} length {track.length:6.2f} m  {ep.terminal}  "
          f"{len(ep.steps)} steps ({lap_time:.1f} s)  actions {counts}")

# now corrupt some commands and watch the filter clean up
track = simworld.make_track("oval")
policy = simworld.OraclePolicy(track)
ep = simworld.run_episode(policy, track, corruption_p=0.25, max_steps=600,
                          seed=3)
kept = data.filter_episode(ep)
print(f"\ncorrupted oval episode: {ep.terminal} after {len(ep.steps)} steps")
print(f"reward-monotone filter keeps {len(kept)}/{len(ep.steps)} steps")
rewards = [ep.steps[i].reward for i in kept]
assert all(b > a for a, b in zip(rewards, rewards[1:]))
print("kept rewards are strictly increasing, as promised")
