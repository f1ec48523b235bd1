"""Walk one camera frame through every stage of the edge pipeline.

Renders a frame from the simulator, then shows what the crop, blur,
gradient, thinning and hysteresis stages each do to it.  Writes the
input frame and the final 64x64 edge map next to this script as PGM
files so you can look at them.
"""

import os

import numpy as np

from edgeracer import imaging, simworld

here = os.path.dirname(os.path.abspath(__file__))

track = simworld.make_track("oval")
state = simworld.VehicleState(x=0.0, y=-1.5, heading=0.0, arc_progress=3.0)
frame = simworld.render_camera(state, track)
print(f"camera frame: {frame.shape[1]}x{frame.shape[0]}, "
      f"intensities {frame.min()}..{frame.max()}")

cropped = imaging.crop_top(frame, 0.20)
print(f"after cropping the top 20% of sky: {cropped.shape[1]}x{cropped.shape[0]}")

blurred = imaging.gaussian_blur(cropped, 1.0)
grad = imaging.sobel(blurred)
print(f"gradient magnitude: max {grad.magnitude.max():.1f}, "
      f"mean {grad.magnitude.mean():.2f}")

thinned = imaging.non_max_suppression(grad)
print(f"pixels surviving non-maximum suppression: "
      f"{int((thinned.magnitude > 0).sum())} of {thinned.magnitude.size}")

edges = imaging.hysteresis(thinned)
print(f"edge pixels after hysteresis: {int(edges.sum())}")

edge_map = imaging.resize_to_64(edges)
print(f"final 64x64 edge map: {int(edge_map.sum())} active cells")

# the one-call version used everywhere else
assert np.array_equal(imaging.preprocess(frame), edge_map)

imaging.write_pgm(os.path.join(here, "frame.pgm"), frame)
imaging.write_pgm(os.path.join(here, "edges.pgm"), edge_map * 255)
print("wrote frame.pgm and edges.pgm")
