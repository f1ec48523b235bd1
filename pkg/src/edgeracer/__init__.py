"""Edge-map behavioral cloning for a constant-speed racer.

Subpackages: `imaging` (crop/Canny/resize pipeline), `mixer` (all-MLP
network with manual backprop), `trainer` (SGD loop and checkpoints),
`data` (episode files and reward-monotone filtering), `simworld` (track
simulator, renderer, oracle expert), `runtime` (low-latency inference),
`cli` and `service` (command line and teleop WebSocket service).
"""

from . import data, imaging, mixer, runtime, simworld, trainer  # noqa: F401

__version__ = "0.1.0"
