"""Closed-loop racetrack simulator.

Procedural closed tracks, a constant-speed kinematic bicycle vehicle, a
ray-cast ground-plane camera with a clean "sim" style and a "real" style
(specular floor blobs, brightness gradient, pixel noise), lap-progress
reward, a pure-pursuit oracle expert, command corruption and an episode
runner.  All randomness flows from explicit seeds.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Episode, Step
from .prng import hash_u64

SPEED = 1.0           # m/s, constant by contract
WHEELBASE = 0.16      # m
DT = 1.0 / 15.0       # s, matches the 15 Hz camera
TRACK_WIDTH = 0.76    # m
BORDER_LINE_WIDTH = 0.05
MAX_VIEW = 2.5        # m; ground beyond this renders as surround

# Steering angle per action index, radians; positive turns left.
STEER = np.radians([30.0, 15.0, 0.0, -15.0, -30.0])

ASPHALT, BORDER, CENTER_LINE, SURROUND, SKY = 40, 230, 140, 120, 200
DASH_PERIOD, DASH_ON = 0.6, 0.3
CENTER_LINE_HALF = 0.02


@dataclass
class TrackSpec:
    name: str
    vertices: np.ndarray          # (N,2) closed implicitly
    width: float = TRACK_WIDTH
    border_line_width: float = BORDER_LINE_WIDTH
    seg_start: np.ndarray = field(init=False)
    seg_vec: np.ndarray = field(init=False)
    seg_len: np.ndarray = field(init=False)
    seg_s0: np.ndarray = field(init=False)
    length: float = field(init=False)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        if len(v) < 3:
            raise ValueError("track needs at least 3 vertices")
        self.vertices = v
        self.seg_start = v
        self.seg_vec = np.roll(v, -1, axis=0) - v
        self.seg_len = np.hypot(self.seg_vec[:, 0], self.seg_vec[:, 1])
        if (self.seg_len == 0).any():
            raise ValueError("degenerate zero-length track segment")
        self.seg_s0 = np.concatenate([[0.0], np.cumsum(self.seg_len)[:-1]])
        self.length = float(self.seg_len.sum())

    def point_at(self, s):
        """Centerline point at arc position s (wrapped)."""
        s = s % self.length
        i = int(np.searchsorted(self.seg_s0, s, side="right") - 1)
        f = (s - self.seg_s0[i]) / self.seg_len[i]
        return self.seg_start[i] + f * self.seg_vec[i]

    def heading_at(self, s):
        s = s % self.length
        i = int(np.searchsorted(self.seg_s0, s, side="right") - 1)
        d = self.seg_vec[i]
        return math.atan2(d[1], d[0])


@dataclass
class VehicleState:
    x: float
    y: float
    heading: float
    arc_progress: float = 0.0
    lap_count: int = 0

    def to_dict(self):
        return {"x": self.x, "y": self.y, "heading": self.heading,
                "arc_progress": self.arc_progress, "lap_count": self.lap_count}


@dataclass(frozen=True)
class CameraModel:
    width: int = 160
    height: int = 120
    hfov_deg: float = 120.0
    mount_height: float = 0.12
    pitch_deg: float = -15.0


def _arc_points(center, radius, a0, a1, n):
    ang = np.linspace(a0, a1, n, endpoint=False)
    return np.stack([center[0] + radius * np.cos(ang),
                     center[1] + radius * np.sin(ang)], axis=1)


def _straight(p0, p1, n):
    t = np.linspace(0.0, 1.0, n, endpoint=False)[:, None]
    return np.asarray(p0) + t * (np.asarray(p1) - np.asarray(p0))


def make_track(name):
    """Built-in closed tracks: oval, serpentine, hairpin."""
    if name == "oval":
        v = np.concatenate([
            _straight((-3.0, -1.5), (3.0, -1.5), 12),
            _arc_points((3.0, 0.0), 1.5, -np.pi / 2, np.pi / 2, 32),
            _straight((3.0, 1.5), (-3.0, 1.5), 12),
            _arc_points((-3.0, 0.0), 1.5, np.pi / 2, 3 * np.pi / 2, 32),
        ])
    elif name == "serpentine":
        # oval with the top straight bent into two S-curves
        x = np.linspace(3.0, -3.0, 48, endpoint=False)
        u = (3.0 - x) / 6.0
        top = np.stack([x, 1.5 + 0.35 * np.sin(4 * np.pi * u)], axis=1)
        v = np.concatenate([
            _straight((-3.0, -1.5), (3.0, -1.5), 12),
            _arc_points((3.0, 0.0), 1.5, -np.pi / 2, np.pi / 2, 32),
            top,
            _arc_points((-3.0, 0.0), 1.5, np.pi / 2, 3 * np.pi / 2, 32),
        ])
    elif name == "hairpin":
        # stadium with tight 0.9 m-radius 180-degree turns
        v = np.concatenate([
            _straight((-2.5, 0.0), (2.5, 0.0), 10),
            _arc_points((2.5, 0.9), 0.9, -np.pi / 2, np.pi / 2, 32),
            _straight((2.5, 1.8), (-2.5, 1.8), 10),
            _arc_points((-2.5, 0.9), 0.9, np.pi / 2, 3 * np.pi / 2, 32),
        ])
    else:
        raise ValueError(f"unknown track {name!r}")
    return TrackSpec(name=name, vertices=v)


def load_track(path, name=None):
    """Track from a plain-text vertex list, one "x y" pair per line."""
    pts = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            x, y = line.split()
            pts.append((float(x), float(y)))
    return TrackSpec(name=name or path, vertices=np.array(pts))


def track_is_simple(track):
    """Brute-force check that no two non-adjacent segments intersect."""
    n = len(track.seg_start)
    for i in range(n):
        p, r = track.seg_start[i], track.seg_vec[i]
        for j in range(i + 1, n):
            if j == i or (j - i) % n in (1, n - 1):
                continue
            q, s = track.seg_start[j], track.seg_vec[j]
            denom = r[0] * s[1] - r[1] * s[0]
            if abs(denom) < 1e-12:
                continue
            qp = q - p
            t = (qp[0] * s[1] - qp[1] * s[0]) / denom
            u = (qp[0] * r[1] - qp[1] * r[0]) / denom
            if 0 <= t <= 1 and 0 <= u <= 1:
                return False
    return True


def _segment_distances(points, starts, vecs, lens):
    """Squared distances from (P,2) points to each segment; returns (P,S)
    dist^2 and (P,S) clamped projections in meters along each segment."""
    d0 = points[:, 0, None] - starts[None, :, 0]
    d1 = points[:, 1, None] - starts[None, :, 1]
    t = (d0 * vecs[None, :, 0] + d1 * vecs[None, :, 1]) / (lens ** 2)[None, :]
    t = np.clip(t, 0.0, 1.0)
    rx = d0 - t * vecs[None, :, 0]
    ry = d1 - t * vecs[None, :, 1]
    return rx * rx + ry * ry, t * lens[None, :]


def project_to_track(track, x, y, s_prev=None, window=0.5):
    """Arc position of the nearest centerline point.

    With s_prev given, only segments within +-window of it (wrap-aware) are
    searched, which stops the projection snapping across the track.
    """
    pt = np.array([[x, y]])
    if s_prev is None:
        idx = np.arange(len(track.seg_start))
    else:
        mid = track.seg_s0 + 0.5 * track.seg_len
        delta = (mid - s_prev + track.length / 2) % track.length - track.length / 2
        idx = np.nonzero(np.abs(delta) <= window + track.seg_len)[0]
    dist2, along = _segment_distances(pt, track.seg_start[idx],
                                      track.seg_vec[idx], track.seg_len[idx])
    j = int(dist2[0].argmin())
    s = (track.seg_s0[idx[j]] + along[0, j]) % track.length
    return s, float(math.sqrt(dist2[0, j]))


def centerline_distance(track, x, y):
    """Brute-force min distance from a point to the centerline."""
    dist2, _ = _segment_distances(np.array([[x, y]]), track.seg_start,
                                  track.seg_vec, track.seg_len)
    return float(math.sqrt(dist2.min()))


def start_state(track, jitter=0.0, rng=None):
    """Pose at the start line, optionally perturbed laterally and in heading."""
    s = 0.0
    p = track.point_at(s)
    h = track.heading_at(s)
    lat, dh = 0.0, 0.0
    if jitter > 0:
        rng = rng or np.random.default_rng(0)
        lat = float(rng.uniform(-jitter, jitter))
        dh = float(rng.uniform(-jitter, jitter)) * 2.0  # radians per meter knob
    x = p[0] - lat * math.sin(h)
    y = p[1] + lat * math.cos(h)
    return VehicleState(x=x, y=y, heading=_wrap_angle(h + dh),
                        arc_progress=s, lap_count=0)


def _wrap_angle(a):
    return (a + math.pi) % (2 * math.pi) - math.pi


def step_vehicle(state, action, track, dt=DT):
    """Kinematic bicycle update at constant speed; tracks arc progress."""
    delta = STEER[action]
    x = state.x + SPEED * math.cos(state.heading) * dt
    y = state.y + SPEED * math.sin(state.heading) * dt
    heading = _wrap_angle(state.heading +
                          (SPEED / WHEELBASE) * math.tan(delta) * dt)
    s, _ = project_to_track(track, x, y, s_prev=state.arc_progress)
    lap = state.lap_count
    ds = s - state.arc_progress
    if ds < -track.length / 2:
        lap += 1
    elif ds > track.length / 2:
        lap -= 1
    return VehicleState(x=x, y=y, heading=heading, arc_progress=s,
                        lap_count=lap)


def reward(state, track):
    """Cumulative lap-progress fraction; monotone for forward driving."""
    return state.lap_count + state.arc_progress / track.length


def off_track(state, track):
    return centerline_distance(track, state.x, state.y) > track.width / 2


# ---------------------------------------------------------------------------
# camera

_RAY_CACHE = {}


def _camera_rays(camera):
    """Per-pixel ray directions in the vehicle frame (x fwd, y left, z up)."""
    if camera in _RAY_CACHE:
        return _RAY_CACHE[camera]
    w, h = camera.width, camera.height
    f = (w / 2.0) / math.tan(math.radians(camera.hfov_deg) / 2.0)
    cols = np.arange(w) - (w - 1) / 2.0
    rows = np.arange(h) - (h - 1) / 2.0
    yc = -(cols / f)[None, :].repeat(h, axis=0)
    zc = -(rows / f)[:, None].repeat(w, axis=1)
    p = math.radians(camera.pitch_deg)
    fwd = np.array([math.cos(p), 0.0, math.sin(p)])
    up = np.array([-math.sin(p), 0.0, math.cos(p)])
    left = np.array([0.0, 1.0, 0.0])
    dirs = (fwd[None, None] + yc[:, :, None] * left[None, None]
            + zc[:, :, None] * up[None, None])
    _RAY_CACHE[camera] = dirs
    return dirs


def _ground_color(track, pts, s_center):
    """Texture intensity for ground points, from centerline geometry."""
    # prefilter segments near the vehicle; excluded ones are beyond every
    # color band for any visible point
    mid = track.seg_start + 0.5 * track.seg_vec
    seg_d = np.hypot(mid[:, 0] - s_center[0], mid[:, 1] - s_center[1])
    keep = seg_d <= MAX_VIEW + 0.5 * track.seg_len + track.width
    idx = np.nonzero(keep)[0]
    dist2, along = _segment_distances(pts, track.seg_start[idx],
                                      track.seg_vec[idx], track.seg_len[idx])
    j = dist2.argmin(axis=1)
    rows = np.arange(len(pts))
    dmin = np.sqrt(dist2[rows, j])
    s = (track.seg_s0[idx[j]] + along[rows, j]) % track.length

    color = np.full(len(pts), float(SURROUND))
    half = track.width / 2
    color[dmin <= half] = ASPHALT
    dash = (dmin <= CENTER_LINE_HALF) & ((s % DASH_PERIOD) < DASH_ON)
    color[dash] = CENTER_LINE
    border = np.abs(dmin - half) <= track.border_line_width / 2
    color[border] = BORDER
    return color


def _state_seed(episode_seed, state):
    bits = [np.float64(v).view(np.uint64)
            for v in (state.x, state.y, state.heading)]
    return hash_u64(episode_seed, *bits)


def render_camera(state, track, camera=CameraModel(), style="sim",
                  episode_seed=0):
    """Ray-cast 8-bit grayscale frame for the current pose.

    "sim" is deterministic from the pose alone; "real" additionally layers
    seeded specular floor blobs, a linear brightness gradient, pixel noise
    and mild blur, deterministically from (pose, episode seed).
    """
    if style not in ("sim", "real"):
        raise ValueError(f"unknown render style {style!r}")
    dirs = _camera_rays(camera)
    ch, sh = math.cos(state.heading), math.sin(state.heading)
    dx = ch * dirs[:, :, 0] - sh * dirs[:, :, 1]
    dy = sh * dirs[:, :, 0] + ch * dirs[:, :, 1]
    dz = dirs[:, :, 2]

    img = np.full((camera.height, camera.width), float(SKY))
    ground = dz < -1e-9
    t = np.where(ground, -camera.mount_height / np.where(ground, dz, -1.0), 0.0)
    gx = state.x + t * dx
    gy = state.y + t * dy
    rng2 = t * t * (dx * dx + dy * dy)
    visible = ground & (rng2 <= MAX_VIEW * MAX_VIEW)
    img[ground] = SURROUND
    pts = np.stack([gx[visible], gy[visible]], axis=1)
    if len(pts):
        color = _ground_color(track, pts, (state.x, state.y))
        if style == "real":
            color = _real_floor(color, pts, track, episode_seed)
        img[visible] = color

    if style == "real":
        rng = np.random.default_rng(_state_seed(episode_seed, state))
        img = img + rng.normal(0.0, 6.0, img.shape)
        img = _blur_float(img, 0.6)
    return np.rint(img).clip(0, 255).astype(np.uint8)


def _episode_blobs(track, episode_seed, n=3):
    """Seeded specular reflection blobs: world-space soft ellipses on the
    floor near the track."""
    rng = np.random.default_rng(hash_u64(episode_seed, 0xB10B))
    blobs = []
    for _ in range(n):
        s = rng.uniform(0, track.length)
        lat = rng.uniform(-track.width / 2, track.width / 2)
        p = track.point_at(s)
        h = track.heading_at(s)
        cx = p[0] - lat * math.sin(h)
        cy = p[1] + lat * math.cos(h)
        ang = rng.uniform(0, math.pi)
        ax = rng.uniform(0.2, 0.4)
        ay = rng.uniform(0.08, 0.18)
        amp = rng.uniform(50.0, 90.0)
        blobs.append((cx, cy, ang, ax, ay, amp))
    return blobs


def _real_floor(color, pts, track, episode_seed):
    """Brightness gradient plus smooth specular blobs on ground points."""
    rng = np.random.default_rng(hash_u64(episode_seed, 0x6EAD))
    gdir = rng.uniform(0, 2 * math.pi)
    span = 8.0  # m over which the +-20% gradient sweeps
    proj = (pts[:, 0] * math.cos(gdir) + pts[:, 1] * math.sin(gdir)) / span
    color = color * (1.0 + 0.4 * np.clip(proj + 0.5, 0.0, 1.0) - 0.2)
    for cx, cy, ang, ax, ay, amp in _episode_blobs(track, episode_seed):
        ca, sa = math.cos(ang), math.sin(ang)
        u = (pts[:, 0] - cx) * ca + (pts[:, 1] - cy) * sa
        v = -(pts[:, 0] - cx) * sa + (pts[:, 1] - cy) * ca
        q = (u / ax) ** 2 + (v / ay) ** 2
        color = color + amp * np.exp(-q)
    return color


def _blur_float(img, sigma):
    from .imaging import gaussian_kernel_1d, _correlate_replicate
    k = gaussian_kernel_1d(sigma)
    return _correlate_replicate(_correlate_replicate(img, k, axis=1), k, axis=0)


# ---------------------------------------------------------------------------
# policies, corruption, episode loop

def steer_to_action(delta):
    """Nearest discrete steering action; ties go to the smaller magnitude."""
    diffs = np.abs(STEER - delta)
    best = diffs.min()
    cand = np.nonzero(diffs <= best + 1e-12)[0]
    return int(cand[np.abs(STEER[cand]).argmin()])


class OraclePolicy:
    """Pure-pursuit expert: chase the centerline point `lookahead` ahead."""

    label = "oracle"

    def __init__(self, track, lookahead=0.8):
        self.track = track
        self.lookahead = lookahead

    def __call__(self, frame, state):
        tgt = self.track.point_at(state.arc_progress + self.lookahead)
        alpha = _wrap_angle(math.atan2(tgt[1] - state.y, tgt[0] - state.x)
                            - state.heading)
        delta = math.atan2(2.0 * WHEELBASE * math.sin(alpha), self.lookahead)
        return steer_to_action(delta)


def corrupt_action(action, p, rng):
    """With probability p replace the action by a different uniform one."""
    if not (0.0 <= p <= 1.0):
        raise ValueError(f"corruption probability {p} outside [0,1]")
    if rng.random() < p:
        other = rng.integers(0, 4)
        return int(other + (other >= action))
    return int(action)


def run_episode(policy, track, style="sim", corruption_p=0.0, max_steps=1000,
                seed=0, camera=CameraModel(), start_jitter=0.0, dt=DT):
    """Render -> policy -> corrupt -> step -> reward loop.

    The recorded action is the executed (post-corruption) one.  Terminates on
    lap completion, leaving the track, or the step budget.
    """
    rng = np.random.default_rng(hash_u64(seed, 0xAC7))
    state = start_state(track, jitter=start_jitter,
                        rng=np.random.default_rng(hash_u64(seed, 0x57A27)))
    header = {
        "track": track.name, "style": style,
        "width": camera.width, "height": camera.height,
        "dt": dt, "policy": getattr(policy, "label", "custom"), "seed": seed,
    }
    steps = []
    terminal = "timeout"
    for t in range(max_steps):
        frame = render_camera(state, track, camera, style, episode_seed=seed)
        action = policy(frame, state)
        executed = corrupt_action(action, corruption_p, rng)
        state = step_vehicle(state, executed, track, dt)
        steps.append(Step(t=t, action=executed, reward=reward(state, track),
                          frame=frame, state=state.to_dict()))
        if state.lap_count >= 1:
            terminal = "lap-complete"
            break
        if off_track(state, track):
            terminal = "off-track"
            break
    return Episode(header=header, steps=steps, terminal=terminal)
