"""Deterministic camera-image pipeline: top crop, Canny edge detection, 64x64 resize.

Frames are 2-D uint8 numpy arrays (rows x cols).  The pipeline output is a
64x64 map: uint8 bits {0,1} when edge detection is on, float32 in [0,1]
(area-averaged grayscale) when it is off.  Every stage is a pure function, so
the whole chain is bit-reproducible for fixed inputs and parameters.
"""

from dataclasses import dataclass, asdict

import numpy as np
from scipy import ndimage

OUT_SIZE = 64


@dataclass(frozen=True)
class PipelineParams:
    """Configuration serialized into checkpoints and dataset headers."""

    crop_fraction: float = 0.20
    blur_sigma: float = 1.0
    low_threshold: float = 100.0
    high_threshold: float = 256.0
    edges: bool = True  # False = raw-pixel ablation (crop + resize only)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class GradientField:
    """Sobel gradients plus L2 magnitude and 4-bin quantized direction."""

    gx: np.ndarray
    gy: np.ndarray
    magnitude: np.ndarray
    direction: np.ndarray  # int bins: 0=0deg, 1=45deg, 2=90deg, 3=135deg

    @property
    def shape(self):
        return self.magnitude.shape


def _check_frame(frame):
    frame = np.asarray(frame)
    if frame.ndim != 2 or frame.dtype != np.uint8:
        raise ValueError("frame must be a 2-D uint8 array")
    if frame.shape[0] < 1 or frame.shape[1] < 1:
        raise ValueError("frame must be non-empty")
    return frame


def crop_top(frame, fraction):
    """Remove the top floor(fraction*height) rows."""
    frame = _check_frame(frame)
    if not (0.0 <= fraction < 1.0):
        raise ValueError(f"crop fraction must be in [0,1), got {fraction}")
    drop = int(np.floor(fraction * frame.shape[0]))
    if frame.shape[0] - drop <= 0:
        raise ValueError("crop removes every row")
    return frame[drop:, :].copy()


def gaussian_kernel_1d(sigma):
    """Truncated, renormalized discrete Gaussian; size 2*ceil(3*sigma)+1."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    radius = int(np.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def _correlate_replicate(img, kernel, axis):
    r = len(kernel) // 2
    pad = [(0, 0), (0, 0)]
    pad[axis] = (r, r)
    padded = np.pad(img, pad, mode="edge")
    out = np.zeros_like(img, dtype=np.float64)
    for i, w in enumerate(kernel):
        sl = [slice(None), slice(None)]
        sl[axis] = slice(i, i + img.shape[axis])
        out += w * padded[tuple(sl)]
    return out


def gaussian_blur(frame, sigma):
    """Separable Gaussian smoothing with replicated borders.

    Output is rounded back to uint8 (round half to even) so later stages work
    on exact integers.
    """
    frame = _check_frame(frame)
    k = gaussian_kernel_1d(sigma)
    out = _correlate_replicate(frame.astype(np.float64), k, axis=1)
    out = _correlate_replicate(out, k, axis=0)
    return np.rint(out).clip(0, 255).astype(np.uint8)


_SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
_SOBEL_Y = _SOBEL_X.T

# Direction bins index these (dx, dy) step offsets; dy points down (row axis).
_BIN_OFFSETS = ((1, 0), (1, 1), (0, 1), (-1, 1))


def sobel(frame):
    """3x3 Sobel gradients (correlation, replicated borders)."""
    frame = _check_frame(frame)
    if frame.shape[0] < 3 or frame.shape[1] < 3:
        raise ValueError("sobel needs at least a 3x3 image")
    img = np.pad(frame.astype(np.float64), 1, mode="edge")
    h, w = frame.shape
    gx = np.zeros((h, w))
    gy = np.zeros((h, w))
    for dy in range(3):
        for dx in range(3):
            win = img[dy:dy + h, dx:dx + w]
            gx += _SOBEL_X[dy, dx] * win
            gy += _SOBEL_Y[dy, dx] * win
    # gx/gy are exact integers here, so sqrt(gx^2 + gy^2) is correctly
    # rounded and reproducible across BLAS/libm builds
    mag = np.sqrt(gx * gx + gy * gy)
    angle = np.degrees(np.arctan2(gy, gx)) % 180.0
    direction = (np.floor((angle + 22.5) / 45.0).astype(np.int8)) % 4
    return GradientField(gx=gx, gy=gy, magnitude=mag, direction=direction)


def non_max_suppression(field):
    """Thin ridges to single-pixel width along the quantized gradient axis.

    A pixel survives when it beats the neighbor earlier in scan order along
    its direction axis strictly, and the later neighbor at least ties; this
    keeps exactly the first pixel of an equal-magnitude pair.  Out-of-bounds
    neighbors count as zero.
    """
    mag = field.magnitude
    h, w = mag.shape
    keep = np.zeros((h, w), dtype=bool)
    for b, (dx, dy) in enumerate(_BIN_OFFSETS):
        earlier = _shift(mag, -dx, -dy)
        later = _shift(mag, dx, dy)
        keep |= (field.direction == b) & (mag > earlier) & (mag >= later)
    out_mag = np.where(keep, mag, 0.0)
    return GradientField(gx=field.gx, gy=field.gy, magnitude=out_mag,
                         direction=field.direction)


def _shift(a, dx, dy):
    """Shift so out[y, x] = a[y+dy, x+dx], zero-filled outside."""
    h, w = a.shape
    out = np.zeros_like(a)
    ys = slice(max(0, -dy), min(h, h - dy))
    xs = slice(max(0, -dx), min(w, w - dx))
    ysrc = slice(max(0, dy), min(h, h + dy))
    xsrc = slice(max(0, dx), min(w, w + dx))
    out[ys, xs] = a[ysrc, xsrc]
    return out


def hysteresis(field, low=100.0, high=256.0):
    """Keep pixels > high plus any >= low pixel 8-connected to one.

    Returns a uint8 {0,1} image.
    """
    if low > high:
        raise ValueError(f"low threshold {low} exceeds high {high}")
    mag = field.magnitude
    weak = mag >= low
    strong = mag > high
    if not strong.any():
        return np.zeros(mag.shape, dtype=np.uint8)
    labels, n = ndimage.label(weak, structure=np.ones((3, 3), dtype=int))
    good = np.zeros(n + 1, dtype=bool)
    good[np.unique(labels[strong])] = True
    good[0] = False
    return good[labels].astype(np.uint8)


def _area_weights(src, dst):
    """dst x src matrix of overlap lengths between uniform cell grids."""
    w = np.zeros((dst, src))
    scale = src / dst
    for i in range(dst):
        lo, hi = i * scale, (i + 1) * scale
        j0, j1 = int(np.floor(lo)), int(np.ceil(hi))
        for j in range(j0, min(j1, src)):
            w[i, j] = min(hi, j + 1) - max(lo, j)
    return w


def area_resize(img, size=OUT_SIZE):
    """Exact area-average downsample (or identity) to size x size floats."""
    img = np.asarray(img, dtype=np.float64)
    wr = _area_weights(img.shape[0], size)
    wc = _area_weights(img.shape[1], size)
    cell = (img.shape[0] / size) * (img.shape[1] / size)
    return (wr @ img @ wc.T) / cell


def resize_to_64(binary):
    """Area-average a binary image to 64x64 and threshold at 0.5 (ties -> 1)."""
    avg = area_resize(np.asarray(binary, dtype=np.float64))
    return (avg >= 0.5).astype(np.uint8)


def preprocess(frame, params=PipelineParams()):
    """Full pipeline: crop -> blur -> Sobel -> NMS -> hysteresis -> resize.

    With params.edges off this degrades to crop + area resize of raw
    grayscale, returning float32 in [0,1] (the ablation input).
    """
    cropped = crop_top(frame, params.crop_fraction)
    if not params.edges:
        return (area_resize(cropped) / 255.0).astype(np.float32)
    blurred = gaussian_blur(cropped, params.blur_sigma)
    field = non_max_suppression(sobel(blurred))
    edges = hysteresis(field, params.low_threshold, params.high_threshold)
    return resize_to_64(edges)


def model_input(frame, params=PipelineParams()):
    """Preprocess and convert to the float32 64x64 network input."""
    return np.asarray(preprocess(frame, params), dtype=np.float32)


def read_pgm(path):
    """Read a binary (P5) 8-bit PGM file into a uint8 frame."""
    with open(path, "rb") as f:
        data = f.read()
    tokens = []
    i = 0
    while len(tokens) < 4:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if data[i:i + 1] == b"#":
            while i < len(data) and data[i] != 0x0A:
                i += 1
            continue
        j = i
        while j < len(data) and not data[j:j + 1].isspace():
            j += 1
        tokens.append(data[i:j])
        i = j
    if tokens[0] != b"P5":
        raise ValueError("not a binary PGM (P5) file")
    width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise ValueError("only 8-bit PGM supported")
    i += 1  # single whitespace after maxval
    pixels = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=i)
    return pixels.reshape(height, width).copy()


def write_pgm(path, frame):
    frame = _check_frame(frame)
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (frame.shape[1], frame.shape[0]))
        f.write(frame.tobytes())
