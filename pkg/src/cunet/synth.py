"""Synthetic articulated stick figures: poses, images, heatmaps, datasets.

A pose is a 16-joint skeleton (MPII-style taxonomy) sampled as a kinematic
tree with per-bone length and angle ranges expressed as fractions of the
image size. Images are anti-aliased line drawings over a zero background
with additive uniform noise; bone intensity is side-coded (left limbs bright,
right limbs dim) so mirrored joints stay visually distinguishable. Target
heatmaps are unit-peak Gaussians centered on the joint's heatmap cell.

Datasets are directories holding a `manifest` (key = value lines: seed,
count, input_res, sigma) plus one binary record per sample: the 16-byte
framed header (magic CUNS, version 1) followed by little-endian binary32
image, heatmaps, and keypoint rows (x, y, visibility). Regeneration from the
manifest is bitwise reproducible.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .fileio import atomic_write_bytes, pack_record, unpack_record

__all__ = [
    "JOINTS", "MIRROR_PAIRS", "HEAD", "NECK", "THORAX", "PELVIS",
    "Pose", "Sample",
    "sample_pose", "render_image", "render_heatmaps", "make_sample",
    "draw_augment_params", "apply_affine", "augment",
    "write_dataset", "DatasetReader", "SubsetReader", "read_manifest",
]

JOINTS = (
    "head", "neck", "thorax", "pelvis",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hip", "right_hip",
    "left_knee", "right_knee", "left_ankle", "right_ankle",
)
HEAD, NECK, THORAX, PELVIS = 0, 1, 2, 3
MIRROR_PAIRS = ((4, 5), (6, 7), (8, 9), (10, 11), (12, 13), (14, 15))

RECORD_MAGIC = b"CUNS"
RECORD_VERSION = 1
HEAT_STRIDE = 4  # heatmap resolution is input_res / 4

# Bones: (parent, child, length range as a fraction of image size,
#         absolute angle center and half-spread in degrees, side).
# Angle 0 points up (-y); positive angles rotate toward +x. Side tags drive
# the intensity coding: -1 left, +1 right, 0 center.
_ARM_LEN = (0.10, 0.16)
_LEG_LEN = (0.12, 0.18)
BONES = (
    (PELVIS, THORAX, (0.18, 0.24), 0.0, 12.0, 0),
    (THORAX, NECK, (0.05, 0.08), 0.0, 10.0, 0),
    (NECK, HEAD, (0.16, 0.22), 0.0, 18.0, 0),
    (THORAX, 4, (0.07, 0.11), -90.0, 15.0, -1),
    (THORAX, 5, (0.07, 0.11), 90.0, 15.0, 1),
    (4, 6, _ARM_LEN, -115.0, 55.0, -1),
    (5, 7, _ARM_LEN, 115.0, 55.0, 1),
    (6, 8, _ARM_LEN, -115.0, 60.0, -1),
    (7, 9, _ARM_LEN, 115.0, 60.0, 1),
    (PELVIS, 10, (0.05, 0.08), -90.0, 8.0, -1),
    (PELVIS, 11, (0.05, 0.08), 90.0, 8.0, 1),
    (10, 12, _LEG_LEN, -168.0, 30.0, -1),
    (11, 13, _LEG_LEN, 168.0, 30.0, 1),
    (12, 14, _LEG_LEN, -175.0, 30.0, -1),
    (13, 15, _LEG_LEN, 175.0, 30.0, 1),
)

_INTENSITY = {0: (0.65, 0.80), -1: (0.80, 1.00), 1: (0.50, 0.65)}

SCALE_RANGE = (0.75, 1.25)
ROTATION_RANGE = (-30.0, 30.0)
FLIP_PROB = 0.5


@dataclass
class Pose:
    """Joint coordinates in image pixels, (x, y) per row, plus visibility."""

    xy: np.ndarray  # (16, 2) float64
    visible: np.ndarray  # (16,) bool

    def copy(self) -> "Pose":
        return Pose(self.xy.copy(), self.visible.copy())


@dataclass
class Sample:
    image: np.ndarray  # (1, res, res) float32 in [0, 1]
    pose: Pose
    heatmaps: np.ndarray  # (16, res/4, res/4) float32


def _rng(seed_or_rng) -> np.random.Generator:
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.Generator(np.random.PCG64(seed_or_rng))


def _in_frame(xy: np.ndarray, res: int) -> np.ndarray:
    return ((xy[:, 0] >= 0) & (xy[:, 0] <= res - 1)
            & (xy[:, 1] >= 0) & (xy[:, 1] <= res - 1))


def sample_pose(input_res: int, seed_or_rng) -> Pose:
    """Draw a random articulated pose with the pelvis in the central half.

    The head and pelvis are guaranteed in frame: out-of-frame draws are
    retried up to 100 times, then clamped. Other joints may leave the frame
    and are marked invisible.
    """
    rng = _rng(seed_or_rng)
    res = float(input_res)
    xy = np.zeros((len(JOINTS), 2), dtype=np.float64)
    for _ in range(100):
        xy[PELVIS] = res * (0.25 + 0.5 * rng.random(2))
        for parent, child, (lo, hi), center, spread, _side in BONES:
            length = res * rng.uniform(lo, hi)
            angle = math.radians(center + spread * rng.uniform(-1.0, 1.0))
            xy[child, 0] = xy[parent, 0] + length * math.sin(angle)
            xy[child, 1] = xy[parent, 1] - length * math.cos(angle)
        anchors = _in_frame(xy[[HEAD, PELVIS]], input_res)
        if anchors.all():
            break
    else:
        xy[[HEAD, PELVIS]] = np.clip(xy[[HEAD, PELVIS]], 0.0, res - 1.0)
    return Pose(xy=xy, visible=_in_frame(xy, input_res))


def _draw_segment(canvas: np.ndarray, p0: np.ndarray, p1: np.ndarray,
                  half_width: float, intensity: float) -> None:
    """Max-composite one anti-aliased segment onto the canvas."""
    res = canvas.shape[0]
    margin = half_width + 1.5
    x_lo = max(int(math.floor(min(p0[0], p1[0]) - margin)), 0)
    x_hi = min(int(math.ceil(max(p0[0], p1[0]) + margin)), res - 1)
    y_lo = max(int(math.floor(min(p0[1], p1[1]) - margin)), 0)
    y_hi = min(int(math.ceil(max(p0[1], p1[1]) + margin)), res - 1)
    if x_lo > x_hi or y_lo > y_hi:
        return
    ys = np.arange(y_lo, y_hi + 1, dtype=np.float64)
    xs = np.arange(x_lo, x_hi + 1, dtype=np.float64)
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    d = p1 - p0
    denom = float(d @ d)
    if denom == 0.0:
        dist = np.hypot(gx - p0[0], gy - p0[1])
    else:
        t = np.clip(((gx - p0[0]) * d[0] + (gy - p0[1]) * d[1]) / denom, 0.0, 1.0)
        dist = np.hypot(gx - (p0[0] + t * d[0]), gy - (p0[1] + t * d[1]))
    coverage = np.clip(half_width + 0.5 - dist, 0.0, 1.0) * intensity
    region = canvas[y_lo:y_hi + 1, x_lo:x_hi + 1]
    np.maximum(region, coverage, out=region)


def render_image(pose: Pose, input_res: int, seed_or_rng) -> np.ndarray:
    """Draw the skeleton as shaded segments plus uniform noise in [0, 0.1]."""
    rng = _rng(seed_or_rng)
    thickness = rng.uniform(1.0, 3.0)
    canvas = np.zeros((input_res, input_res), dtype=np.float64)
    for parent, child, _len, _center, _spread, side in BONES:
        lo, hi = _INTENSITY[side]
        intensity = rng.uniform(lo, hi)
        _draw_segment(canvas, pose.xy[parent], pose.xy[child],
                      thickness / 2.0, intensity)
    canvas += rng.uniform(0.0, 0.1, size=canvas.shape)
    np.clip(canvas, 0.0, 1.0, out=canvas)
    return canvas[None].astype(np.float32)


def render_heatmaps(pose: Pose, input_res: int, heat_res: int,
                    sigma: float) -> np.ndarray:
    """Unit-peak Gaussians centered on each visible joint's heatmap cell.

    The center is floor(joint / stride), the cell containing the joint, so
    the peak value is exactly 1.0 there and argmax recovers the quantized
    joint. Invisible joints produce all-zero maps.
    """
    if sigma <= 0:
        raise ValueError(f"render_heatmaps: sigma must be positive, got {sigma}")
    stride = input_res / heat_res
    maps = np.zeros((len(JOINTS), heat_res, heat_res), dtype=np.float32)
    grid = np.arange(heat_res, dtype=np.float64)
    inv = 1.0 / (2.0 * sigma * sigma)
    for k in range(len(JOINTS)):
        if not pose.visible[k]:
            continue
        cx = int(pose.xy[k, 0] // stride)
        cy = int(pose.xy[k, 1] // stride)
        cx = min(max(cx, 0), heat_res - 1)
        cy = min(max(cy, 0), heat_res - 1)
        dy2 = (grid - cy) ** 2
        dx2 = (grid - cx) ** 2
        maps[k] = np.exp(-(dy2[:, None] + dx2[None, :]) * inv).astype(np.float32)
    return maps


def default_sigma(heat_res: int) -> float:
    """One heatmap pixel at resolution 16, scaled proportionally."""
    return heat_res / 16.0


def make_sample(input_res: int, sigma: float, seed_or_rng) -> Sample:
    rng = _rng(seed_or_rng)
    pose = sample_pose(input_res, rng)
    image = render_image(pose, input_res, rng)
    heatmaps = render_heatmaps(pose, input_res, input_res // HEAT_STRIDE, sigma)
    return Sample(image=image, pose=pose, heatmaps=heatmaps)


# ---------------------------------------------------------------------------
# augmentation

def draw_augment_params(seed_or_rng) -> tuple[float, float, bool]:
    """Scale in [0.75, 1.25], rotation in [-30, 30] degrees, flip with p=0.5."""
    rng = _rng(seed_or_rng)
    s = rng.uniform(*SCALE_RANGE)
    theta = rng.uniform(*ROTATION_RANGE)
    flip = bool(rng.random() < FLIP_PROB)
    return s, theta, flip


def apply_affine(sample: Sample, input_res: int, sigma: float,
                 scale: float, angle_deg: float, flip: bool) -> Sample:
    """Scale/rotate about the image center, then optionally mirror.

    Keypoints get the exact transform; a flip also swaps mirror-pair labels
    so left stays the bright side. Joints leaving the frame become invisible
    (never the reverse). The image is resampled bilinearly with zero fill and
    heatmaps are re-rendered from the transformed pose.
    """
    if scale <= 0:
        raise ValueError(f"apply_affine: scale must be positive, got {scale}")
    c = (input_res - 1) / 2.0
    rad = math.radians(angle_deg)
    cos, sin = math.cos(rad), math.sin(rad)
    fwd = scale * np.array([[cos, -sin], [sin, cos]])

    xy = (sample.pose.xy - c) @ fwd.T + c
    if flip:
        xy[:, 0] = (input_res - 1) - xy[:, 0]
    visible = sample.pose.visible.copy()
    if flip:
        for a, b in MIRROR_PAIRS:
            xy[[a, b]] = xy[[b, a]]
            visible[[a, b]] = visible[[b, a]]
    visible &= _in_frame(xy, input_res)
    pose = Pose(xy=xy, visible=visible)

    # Inverse map for the image: undo the flip, then the rotation/scale.
    grid = np.arange(input_res, dtype=np.float64)
    gy, gx = np.meshgrid(grid, grid, indexing="ij")
    if flip:
        gx = (input_res - 1) - gx
    inv = np.linalg.inv(fwd)
    sx = inv[0, 0] * (gx - c) + inv[0, 1] * (gy - c) + c
    sy = inv[1, 0] * (gx - c) + inv[1, 1] * (gy - c) + c
    image = np.stack([_bilinear(ch, sx, sy) for ch in sample.image])

    heatmaps = render_heatmaps(pose, input_res, sample.heatmaps.shape[-1], sigma)
    return Sample(image=image, pose=pose, heatmaps=heatmaps)


def _bilinear(channel: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    h, w = channel.shape
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = sx - x0
    fy = sy - y0
    out = np.zeros(sx.shape, dtype=np.float64)
    for dy in (0, 1):
        for dx in (0, 1):
            xx = x0 + dx
            yy = y0 + dy
            weight = ((fx if dx else 1.0 - fx) * (fy if dy else 1.0 - fy))
            mask = (xx >= 0) & (xx < w) & (yy >= 0) & (yy < h)
            vals = np.zeros_like(out)
            vals[mask] = channel[yy[mask], xx[mask]]
            out += weight * vals
    return out.astype(np.float32)


def augment(sample: Sample, input_res: int, sigma: float, seed_or_rng) -> Sample:
    rng = _rng(seed_or_rng)
    s, theta, flip = draw_augment_params(rng)
    return apply_affine(sample, input_res, sigma, s, theta, flip)


# ---------------------------------------------------------------------------
# dataset on disk

def _sample_seed(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, index])))


def _record_name(index: int) -> str:
    return f"sample_{index:06d}.bin"


def _encode_sample(sample: Sample) -> bytes:
    kp = np.concatenate(
        [sample.pose.xy.astype(np.float32),
         sample.pose.visible.astype(np.float32)[:, None]], axis=1)
    payload = (sample.image.astype("<f4").tobytes()
               + sample.heatmaps.astype("<f4").tobytes()
               + kp.astype("<f4").tobytes())
    return pack_record(RECORD_MAGIC, RECORD_VERSION, payload)


def _decode_sample(blob: bytes, input_res: int) -> Sample:
    payload = unpack_record(blob, RECORD_MAGIC, RECORD_VERSION)
    heat_res = input_res // HEAT_STRIDE
    k = len(JOINTS)
    n_img = input_res * input_res
    n_heat = k * heat_res * heat_res
    expected = 4 * (n_img + n_heat + k * 3)
    if len(payload) != expected:
        raise ValueError(f"record payload is {len(payload)} bytes, expected {expected} "
                         f"for input_res={input_res}")
    buf = np.frombuffer(payload, dtype="<f4")
    image = buf[:n_img].reshape(1, input_res, input_res).copy()
    heat = buf[n_img:n_img + n_heat].reshape(k, heat_res, heat_res).copy()
    kp = buf[n_img + n_heat:].reshape(k, 3)
    pose = Pose(xy=kp[:, :2].astype(np.float64),
                visible=kp[:, 2] > 0.5)
    return Sample(image=image, pose=pose, heatmaps=heat)


def write_dataset(out_dir, count: int, seed: int, input_res: int,
                  sigma: float | None = None) -> None:
    """Generate `count` samples into a dataset directory, deterministically.

    Each sample draws from its own stream keyed by (seed, index), so
    regeneration with the same manifest is bitwise identical file by file.
    """
    if count < 0:
        raise ValueError(f"write_dataset: count must be >= 0, got {count}")
    if input_res < 8 or input_res % 4:
        raise ValueError(f"write_dataset: input_res must be a multiple of 4 and >= 8, "
                         f"got {input_res}")
    if sigma is None:
        sigma = default_sigma(input_res // HEAT_STRIDE)
    os.makedirs(out_dir, exist_ok=True)
    manifest = (f"seed = {seed}\ncount = {count}\n"
                f"input_res = {input_res}\nsigma = {sigma!r}\n")
    for i in range(count):
        sample = make_sample(input_res, sigma, _sample_seed(seed, i))
        atomic_write_bytes(os.path.join(out_dir, _record_name(i)),
                           _encode_sample(sample))
    from .fileio import atomic_write_text
    atomic_write_text(os.path.join(out_dir, "manifest"), manifest)


def read_manifest(dataset_dir) -> dict:
    path = os.path.join(os.fspath(dataset_dir), "manifest")
    if not os.path.exists(path):
        raise FileNotFoundError(f"dataset manifest not found: {path}")
    out: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    for key in ("seed", "count", "input_res", "sigma"):
        if key not in out:
            raise ValueError(f"dataset manifest missing key {key!r}")
    return {"seed": int(out["seed"]), "count": int(out["count"]),
            "input_res": int(out["input_res"]), "sigma": float(out["sigma"])}


class DatasetReader:
    """Random access over a dataset directory written by `write_dataset`."""

    def __init__(self, dataset_dir):
        self.dir = os.fspath(dataset_dir)
        meta = read_manifest(self.dir)
        self.seed: int = meta["seed"]
        self.count: int = meta["count"]
        self.input_res: int = meta["input_res"]
        self.sigma: float = meta["sigma"]
        self.heat_res: int = self.input_res // HEAT_STRIDE

    def __len__(self) -> int:
        return self.count

    def load(self, index: int) -> Sample:
        if not 0 <= index < self.count:
            raise IndexError(f"dataset index {index} out of range [0, {self.count})")
        path = os.path.join(self.dir, _record_name(index))
        with open(path, "rb") as fh:
            return _decode_sample(fh.read(), self.input_res)


class SubsetReader:
    """A reader restricted to a fixed index subset (train/val holdout)."""

    def __init__(self, reader, indices):
        self.base = reader
        self.indices = [int(i) for i in indices]
        for i in self.indices:
            if not 0 <= i < len(reader):
                raise IndexError(f"subset index {i} out of range [0, {len(reader)})")
        self.seed = reader.seed
        self.input_res = reader.input_res
        self.sigma = reader.sigma
        self.heat_res = reader.heat_res

    def __len__(self) -> int:
        return len(self.indices)

    def load(self, index: int) -> Sample:
        return self.base.load(self.indices[index])
