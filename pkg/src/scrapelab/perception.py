"""Synthetic RGB-D vial renderer and the material-localization pipeline.

The vial is a vertical glass cylinder whose scraped wall (x = wall_x) faces
a pinhole camera placed on the +x side and looking along -x. Camera axes
in world coordinates: image right = +y, image down = -z, optical axis = -x.
Depth is the distance along the optical axis.

Rendering rules, per pixel ray:

* material on the front wall is opaque, except over the tool where it is
  translucent and its color is blended with the tool green;
* the tool is a green blade just behind the front wall. Its painted metal
  returns no depth (0), so only material drives the depth image;
* clean glass shows the background tinted and returns no depth;
* material on the back wall is seen through the glass, darker, at the
  back-wall depth.

Ground truth "material" is the visible front-wall material.
"""

from __future__ import annotations

import colorsys
import csv
import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kmeans import kmeans
from .material import VialGeometry

TOOL_HUE = 60.0            # on the 0-180 hue scale
HUE_BAND = (40.0, 80.0)
SATURATION_FLOOR = 0.3
METRIC_COLUMNS = ("accuracy", "precision", "recall", "specificity", "f1")


# -------------------------------------------------------------------- types

@dataclass
class Camera:
    fx: float = 300.0
    fy: float = 300.0
    cx: float = 64.0
    cy: float = 128.0
    width: int = 128
    height: int = 256
    position: np.ndarray = field(default_factory=lambda: np.array([0.70, 0.0, 0.105]))
    # camera-to-world rotation; columns are the camera x, y, z axes
    rotation: np.ndarray = field(default_factory=lambda: np.array(
        [[0.0, 0.0, -1.0], [1.0, 0.0, 0.0], [0.0, -1.0, 0.0]]))

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.rotation = np.asarray(self.rotation, dtype=float)
        if self.width < 1 or self.height < 1 or self.fx <= 0 or self.fy <= 0:
            raise ValueError("camera needs positive size and focal lengths")

    def rays(self):
        """Unit-depth ray directions in world frame, shape (H, W, 3)."""
        u = (np.arange(self.width) + 0.5 - self.cx) / self.fx
        v = (np.arange(self.height) + 0.5 - self.cy) / self.fy
        uu, vv = np.meshgrid(u, v)
        cam = np.stack([uu, vv, np.ones_like(uu)], axis=-1)
        return cam @ self.rotation.T

    def back_project(self, u, v, depth):
        """Pixel coordinates (continuous, pixel centres at +0.5) -> world point."""
        cam = np.array([(u + 0.5 - self.cx) / self.fx, (v + 0.5 - self.cy) / self.fy, 1.0])
        return self.position + depth * (self.rotation @ cam)

    def project(self, point):
        """World point -> (u, v, depth); inverse of :meth:`back_project`."""
        cam = self.rotation.T @ (np.asarray(point, dtype=float) - self.position)
        return (cam[0] / cam[2] * self.fx + self.cx - 0.5,
                cam[1] / cam[2] * self.fy + self.cy - 0.5, cam[2])


@dataclass
class BBox:
    """Half-open pixel box [x0, x1) x [y0, y1)."""

    x0: int
    y0: int
    x1: int
    y1: int

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def area(self) -> int:
        return max(self.width, 0) * max(self.height, 0)

    def mask(self, height, width):
        m = np.zeros((height, width), dtype=bool)
        m[max(self.y0, 0):max(self.y1, 0), max(self.x0, 0):max(self.x1, 0)] = True
        return m


@dataclass
class Tool:
    y: float = 0.0            # blade centre across the wall
    width: float = 0.005
    tip_z: float = 0.09
    top_z: float = 0.18
    gap: float = 0.002        # distance behind the front wall


@dataclass
class SyntheticScene:
    """Particles are rows (y, z, radius) on the front or back wall."""

    geometry: VialGeometry = field(default_factory=VialGeometry)
    front: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    back: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    # front particles already scraped off; drawn in ``removed_rgb``
    removed: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    tool: Tool | None = None
    material_rgb: tuple = (200, 90, 40)
    removed_rgb: tuple = (90, 110, 160)
    tool_rgb: tuple = (40, 200, 40)
    background_rgb: tuple = (225, 228, 232)
    # opacity of material drawn over the tool
    material_alpha: float = 0.35
    color_jitter: float = 8.0
    depth_noise: float = 0.0
    artifact_rate: float = 0.0
    background_depth: float = 0.5
    seed: int = 0


@dataclass
class RgbdFrame:
    rgb: np.ndarray     # (H, W, 3) uint8
    depth: np.ndarray   # (H, W) metres, 0 = invalid
    camera: Camera

    def __post_init__(self):
        if self.rgb.shape[:2] != self.depth.shape:
            raise ValueError("rgb and depth sizes differ")
        if np.any(self.depth < 0):
            raise ValueError("depth must be non-negative")

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def height(self) -> int:
        return self.depth.shape[0]


@dataclass
class GroundTruth:
    material: np.ndarray
    tool: np.ndarray
    vial: np.ndarray
    bbox: BBox
    removed: np.ndarray


@dataclass
class ClusterReport:
    centroids: np.ndarray     # (3, 3) world
    coverage_pct: np.ndarray  # (3,)


@dataclass
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    specificity: float
    f1: float

    def as_tuple(self):
        return tuple(getattr(self, c) for c in METRIC_COLUMNS)


# ------------------------------------------------------------------- render

def _coverage(points, ys, zs, jitter, rng):
    """Index of the covering particle per sample (or -1) and per-particle colors."""
    idx = np.full(ys.shape, -1)
    for i, (py, pz, r) in enumerate(points):
        hit = (ys - py) ** 2 + (zs - pz) ** 2 <= r * r
        idx[hit & (idx < 0)] = i
    shade = rng.uniform(-jitter, jitter, size=(len(points), 3)) if len(points) else np.zeros((0, 3))
    return idx, shade


def default_camera(geometry: VialGeometry | None = None) -> Camera:
    g = geometry or VialGeometry()
    return Camera(position=np.array([g.wall_x + 0.15, 0.0, 0.5 * (g.bottom_z + g.rim_z)]))


def render(scene: SyntheticScene, camera: Camera | None = None):
    """Returns ``(RgbdFrame, GroundTruth)``; deterministic in ``scene.seed``."""
    g = scene.geometry
    cam = camera or default_camera(g)
    rng = np.random.default_rng(scene.seed)
    d = cam.rays()
    o = cam.position
    r_in = g.inner_radius
    ax = g.wall_x - r_in
    # cylinder (x - ax)^2 + y^2 = R^2 along the ray o + t d
    px = o[0] - ax
    a = d[..., 0] ** 2 + d[..., 1] ** 2
    b = 2.0 * (px * d[..., 0] + o[1] * d[..., 1])
    c = px * px + o[1] ** 2 - r_in * r_in
    disc = b * b - 4.0 * a * c
    hit = disc > 0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    t_front = np.where(hit, (-b - sq) / (2.0 * a), np.inf)
    t_back = np.where(hit, (-b + sq) / (2.0 * a), np.inf)
    z_front = o[2] + t_front * d[..., 2]
    z_back = o[2] + t_back * d[..., 2]
    y_front = o[1] + t_front * d[..., 1]
    y_back = o[1] + t_back * d[..., 1]
    vial = hit & (z_front >= g.bottom_z) & (z_front <= g.rim_z)

    f_idx, f_shade = _coverage(scene.front, y_front, z_front, scene.color_jitter, rng)
    b_idx, b_shade = _coverage(scene.back, y_back, z_back, scene.color_jitter, rng)
    r_idx, _ = _coverage(scene.removed, y_front, z_front, 0.0, rng)
    b_vis = (b_idx >= 0) & vial & (z_back >= g.bottom_z) & (z_back <= g.rim_z)
    front_mat = (f_idx >= 0) & vial
    removed = (r_idx >= 0) & vial & ~front_mat

    tool = np.zeros_like(vial)
    if scene.tool is not None:
        tl = scene.tool
        x_tool = g.wall_x - tl.gap
        with np.errstate(divide="ignore", invalid="ignore"):
            t_tool = (x_tool - o[0]) / d[..., 0]
        y_t = o[1] + t_tool * d[..., 1]
        z_t = o[2] + t_tool * d[..., 2]
        tool = (vial & (t_tool > t_front) & (t_tool < t_back) & (np.abs(y_t - tl.y) <= tl.width / 2)
                & (z_t >= tl.tip_z) & (z_t <= min(tl.top_z, g.rim_z)))

    bg = np.asarray(scene.background_rgb, dtype=float)
    mat = np.asarray(scene.material_rgb, dtype=float)
    rgb = np.broadcast_to(bg, d.shape).copy()
    depth = np.full(vial.shape, scene.background_depth)
    depth[vial] = 0.0
    glass = 0.9 * bg + 0.1 * np.array([180.0, 200.0, 210.0])
    rgb[vial] = glass
    if len(scene.back):
        rgb[b_vis] = 0.7 * (mat + b_shade[b_idx[b_vis]]) + 0.3 * glass
        depth[b_vis] = t_back[b_vis]
    rgb[removed] = scene.removed_rgb
    tool_rgb = np.asarray(scene.tool_rgb, dtype=float)
    rgb[tool] = tool_rgb
    depth[tool] = 0.0
    if len(scene.front):
        color = mat + f_shade[f_idx[front_mat]]
        over = tool[front_mat][:, None]
        alpha = scene.material_alpha
        rgb[front_mat] = np.where(over, alpha * color + (1.0 - alpha) * tool_rgb, color)
        depth[front_mat] = t_front[front_mat]

    valid = depth > 0
    if scene.depth_noise > 0:
        noise = rng.normal(0.0, scene.depth_noise, size=depth.shape)
        depth[valid & vial] += noise[valid & vial]
        depth = np.maximum(depth, 0.0)
    if scene.artifact_rate > 0:
        art = vial & (rng.random(depth.shape) < scene.artifact_rate)
        depth[art] = rng.uniform(2.0, 5.0, size=int(art.sum()))

    rows = np.flatnonzero(vial.any(axis=1))
    cols = np.flatnonzero(vial.any(axis=0))
    bbox = (BBox(int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1)
            if len(rows) else BBox(0, 0, 0, 0))
    frame = RgbdFrame(np.clip(np.rint(rgb), 0, 255).astype(np.uint8), depth, cam)
    return frame, GroundTruth(front_mat, tool, vial, bbox, removed)


def random_scene(seed: int, tool: bool = True, geometry: VialGeometry | None = None,
                 depth_noise: float = 0.0, artifact_rate: float = 0.0,
                 n_front: tuple = (150, 300), n_back: tuple = (100, 250),
                 radius: tuple = (0.0008, 0.0018)) -> SyntheticScene:
    """Random particle discs over the window on both walls, tool optional."""
    g = geometry or VialGeometry()
    rng = np.random.default_rng(seed)
    r = g.inner_radius

    def discs(lo_hi):
        n = int(rng.integers(lo_hi[0], lo_hi[1] + 1))
        return np.column_stack([rng.uniform(-0.9 * r, 0.9 * r, n),
                                rng.uniform(g.window_z_min, g.window_z_max, n),
                                rng.uniform(*radius, n)])

    front = discs(n_front)
    back = discs(n_back)
    blade = None
    if tool:
        blade = Tool(y=float(rng.uniform(-0.25 * r, 0.25 * r)),
                     tip_z=float(rng.uniform(g.window_z_min, g.window_z_max)))
    return SyntheticScene(geometry=g, front=front, back=back, tool=blade,
                          depth_noise=depth_noise, artifact_rate=artifact_rate,
                          seed=int(rng.integers(1 << 31)))


# ----------------------------------------------------------------- pipeline

def depth_inliers(depths) -> np.ndarray:
    """Boolean mask of values within one population std of the mean."""
    z = np.asarray(depths, dtype=float)
    if z.size == 0:
        raise ValueError("no depth values")
    mu = z.mean()
    sigma = z.std()
    return np.abs(z - mu) <= sigma


def remove_depth_outliers(depths) -> list:
    """Keep depths in [mu - sigma, mu + sigma], order preserved."""
    z = list(depths)
    keep = depth_inliers(z)
    return [v for v, k in zip(z, keep) if k]


def depth_threshold(depths, ratio: float):
    """Threshold z_min + ratio (z_max - z_min) and the front mask (depth <= threshold)."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError("ratio must lie in [0, 1]")
    z = np.asarray(depths, dtype=float)
    if z.size == 0:
        raise ValueError("no depth values")
    lo, hi = float(z.min()), float(z.max())
    thr = lo + ratio * (hi - lo)
    # exact endpoints so ratio 0 / 1 keep precisely the extreme values
    if ratio == 1.0:
        thr = hi
    return thr, z <= thr


def hsv180(rgb):
    """(h on 0-180, s, v) of an 8-bit RGB triple."""
    h, s, v = colorsys.rgb_to_hsv(*(float(c) / 255.0 for c in rgb))
    return h * 180.0, s, v


def filter_tool_pixels(rgb, mask, seed: int = 0, k: int = 6, hue_band=HUE_BAND,
                       saturation_floor: float = SATURATION_FLOOR):
    """Drop pixels whose RGB k-means cluster centre is tool-green.

    ``rgb`` is (H, W, 3) and ``mask`` (H, W); returns a new mask.
    """
    mask = np.asarray(mask, dtype=bool)
    idx = np.flatnonzero(mask)
    out = mask.copy()
    if idx.size == 0:
        return out
    pix = np.asarray(rgb, dtype=float).reshape(-1, 3)[idx]
    cents, assign = kmeans(pix, min(k, len(pix)), seed=seed)
    for j, cen in enumerate(cents):
        h, s, _ = hsv180(cen)
        if hue_band[0] <= h <= hue_band[1] and s > saturation_floor:
            out.ravel()[idx[assign == j]] = False
    return out


def roi_crop(bbox: BBox, top: float = 0.25, side: float = 0.30, bottom: float = 0.0) -> BBox:
    """Trim ``top`` of the height and ``side`` of the width from each side."""
    for f in (top, side, bottom):
        if not 0.0 <= f < 1.0:
            raise ValueError("crop fractions must lie in [0, 1)")
    dx = int(round(side * bbox.width))
    out = BBox(bbox.x0 + dx, bbox.y0 + int(round(top * bbox.height)), bbox.x1 - dx,
               bbox.y1 - int(round(bottom * bbox.height)))
    if out.width <= 0 or out.height <= 0:
        raise ValueError("crop leaves an empty region")
    return out


def material_clusters(mask, roi: BBox, depth, camera: Camera, seed: int = 0,
                      k: int = 3) -> ClusterReport:
    """k-means over material pixel coordinates inside ``roi``.

    Coverage is cluster size over ROI area (percent). Centroid pixels are
    back-projected at the cluster's mean depth and sorted by world z,
    highest first. Missing clusters are zero rows with 0 % coverage.
    """
    m = np.asarray(mask, dtype=bool) & roi.mask(*np.shape(mask))
    m &= np.asarray(depth) > 0
    vs, us = np.nonzero(m)
    centroids = np.zeros((k, 3))
    cover = np.zeros(k)
    if len(us) == 0:
        return ClusterReport(centroids, cover)
    pts = np.column_stack([us, vs]).astype(float)
    kk = min(k, len(pts))
    cents, assign = kmeans(pts, kk, seed=seed)
    rows = []
    for j in range(kk):
        sel = assign == j
        if not sel.any():
            continue
        zc = float(np.mean(depth[vs[sel], us[sel]]))
        world = camera.back_project(cents[j, 0], cents[j, 1], zc)
        rows.append((world, 100.0 * sel.sum() / roi.area))
    rows.sort(key=lambda r: -r[0][2])
    for i, (w, p) in enumerate(rows):
        centroids[i] = w
        cover[i] = p
    return ClusterReport(centroids, cover)


def _ratio(num, den, empty):
    return num / den if den > 0 else empty


def evaluate(predicted, truth) -> MetricsReport:
    """Pixelwise confusion metrics, material = positive class.

    A ratio with an empty denominator is 1.0 when nothing could have gone
    wrong (e.g. precision with no positive predictions and no positives).
    """
    p = np.asarray(predicted, dtype=bool)
    t = np.asarray(truth, dtype=bool)
    if p.shape != t.shape:
        raise ValueError("masks differ in shape")
    tp = int(np.sum(p & t))
    fp = int(np.sum(p & ~t))
    fn = int(np.sum(~p & t))
    tn = int(np.sum(~p & ~t))
    prec = _ratio(tp, tp + fp, 1.0 if fn == 0 else 0.0)
    rec = _ratio(tp, tp + fn, 1.0 if fp == 0 else 0.0)
    spec = _ratio(tn, tn + fp, 1.0 if fn == 0 else 0.0)
    acc = _ratio(tp + tn, tp + tn + fp + fn, 1.0)
    f1 = 2 * prec * rec / (prec + rec) if prec + rec > 0 else 0.0
    return MetricsReport(acc, prec, rec, spec, f1)


@dataclass
class PerceptionParams:
    depth_ratio: float = 0.5
    roi_top: float = 0.25
    roi_side: float = 0.30
    tool_clusters: int = 6
    material_clusters: int = 3
    hue_low: float = HUE_BAND[0]
    hue_high: float = HUE_BAND[1]
    saturation_floor: float = SATURATION_FLOOR


@dataclass
class Localization:
    mask: np.ndarray
    roi: BBox
    threshold: float
    report: ClusterReport


def localize(frame: RgbdFrame, vial_mask, bbox: BBox, params: PerceptionParams | None = None,
             seed: int = 0, filter_tool: bool = True) -> Localization:
    """Vial mask -> one-sigma depth outlier removal -> ratio threshold -> ROI -> hue filter -> clusters."""
    p = params or PerceptionParams()
    valid = np.asarray(vial_mask, dtype=bool) & (frame.depth > 0)
    roi = roi_crop(bbox, p.roi_top, p.roi_side)
    mask = np.zeros_like(valid)
    thr = float("nan")
    if valid.any():
        z = frame.depth[valid]
        kept = z[depth_inliers(z)]
        thr, _ = depth_threshold(kept, p.depth_ratio)
        mask = valid & (frame.depth <= thr)
    mask &= roi.mask(frame.height, frame.width)
    if filter_tool and mask.any():
        mask = filter_tool_pixels(frame.rgb, mask, seed, p.tool_clusters,
                                  (p.hue_low, p.hue_high), p.saturation_floor)
    report = material_clusters(mask, roi, frame.depth, frame.camera, seed, p.material_clusters)
    return Localization(mask, roi, thr, report)


def score_frame(frame, truth: GroundTruth, params=None, seed=0, filter_tool=True):
    """Metrics of the localization mask against ground truth, inside the ROI."""
    loc = localize(frame, truth.vial, truth.bbox, params, seed, filter_tool)
    inside = loc.roi.mask(frame.height, frame.width)
    return evaluate(loc.mask[inside], truth.material[inside]), loc


# ---------------------------------------------------------------- frame I/O

def write_ppm(path, rgb):
    """Binary P6, maxval 255."""
    rgb = np.asarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + rgb.tobytes())


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = []
    pos = 0
    while len(parts) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        parts.append(data[pos:end])
        pos = end
    if parts[0] != b"P6" or int(parts[3]) != 255:
        raise ValueError("only binary P6 with maxval 255 is supported")
    w, h = int(parts[1]), int(parts[2])
    pixels = np.frombuffer(data[pos + 1:pos + 1 + 3 * w * h], dtype=np.uint8)
    if pixels.size != 3 * w * h:
        raise ValueError("truncated PPM")
    return pixels.reshape(h, w, 3).copy()


def write_depth(path, depth):
    """u32 width, u32 height, then row-major float32, all little endian."""
    depth = np.asarray(depth)
    h, w = depth.shape
    Path(path).write_bytes(struct.pack("<II", w, h) + depth.astype("<f4").tobytes())


def read_depth(path) -> np.ndarray:
    data = Path(path).read_bytes()
    w, h = struct.unpack_from("<II", data, 0)
    if len(data) != 8 + 4 * w * h:
        raise ValueError("depth file size does not match its header")
    return np.frombuffer(data, dtype="<f4", offset=8).reshape(h, w).astype(float)


def metrics_csv(rows) -> str:
    """``rows`` are (condition, scene, MetricsReport)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("condition", "scene", *METRIC_COLUMNS))
    for cond, scene, m in rows:
        w.writerow((cond, scene, *(f"{v:.6f}" for v in m.as_tuple())))
    return buf.getvalue()


def scene_from_profile(profile, tip_z: float, geometry: VialGeometry | None = None,
                       seed: int = 0, radius: float = 0.001, tool: bool = True) -> SyntheticScene:
    """Visualization scene of a simulated profile.

    The simulated material is a line in z; for display each particle gets a
    fixed seeded offset across the wall. Detached particles are drawn in
    the removed color.
    """
    g = geometry or VialGeometry()
    rng = np.random.default_rng(seed)
    y = rng.uniform(-0.6 * g.inner_radius, 0.6 * g.inner_radius, profile.count)
    discs = np.column_stack([y, profile.z, np.full(profile.count, radius)])
    att = np.asarray(profile.attached, dtype=bool)
    blade = Tool(y=0.0, tip_z=float(tip_z)) if tool else None
    return SyntheticScene(geometry=g, front=discs[att], removed=discs[~att], tool=blade,
                          color_jitter=0.0, seed=seed)
