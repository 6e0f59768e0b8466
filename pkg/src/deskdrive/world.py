"""Track/world model and simulated senses.

Conventions: world frame is x/y meters, heading in radians increasing
counterclockwise. "Left" in driver terms (negative steering, positive lane
offset) is the clockwise side of the direction of travel, which is what the
camera shows in the left half of the image.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError
from .vehicle import VehicleState, wrap_angle

# ---------------------------------------------------------------------------
# track geometry

LINE_STYLES = ("white", "yellow")


class Track:
    """Polyline centerline with a lane corridor around it."""

    def __init__(self, centerline, lane_width: float,
                 line_style: tuple[str, str] = ("yellow", "white"),
                 is_loop: bool = False):
        pts = np.asarray(centerline, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise ConfigError("centerline needs at least 2 (x, y) points")
        if lane_width <= 0:
            raise ConfigError(f"lane_width must be positive, got {lane_width}")
        for s in line_style:
            if s not in LINE_STYLES:
                raise ConfigError(f"unknown line style {s!r}")
        if is_loop and not np.allclose(pts[0], pts[-1]):
            pts = np.vstack([pts, pts[0]])
        seg = np.diff(pts, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(seg_len == 0):
            raise ConfigError("consecutive centerline points must be distinct")

        self.centerline = pts
        self.lane_width = float(lane_width)
        self.line_style = (line_style[0], line_style[1])  # (left, right)
        self.is_loop = bool(is_loop)
        self._a = pts[:-1]
        self._d = seg
        self._ax, self._ay = pts[:-1, 0].copy(), pts[:-1, 1].copy()
        self._dx, self._dy = seg[:, 0].copy(), seg[:, 1].copy()
        self._len = seg_len
        self._len2 = seg_len ** 2
        self._cum = np.concatenate([[0.0], np.cumsum(seg_len)])
        self.length = float(self._cum[-1])

    def project(self, points: np.ndarray):
        """Project points (N,2) onto the centerline.

        Returns (dist, offset, s, seg_idx); offset is signed distance,
        positive on the left of the direction of travel.
        """
        p = np.atleast_2d(np.asarray(points, dtype=float))
        e1 = p[:, 0:1] - self._ax          # (N,S) per component
        e2 = p[:, 1:2] - self._ay
        dot = e1 * self._dx + e2 * self._dy
        t = np.clip(dot / self._len2, 0.0, 1.0)
        # |p-a|^2 - 2 t (p-a).d + t^2 |d|^2 with t already clamped
        dist2 = e1 * e1 + e2 * e2 - (2.0 * dot - t * self._len2) * t
        seg_idx = np.argmin(dist2, axis=1)
        n_idx = np.arange(len(p))
        dist = np.sqrt(np.maximum(dist2[n_idx, seg_idx], 0.0))
        cross = (self._dx[seg_idx] * e2[n_idx, seg_idx]
                 - self._dy[seg_idx] * e1[n_idx, seg_idx])
        # positive offset = driver's left = clockwise side of travel
        offset = np.where(cross <= 0, dist, -dist)
        s = self._cum[seg_idx] + t[n_idx, seg_idx] * self._len[seg_idx]
        return dist, offset, s, seg_idx

    def wrap_s(self, s: float) -> float:
        if self.is_loop:
            return s % self.length
        return min(max(s, 0.0), self.length)

    def point_at(self, s: float) -> np.ndarray:
        s = self.wrap_s(s)
        i = int(np.searchsorted(self._cum, s, side="right")) - 1
        i = min(max(i, 0), len(self._a) - 1)
        frac = (s - self._cum[i]) / self._len[i]
        return self._a[i] + frac * self._d[i]

    def tangent_at(self, s: float) -> float:
        s = self.wrap_s(s)
        i = int(np.searchsorted(self._cum, s, side="right")) - 1
        i = min(max(i, 0), len(self._a) - 1)
        return math.atan2(self._d[i, 1], self._d[i, 0])

    def gate_at(self, s: float, half_len: float | None = None):
        """Perpendicular gate segment across the track at arc position s."""
        if half_len is None:
            half_len = self.lane_width / 2 + 0.3
        c = self.point_at(s)
        ang = self.tangent_at(s) + math.pi / 2
        n = np.array([math.cos(ang), math.sin(ang)])
        return c - half_len * n, c + half_len * n

    def to_dict(self) -> dict:
        return {
            "centerline": self.centerline.tolist(),
            "lane_width": self.lane_width,
            "line_style": list(self.line_style),
            "is_loop": self.is_loop,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Track":
        return cls(d["centerline"], d["lane_width"],
                   tuple(d.get("line_style", ("yellow", "white"))),
                   d.get("is_loop", False))


def _oval_points(straight: float = 10.0, radius: float = 5.0, step: float = 0.4):
    """Counterclockwise stadium: two straights joined by semicircles."""
    hx = straight / 2
    pts = []
    n1 = max(2, int(straight / step))
    for i in range(n1):
        pts.append((-hx + straight * i / n1, -radius))
    n2 = max(8, int(math.pi * radius / step))
    for i in range(n2):
        a = -math.pi / 2 + math.pi * i / n2
        pts.append((hx + radius * math.cos(a), radius * math.sin(a)))
    for i in range(n1):
        pts.append((hx - straight * i / n1, radius))
    for i in range(n2):
        a = math.pi / 2 + math.pi * i / n2
        pts.append((-hx + radius * math.cos(a), radius * math.sin(a)))
    return pts


def build_track(spec, lane_width: float | None = None, is_loop: bool = False,
                line_style: tuple[str, str] = ("yellow", "white")) -> Track:
    """Build a Track from a named preset or an explicit point list."""
    if isinstance(spec, str):
        if spec == "drag":
            pts = [(float(x), 0.0) for x in range(41)]
            return Track(pts, lane_width or 1.5, line_style, is_loop=False)
        if spec == "oval":
            return Track(_oval_points(), lane_width or 1.6, line_style, is_loop=True)
        if spec == "scurve":
            xs = np.arange(0.0, 50.0 + 1e-9, 0.5)
            pts = np.stack([xs, 2.5 * np.sin(2 * math.pi * xs / 25.0)], axis=1)
            return Track(pts, lane_width or 1.5, line_style, is_loop=False)
        raise ConfigError(f"unknown track preset {spec!r}")
    return Track(spec, lane_width or 1.5, line_style, is_loop=is_loop)


@dataclass(frozen=True)
class TrafficLight:
    x: float
    y: float
    state: str = "red"  # "red" | "green"

    def __post_init__(self):
        if self.state not in ("red", "green"):
            raise ConfigError(f"light state must be red or green, got {self.state!r}")


@dataclass(frozen=True)
class Obstacle:
    x: float
    y: float
    r: float

    def __post_init__(self):
        if self.r <= 0:
            raise ConfigError(f"obstacle radius must be positive, got {self.r}")


@dataclass
class World:
    track: Track
    obstacles: tuple[Obstacle, ...] = ()
    light: TrafficLight | None = None
    rng_seed: int = 0

    def with_light_state(self, state: str) -> "World":
        if self.light is None:
            raise ConfigError("world has no traffic light")
        return World(self.track, self.obstacles,
                     replace(self.light, state=state), self.rng_seed)

    def to_dict(self) -> dict:
        return {
            "track": self.track.to_dict(),
            "obstacles": [[o.x, o.y, o.r] for o in self.obstacles],
            "light": None if self.light is None else
                     {"x": self.light.x, "y": self.light.y, "state": self.light.state},
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "World":
        light = d.get("light")
        return cls(
            track=Track.from_dict(d["track"]),
            obstacles=tuple(Obstacle(*o) for o in d.get("obstacles", [])),
            light=None if light is None else TrafficLight(**light),
            rng_seed=d.get("rng_seed", 0),
        )


# ---------------------------------------------------------------------------
# camera

@dataclass(frozen=True)
class CameraFrame:
    """Forward camera image; pixels (H, W, 3) float64 in [0, 1]."""

    pixels: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        p = self.pixels
        if p.ndim != 3 or p.shape[2] != 3:
            raise ValueError(f"pixels must be (H, W, 3), got {p.shape}")
        if p.min() < 0.0 or p.max() > 1.0:
            raise ValueError("pixel values must lie in [0, 1]")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def channels(self) -> int:
        return 3


@dataclass(frozen=True)
class CameraConfig:
    width: int = 64
    height: int = 64
    fov_deg: float = 110.0
    cam_height_m: float = 0.25  # mast-mounted above the rear axle
    pitch_deg: float = 20.0
    far_m: float = 25.0
    noise_sigma: float = 0.01
    line_half_width_m: float = 0.05

    def __post_init__(self):
        if self.width < 8 or self.height < 8:
            raise ConfigError("camera resolution must be at least 8x8")


COLOR_SKY = np.array([0.55, 0.75, 0.95])
COLOR_GROUND = np.array([0.42, 0.42, 0.42])
COLOR_OBSTACLE = np.array([0.15, 0.15, 0.55])
COLOR_LINES = {"white": np.array([1.0, 1.0, 1.0]),
               "yellow": np.array([0.95, 0.85, 0.15])}
COLOR_LIGHT = {"red": np.array([0.95, 0.08, 0.08]),
               "green": np.array([0.1, 0.9, 0.15])}
LIGHT_DISC_RADIUS = 0.18

# ground-point classification labels
LBL_GROUND, LBL_LINE_LEFT, LBL_LINE_RIGHT, LBL_OBSTACLE, LBL_LIGHT = 0, 1, 2, 3, 4


def _ground_hits(state: VehicleState, cfg: CameraConfig):
    """Intersect every pixel ray with the ground plane.

    Returns (hit mask (H,W), world x, world y) with x/y valid where hit.
    """
    w, h = cfg.width, cfg.height
    f = (w / 2.0) / math.tan(math.radians(cfg.fov_deg) / 2.0)
    ch, sh = math.cos(state.heading), math.sin(state.heading)
    p = math.radians(cfg.pitch_deg)
    cp, sp = math.cos(p), math.sin(p)
    fwd = np.array([cp * ch, cp * sh, -sp])
    up = np.array([sp * ch, sp * sh, cp])
    right = np.array([-sh, ch, 0.0])

    xi = (np.arange(w) + 0.5) - w / 2.0           # + -> driver's right
    zeta = h / 2.0 - (np.arange(h) + 0.5)         # + -> above image center
    XI, ZETA = np.meshgrid(xi, zeta)
    dirs = (f * fwd[None, None, :] + XI[..., None] * right[None, None, :]
            + ZETA[..., None] * up[None, None, :])
    dz = dirs[..., 2]
    hit = dz < -1e-9
    t = np.where(hit, cfg.cam_height_m / np.where(hit, -dz, 1.0), np.inf)
    wx = state.x + t * dirs[..., 0]
    wy = state.y + t * dirs[..., 1]
    near = np.hypot(wx - state.x, wy - state.y) <= cfg.far_m
    hit = hit & near
    return hit, wx, wy


def _classify_points(world: World, pts: np.ndarray, cfg: CameraConfig) -> np.ndarray:
    """Label ground points: obstacle > light > lane line > plain ground."""
    n = len(pts)
    labels = np.full(n, LBL_GROUND, dtype=np.int8)
    if n == 0:
        return labels
    dist, offset, _, _ = world.track.project(pts)
    half = world.track.lane_width / 2.0
    on_line = np.abs(dist - half) <= cfg.line_half_width_m
    labels[on_line & (offset > 0)] = LBL_LINE_LEFT
    labels[on_line & (offset <= 0)] = LBL_LINE_RIGHT
    if world.light is not None:
        d2 = (pts[:, 0] - world.light.x) ** 2 + (pts[:, 1] - world.light.y) ** 2
        labels[d2 <= LIGHT_DISC_RADIUS ** 2] = LBL_LIGHT
    for ob in world.obstacles:
        d2 = (pts[:, 0] - ob.x) ** 2 + (pts[:, 1] - ob.y) ** 2
        labels[d2 <= ob.r ** 2] = LBL_OBSTACLE
    return labels


def _frame_rng(world: World, t: float) -> np.random.Generator:
    key = int(round(abs(t) * 1e6)) % (2 ** 62)
    return np.random.default_rng(np.random.SeedSequence([int(world.rng_seed) % (2 ** 62), key, 0xCA11]))


def render_camera(world: World, state: VehicleState, cfg: CameraConfig = CameraConfig()) -> CameraFrame:
    """Render the forward view by projecting pixel rays onto the ground plane."""
    hit, wx, wy = _ground_hits(state, cfg)
    h, w = cfg.height, cfg.width
    img = np.empty((h, w, 3))
    img[:] = COLOR_SKY

    pts = np.stack([wx[hit], wy[hit]], axis=1)
    labels = _classify_points(world, pts, cfg)
    colors = np.empty((len(pts), 3))
    colors[:] = COLOR_GROUND
    colors[labels == LBL_LINE_LEFT] = COLOR_LINES[world.track.line_style[0]]
    colors[labels == LBL_LINE_RIGHT] = COLOR_LINES[world.track.line_style[1]]
    colors[labels == LBL_OBSTACLE] = COLOR_OBSTACLE
    if world.light is not None:
        colors[labels == LBL_LIGHT] = COLOR_LIGHT[world.light.state]

    if cfg.noise_sigma > 0:
        rng = _frame_rng(world, state.t)
        colors = colors + rng.normal(0.0, cfg.noise_sigma, size=colors.shape)

    img[hit] = colors
    np.clip(img, 0.0, 1.0, out=img)
    return CameraFrame(pixels=img, t=state.t)


def line_mask(world: World, state: VehicleState, cfg: CameraConfig = CameraConfig()) -> np.ndarray:
    """Boolean (H, W) mask of lane-line pixels for the same view render_camera draws."""
    hit, wx, wy = _ground_hits(state, cfg)
    mask = np.zeros((cfg.height, cfg.width), dtype=bool)
    pts = np.stack([wx[hit], wy[hit]], axis=1)
    labels = _classify_points(world, pts, cfg)
    mask[hit] = (labels == LBL_LINE_LEFT) | (labels == LBL_LINE_RIGHT)
    return mask


def lane_offset(world: World, state: VehicleState) -> float:
    """Signed perpendicular distance to the centerline; positive = left of it."""
    _, offset, _, _ = world.track.project(np.array([[state.x, state.y]]))
    return float(offset[0])


def is_departed(world: World, state: VehicleState) -> bool:
    return abs(lane_offset(world, state)) > world.track.lane_width / 2.0


# ---------------------------------------------------------------------------
# ultrasonics

ULTRA_SIDES = ("front", "left", "right", "back")
_SIDE_BEARING = {"front": 0.0, "left": -math.pi / 2, "right": math.pi / 2, "back": math.pi}


def _ray_circle_dist(ox, oy, dx, dy, cx, cy, r) -> float:
    """Distance along the unit ray (dx,dy) to the circle, inf if missed."""
    fx, fy = ox - cx, oy - cy
    b = fx * dx + fy * dy
    c = fx * fx + fy * fy - r * r
    if c <= 0:
        return 0.0
    disc = b * b - c
    if disc < 0:
        return math.inf
    t = -b - math.sqrt(disc)
    return t if t >= 0 else math.inf


def sample_ultrasonic(world: World, state: VehicleState, side: str,
                      threshold_m: float = 0.5, cone_deg: float = 30.0,
                      n_rays: int = 7, march_step: float = 0.02) -> int:
    """Binary proximity: 1 iff an obstacle or the off-track wall lies within
    threshold_m (inclusive) inside a cone on the given side."""
    if side not in ULTRA_SIDES:
        raise ValueError(f"unknown ultrasonic side {side!r}")
    base = state.heading + _SIDE_BEARING[side]
    half = math.radians(cone_deg) / 2.0
    angles = np.array([base + half * (2 * i / (n_rays - 1) - 1) for i in range(n_rays)])
    for ang in angles:
        dx, dy = math.cos(ang), math.sin(ang)
        for ob in world.obstacles:
            if _ray_circle_dist(state.x, state.y, dx, dy, ob.x, ob.y, ob.r) <= threshold_m:
                return 1
    # march every ray outward at once to find the lane boundary wall
    n_steps = int(threshold_m / march_step)
    rs = march_step * np.arange(1, n_steps + 1)
    px = state.x + np.outer(np.cos(angles), rs).ravel()
    py = state.y + np.outer(np.sin(angles), rs).ravel()
    dist, _, _, _ = world.track.project(np.stack([px, py], axis=1))
    return 1 if np.any(dist > world.track.lane_width / 2.0) else 0


# ---------------------------------------------------------------------------
# IMU

@dataclass(frozen=True)
class SensorSnapshot:
    """Binarized ultrasonics plus IMU acceleration at time t."""

    ultra: tuple[int, int, int, int]  # front, left, right, back
    accel: tuple[float, float, float]
    t: float
    seq: int


GRAVITY = 9.81


def sample_imu(prev: VehicleState, cur: VehicleState, dt: float,
               noise_rng: np.random.Generator | None = None,
               sigma: float = 0.05) -> tuple[float, float, float]:
    """Longitudinal, centripetal, and vertical acceleration with optional noise."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    ax = (cur.v - prev.v) / dt
    heading_rate = wrap_angle(cur.heading - prev.heading) / dt
    ay = cur.v * heading_rate
    az = GRAVITY
    if noise_rng is not None and sigma > 0:
        n = noise_rng.normal(0.0, sigma, size=3)
        ax, ay, az = ax + n[0], ay + n[1], az + n[2]
    return float(ax), float(ay), float(az)


# ---------------------------------------------------------------------------
# synthetic traffic lights

def synth_traffic_light(rng: np.random.Generator, label: str,
                        width: int = 150, height: int = 150):
    """Generate one traffic-light image: dark housing with a red or green disc.

    Position, radius, brightness, and background clutter jitter with the
    given generator; identical generator state reproduces the frame.
    """
    if label not in ("red", "green"):
        raise ValueError(f"label must be red or green, got {label!r}")
    h, w = height, width
    img = np.empty((h, w, 3))
    img[:] = rng.uniform(0.3, 0.7, size=3)
    # background clutter rectangles
    for _ in range(int(rng.integers(2, 6))):
        x0 = int(rng.integers(0, w - 4))
        y0 = int(rng.integers(0, h - 4))
        x1 = x0 + int(rng.integers(2, max(3, w // 3)))
        y1 = y0 + int(rng.integers(2, max(3, h // 3)))
        img[y0:min(y1, h), x0:min(x1, w)] = rng.uniform(0.15, 0.85, size=3)

    cx = w / 2 + rng.uniform(-0.15, 0.15) * w
    cy = h / 2 + rng.uniform(-0.15, 0.15) * h
    hw = rng.uniform(0.13, 0.19) * w
    hh = rng.uniform(0.22, 0.32) * h
    x0, x1 = int(max(0, cx - hw)), int(min(w, cx + hw))
    y0, y1 = int(max(0, cy - hh)), int(min(h, cy + hh))
    img[y0:y1, x0:x1] = rng.uniform(0.03, 0.12)

    r = rng.uniform(0.07, 0.11) * min(h, w)
    dy = rng.uniform(-0.5, 0.5) * (hh - r) if hh > r else 0.0
    bright = rng.uniform(0.75, 1.0)
    lo = rng.uniform(0.0, 0.22, size=2) * bright
    if label == "red":
        color = np.array([bright, lo[0], lo[1]])
    else:
        color = np.array([lo[0], bright, lo[1]])
    yy, xx = np.mgrid[0:h, 0:w]
    disc = (xx - cx) ** 2 + (yy - (cy + dy)) ** 2 <= r * r
    img[disc] = color
    np.clip(img, 0.0, 1.0, out=img)
    return CameraFrame(pixels=img), label


def synth_light_dataset(n: int, seed: int, width: int = 150, height: int = 150,
                        balance: float = 0.5):
    """n labeled frames with Bernoulli(balance) red labels, deterministic per seed."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        label = "red" if rng.random() < balance else "green"
        out.append(synth_traffic_light(rng, label, width, height))
    return out
