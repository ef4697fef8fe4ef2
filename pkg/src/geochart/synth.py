"""Synthetic nonconvex scene generator.

Produces a :class:`~geochart.dataset.Dataset` from a walkable polygon, a set of
antenna arrays and point scatterers. A transmitter follows a smooth random
walk with bounded acceleration and the CIR of every array is synthesised from
a line-of-sight ray (optionally blocked by an obstacle polygon) plus one
single-bounce ray per scatterer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dataset import ArrayGeometry, Dataset

SPEED_OF_LIGHT = 299_792_458.0


class SceneError(ValueError):
    pass


def l_shape(size: float = 20.0, arm: float = 6.0) -> list:
    """Counter-clockwise L-shaped polygon with its inner corner at (arm, arm)."""
    return [(0.0, 0.0), (size, 0.0), (size, arm), (arm, arm), (arm, size), (0.0, size)]


def _default_arrays():
    # normals point into the walkable L area; array 3 sits behind the blocker
    return dict(
        array_positions=[(21.5, -1.5), (-1.5, 21.5), (14.0, 14.0), (-1.5, -1.5)],
        array_orientations=[np.arctan2(1.0, -1.0), np.arctan2(-1.0, 1.0),
                            np.arctan2(-1.0, -1.0), np.arctan2(1.0, 1.0)],
    )


def ring_scatterers(center=(10.0, 10.0), gain: float = 1.0) -> list:
    """Fourteen far scatterers around the scene so every delay tap carries power."""
    radii = [14, 22, 30, 18, 26, 34, 16, 24, 32, 20, 28, 36, 15, 25]
    angles = np.linspace(0.0, 2 * np.pi, len(radii), endpoint=False) + 0.2
    return [((float(center[0] + r * np.cos(a)), float(center[1] + r * np.sin(a))), gain)
            for r, a in zip(radii, angles)]


@dataclass
class SceneConfig:
    polygon: Sequence = field(default_factory=l_shape)
    num_points: int = 500
    mean_speed: float = 1.0
    max_acceleration: float = 1.0
    sample_interval: float = 0.3
    scatterers: Sequence = field(default_factory=lambda: ring_scatterers())
    noise_std: float = 0.0005
    seed: int = 0
    blocker: Optional[Sequence] = field(
        default_factory=lambda: [(8.0, 8.0), (11.0, 8.0), (11.0, 11.0), (8.0, 11.0)]
    )
    array_positions: Sequence = field(default_factory=lambda: _default_arrays()["array_positions"])
    array_orientations: Sequence = field(
        default_factory=lambda: _default_arrays()["array_orientations"]
    )
    rows: int = 2
    cols: int = 4
    taps: int = 26
    sample_rate: float = 100e6
    carrier_wavelength: float = SPEED_OF_LIGHT / 1.272e9
    antenna_spacing: float = 0.5
    height_offset: float = 1.0  # arrays mounted this far above the transmitter
    rolloff: float = 0.5
    num_trajectories: int = 1
    trajectory_gap: float = 20.0  # pause between trajectories, in sample intervals
    wall_margin: float = 0.6
    max_retries: int = 200

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        unknown = set(d) - set(known)
        if unknown:
            raise SceneError(f"unknown scene config keys: {sorted(unknown)}")
        return cls(**known)

    def to_dict(self) -> dict:
        def plain(v):
            if isinstance(v, np.ndarray):
                return v.tolist()
            if isinstance(v, (list, tuple)):
                return [plain(x) for x in v]
            if isinstance(v, np.generic):
                return v.item()
            return v

        return {k: plain(getattr(self, k)) for k in self.__dataclass_fields__}


# --- planar geometry helpers -------------------------------------------------


def _as_polygon(poly) -> np.ndarray:
    p = np.asarray(poly, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 2 or p.shape[0] < 3:
        raise SceneError("polygon degenerate: need at least 3 vertices")
    return p


def polygon_area(poly) -> float:
    p = _as_polygon(poly)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _cross(o, a, b):
    return (a[..., 0] - o[..., 0]) * (b[..., 1] - o[..., 1]) - (a[..., 1] - o[..., 1]) * (
        b[..., 0] - o[..., 0]
    )


def segments_intersect(p1, p2, q1, q2) -> np.ndarray:
    """Proper or touching intersection of segments p1-p2 and q1-q2 (broadcasting)."""
    p1, p2, q1, q2 = (np.asarray(a, dtype=np.float64) for a in (p1, p2, q1, q2))
    d1 = _cross(q1, q2, p1)
    d2 = _cross(q1, q2, p2)
    d3 = _cross(p1, p2, q1)
    d4 = _cross(p1, p2, q2)
    return ((d1 * d2) <= 0) & ((d3 * d4) <= 0) & ~((d1 == 0) & (d2 == 0) & (d3 == 0) & (d4 == 0))


def is_simple(poly) -> bool:
    p = _as_polygon(poly)
    n = len(p)
    for a in range(n):
        for b in range(a + 1, n):
            if b == a + 1 or (a == 0 and b == n - 1):
                continue
            if segments_intersect(p[a], p[(a + 1) % n], p[b], p[(b + 1) % n]):
                return False
    return True


def points_in_polygon(points, poly) -> np.ndarray:
    """Even-odd ray casting test; ``points`` has shape (..., 2)."""
    p = _as_polygon(poly)
    pts = np.asarray(points, dtype=np.float64)
    x, y = pts[..., 0], pts[..., 1]
    inside = np.zeros(x.shape, dtype=bool)
    xj, yj = p[-1]
    for xi, yi in p:
        crosses = (yi > y) != (yj > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = (xj - xi) * (y - yi) / (yj - yi) + xi
        inside ^= crosses & (x < xint)
        xj, yj = xi, yi
    return inside


def distance_to_boundary(points, poly) -> np.ndarray:
    p = _as_polygon(poly)
    pts = np.asarray(points, dtype=np.float64)[..., None, :]
    a = p
    b = np.roll(p, -1, axis=0)
    ab = b - a
    t = np.clip(np.sum((pts - a) * ab, axis=-1) / np.sum(ab * ab, axis=-1), 0.0, 1.0)
    proj = a + t[..., None] * ab
    return np.min(np.linalg.norm(pts - proj, axis=-1), axis=-1)


# --- trajectory ----------------------------------------------------------------


class _Walker:
    def __init__(self, cfg: SceneConfig, poly: np.ndarray, rng: np.random.Generator):
        self.cfg = cfg
        self.poly = poly
        self.rng = rng
        lo, hi = poly.min(axis=0), poly.max(axis=0)
        self.lo, self.hi = lo, hi

    def _interior_point(self, margin: float) -> np.ndarray:
        for _ in range(self.cfg.max_retries * 50):
            q = self.rng.uniform(self.lo, self.hi)
            if points_in_polygon(q, self.poly) and distance_to_boundary(q, self.poly) >= margin:
                return q
        raise SceneError("could not sample an interior point; polygon too thin for wall_margin")

    def _visible(self, p, w) -> bool:
        n = max(2, int(np.ceil(np.linalg.norm(w - p) / 0.2)))
        s = p + np.linspace(0.0, 1.0, n)[:, None] * (w - p)
        return bool(
            np.all(points_in_polygon(s, self.poly))
            and np.all(distance_to_boundary(s, self.poly) >= 0.5 * self.cfg.wall_margin)
        )

    def _waypoint(self, p) -> np.ndarray:
        for _ in range(self.cfg.max_retries):
            w = self._interior_point(self.cfg.wall_margin)
            if np.linalg.norm(w - p) > 2.0 and self._visible(p, w):
                return w
        raise SceneError("trajectory generator found no reachable waypoint")

    def run(self, n: int) -> np.ndarray:
        cfg = self.cfg
        dt, vmax, amax = cfg.sample_interval, cfg.mean_speed, cfg.max_acceleration
        p = self._interior_point(cfg.wall_margin)
        v = np.zeros(2)
        w = self._waypoint(p)
        out = np.empty((n, 2))
        for step in range(n):
            out[step] = p
            if np.linalg.norm(w - p) < max(2.0 * vmax * dt, 0.5):
                w = self._waypoint(p)
            for attempt in range(cfg.max_retries):
                if attempt == 0:
                    to = w - p
                    v_des = vmax * to / max(np.linalg.norm(to), 1e-12)
                    a = (v_des - v) / dt
                else:
                    # steer somewhere else: random bounded acceleration
                    if attempt == 1:
                        w = self._waypoint(p)
                    ang = self.rng.uniform(-np.pi, np.pi)
                    a = amax * self.rng.uniform(0.2, 1.0) * np.array([np.cos(ang), np.sin(ang)])
                na = np.linalg.norm(a)
                if na > amax:
                    a = a * (amax / na)
                v_new = v + a * dt
                p_new = p + v_new * dt
                if points_in_polygon(p_new, self.poly):
                    break
            else:
                raise SceneError("trajectory left the polygon after bounded retries")
            v, p = v_new, p_new
        return out


def generate_trajectory(cfg: SceneConfig, rng: np.random.Generator):
    """Positions ``(L, 2)`` and timestamps ``(L,)`` of the configured walk."""
    poly = _as_polygon(cfg.polygon)
    if abs(polygon_area(poly)) <= 1e-12 or not is_simple(poly):
        raise SceneError("polygon degenerate or self-intersecting")
    if cfg.num_points < 3:
        raise SceneError("num_points must be >= 3")
    if cfg.mean_speed <= 0 or cfg.sample_interval <= 0 or cfg.max_acceleration <= 0:
        raise SceneError("mean_speed, sample_interval and max_acceleration must be > 0")
    ntraj = max(1, int(cfg.num_trajectories))
    sizes = np.full(ntraj, cfg.num_points // ntraj)
    sizes[: cfg.num_points % ntraj] += 1
    walker = _Walker(cfg, poly, rng)
    positions, times = [], []
    t0 = 0.0
    for size in sizes:
        if size == 0:
            continue
        positions.append(walker.run(int(size)))
        times.append(t0 + cfg.sample_interval * np.arange(size))
        t0 = times[-1][-1] + cfg.trajectory_gap * cfg.sample_interval
    return np.concatenate(positions), np.concatenate(times)


# --- channel -------------------------------------------------------------------


def raised_cosine(x, rolloff: float) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    num = np.sinc(x) * np.cos(np.pi * rolloff * x)
    den = 1.0 - (2.0 * rolloff * x) ** 2
    sing = np.abs(den) < 1e-10
    with np.errstate(divide="ignore", invalid="ignore"):
        out = num / den
    if rolloff > 0:
        out = np.where(sing, np.pi / 4 * np.sinc(1.0 / (2.0 * rolloff)), out)
    return out


def synth_cir(positions, geometry: ArrayGeometry, scatterers=(), blocker=None,
              height_offset: float = 0.0, rolloff: float = 0.5) -> np.ndarray:
    """Noise-free CIRs ``(L, B, M_row, M_col, T)`` (complex128) for given positions."""
    x = np.atleast_2d(np.asarray(positions, dtype=np.float64))
    g = geometry
    L = x.shape[0]
    H = np.zeros((L, g.num_arrays, g.rows, g.cols, g.taps), dtype=np.complex128)
    taps = np.arange(g.taps)
    rr = np.arange(g.rows)[:, None]
    cc = np.arange(g.cols)[None, :]
    blk = None if blocker is None else _as_polygon(blocker)
    for b in range(g.num_arrays):
        apos = g.array_positions[b]
        normal = g.array_orientations[b]
        # each ray: (amplitude (L,), arrival point (L,2) seen by the array, path length (L,))
        rays = []
        los_vec = x - apos
        d_los = np.hypot(np.linalg.norm(los_vec, axis=1), height_offset)
        amp = 1.0 / np.maximum(d_los, 0.1)
        if blk is not None:
            nb = len(blk)
            hit = np.zeros(L, dtype=bool)
            for e in range(nb):
                hit |= segments_intersect(x, apos[None, :], blk[e][None, :], blk[(e + 1) % nb][None, :])
            amp = np.where(hit, 0.0, amp)
        rays.append((amp, los_vec, d_los))
        for spos, gain in scatterers:
            spos = np.asarray(spos, dtype=np.float64)
            d1 = np.linalg.norm(x - spos, axis=1)
            svec = np.broadcast_to(spos - apos, x.shape)
            d2 = np.hypot(np.linalg.norm(spos - apos), height_offset)
            dist = d1 + d2
            rays.append((gain / np.maximum(dist, 0.1), svec, dist))
        for amp, vec, dist in rays:
            az = np.arctan2(vec[:, 1], vec[:, 0]) - normal
            horiz = np.maximum(np.linalg.norm(vec, axis=1), 1e-9)
            el = np.arctan2(height_offset, horiz)
            pattern = 0.5 * (1.0 + np.cos(az))
            phase_c = 2 * np.pi * g.antenna_spacing * np.sin(az) * np.cos(el)
            phase_r = 2 * np.pi * g.antenna_spacing * np.sin(el)
            steer = np.exp(-1j * (phase_r[:, None, None] * rr + phase_c[:, None, None] * cc))
            carrier = np.exp(-2j * np.pi * dist / g.carrier_wavelength)
            delay = dist / SPEED_OF_LIGHT * g.sample_rate
            pulse = raised_cosine(taps[None, :] - delay[:, None], rolloff)
            coef = (amp * pattern * carrier)[:, None, None, None]
            H[:, b] += coef * steer[..., None] * pulse[:, None, None, :]
    return H


def synth_scene(config: SceneConfig) -> Dataset:
    """Generate a deterministic synthetic dataset from ``config``."""
    rng = np.random.default_rng(config.seed)
    geometry = ArrayGeometry(
        num_arrays=len(config.array_positions),
        rows=config.rows,
        cols=config.cols,
        taps=config.taps,
        array_positions=np.asarray(config.array_positions, dtype=np.float64),
        array_orientations=np.asarray(config.array_orientations, dtype=np.float64),
        antenna_spacing=config.antenna_spacing,
        carrier_wavelength=config.carrier_wavelength,
        sample_rate=config.sample_rate,
    )
    positions, times = generate_trajectory(config, rng)
    H = synth_cir(positions, geometry, config.scatterers, config.blocker,
                  config.height_offset, config.rolloff)
    if config.noise_std > 0:
        noise = rng.standard_normal(H.shape + (2,)) @ np.array([1.0, 1j])
        H = H + noise * (config.noise_std / np.sqrt(2.0))
    return Dataset(geometry=geometry, cir=H.astype(np.complex64), timestamps=times,
                   positions=positions)
