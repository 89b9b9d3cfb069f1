"""Planar geometry helpers shared by the simulator, local map, and planner."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(a: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    a = math.fmod(a, TWO_PI)
    if a <= -math.pi:
        a += TWO_PI
    elif a > math.pi:
        a -= TWO_PI
    return a


@dataclass
class Pose2D:
    """Planar pose; heading stays normalized to (-pi, pi]."""

    x: float
    y: float
    heading: float

    def __post_init__(self) -> None:
        self.heading = wrap_angle(self.heading)

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def copy(self) -> "Pose2D":
        return Pose2D(self.x, self.y, self.heading)


def to_frame(points: np.ndarray, origin: np.ndarray, heading: float) -> np.ndarray:
    """World points -> frame at `origin` with x-axis along `heading`."""
    pts = np.atleast_2d(np.asarray(points, dtype=float)) - np.asarray(origin, dtype=float)
    c, s = math.cos(heading), math.sin(heading)
    out = np.empty_like(pts)
    out[:, 0] = c * pts[:, 0] + s * pts[:, 1]
    out[:, 1] = -s * pts[:, 0] + c * pts[:, 1]
    return out


def from_frame(points: np.ndarray, origin: np.ndarray, heading: float) -> np.ndarray:
    """Inverse of :func:`to_frame`."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    c, s = math.cos(heading), math.sin(heading)
    out = np.empty_like(pts)
    out[:, 0] = c * pts[:, 0] - s * pts[:, 1]
    out[:, 1] = s * pts[:, 0] + c * pts[:, 1]
    return out + np.asarray(origin, dtype=float)


class Polyline:
    """Piecewise-linear curve with cached arc-length tables.

    Consecutive duplicate vertices are dropped at construction; at least two
    distinct vertices are required.
    """

    def __init__(self, pts) -> None:
        pts = np.asarray(pts, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
            raise ValueError("polyline needs an (N, 2) array with N >= 2")
        keep = np.ones(len(pts), dtype=bool)
        keep[1:] = np.linalg.norm(np.diff(pts, axis=0), axis=1) > 1e-12
        pts = pts[keep]
        if len(pts) < 2:
            raise ValueError("polyline is degenerate after dropping duplicates")
        self.pts = pts
        self.seg_vec = np.diff(pts, axis=0)
        self.seg_len = np.linalg.norm(self.seg_vec, axis=1)
        self.seg_dir = self.seg_vec / self.seg_len[:, None]
        self.cum = np.concatenate([[0.0], np.cumsum(self.seg_len)])
        self.length = float(self.cum[-1])

    def point_at(self, s: float) -> np.ndarray:
        """Point at arc length `s`, clamped to [0, length]."""
        s = min(max(s, 0.0), self.length)
        if len(self.seg_len) == 1:
            return self.pts[0] + self.seg_dir[0] * s
        i = min(int(np.searchsorted(self.cum, s, side="right")) - 1, len(self.seg_len) - 1)
        i = max(i, 0)
        return self.pts[i] + self.seg_dir[i] * (s - self.cum[i])

    def points_at(self, ss: np.ndarray) -> np.ndarray:
        ss = np.clip(np.asarray(ss, dtype=float), 0.0, self.length)
        idx = np.clip(np.searchsorted(self.cum, ss, side="right") - 1, 0, len(self.seg_len) - 1)
        return self.pts[idx] + self.seg_dir[idx] * (ss - self.cum[idx])[:, None]

    def heading_at(self, s: float) -> float:
        s = min(max(s, 0.0), self.length)
        i = min(int(np.searchsorted(self.cum, s, side="right")) - 1, len(self.seg_len) - 1)
        i = max(i, 0)
        d = self.seg_dir[i]
        return math.atan2(d[1], d[0])

    def seg_index_at(self, ss: np.ndarray) -> np.ndarray:
        ss = np.clip(np.asarray(ss, dtype=float), 0.0, self.length)
        return np.clip(np.searchsorted(self.cum, ss, side="right") - 1,
                       0, len(self.seg_len) - 1)

    def headings_at(self, ss: np.ndarray) -> np.ndarray:
        d = self.seg_dir[self.seg_index_at(ss)]
        return np.arctan2(d[:, 1], d[:, 0])

    def sample_many(self, ss: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(points, headings, segment indices) at clamped arc lengths, sharing
        one index lookup."""
        ss = np.clip(np.asarray(ss, dtype=float), 0.0, self.length)
        idx = np.clip(np.searchsorted(self.cum, ss, side="right") - 1,
                      0, len(self.seg_len) - 1)
        d = self.seg_dir[idx]
        pts = self.pts[idx] + d * (ss - self.cum[idx])[:, None]
        return pts, np.arctan2(d[:, 1], d[:, 0]), idx

    def project(self, xy) -> tuple[float, float]:
        """Project a point onto the curve.

        Returns (arc length of the foot point, signed lateral offset);
        positive lateral means the point lies left of travel direction.
        """
        if len(self.seg_len) == 1:
            px = float(xy[0]) - self.pts[0, 0]
            py = float(xy[1]) - self.pts[0, 1]
            dx, dy = self.seg_dir[0, 0], self.seg_dir[0, 1]
            s = px * dx + py * dy
            s = min(max(s, 0.0), self.length)
            lat = dx * (py - s * dy) - dy * (px - s * dx)
            return s, lat
        p = np.asarray(xy, dtype=float)
        rel = p - self.pts[:-1]
        t = np.einsum("ij,ij->i", rel, self.seg_vec) / (self.seg_len**2)
        t = np.clip(t, 0.0, 1.0)
        foot = self.pts[:-1] + t[:, None] * self.seg_vec
        d2 = np.einsum("ij,ij->i", foot - p, foot - p)
        i = int(np.argmin(d2))
        s = float(self.cum[i] + t[i] * self.seg_len[i])
        dvec = p - foot[i]
        lat = float(self.seg_dir[i, 0] * dvec[1] - self.seg_dir[i, 1] * dvec[0])
        return s, lat

    def tail_from(self, s: float) -> np.ndarray:
        """Vertices from arc length `s` to the end, starting at the exact point."""
        s = min(max(s, 0.0), self.length)
        start = self.point_at(s)
        i = int(np.searchsorted(self.cum, s, side="right"))
        tail = self.pts[i:]
        if len(tail) == 0 or np.linalg.norm(tail[0] - start) > 1e-9:
            tail = np.vstack([start, tail]) if len(tail) else start[None, :]
        return tail


def concat_polylines(lines: list[Polyline]) -> Polyline:
    """Chain polylines; each successor is trimmed to start at the projection
    of the previous endpoint (handles joins into the middle of a lane)."""
    pts = [lines[0].pts]
    end = lines[0].pts[-1]
    for nxt in lines[1:]:
        s_join, _ = nxt.project(end)
        tail = nxt.tail_from(s_join)
        pts.append(tail)
        end = tail[-1]
    return Polyline(np.vstack(pts))


def arc_points(cx: float, cy: float, radius: float, theta0: float, theta1: float,
               step_deg: float = 3.0) -> np.ndarray:
    """Sampled circular arc from theta0 to theta1 (radians, either direction)."""
    n = max(2, int(abs(theta1 - theta0) / math.radians(step_deg)) + 1)
    th = np.linspace(theta0, theta1, n)
    return np.stack([cx + radius * np.cos(th), cy + radius * np.sin(th)], axis=1)


def offset_polyline(pts: np.ndarray, offset: float) -> np.ndarray:
    """Offset a polyline to its left by `offset` (right if negative), using
    averaged segment normals at interior vertices."""
    pts = np.asarray(pts, dtype=float)
    seg = np.diff(pts, axis=0)
    seg = seg / np.linalg.norm(seg, axis=1)[:, None]
    normals = np.stack([-seg[:, 1], seg[:, 0]], axis=1)
    vert_n = np.empty_like(pts)
    vert_n[0] = normals[0]
    vert_n[-1] = normals[-1]
    if len(pts) > 2:
        mid = normals[:-1] + normals[1:]
        norm = np.linalg.norm(mid, axis=1)
        norm[norm < 1e-9] = 1.0
        vert_n[1:-1] = mid / norm[:, None]
    return pts + offset * vert_n
