"""2D geometry kernels shared by the world model and the metric engine.

Polyline distance/projection, arc-length walks, oriented-rectangle
intersection (separating axis test), and ego-frame transforms.  Everything
here is pure numpy and free of package-internal imports.
"""

from __future__ import annotations

import numpy as np


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = np.arctan2(np.sin(a), np.cos(a))
    if np.ndim(w) == 0:
        return float(w) if w != -np.pi else np.pi
    w = np.asarray(w)
    w[w == -np.pi] = np.pi
    return w


def rot(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def world_to_ego(points: np.ndarray, pose) -> np.ndarray:
    """Transform world points into the frame of pose=(x, y, heading)."""
    p = np.atleast_2d(np.asarray(points, dtype=np.float64))
    x, y, th = pose
    out = (p - np.array([x, y])) @ rot(th)  # R(th).T applied on the right
    return out.reshape(np.shape(points))


def ego_to_world(points: np.ndarray, pose) -> np.ndarray:
    p = np.atleast_2d(np.asarray(points, dtype=np.float64))
    x, y, th = pose
    out = p @ rot(th).T + np.array([x, y])
    return out.reshape(np.shape(points))


# ---------------------------------------------------------------------------
# polylines


def polyline_arclength(poly: np.ndarray) -> np.ndarray:
    """Cumulative arc length, starting at 0."""
    seg = np.linalg.norm(np.diff(poly, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def distance_to_polyline(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Min Euclidean distance from each query point to the polyline."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    a = poly[:-1]  # (S, 2)
    b = poly[1:]
    ab = b - a
    denom = (ab**2).sum(axis=1)
    denom = np.where(denom == 0.0, 1.0, denom)
    # t of closest point per (point, segment)
    ap = pts[:, None, :] - a[None, :, :]  # (M, S, 2)
    t = np.clip((ap * ab[None, :, :]).sum(axis=-1) / denom[None, :], 0.0, 1.0)
    closest = a[None, :, :] + t[..., None] * ab[None, :, :]
    d = np.linalg.norm(pts[:, None, :] - closest, axis=-1)
    out = d.min(axis=1)
    return out if np.asarray(points).ndim == 2 else float(out[0])


def project_to_polyline(point, poly: np.ndarray):
    """Closest point on the polyline: (arclength, point, tangent)."""
    p = np.asarray(point, dtype=np.float64)
    a = poly[:-1]
    b = poly[1:]
    ab = b - a
    denom = (ab**2).sum(axis=1)
    denom = np.where(denom == 0.0, 1.0, denom)
    t = np.clip(((p - a) * ab).sum(axis=1) / denom, 0.0, 1.0)
    closest = a + t[:, None] * ab
    d = np.linalg.norm(p - closest, axis=1)
    i = int(d.argmin())
    cum = polyline_arclength(poly)
    s = cum[i] + t[i] * np.sqrt((ab[i] ** 2).sum())
    tangent = ab[i] / max(np.linalg.norm(ab[i]), 1e-12)
    return float(s), closest[i], tangent


def point_at_arclength(poly: np.ndarray, s: float):
    """Point and unit tangent at arc length s (clamped to the polyline)."""
    cum = polyline_arclength(poly)
    s = float(np.clip(s, 0.0, cum[-1]))
    i = int(np.searchsorted(cum, s, side="right") - 1)
    i = min(i, len(poly) - 2)
    seg = poly[i + 1] - poly[i]
    seg_len = max(np.linalg.norm(seg), 1e-12)
    frac = (s - cum[i]) / seg_len
    tangent = seg / seg_len
    return poly[i] + frac * seg, tangent


def nearest_polyline_tangents(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Unit tangent of the closest segment for each query point."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    a = poly[:-1]
    b = poly[1:]
    ab = b - a
    denom = (ab**2).sum(axis=1)
    denom = np.where(denom == 0.0, 1.0, denom)
    ap = pts[:, None, :] - a[None, :, :]
    t = np.clip((ap * ab[None, :, :]).sum(axis=-1) / denom[None, :], 0.0, 1.0)
    closest = a[None, :, :] + t[..., None] * ab[None, :, :]
    d = np.linalg.norm(pts[:, None, :] - closest, axis=-1)
    idx = d.argmin(axis=1)
    tangents = ab[idx]
    norms = np.maximum(np.linalg.norm(tangents, axis=1, keepdims=True), 1e-12)
    return tangents / norms


# ---------------------------------------------------------------------------
# oriented rectangles


def rect_corners(center, half_extent, heading: float) -> np.ndarray:
    """Corners of an oriented rectangle, CCW."""
    hx, hy = half_extent
    local = np.array([[hx, hy], [-hx, hy], [-hx, -hy], [hx, -hy]])
    return local @ rot(heading).T + np.asarray(center, dtype=np.float64)


def rects_intersect(c1, h1, th1, c2, h2, th2) -> bool:
    """Separating-axis test for two oriented rectangles (touching counts)."""
    r1 = rect_corners(c1, h1, th1)
    r2 = rect_corners(c2, h2, th2)
    for th in (th1, th2):
        axes = rot(th)  # columns are the two axis directions
        for k in range(2):
            axis = axes[:, k]
            p1 = r1 @ axis
            p2 = r2 @ axis
            if p1.max() < p2.min() or p2.max() < p1.min():
                return False
    return True
