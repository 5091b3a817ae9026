"""Independent reference implementations used by the test suite."""

import numpy as np
from scipy import integrate


def ellipse_distance(q, a, b, center=(0.0, 0.0)):
    """Unsigned distance from points to the ellipse (a cos t, b sin t).

    Dense parameter scan followed by Newton steps on the stationarity condition.
    """
    Q = np.atleast_2d(np.asarray(q, dtype=float)) - np.asarray(center, dtype=float)
    ts = np.linspace(0.0, 2 * np.pi, 2048, endpoint=False)
    P = np.column_stack([a * np.cos(ts), b * np.sin(ts)])
    t = ts[np.argmin(((Q[:, None, :] - P[None]) ** 2).sum(-1), axis=1)]
    for _ in range(30):
        c, s = np.cos(t), np.sin(t)
        dx, dy = a * c - Q[:, 0], b * s - Q[:, 1]
        g = dx * (-a * s) + dy * (b * c)
        h = (a * s) ** 2 + (b * c) ** 2 + dx * (-a * c) + dy * (-b * s)
        t = t - g / np.where(np.abs(h) > 1e-14, h, 1e-14)
    return np.hypot(a * np.cos(t) - Q[:, 0], b * np.sin(t) - Q[:, 1])


def ellipse_perimeter(a, b):
    val, _ = integrate.quad(lambda t: np.hypot(a * np.sin(t), b * np.cos(t)), 0.0, 2 * np.pi, epsabs=1e-13, limit=200)
    return val


def segment_area(r, d):
    """Area of the circular cap of radius ``r`` beyond a chord at distance ``d``."""
    return r * r * np.arccos(d / r) - d * np.sqrt(r * r - d * d)


def circle_box_cut(center, r, lo, hi):
    """Exact test whether a circle crosses the interior of an axis-aligned box."""
    c = np.asarray(center, dtype=float)
    near = np.linalg.norm(np.clip(c, lo, hi) - c)
    far = np.linalg.norm(np.maximum(np.abs(np.asarray(lo) - c), np.abs(np.asarray(hi) - c)))
    return near < r < far


def count_leaves(center, r, lo, hi, k, level=0):
    """Leaf count of the spacetree refined wherever the circle crosses a box."""
    if level == k or not circle_box_cut(center, r, lo, hi):
        return 1
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    mid = 0.5 * (lo + hi)
    total = 0
    for cx in ((lo[0], mid[0]), (mid[0], hi[0])):
        for cy in ((lo[1], mid[1]), (mid[1], hi[1])):
            total += count_leaves(center, r, (cx[0], cy[0]), (cx[1], cy[1]), k, level + 1)
    return total


def bilinear_stiffness(E, nu):
    """Closed-form plane-stress stiffness of a unit square bilinear element.

    Nodes counterclockwise from the lower left, DOFs interleaved.
    """
    k = np.array(
        [
            1 / 2 - nu / 6,
            1 / 8 + nu / 8,
            -1 / 4 - nu / 12,
            -1 / 8 + 3 * nu / 8,
            -1 / 4 + nu / 12,
            -1 / 8 - nu / 8,
            nu / 6,
            1 / 8 - 3 * nu / 8,
        ]
    )
    pattern = np.array(
        [
            [0, 1, 2, 3, 4, 5, 6, 7],
            [1, 0, 7, 6, 5, 4, 3, 2],
            [2, 7, 0, 5, 6, 3, 4, 1],
            [3, 6, 5, 0, 7, 2, 1, 4],
            [4, 5, 6, 7, 0, 1, 2, 3],
            [5, 4, 3, 2, 1, 0, 7, 6],
            [6, 3, 4, 1, 2, 7, 0, 5],
            [7, 2, 1, 4, 3, 6, 5, 0],
        ]
    )
    return E / (1 - nu * nu) * k[pattern]
